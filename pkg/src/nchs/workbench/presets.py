"""Reusable initial conditions for benchmarks and demos."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from ..geometry import Grid, ScalarField, VectorField, velocity_from_stream


def initial_stripe(grid: Grid, amplitude: float = 0.9, width: float = 0.4,
                   shift: float = 0.0, interface: float = 0.05) -> ScalarField:
    """Horizontal band of one phase centered mid-domain.

    phi rises to +amplitude inside a band of the given width around
    y = ly/2 + shift and falls to -amplitude outside, with tanh edges of
    the given interface thickness.  Amplitude <= 1 keeps the data admissible.
    """
    if not 0.0 < amplitude <= 1.0:
        raise ValueError(f"amplitude must be in (0, 1], got {amplitude}")
    x, y = grid.cell_centers()
    y0 = 0.5 * grid.ly + shift
    profile = 0.5 * (np.tanh((y - y0 + 0.5 * width) / interface)
                     - np.tanh((y - y0 - 0.5 * width) / interface))
    return ScalarField(grid, amplitude * (2.0 * profile - 1.0))


def initial_pure(grid: Grid, sign: int = 1) -> ScalarField:
    """Single-phase state phi = +-1 exactly."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +-1, got {sign}")
    return ScalarField.full(grid, float(sign))


def initial_random(grid: Grid, amplitude: float = 0.2, seed: int = 0,
                   sigma_cells: float = 2.0) -> ScalarField:
    """Smoothed random mixture, rescaled to the requested max amplitude."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((grid.nx, grid.ny))
    smooth = gaussian_filter(raw, sigma=sigma_cells, mode="nearest")
    peak = float(np.abs(smooth).max())
    if peak == 0.0:
        return ScalarField.zeros(grid)
    return ScalarField(grid, amplitude * smooth / peak)


def initial_vortex(grid: Grid, amplitude: float = 1.0) -> VectorField:
    """Single smooth no-slip eddy from a polynomial-sine stream function."""
    xn = np.linspace(0.0, grid.lx, grid.nx + 1)
    yn = np.linspace(0.0, grid.ly, grid.ny + 1)
    x, y = np.meshgrid(xn, yn, indexing="ij")
    psi = amplitude * (np.sin(np.pi * x / grid.lx) * np.sin(np.pi * y / grid.ly)) ** 2
    return velocity_from_stream(grid, psi)
