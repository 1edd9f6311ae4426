"""Distributed force controls and tracking-cost weights.

These types are shared between the forward solver (which consumes a control
as the momentum source), the backward sweep (which produces one as the
gradient), and the optimiser; they live in their own module so those layers
do not import each other.

A control is a time series of face vector fields, one sample per time step,
held in a componentwise box ``lower <= v <= upper``.  Controls inherit the
no-slip trace of the velocity space: boundary normal faces are identically
zero (a distributed force on fixed walls has no normal-face degree of
freedom).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Grid, ScalarField, VectorField, enforce_noslip


@dataclass
class ControlField:
    """Per-step force samples v^0 .. v^{N-1} with box bounds."""

    grid: Grid
    vx: np.ndarray  # (n_steps, nx + 1, ny)
    vy: np.ndarray  # (n_steps, nx, ny + 1)
    lower: float | np.ndarray = -math.inf
    upper: float | np.ndarray = math.inf

    def __post_init__(self) -> None:
        self.vx = np.asarray(self.vx, dtype=float)
        self.vy = np.asarray(self.vy, dtype=float)
        g = self.grid
        if self.vx.ndim != 3 or self.vy.ndim != 3 or self.vx.shape[0] != self.vy.shape[0]:
            raise ValueError("control arrays must be (n_steps, faces) with matching step counts")
        if self.vx.shape[1:] != (g.nx + 1, g.ny) or self.vy.shape[1:] != (g.nx, g.ny + 1):
            raise ValueError(
                f"control face shapes {self.vx.shape[1:]}, {self.vy.shape[1:]} do not match grid"
            )
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if np.any(lo > hi):
            raise ValueError("control box is empty: lower > upper somewhere")
        if np.any(lo > 0.0) or np.any(hi < 0.0):
            warnings.warn(
                "control box does not contain 0; wall faces are pinned at 0 outside the box",
                RuntimeWarning,
                stacklevel=2,
            )
        for n in range(self.n_steps):
            enforce_noslip(self.vx[n], self.vy[n])

    @property
    def n_steps(self) -> int:
        return self.vx.shape[0]

    @classmethod
    def zeros(
        cls,
        grid: Grid,
        n_steps: int,
        lower: float | np.ndarray = -math.inf,
        upper: float | np.ndarray = math.inf,
    ) -> "ControlField":
        return cls(
            grid,
            np.zeros((n_steps, grid.nx + 1, grid.ny)),
            np.zeros((n_steps, grid.nx, grid.ny + 1)),
            lower,
            upper,
        )

    def copy(self) -> "ControlField":
        return ControlField(self.grid, self.vx.copy(), self.vy.copy(), self.lower, self.upper)

    def like(self, vx: np.ndarray, vy: np.ndarray) -> "ControlField":
        """Same grid and box, new sample arrays."""
        return ControlField(self.grid, vx, vy, self.lower, self.upper)

    def step(self, n: int) -> VectorField:
        return VectorField(self.grid, self.vx[n].copy(), self.vy[n].copy())

    def dot(self, other: "ControlField", dt: float) -> float:
        """L2-in-space-and-time pairing with weight hx*hy*dt."""
        acc = float(np.vdot(self.vx, other.vx)) + float(np.vdot(self.vy, other.vy))
        return self.grid.cell_volume * dt * acc

    def norm(self, dt: float) -> float:
        return math.sqrt(max(self.dot(self, dt), 0.0))

    def max_abs(self) -> float:
        mx = float(np.abs(self.vx).max()) if self.vx.size else 0.0
        my = float(np.abs(self.vy).max()) if self.vy.size else 0.0
        return max(mx, my)

    def clamped(self) -> "ControlField":
        """Projection onto the box (and the zero-trace wall faces)."""
        vx = np.clip(self.vx, self.lower, self.upper)
        vy = np.clip(self.vy, self.lower, self.upper)
        out = ControlField(self.grid, vx, vy, self.lower, self.upper)
        return out


@dataclass
class CostWeights:
    """Weights and targets of the tracking functional.

    The five terms are: distributed velocity tracking (beta_track_u),
    distributed phase tracking (beta_track_phi), terminal velocity and phase
    tracking (beta_final_u, beta_final_phi), and the control penalty gamma.
    Distributed targets are time series with one sample per stored state
    (``n_steps + 1``); missing targets mean tracking toward zero.
    """

    beta_track_u: float = 0.0
    beta_track_phi: float = 0.0
    beta_final_u: float = 0.0
    beta_final_phi: float = 0.0
    gamma: float = 0.0
    u_track_x: Optional[np.ndarray] = None  # (n_steps + 1, nx + 1, ny)
    u_track_y: Optional[np.ndarray] = None
    phi_track: Optional[np.ndarray] = None  # (n_steps + 1, nx, ny)
    u_final_x: Optional[np.ndarray] = None
    u_final_y: Optional[np.ndarray] = None
    phi_final: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        ws = (
            self.beta_track_u,
            self.beta_track_phi,
            self.beta_final_u,
            self.beta_final_phi,
            self.gamma,
        )
        if any(w < 0.0 for w in ws):
            raise ValueError(f"cost weights must be nonnegative, got {ws}")
        if all(w == 0.0 for w in ws):
            raise ValueError("at least one cost weight must be positive")

    def validate_shapes(self, grid: Grid, n_steps: int) -> None:
        def check(name, arr, shape):
            if arr is not None and np.asarray(arr).shape != shape:
                raise ValueError(f"target {name} has shape {np.asarray(arr).shape}, want {shape}")

        check("u_track_x", self.u_track_x, (n_steps + 1, grid.nx + 1, grid.ny))
        check("u_track_y", self.u_track_y, (n_steps + 1, grid.nx, grid.ny + 1))
        check("phi_track", self.phi_track, (n_steps + 1, grid.nx, grid.ny))
        check("u_final_x", self.u_final_x, (grid.nx + 1, grid.ny))
        check("u_final_y", self.u_final_y, (grid.nx, grid.ny + 1))
        check("phi_final", self.phi_final, (grid.nx, grid.ny))

    # deviations from the targets (zero target when absent)

    def u_dev(self, n: int, ux: np.ndarray, uy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = ux if self.u_track_x is None else ux - self.u_track_x[n]
        dy = uy if self.u_track_y is None else uy - self.u_track_y[n]
        return dx, dy

    def phi_dev(self, n: int, phi: np.ndarray) -> np.ndarray:
        return phi if self.phi_track is None else phi - self.phi_track[n]

    def u_final_dev(self, ux: np.ndarray, uy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = ux if self.u_final_x is None else ux - self.u_final_x
        dy = uy if self.u_final_y is None else uy - self.u_final_y
        return dx, dy

    def phi_final_dev(self, phi: np.ndarray) -> np.ndarray:
        return phi if self.phi_final is None else phi - self.phi_final


def tracking_targets_from_states(
    weights: CostWeights,
    states: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> CostWeights:
    """Fill the targets of ``weights`` from (ux, uy, phi) state triples.

    The final-state targets are taken from the last triple.  Returns a new
    CostWeights; the originals are not modified.
    """
    ux = np.stack([s[0] for s in states])
    uy = np.stack([s[1] for s in states])
    ph = np.stack([s[2] for s in states])
    return CostWeights(
        beta_track_u=weights.beta_track_u,
        beta_track_phi=weights.beta_track_phi,
        beta_final_u=weights.beta_final_u,
        beta_final_phi=weights.beta_final_phi,
        gamma=weights.gamma,
        u_track_x=ux,
        u_track_y=uy,
        phi_track=ph,
        u_final_x=ux[-1].copy(),
        u_final_y=uy[-1].copy(),
        phi_final=ph[-1].copy(),
    )
