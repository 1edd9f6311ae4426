"""Staggered-grid fields and discrete operators on a closed rectangular box.

Layout (MAC staggering)
-----------------------
The domain ``[0, lx] x [0, ly]`` is split into ``nx * ny`` uniform cells.

* cell-centred scalars (phase field, pressure, potentials): shape ``(nx, ny)``,
  sample points ``((i + 1/2) hx, (j + 1/2) hy)``;
* x-components of vector fields: vertical cell faces, shape ``(nx + 1, ny)``,
  sample points ``(i hx, (j + 1/2) hy)``;
* y-components: horizontal faces, shape ``(nx, ny + 1)``.

Index ``[i, j]`` is ``(x, y)``.  Walls carry no-slip velocity: the boundary
normal faces (first/last row of the x-component, first/last column of the
y-component) are identically zero, and tangential wall values enter stencils
through reflected ghosts so the interpolated wall velocity vanishes.

Scalars close with zero normal differences at the walls (homogeneous Neumann),
so every flux assembled here vanishes on boundary faces and cell sums
telescope exactly; this is what makes mass conservation structural rather
than approximate.

Inner products use the uniform cell volume ``hx * hy`` for both cell and face
fields.  With those weights ``gradient`` and ``-divergence`` are exact
transposes of each other, which the sensitivity layer relies on.  The small
averaging/difference primitives near the end of the module come in
(apply, transpose) pairs for the same reason; transposes are exact by
construction, not up to discretisation error.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft


def _fft_workers() -> int:
    """Worker count for FFT-based solvers, configurable via NCHS_THREADS."""
    try:
        return max(1, int(os.environ.get("NCHS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Uniform staggered grid on the closed box [0, lx] x [0, ly]."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got {self.nx}x{self.ny}")
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise ValueError(f"domain lengths must be positive, got {self.lx}, {self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid arrays (shape (nx, ny)) of cell-centre coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def xface_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def yface_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def zeros_center(self) -> np.ndarray:
        return np.zeros((self.nx, self.ny))

    def zeros_xface(self) -> np.ndarray:
        return np.zeros((self.nx + 1, self.ny))

    def zeros_yface(self) -> np.ndarray:
        return np.zeros((self.nx, self.ny + 1))

    def zeros_node(self) -> np.ndarray:
        return np.zeros((self.nx + 1, self.ny + 1))


@dataclass
class ScalarField:
    """Cell-centred scalar samples on a grid."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        expect = (self.grid.nx, self.grid.ny)
        if self.data.shape != expect:
            raise ValueError(f"scalar data shape {self.data.shape} != {expect}")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, grid.zeros_center())

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full((grid.nx, grid.ny), float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        x, y = grid.cell_centers()
        return cls(grid, np.asarray(fn(x, y), dtype=float))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy())

    def mean(self) -> float:
        return float(self.data.mean())


@dataclass
class VectorField:
    """Face-sampled vector field; boundary normal faces are held at zero."""

    grid: Grid
    x: np.ndarray
    y: np.ndarray
    noslip: bool = True

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        gx = (self.grid.nx + 1, self.grid.ny)
        gy = (self.grid.nx, self.grid.ny + 1)
        if self.x.shape != gx or self.y.shape != gy:
            raise ValueError(f"vector shapes {self.x.shape}, {self.y.shape} != {gx}, {gy}")
        if self.noslip:
            enforce_noslip(self.x, self.y)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, grid.zeros_xface(), grid.zeros_yface())

    @classmethod
    def from_functions(cls, grid: Grid, fx, fy) -> "VectorField":
        xx, xy = grid.xface_coords()
        yx, yy = grid.yface_coords()
        return cls(grid, np.asarray(fx(xx, xy), dtype=float), np.asarray(fy(yx, yy), dtype=float))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.x.copy(), self.y.copy(), self.noslip)

    def max_abs(self) -> float:
        mx = float(np.abs(self.x).max()) if self.x.size else 0.0
        my = float(np.abs(self.y).max()) if self.y.size else 0.0
        return max(mx, my)


def enforce_noslip(ux: np.ndarray, uy: np.ndarray) -> None:
    """Zero the boundary normal faces in place (they are not unknowns)."""
    ux[0, :] = 0.0
    ux[-1, :] = 0.0
    uy[:, 0] = 0.0
    uy[:, -1] = 0.0


# ---------------------------------------------------------------------------
# inner products and norms (uniform hx*hy quadrature)
# ---------------------------------------------------------------------------


def dot_cells(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return grid.cell_volume * float(np.vdot(a, b))


def dot_faces(grid: Grid, ax: np.ndarray, ay: np.ndarray, bx: np.ndarray, by: np.ndarray) -> float:
    return grid.cell_volume * (float(np.vdot(ax, bx)) + float(np.vdot(ay, by)))


def norm_cells(grid: Grid, a: np.ndarray) -> float:
    return math.sqrt(max(dot_cells(grid, a, a), 0.0))


def norm_faces(grid: Grid, ax: np.ndarray, ay: np.ndarray) -> float:
    return math.sqrt(max(dot_faces(grid, ax, ay, ax, ay), 0.0))


# ---------------------------------------------------------------------------
# first-order operators
# ---------------------------------------------------------------------------


def _div(grid: Grid, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
    return (wx[1:, :] - wx[:-1, :]) / grid.hx + (wy[:, 1:] - wy[:, :-1]) / grid.hy


def _grad(grid: Grid, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Boundary faces stay zero: the Neumann ghost copies the first interior
    # cell, so the normal difference at a wall vanishes identically.
    gx = np.zeros((grid.nx + 1, grid.ny))
    gy = np.zeros((grid.nx, grid.ny + 1))
    gx[1:-1, :] = (p[1:, :] - p[:-1, :]) / grid.hx
    gy[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / grid.hy
    return gx, gy


def _avg_faces(grid: Grid, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centred interpolation of a cell scalar onto interior faces (0 on walls)."""
    ax = np.zeros((grid.nx + 1, grid.ny))
    ay = np.zeros((grid.nx, grid.ny + 1))
    ax[1:-1, :] = 0.5 * (p[1:, :] + p[:-1, :])
    ay[:, 1:-1] = 0.5 * (p[:, 1:] + p[:, :-1])
    return ax, ay


def _avg_faces_t(grid: Grid, ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`_avg_faces` under the raw dot product."""
    out = np.zeros((grid.nx, grid.ny))
    out[1:, :] += 0.5 * ax[1:-1, :]
    out[:-1, :] += 0.5 * ax[1:-1, :]
    out[:, 1:] += 0.5 * ay[:, 1:-1]
    out[:, :-1] += 0.5 * ay[:, 1:-1]
    return out


def divergence(w: VectorField) -> ScalarField:
    """Cell-centred divergence of a face field."""
    return ScalarField(w.grid, _div(w.grid, w.x, w.y))


def gradient(p: ScalarField) -> VectorField:
    """Face gradient of a cell scalar; zero on boundary faces (Neumann ghosts).

    With the uniform-volume inner products, ``<gradient(p), w> = -<p,
    divergence(w)>`` holds exactly for any ``w`` whose boundary normal faces
    vanish.
    """
    gx, gy = _grad(p.grid, p.data)
    return VectorField(p.grid, gx, gy, noslip=False)


def laplacian_neumann(p: ScalarField) -> ScalarField:
    """Composition divergence(gradient(p)); zero-flux closure at the walls."""
    gx, gy = _grad(p.grid, p.data)
    return ScalarField(p.grid, _div(p.grid, gx, gy))


def face_average(p: ScalarField) -> VectorField:
    """Cell scalar interpolated to faces for flux assembly (0 on walls)."""
    ax, ay = _avg_faces(p.grid, p.data)
    return VectorField(p.grid, ax, ay, noslip=False)


# ---------------------------------------------------------------------------
# advection
# ---------------------------------------------------------------------------


def _advect_scalar(grid: Grid, ux: np.ndarray, uy: np.ndarray, phi: np.ndarray) -> np.ndarray:
    ax, ay = _avg_faces(grid, phi)
    return _div(grid, ux * ax, uy * ay)


def advect_scalar(u: VectorField, phi: ScalarField, div_tol: float = 1e-8) -> ScalarField:
    """Conservative transport term div(u * phi) with centred face values.

    Equals ``u . grad(phi)`` in the weak sense when ``div u = 0``; the flux
    form keeps the cell sum exactly zero, and centred interpolation makes the
    form skew against ``phi`` for discretely divergence-free ``u``.  A
    divergence defect beyond ``10 * div_tol`` is reported via the return
    field's companion warning (the solver passes its own tolerance).
    """
    import warnings

    grid = u.grid
    defect = float(np.abs(_div(grid, u.x, u.y)).max())
    if defect > 10.0 * div_tol:
        warnings.warn(
            f"advecting field has divergence defect {defect:.3e} > 10*{div_tol:.1e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return ScalarField(grid, _advect_scalar(grid, u.x, u.y, phi.data))


def _node_from_xface(grid: Grid, bx: np.ndarray) -> np.ndarray:
    """x-face samples averaged to nodes; wall rows are the (zero) wall value."""
    out = np.zeros((grid.nx + 1, grid.ny + 1))
    out[:, 1:-1] = 0.5 * (bx[:, 1:] + bx[:, :-1])
    return out


def _node_from_xface_t(grid: Grid, w: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.nx + 1, grid.ny))
    out[:, 1:] += 0.5 * w[:, 1:-1]
    out[:, :-1] += 0.5 * w[:, 1:-1]
    return out


def _node_from_yface(grid: Grid, by: np.ndarray) -> np.ndarray:
    """y-face samples averaged to nodes; wall columns are the wall value."""
    out = np.zeros((grid.nx + 1, grid.ny + 1))
    out[1:-1, :] = 0.5 * (by[1:, :] + by[:-1, :])
    return out


def _node_from_yface_t(grid: Grid, w: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.nx, grid.ny + 1))
    out[1:, :] += 0.5 * w[1:-1, :]
    out[:-1, :] += 0.5 * w[1:-1, :]
    return out


def _cell_from_xface(bx: np.ndarray) -> np.ndarray:
    return 0.5 * (bx[1:, :] + bx[:-1, :])


def _cell_from_xface_t(grid: Grid, w: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.nx + 1, grid.ny))
    out[1:, :] += 0.5 * w
    out[:-1, :] += 0.5 * w
    return out


def _cell_from_yface(by: np.ndarray) -> np.ndarray:
    return 0.5 * (by[:, 1:] + by[:, :-1])


def _cell_from_yface_t(grid: Grid, w: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.nx, grid.ny + 1))
    out[:, 1:] += 0.5 * w
    out[:, :-1] += 0.5 * w
    return out


def _advect_velocity_bilinear(
    grid: Grid,
    ax: np.ndarray,
    ay: np.ndarray,
    bx: np.ndarray,
    by: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Flux form of (a . grad) b on the staggered grid.

    Both slots see centred interpolation only, so the map is bilinear and the
    trilinear form <B(a, b), b> vanishes exactly whenever the advecting field
    a is discretely divergence-free with no-slip walls.
    """
    hx, hy = grid.hx, grid.hy

    # x-momentum: d/dx (a_x b_x) + d/dy (a_y b_x)
    f_cell = _cell_from_xface(ax) * _cell_from_xface(bx)
    g_node = _node_from_yface(grid, ay) * _node_from_xface(grid, bx)
    nx_out = np.zeros_like(bx)
    nx_out[1:-1, :] = (f_cell[1:, :] - f_cell[:-1, :]) / hx
    nx_out[1:-1, :] += (g_node[1:-1, 1:] - g_node[1:-1, :-1]) / hy

    # y-momentum: d/dx (a_x b_y) + d/dy (a_y b_y)
    f2_cell = _cell_from_yface(ay) * _cell_from_yface(by)
    g2_node = _node_from_xface(grid, ax) * _node_from_yface(grid, by)
    ny_out = np.zeros_like(by)
    ny_out[:, 1:-1] = (f2_cell[:, 1:] - f2_cell[:, :-1]) / hy
    ny_out[:, 1:-1] += (g2_node[1:, 1:-1] - g2_node[:-1, 1:-1]) / hx

    return nx_out, ny_out


def _advect_bilinear_vjp_b(
    grid: Grid,
    ax: np.ndarray,
    ay: np.ndarray,
    wx: np.ndarray,
    wy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of b -> B(a, b) under the raw dot product."""
    hx, hy = grid.hx, grid.hy

    # x-momentum chain, reversed
    f_adj = np.zeros((grid.nx, grid.ny))
    f_adj[1:, :] += wx[1:-1, :] / hx
    f_adj[:-1, :] -= wx[1:-1, :] / hx
    g_adj = np.zeros((grid.nx + 1, grid.ny + 1))
    g_adj[1:-1, 1:] += wx[1:-1, :] / hy
    g_adj[1:-1, :-1] -= wx[1:-1, :] / hy
    bx_adj = _cell_from_xface_t(grid, _cell_from_xface(ax) * f_adj)
    bx_adj += _node_from_xface_t(grid, _node_from_yface(grid, ay) * g_adj)

    # y-momentum chain, reversed
    f2_adj = np.zeros((grid.nx, grid.ny))
    f2_adj[:, 1:] += wy[:, 1:-1] / hy
    f2_adj[:, :-1] -= wy[:, 1:-1] / hy
    g2_adj = np.zeros((grid.nx + 1, grid.ny + 1))
    g2_adj[1:, 1:-1] += wy[:, 1:-1] / hx
    g2_adj[:-1, 1:-1] -= wy[:, 1:-1] / hx
    by_adj = _cell_from_yface_t(grid, _cell_from_yface(ay) * f2_adj)
    by_adj += _node_from_yface_t(grid, _node_from_xface(grid, ax) * g2_adj)

    enforce_noslip(bx_adj, by_adj)
    return bx_adj, by_adj


def _advect_bilinear_vjp_a(
    grid: Grid,
    bx: np.ndarray,
    by: np.ndarray,
    wx: np.ndarray,
    wy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of a -> B(a, b) under the raw dot product."""
    hx, hy = grid.hx, grid.hy

    f_adj = np.zeros((grid.nx, grid.ny))
    f_adj[1:, :] += wx[1:-1, :] / hx
    f_adj[:-1, :] -= wx[1:-1, :] / hx
    g_adj = np.zeros((grid.nx + 1, grid.ny + 1))
    g_adj[1:-1, 1:] += wx[1:-1, :] / hy
    g_adj[1:-1, :-1] -= wx[1:-1, :] / hy
    ax_adj = _cell_from_xface_t(grid, _cell_from_xface(bx) * f_adj)
    ay_adj = _node_from_yface_t(grid, _node_from_xface(grid, bx) * g_adj)

    f2_adj = np.zeros((grid.nx, grid.ny))
    f2_adj[:, 1:] += wy[:, 1:-1] / hy
    f2_adj[:, :-1] -= wy[:, 1:-1] / hy
    g2_adj = np.zeros((grid.nx + 1, grid.ny + 1))
    g2_adj[1:, 1:-1] += wy[:, 1:-1] / hx
    g2_adj[:-1, 1:-1] -= wy[:, 1:-1] / hx
    ay_adj += _cell_from_yface_t(grid, _cell_from_yface(by) * f2_adj)
    ax_adj += _node_from_xface_t(grid, _node_from_yface(grid, by) * g2_adj)

    enforce_noslip(ax_adj, ay_adj)
    return ax_adj, ay_adj


def advect_velocity(u: VectorField, div_tol: float = 1e-8) -> VectorField:
    """Momentum self-advection (u . grad) u in energy-conserving flux form."""
    import warnings

    grid = u.grid
    defect = float(np.abs(_div(grid, u.x, u.y)).max())
    if defect > 10.0 * div_tol:
        warnings.warn(
            f"advecting field has divergence defect {defect:.3e} > 10*{div_tol:.1e}",
            RuntimeWarning,
            stacklevel=2,
        )
    nx_out, ny_out = _advect_velocity_bilinear(grid, u.x, u.y, u.x, u.y)
    return VectorField(grid, nx_out, ny_out)


# ---------------------------------------------------------------------------
# viscous stress
# ---------------------------------------------------------------------------


def _cells_to_nodes(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Cell scalar averaged to nodes (edge cells replicated outside the box)."""
    p = np.pad(c, 1, mode="edge")
    return 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])


def _cells_to_nodes_t(grid: Grid, w: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`_cells_to_nodes`."""
    acc = np.zeros((grid.nx + 2, grid.ny + 2))
    acc[:-1, :-1] += 0.25 * w
    acc[1:, :-1] += 0.25 * w
    acc[:-1, 1:] += 0.25 * w
    acc[1:, 1:] += 0.25 * w
    out = acc[1:-1, 1:-1].copy()
    out[0, :] += acc[0, 1:-1]
    out[-1, :] += acc[-1, 1:-1]
    out[:, 0] += acc[1:-1, 0]
    out[:, -1] += acc[1:-1, -1]
    out[0, 0] += acc[0, 0]
    out[0, -1] += acc[0, -1]
    out[-1, 0] += acc[-1, 0]
    out[-1, -1] += acc[-1, -1]
    return out


def _shear_rate_nodes(grid: Grid, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    """du_x/dy + du_y/dx at nodes, with reflected ghosts at the walls."""
    hx, hy = grid.hx, grid.hy
    gam = np.zeros((grid.nx + 1, grid.ny + 1))
    gam[:, 1:-1] += (ux[:, 1:] - ux[:, :-1]) / hy
    gam[:, 0] += 2.0 * ux[:, 0] / hy
    gam[:, -1] += -2.0 * ux[:, -1] / hy
    gam[1:-1, :] += (uy[1:, :] - uy[:-1, :]) / hx
    gam[0, :] += 2.0 * uy[0, :] / hx
    gam[-1, :] += -2.0 * uy[-1, :] / hx
    return gam


def _shear_rate_nodes_t(grid: Grid, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact transpose of :func:`_shear_rate_nodes`."""
    hx, hy = grid.hx, grid.hy
    ux = np.zeros((grid.nx + 1, grid.ny))
    uy = np.zeros((grid.nx, grid.ny + 1))
    ux[:, 1:] += w[:, 1:-1] / hy
    ux[:, :-1] -= w[:, 1:-1] / hy
    ux[:, 0] += 2.0 * w[:, 0] / hy
    ux[:, -1] += -2.0 * w[:, -1] / hy
    uy[1:, :] += w[1:-1, :] / hx
    uy[:-1, :] -= w[1:-1, :] / hx
    uy[0, :] += 2.0 * w[0, :] / hx
    uy[-1, :] += -2.0 * w[-1, :] / hx
    return ux, uy


def _viscous_apply(
    grid: Grid,
    nu_cells: np.ndarray,
    nu_nodes: np.ndarray,
    ux: np.ndarray,
    uy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """2 div(nu D(u)) in flux-difference form (D = symmetric gradient).

    Wall closures use reflected tangential ghosts, i.e. the wall shear is the
    one-sided gradient over half a cell.  The resulting operator is the exact
    (negative semi-definite) gradient of the discrete dissipation
    ``sum_cells 2 nu [(dx ux)^2 + (dy uy)^2] + sum_nodes w nu gamma^2`` with
    half node weights on the wall edges, hence symmetric.
    """
    hx, hy = grid.hx, grid.hy
    txx = 2.0 * nu_cells * (ux[1:, :] - ux[:-1, :]) / hx
    tyy = 2.0 * nu_cells * (uy[:, 1:] - uy[:, :-1]) / hy
    txy = nu_nodes * _shear_rate_nodes(grid, ux, uy)

    vx = np.zeros_like(ux)
    vx[1:-1, :] = (txx[1:, :] - txx[:-1, :]) / hx
    vx[1:-1, :] += (txy[1:-1, 1:] - txy[1:-1, :-1]) / hy

    vy = np.zeros_like(uy)
    vy[:, 1:-1] = (tyy[:, 1:] - tyy[:, :-1]) / hy
    vy[:, 1:-1] += (txy[1:, 1:-1] - txy[:-1, 1:-1]) / hx
    return vx, vy


def _viscous_coeff_vjp(
    grid: Grid,
    ux: np.ndarray,
    uy: np.ndarray,
    wx: np.ndarray,
    wy: np.ndarray,
) -> np.ndarray:
    """Transpose of dnu -> 2 div(dnu D(u)) with respect to the cell viscosity.

    Returns the cell field g with <2 div(dnu D u), w> = <dnu, g> for every
    cell perturbation dnu (node viscosities averaged from cells).
    """
    hx, hy = grid.hx, grid.hy
    # adjoint of the flux differences
    txx_adj = np.zeros((grid.nx, grid.ny))
    txx_adj[1:, :] += wx[1:-1, :] / hx
    txx_adj[:-1, :] -= wx[1:-1, :] / hx
    tyy_adj = np.zeros((grid.nx, grid.ny))
    tyy_adj[:, 1:] += wy[:, 1:-1] / hy
    tyy_adj[:, :-1] -= wy[:, 1:-1] / hy
    txy_adj = np.zeros((grid.nx + 1, grid.ny + 1))
    txy_adj[1:-1, 1:] += wx[1:-1, :] / hy
    txy_adj[1:-1, :-1] -= wx[1:-1, :] / hy
    txy_adj[1:, 1:-1] += wy[:, 1:-1] / hx
    txy_adj[:-1, 1:-1] -= wy[:, 1:-1] / hx

    g = 2.0 * ((ux[1:, :] - ux[:-1, :]) / hx) * txx_adj
    g += 2.0 * ((uy[:, 1:] - uy[:, :-1]) / hy) * tyy_adj
    g += _cells_to_nodes_t(grid, _shear_rate_nodes(grid, ux, uy) * txy_adj)
    return g


def viscous_term(phi: ScalarField, u: VectorField, laws) -> VectorField:
    """Divergence of the symmetric viscous stress, 2 div(nu(phi) D(u))."""
    grid = u.grid
    nu_c = laws.viscosity(phi.data)
    nu_n = _cells_to_nodes(grid, nu_c)
    vx, vy = _viscous_apply(grid, nu_c, nu_n, u.x, u.y)
    return VectorField(grid, vx, vy)


# ---------------------------------------------------------------------------
# pressure Poisson solve (cosine transform; exact for this stencil)
# ---------------------------------------------------------------------------


def _poisson_eigenvalues(grid: Grid) -> np.ndarray:
    kx = np.arange(grid.nx)
    ky = np.arange(grid.ny)
    ex = (2.0 * np.cos(np.pi * kx / grid.nx) - 2.0) / grid.hx**2
    ey = (2.0 * np.cos(np.pi * ky / grid.ny) - 2.0) / grid.hy**2
    eig = ex[:, None] + ey[None, :]
    eig[0, 0] = 1.0  # constant mode handled separately
    return eig


def _poisson_solve(grid: Grid, rhs: np.ndarray, eig: np.ndarray | None = None) -> np.ndarray:
    """Solve div(grad(p)) = rhs - mean(rhs) with zero-mean p, exactly.

    The homogeneous-Neumann five-point stencil on cell centres is
    diagonalised by the type-II cosine transform, so the residual is at
    rounding level rather than an iteration tolerance.
    """
    if eig is None:
        eig = _poisson_eigenvalues(grid)
    workers = _fft_workers()
    rhat = scipy.fft.dctn(rhs, type=2, workers=workers)
    rhat[0, 0] = 0.0  # remove the mean: compatibility for the Neumann problem
    phat = rhat / eig
    p = scipy.fft.idctn(phat, type=2, workers=workers)
    return p - p.mean()


def poisson_pressure(rhs: ScalarField, tol: float = 1e-10) -> ScalarField:
    """Zero-mean solution of the Neumann pressure Poisson problem.

    The rhs must have zero mean up to ``tol`` times its norm; the exact mean
    is removed before solving so the discrete system is consistent.
    """
    grid = rhs.grid
    scale = float(np.abs(rhs.data).max())
    mean = float(rhs.data.mean())
    if scale > 0.0 and abs(mean) > max(tol * scale, tol):
        import warnings

        warnings.warn(
            f"pressure rhs mean {mean:.3e} exceeds tolerance {tol:.1e}; removing it",
            RuntimeWarning,
            stacklevel=2,
        )
    return ScalarField(grid, _poisson_solve(grid, rhs.data))


def _leray_project(
    grid: Grid,
    ux: np.ndarray,
    uy: np.ndarray,
    eig: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Remove the discrete gradient part: returns (ux', uy', p).

    u' = u - grad(p) with div(u') at rounding level; p has zero mean.  The
    map u -> u' is linear, idempotent and self-transposed, which the adjoint
    sweep uses directly.
    """
    p = _poisson_solve(grid, _div(grid, ux, uy), eig)
    gx, gy = _grad(grid, p)
    out_x = ux - gx
    out_y = uy - gy
    return out_x, out_y, p


def velocity_from_stream(grid: Grid, psi: np.ndarray) -> VectorField:
    """Divergence-free velocity from a node stream function (0 on the walls).

    ux = d(psi)/dy, uy = -d(psi)/dx; the discrete divergence cancels to
    rounding for any psi, and constant wall values give no-slip normal faces.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (grid.nx + 1, grid.ny + 1):
        raise ValueError(f"stream function shape {psi.shape} != {(grid.nx + 1, grid.ny + 1)}")
    ux = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    uy = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return VectorField(grid, ux, uy)


def cfl_number(u: VectorField, dt: float) -> float:
    """Advective CFL number max(|ux|/hx, |uy|/hy) * dt."""
    grid = u.grid
    cx = float(np.abs(u.x).max()) / grid.hx if u.x.size else 0.0
    cy = float(np.abs(u.y).max()) / grid.hy if u.y.size else 0.0
    return dt * max(cx, cy)
