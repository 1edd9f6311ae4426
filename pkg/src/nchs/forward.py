"""Semi-implicit forward solver for the coupled phase/flow system.

Time stepping splits each step into two frozen-coefficient linear solves:

1. Phase update.  The convective and nonlocal fluxes are taken explicitly at
   t_n while the degenerate diffusion ``div(lambda(phi^n) grad phi)`` acts on
   phi^{n+1}, so the system matrix  I/dt + G^T diag(lambda_f) G  is symmetric
   positive definite and the new phase field solves

       (I/dt + G^T Lam G) phi^{n+1} = phi^n/dt - div(u^n avg(phi^n))
                                      - div(avg(m(phi^n)) (grad K * phi^n)).

2. Momentum update.  Advection, the nonlocal capillary force (built from the
   fresh phi^{n+1}) and the control act explicitly; the variable-viscosity
   stress is implicit with viscosity frozen at phi^{n+1}.  The provisional
   velocity is then made discretely divergence free by an exact projection,
   and the pressure increment is kept as the reported pressure.

Both solves are direct sparse factorizations; the projection uses the exact
fast-transform solver, so snapshot divergence sits at rounding level.  Pure
phases phi = +-1 with zero velocity and zero force are exact fixed points:
the degenerate mobility kills the nonlocal flux and the projection removes
any constant force residue exactly.

The per-step coefficient assembly is exposed (``ch_build``/``ns_build`` plus
the matching apply functions) because the sensitivity sweeps must linearize
around bit-identical operators.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import geometry as geo
from .controls import ControlField
from .geometry import Grid, ScalarField, VectorField
from .kernels import DiscreteKernel, _conv_c, _gradconv_faces
from .material import MaterialLaws, eval_clamped, initial_admissibility


# ---------------------------------------------------------------------------
# configuration, states, trajectories


@dataclass
class SolverConfig:
    """Time step, horizon and runtime tolerances."""

    dt: float
    n_steps: int
    tol_div: float = 1e-10
    tol_bound: float = 1e-8
    tol_poisson: float = 1e-10
    cfl_safety: float = 0.5
    check_admissibility: bool = True
    allow_unsafe_laws: bool = False

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @classmethod
    def from_duration(cls, dt: float, t_final: float, **kw) -> "SolverConfig":
        n = int(round(t_final / dt))
        if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
            raise ValueError(f"t_final={t_final} is not an integer multiple of dt={dt}")
        return cls(dt=dt, n_steps=n, **kw)

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps


@dataclass
class StateSnapshot:
    """One stored time level: velocity, phase field and pressure."""

    time: float
    u: VectorField
    phi: ScalarField
    pressure: ScalarField

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def div_defect(self) -> float:
        return float(np.abs(geo._div(self.grid, self.u.x, self.u.y)).max())


@dataclass
class Trajectory:
    """States at t_0 .. t_N plus the control that produced them."""

    grid: Grid
    dt: float
    snapshots: list[StateSnapshot]
    control: Optional[ControlField] = None
    provenance: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.snapshots) - 1

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def final(self) -> StateSnapshot:
        return self.snapshots[-1]

    def state_arrays(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.snapshots[n]
        return s.u.x, s.u.y, s.phi.data


class SolverError(RuntimeError):
    """Base class for solver failures; carries any partial trajectory."""

    def __init__(self, message: str, partial: Optional[Trajectory] = None):
        super().__init__(message)
        self.partial = partial


class BoundViolationError(SolverError):
    def __init__(self, step: int, value: float, tol: float, partial=None):
        super().__init__(
            f"phase bound violated at step {step}: max(|phi|) - 1 = {value:.3e} > {tol:.1e}",
            partial,
        )
        self.step = step
        self.value = value


class AdmissibilityError(SolverError):
    pass


# ---------------------------------------------------------------------------
# per-grid sparse structure (cached: the matrices depend only on the mesh)


@dataclass
class _GridMatrices:
    gx: sp.csr_matrix       # cells -> interior x-face differences / hx
    gy: sp.csr_matrix       # cells -> interior y-face differences / hy
    grad: sp.csr_matrix     # [gx; gy]
    cx: sp.csr_matrix       # interior x-faces -> cell d(ux)/dx
    cy: sp.csr_matrix       # interior y-faces -> cell d(uy)/dy
    gamma: sp.csr_matrix    # interior faces -> node shear rate (ghost closure)
    node_w: np.ndarray      # node quadrature weights (1, edge 1/2, corner 1/4)
    n_ifx: int
    n_ify: int


_GRID_MATS: dict = {}


def _grid_matrices(grid: Grid) -> _GridMatrices:
    key = (grid.nx, grid.ny, grid.hx, grid.hy)
    hit = _GRID_MATS.get(key)
    if hit is not None:
        return hit
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    n_c = nx * ny
    n_ifx = (nx - 1) * ny
    n_ify = nx * (ny - 1)

    # gx: row f=(i-1)*ny+j for face (i, j), i in 1..nx-1
    ii = np.repeat(np.arange(1, nx), ny)
    jj = np.tile(np.arange(ny), nx - 1)
    rows = np.concatenate([np.arange(n_ifx), np.arange(n_ifx)])
    cols = np.concatenate([ii * ny + jj, (ii - 1) * ny + jj])
    vals = np.concatenate([np.full(n_ifx, 1.0 / hx), np.full(n_ifx, -1.0 / hx)])
    gx = sp.csr_matrix((vals, (rows, cols)), shape=(n_ifx, n_c))

    ii = np.repeat(np.arange(nx), ny - 1)
    jj = np.tile(np.arange(1, ny), nx)
    rows = np.concatenate([np.arange(n_ify), np.arange(n_ify)])
    cols = np.concatenate([ii * ny + jj, ii * ny + jj - 1])
    vals = np.concatenate([np.full(n_ify, 1.0 / hy), np.full(n_ify, -1.0 / hy)])
    gy = sp.csr_matrix((vals, (rows, cols)), shape=(n_ify, n_c))

    grad = sp.vstack([gx, gy], format="csr")
    # cell-centered normal strain rates are minus the transposed differences
    cx = (-gx.T).tocsr()
    cy = (-gy.T).tocsr()

    # node shear rate with reflected-ghost wall closure, columns = stacked
    # interior faces [x-faces; y-faces]; boundary faces are zero and dropped
    n_nodes = (nx + 1) * (ny + 1)
    r, c, v = [], [], []

    def node(i, j):
        return i * (ny + 1) + j

    # d(ux)/dy contributions from interior x-face (i, j), column (i-1)*ny+j
    for i in range(1, nx):
        for j in range(ny):
            col = (i - 1) * ny + j
            if j >= 1:
                r.append(node(i, j)); c.append(col); v.append(1.0 / hy)
            else:
                r.append(node(i, 0)); c.append(col); v.append(2.0 / hy)
            if j + 1 <= ny - 1:
                r.append(node(i, j + 1)); c.append(col); v.append(-1.0 / hy)
            else:
                r.append(node(i, ny)); c.append(col); v.append(-2.0 / hy)
    # d(uy)/dx contributions from interior y-face (i, j), column offset n_ifx
    for i in range(nx):
        for j in range(1, ny):
            col = n_ifx + i * (ny - 1) + (j - 1)
            if i >= 1:
                r.append(node(i, j)); c.append(col); v.append(1.0 / hx)
            else:
                r.append(node(0, j)); c.append(col); v.append(2.0 / hx)
            if i + 1 <= nx - 1:
                r.append(node(i + 1, j)); c.append(col); v.append(-1.0 / hx)
            else:
                r.append(node(nx, j)); c.append(col); v.append(-2.0 / hx)
    gamma = sp.csr_matrix((v, (r, c)), shape=(n_nodes, n_ifx + n_ify))

    node_w = np.ones((nx + 1, ny + 1))
    node_w[0, :] *= 0.5
    node_w[-1, :] *= 0.5
    node_w[:, 0] *= 0.5
    node_w[:, -1] *= 0.5

    mats = _GridMatrices(gx, gy, grad, cx, cy, gamma, node_w.ravel(), n_ifx, n_ify)
    _GRID_MATS[key] = mats
    return mats


def _gather_faces(grid: Grid, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Stack the interior face values of a face vector field."""
    return np.concatenate([fx[1:-1, :].ravel(), fy[:, 1:-1].ravel()])


def _scatter_faces(grid: Grid, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of _gather_faces; boundary faces come back as zero."""
    n_ifx = (grid.nx - 1) * grid.ny
    fx = np.zeros((grid.nx + 1, grid.ny))
    fy = np.zeros((grid.nx, grid.ny + 1))
    fx[1:-1, :] = vec[:n_ifx].reshape(grid.nx - 1, grid.ny)
    fy[:, 1:-1] = vec[n_ifx:].reshape(grid.nx, grid.ny - 1)
    return fx, fy


# ---------------------------------------------------------------------------
# phase step


@dataclass
class ChStepData:
    """Frozen coefficients of one phase update, built from phi^n alone."""

    lu: object                 # factorization of I/dt + G^T Lam G
    ax: np.ndarray             # face averages of phi^n
    ay: np.ndarray
    m_fx: np.ndarray           # face-averaged mobility m(phi^n)
    m_fy: np.ndarray
    gkx: np.ndarray            # face-sampled grad K * phi^n
    gky: np.ndarray
    lam_fx: np.ndarray         # face-averaged diffusivity lambda(phi^n)
    lam_fy: np.ndarray


def ch_build(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws, dt: float,
             phi_n: np.ndarray) -> ChStepData:
    mats = _grid_matrices(grid)
    lam_c = eval_clamped(laws, "diffusivity", phi_n)
    lam_fx = 0.5 * (lam_c[1:, :] + lam_c[:-1, :])
    lam_fy = 0.5 * (lam_c[:, 1:] + lam_c[:, :-1])
    lam_vec = np.concatenate([lam_fx.ravel(), lam_fy.ravel()])
    n_c = grid.n_cells
    m = sp.eye(n_c, format="csr") / dt + mats.grad.T @ sp.diags(lam_vec) @ mats.grad
    lu = splu(m.tocsc())

    m_c = eval_clamped(laws, "mobility", phi_n)
    ax, ay = geo._avg_faces(grid, phi_n)
    m_fx_full, m_fy_full = geo._avg_faces(grid, m_c)
    gkx, gky = _gradconv_faces(dk, phi_n)
    return ChStepData(lu, ax, ay, m_fx_full, m_fy_full, gkx, gky,
                      _pad_ifx(grid, lam_fx), _pad_ify(grid, lam_fy))


def _pad_ifx(grid: Grid, interior: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.nx + 1, grid.ny))
    out[1:-1, :] = interior
    return out


def _pad_ify(grid: Grid, interior: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.nx, grid.ny + 1))
    out[:, 1:-1] = interior
    return out


def ch_apply(grid: Grid, dt: float, data: ChStepData, phi_n: np.ndarray,
             ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    """Advance the phase field one step using prebuilt coefficients."""
    conv = geo._div(grid, ux * data.ax, uy * data.ay)
    nonloc = geo._div(grid, data.m_fx * data.gkx, data.m_fy * data.gky)
    rhs = phi_n / dt - conv - nonloc
    return data.lu.solve(rhs.ravel()).reshape(grid.nx, grid.ny)


def ch_step(phi: ScalarField, u: VectorField, dk: DiscreteKernel,
            laws: MaterialLaws, dt: float) -> ScalarField:
    """One conservative phase update; the cell mean of phi is preserved."""
    grid = phi.grid
    data = ch_build(grid, dk, laws, dt, phi.data)
    out = ch_apply(grid, dt, data, phi.data, u.x, u.y)
    return ScalarField(grid, out)


# ---------------------------------------------------------------------------
# momentum step


@dataclass
class NsStepData:
    """Frozen coefficients of one momentum update, built from phi^{n+1}."""

    lu: object                 # factorization of I/dt + A_visc(nu(phi^{n+1}))
    nu_c: np.ndarray
    nu_n: np.ndarray
    kphi: np.ndarray           # K * phi^{n+1} at centers
    gpx: np.ndarray            # grad phi^{n+1} on faces
    gpy: np.ndarray
    akx: np.ndarray            # face averages of K * phi^{n+1}
    aky: np.ndarray


def _viscous_matrix(grid: Grid, nu_c: np.ndarray, nu_n: np.ndarray) -> sp.csr_matrix:
    """Assemble -2 div(nu D .) on stacked interior faces (SPD part)."""
    mats = _grid_matrices(grid)
    dn = sp.diags(nu_c.ravel())
    axx = 2.0 * (mats.cx.T @ dn @ mats.cx)
    ayy = 2.0 * (mats.cy.T @ dn @ mats.cy)
    a = sp.block_diag([axx, ayy], format="csr")
    a = a + mats.gamma.T @ sp.diags(mats.node_w * nu_n.ravel()) @ mats.gamma
    return a.tocsr()


def ns_build(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws, dt: float,
             phi_np1: np.ndarray) -> NsStepData:
    nu_c = eval_clamped(laws, "viscosity", phi_np1)
    nu_n = geo._cells_to_nodes(grid, nu_c)
    n_if = (grid.nx - 1) * grid.ny + grid.nx * (grid.ny - 1)
    msys = sp.eye(n_if, format="csr") / dt + _viscous_matrix(grid, nu_c, nu_n)
    lu = splu(msys.tocsc())
    kphi = _conv_c(dk, phi_np1)
    gpx, gpy = geo._grad(grid, phi_np1)
    akx, aky = geo._avg_faces(grid, kphi)
    return NsStepData(lu, nu_c, nu_n, kphi, gpx, gpy, akx, aky)


def capillary_force(grid: Grid, data: NsStepData) -> tuple[np.ndarray, np.ndarray]:
    """Nonlocal force -avg(K * phi) grad(phi) on faces."""
    return -data.akx * data.gpx, -data.aky * data.gpy


def ns_apply(grid: Grid, dt: float, data: NsStepData,
             ux_n: np.ndarray, uy_n: np.ndarray,
             vx: np.ndarray, vy: np.ndarray,
             eig: Optional[np.ndarray] = None):
    """Advance the velocity one step; returns (ux, uy, pi, ustar_x, ustar_y)."""
    advx, advy = geo._advect_velocity_bilinear(grid, ux_n, uy_n, ux_n, uy_n)
    fx, fy = capillary_force(grid, data)
    rx = ux_n / dt - advx + fx + vx
    ry = uy_n / dt - advy + fy + vy
    rhs = _gather_faces(grid, rx, ry)
    star = data.lu.solve(rhs)
    sx, sy = _scatter_faces(grid, star)
    px, py, p = geo._leray_project(grid, sx, sy, eig=eig)
    return px, py, p / dt, sx, sy


def reconstruct_ustar(grid: Grid, snap: StateSnapshot,
                      dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Recover the pre-projection velocity from a stored state.

    The projection subtracts dt * grad(pi), so u* = u + dt * grad(pi); the
    sensitivity sweeps need u* but trajectories only store the end state.
    """
    gx, gy = geo._grad(grid, snap.pressure.data)
    return snap.u.x + dt * gx, snap.u.y + dt * gy


# ---------------------------------------------------------------------------
# diagnostics


def mass(phi: ScalarField) -> float:
    """Cell integral of phi (conserved by the phase update)."""
    return float(phi.data.sum()) * phi.grid.cell_volume


def bound_violation(phi: ScalarField | np.ndarray) -> float:
    """max(|phi|) - 1; nonpositive means the physical bounds hold."""
    data = phi.data if isinstance(phi, ScalarField) else phi
    return float(np.abs(data).max()) - 1.0


# ---------------------------------------------------------------------------
# time loop


def simulate(phi0: ScalarField, u0: VectorField, control: Optional[ControlField],
             dk: DiscreteKernel, laws: MaterialLaws, cfg: SolverConfig) -> Trajectory:
    """Run the split scheme from (phi0, u0) under the given force control.

    Preconditions: the initial data must be admissible (|phi0| <= 1 with
    finite energy) and the material laws structurally safe unless explicitly
    overridden.  The run aborts with the partial trajectory attached if the
    phase bound drifts beyond cfg.tol_bound or a projection leaves observable
    divergence.
    """
    grid = phi0.grid
    if u0.grid is not grid and (u0.grid.nx, u0.grid.ny) != (grid.nx, grid.ny):
        raise ValueError("phi0 and u0 live on different grids")
    if control is not None and control.n_steps < cfg.n_steps:
        raise ValueError(
            f"control has {control.n_steps} samples, need {cfg.n_steps}"
        )
    if not laws.hypothesis_clean and not cfg.allow_unsafe_laws:
        raise AdmissibilityError(
            f"material bundle '{laws.name}' violates the structural hypotheses; "
            "set allow_unsafe_laws=True to run anyway"
        )
    if cfg.check_admissibility:
        report = initial_admissibility(phi0, laws, dk)
        if not report.admissible:
            raise AdmissibilityError(f"inadmissible initial phase field: {report}")

    v0 = bound_violation(phi0)
    if v0 > cfg.tol_bound:
        raise BoundViolationError(0, v0, cfg.tol_bound)

    eig = geo._poisson_eigenvalues(grid)
    ux = u0.x.copy()
    uy = u0.y.copy()
    geo.enforce_noslip(ux, uy)
    # start from a discretely divergence-free velocity
    d0 = float(np.abs(geo._div(grid, ux, uy)).max())
    if d0 > cfg.tol_div:
        ux, uy, _ = geo._leray_project(grid, ux, uy, eig=eig)
    phi = phi0.data.copy()

    snaps = [StateSnapshot(0.0, VectorField(grid, ux.copy(), uy.copy()),
                           ScalarField(grid, phi.copy()), ScalarField.zeros(grid))]
    traj = Trajectory(grid, cfg.dt, snaps, control=control)

    zx = np.zeros((grid.nx + 1, grid.ny))
    zy = np.zeros((grid.nx, grid.ny + 1))
    cfl_warned = False
    for n in range(cfg.n_steps):
        ch = ch_build(grid, dk, laws, cfg.dt, phi)
        phi_new = ch_apply(grid, cfg.dt, ch, phi, ux, uy)

        viol = bound_violation(phi_new)
        if viol > cfg.tol_bound:
            raise BoundViolationError(n + 1, viol, cfg.tol_bound, partial=traj)

        ns = ns_build(grid, dk, laws, cfg.dt, phi_new)
        if control is not None:
            vx, vy = control.vx[n], control.vy[n]
        else:
            vx, vy = zx, zy
        ux, uy, pi, _, _ = ns_apply(grid, cfg.dt, ns, ux, uy, vx, vy, eig=eig)

        ddef = float(np.abs(geo._div(grid, ux, uy)).max())
        if ddef > cfg.tol_div:
            raise SolverError(
                f"projection left divergence {ddef:.3e} > {cfg.tol_div:.1e} at step {n + 1}",
                partial=traj,
            )
        phi = phi_new
        snaps.append(StateSnapshot((n + 1) * cfg.dt,
                                   VectorField(grid, ux.copy(), uy.copy()),
                                   ScalarField(grid, phi.copy()),
                                   ScalarField(grid, pi)))

        if not cfl_warned:
            cfl = geo.cfl_number(VectorField(grid, ux, uy, noslip=False), cfg.dt)
            if cfl > cfg.cfl_safety:
                warnings.warn(
                    f"advective CFL number {cfl:.3f} exceeds safety factor "
                    f"{cfg.cfl_safety} at step {n + 1}",
                    RuntimeWarning,
                    stacklevel=2,
                )
                cfl_warned = True
    return traj


# ---------------------------------------------------------------------------
# discrete energy ledger


@dataclass
class EnergyReport:
    """Per-interval budget of the discrete energy identity.

    residual[n] tests the interval (t_n, t_{n+1}):

        (E^{n+1} - E^n)/dt + mixing_dissipation[n] + viscous_dissipation[n]
            - nonlocal_power[n] - transport_power[n] - control_power[n]

    with every flux evaluated at the start state.  l1_residual is the
    dt-weighted l1 sum, the discrete analogue of integrating the defect in
    time; it halves under time-step refinement for a first-order splitting.
    """

    times: np.ndarray
    energy: np.ndarray                  # N + 1 values of E = (|u|^2 + |phi|^2)/2
    kinetic: np.ndarray
    phase: np.ndarray
    mixing_dissipation: np.ndarray      # N interval values
    viscous_dissipation: np.ndarray
    nonlocal_power: np.ndarray
    transport_power: np.ndarray
    control_power: np.ndarray
    residual: np.ndarray
    l1_residual: float


def _dissipation_terms(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws,
                       ux, uy, phi, vx, vy):
    vol = grid.cell_volume
    lam_c = eval_clamped(laws, "diffusivity", phi)
    lfx = 0.5 * (lam_c[1:, :] + lam_c[:-1, :])
    lfy = 0.5 * (lam_c[:, 1:] + lam_c[:, :-1])
    gpx, gpy = geo._grad(grid, phi)
    d_mix = vol * (float(np.sum(lfx * gpx[1:-1, :] ** 2))
                   + float(np.sum(lfy * gpy[:, 1:-1] ** 2)))

    nu_c = eval_clamped(laws, "viscosity", phi)
    nu_n = geo._cells_to_nodes(grid, nu_c)
    mats = _grid_matrices(grid)
    dxux = (ux[1:, :] - ux[:-1, :]) / grid.hx
    dyuy = (uy[:, 1:] - uy[:, :-1]) / grid.hy
    gam = geo._shear_rate_nodes(grid, ux, uy)
    w = mats.node_w.reshape(grid.nx + 1, grid.ny + 1)
    d_visc = vol * (2.0 * float(np.sum(nu_c * (dxux ** 2 + dyuy ** 2)))
                    + float(np.sum(w * nu_n * gam ** 2)))

    m_c = eval_clamped(laws, "mobility", phi)
    mfx, mfy = geo._avg_faces(grid, m_c)
    gkx, gky = _gradconv_faces(dk, phi)
    p_nonloc = vol * (float(np.sum(mfx * gkx * gpx)) + float(np.sum(mfy * gky * gpy)))

    kphi = _conv_c(dk, phi)
    akx, aky = geo._avg_faces(grid, kphi)
    p_transport = vol * (float(np.sum(-akx * gpx * ux)) + float(np.sum(-aky * gpy * uy)))

    p_ctrl = vol * (float(np.sum(vx * ux)) + float(np.sum(vy * uy)))
    return d_mix, d_visc, p_nonloc, p_transport, p_ctrl


def energy_report(traj: Trajectory, dk: DiscreteKernel, laws: MaterialLaws) -> EnergyReport:
    grid = traj.grid
    vol = grid.cell_volume
    n = traj.n_steps
    kin = np.empty(n + 1)
    ph = np.empty(n + 1)
    for k, s in enumerate(traj.snapshots):
        kin[k] = 0.5 * vol * (float(np.sum(s.u.x ** 2)) + float(np.sum(s.u.y ** 2)))
        ph[k] = 0.5 * vol * float(np.sum(s.phi.data ** 2))
    energy = kin + ph

    zx = np.zeros((grid.nx + 1, grid.ny))
    zy = np.zeros((grid.nx, grid.ny + 1))
    d_mix = np.empty(n)
    d_visc = np.empty(n)
    p_nl = np.empty(n)
    p_tr = np.empty(n)
    p_ct = np.empty(n)
    res = np.empty(n)
    for k in range(n):
        ux, uy, phi = traj.state_arrays(k)
        if traj.control is not None and k < traj.control.n_steps:
            vx, vy = traj.control.vx[k], traj.control.vy[k]
        else:
            vx, vy = zx, zy
        d_mix[k], d_visc[k], p_nl[k], p_tr[k], p_ct[k] = _dissipation_terms(
            grid, dk, laws, ux, uy, phi, vx, vy)
        res[k] = ((energy[k + 1] - energy[k]) / traj.dt
                  + d_mix[k] + d_visc[k] - p_nl[k] - p_tr[k] - p_ct[k])
    return EnergyReport(
        times=traj.times,
        energy=energy,
        kinetic=kin,
        phase=ph,
        mixing_dissipation=d_mix,
        viscous_dissipation=d_visc,
        nonlocal_power=p_nl,
        transport_power=p_tr,
        control_power=p_ct,
        residual=res,
        l1_residual=float(np.sum(np.abs(res))) * traj.dt,
    )
