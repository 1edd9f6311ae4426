"""Tangent and adjoint sweeps of the discrete solver.

Both sweeps linearize the time stepper exactly as implemented: every frozen
coefficient, interpolation and ghost closure of the forward step is
differentiated, and the adjoint is the elementwise transpose of the tangent
under the raw (unweighted) array dot product.  Step operators are rebuilt
from the stored trajectory through the same assembly routines the forward
solver used, so the linearization point is bit-identical to the run.

Conventions.  "Raw" adjoint vectors pair with plain array dot products; the
physical L2 adjoints reported to callers are the raw vectors divided by the
cell volume, and the control-gradient companion divides by volume * dt as
well, so that

    gradient of the cost at step n  =  gamma * v^n + ctrl_p^n

holds in the L2-in-space-and-time inner product.  Reported adjoint velocity
snapshots are divergence free (the exact projection is applied); the raw
control companion is kept unprojected because it is the exact discrete
gradient component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .controls import ControlField, CostWeights
from .forward import (
    ChStepData,
    NsStepData,
    SolverConfig,
    Trajectory,
    _gather_faces,
    _grid_matrices,
    _scatter_faces,
    ch_build,
    ns_build,
    reconstruct_ustar,
    simulate,
)
from .geometry import Grid, enforce_noslip
from .kernels import DiscreteKernel, _conv_c, _gradconv_faces, _gradconv_faces_t
from .material import MaterialLaws, eval_clamped


# ---------------------------------------------------------------------------
# single-step linearizations


def _ch_tangent(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws, dt: float,
                ch: ChStepData, phi_n, ux, uy, phi_np1, dphi, dux, duy) -> np.ndarray:
    """Directional derivative of the phase update."""
    m_d1 = eval_clamped(laws, "mobility_d1", phi_n)
    lam_d1 = eval_clamped(laws, "diffusivity_d1", phi_n)

    dax, day = geo._avg_faces(grid, dphi)
    dmx, dmy = geo._avg_faces(grid, m_d1 * dphi)
    dgkx, dgky = _gradconv_faces(dk, dphi)
    fx = dux * ch.ax + ux * dax + dmx * ch.gkx + ch.m_fx * dgkx
    fy = duy * ch.ay + uy * day + dmy * ch.gky + ch.m_fy * dgky
    rhs = dphi / dt - geo._div(grid, fx, fy)

    # perturbing the implicit diffusivity matrix moves G^T dLam G phi^{n+1}
    # to the right-hand side with opposite sign
    dlx, dly = geo._avg_faces(grid, lam_d1 * dphi)
    gpx, gpy = geo._grad(grid, phi_np1)
    rhs = rhs + geo._div(grid, dlx * gpx, dly * gpy)
    return ch.lu.solve(rhs.ravel()).reshape(grid.nx, grid.ny)


def _ch_adjoint(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws, dt: float,
                ch: ChStepData, phi_n, ux, uy, phi_np1, q):
    """Transpose of _ch_tangent: returns (adj_phi_n, adj_ux, adj_uy)."""
    m_d1 = eval_clamped(laws, "mobility_d1", phi_n)
    lam_d1 = eval_clamped(laws, "diffusivity_d1", phi_n)

    w = ch.lu.solve(q.ravel(), trans="T").reshape(grid.nx, grid.ny)
    gwx, gwy = geo._grad(grid, w)

    adj_ux = ch.ax * gwx
    adj_uy = ch.ay * gwy
    enforce_noslip(adj_ux, adj_uy)

    adj_phi = w / dt
    adj_phi = adj_phi + geo._avg_faces_t(grid, ux * gwx, uy * gwy)
    adj_phi = adj_phi + m_d1 * geo._avg_faces_t(grid, ch.gkx * gwx, ch.gky * gwy)
    adj_phi = adj_phi + _gradconv_faces_t(dk, ch.m_fx * gwx, ch.m_fy * gwy)
    gpx, gpy = geo._grad(grid, phi_np1)
    adj_phi = adj_phi - lam_d1 * geo._avg_faces_t(grid, gpx * gwx, gpy * gwy)
    return adj_phi, adj_ux, adj_uy


def _ns_tangent(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws, dt: float,
                ns: NsStepData, ux_n, uy_n, phi_np1, usx, usy,
                dux, duy, dphi1, dvx, dvy, eig):
    """Directional derivative of the momentum update; returns (dux1, duy1)."""
    nu_d1 = eval_clamped(laws, "viscosity_d1", phi_np1)

    a1x, a1y = geo._advect_velocity_bilinear(grid, dux, duy, ux_n, uy_n)
    a2x, a2y = geo._advect_velocity_bilinear(grid, ux_n, uy_n, dux, duy)

    dk_c = _conv_c(dk, dphi1)
    dax, day = geo._avg_faces(grid, dk_c)
    dgx, dgy = geo._grad(grid, dphi1)
    fx = -(dax * ns.gpx) - ns.akx * dgx
    fy = -(day * ns.gpy) - ns.aky * dgy

    rx = dux / dt - a1x - a2x + fx + dvx
    ry = duy / dt - a1y - a2y + fy + dvy

    # viscosity perturbation acts on the recovered provisional velocity
    dnu = nu_d1 * dphi1
    dnu_n = geo._cells_to_nodes(grid, dnu)
    wx, wy = geo._viscous_apply(grid, dnu, dnu_n, usx, usy)

    ds = ns.lu.solve(_gather_faces(grid, rx + wx, ry + wy))
    dsx, dsy = _scatter_faces(grid, ds)
    dux1, duy1, _ = geo._leray_project(grid, dsx, dsy, eig=eig)
    return dux1, duy1


def _ns_adjoint(grid: Grid, dk: DiscreteKernel, laws: MaterialLaws, dt: float,
                ns: NsStepData, ux_n, uy_n, phi_np1, usx, usy, pux, puy, eig):
    """Transpose of _ns_tangent.

    Returns (adj_ux_n, adj_uy_n, adj_phi_np1, bx, by) where (bx, by) is both
    the raw control adjoint and the pre-advection momentum adjoint.
    """
    nu_d1 = eval_clamped(laws, "viscosity_d1", phi_np1)

    ax_, ay_, _ = geo._leray_project(grid, pux, puy, eig=eig)
    b = ns.lu.solve(_gather_faces(grid, ax_, ay_), trans="T")
    bx, by = _scatter_faces(grid, b)

    vjpa_x, vjpa_y = geo._advect_bilinear_vjp_a(grid, ux_n, uy_n, bx, by)
    vjpb_x, vjpb_y = geo._advect_bilinear_vjp_b(grid, ux_n, uy_n, bx, by)
    adj_ux = bx / dt - vjpa_x - vjpb_x
    adj_uy = by / dt - vjpa_y - vjpb_y
    enforce_noslip(adj_ux, adj_uy)

    adj_phi = -_conv_c(dk, geo._avg_faces_t(grid, ns.gpx * bx, ns.gpy * by))
    adj_phi = adj_phi + geo._div(grid, ns.akx * bx, ns.aky * by)
    adj_phi = adj_phi + nu_d1 * geo._viscous_coeff_vjp(grid, usx, usy, bx, by)
    return adj_ux, adj_uy, adj_phi, bx, by


# ---------------------------------------------------------------------------
# tangent sweep


@dataclass
class LinearizedTrajectory:
    """State perturbations (du, dphi) at every stored time level."""

    grid: Grid
    dt: float
    dux: np.ndarray   # (n_steps + 1, nx + 1, ny)
    duy: np.ndarray   # (n_steps + 1, nx, ny + 1)
    dphi: np.ndarray  # (n_steps + 1, nx, ny)

    @property
    def n_steps(self) -> int:
        return self.dux.shape[0] - 1

    def sup_norm(self) -> float:
        """sup over time of the L2 norms of the state perturbation."""
        best = 0.0
        for n in range(self.n_steps + 1):
            nu = geo.norm_faces(self.grid, self.dux[n], self.duy[n])
            np_ = geo.norm_cells(self.grid, self.dphi[n])
            best = max(best, nu + np_)
        return best


def solve_linearized(traj: Trajectory, dv: Optional[ControlField],
                     dk: DiscreteKernel, laws: MaterialLaws,
                     dphi0: Optional[np.ndarray] = None,
                     du0: Optional[tuple[np.ndarray, np.ndarray]] = None) -> LinearizedTrajectory:
    """Propagate a control (and optionally initial-state) perturbation.

    The sweep rebuilds each step's frozen coefficients from the trajectory,
    so the result is the exact directional derivative of the discrete
    solution map at the stored run.
    """
    grid = traj.grid
    dt = traj.dt
    n_steps = traj.n_steps
    eig = geo._poisson_eigenvalues(grid)

    dux = np.zeros((n_steps + 1, grid.nx + 1, grid.ny))
    duy = np.zeros((n_steps + 1, grid.nx, grid.ny + 1))
    dphi = np.zeros((n_steps + 1, grid.nx, grid.ny))
    if dphi0 is not None:
        dphi[0] = dphi0
    if du0 is not None:
        x0, y0 = du0[0].copy(), du0[1].copy()
        enforce_noslip(x0, y0)
        dux[0], duy[0], _ = geo._leray_project(grid, x0, y0, eig=eig)

    zx = np.zeros((grid.nx + 1, grid.ny))
    zy = np.zeros((grid.nx, grid.ny + 1))
    for n in range(n_steps):
        ux, uy, phi_n = traj.state_arrays(n)
        phi_np1 = traj.snapshots[n + 1].phi.data
        ch = ch_build(grid, dk, laws, dt, phi_n)
        dphi[n + 1] = _ch_tangent(grid, dk, laws, dt, ch, phi_n, ux, uy,
                                  phi_np1, dphi[n], dux[n], duy[n])
        ns = ns_build(grid, dk, laws, dt, phi_np1)
        usx, usy = reconstruct_ustar(grid, traj.snapshots[n + 1], dt)
        dvx, dvy = (dv.vx[n], dv.vy[n]) if dv is not None else (zx, zy)
        dux[n + 1], duy[n + 1] = _ns_tangent(grid, dk, laws, dt, ns, ux, uy,
                                             phi_np1, usx, usy,
                                             dux[n], duy[n], dphi[n + 1],
                                             dvx, dvy, eig)
    return LinearizedTrajectory(grid, dt, dux, duy, dphi)


# ---------------------------------------------------------------------------
# cost sources and the adjoint sweep


def _cost_sources(traj: Trajectory, weights: CostWeights, n: int):
    """Raw adjoint seeds of the tracking cost at time level n."""
    grid = traj.grid
    vol = grid.cell_volume
    n_steps = traj.n_steps
    wn = 0.5 if n in (0, n_steps) else 1.0
    ux, uy, phi = traj.state_arrays(n)

    su = weights.beta_track_u * wn * traj.dt * vol
    sp = weights.beta_track_phi * wn * traj.dt * vol
    dx, dy = weights.u_dev(n, ux, uy)
    src_ux = su * dx
    src_uy = su * dy
    src_phi = sp * weights.phi_dev(n, phi)
    if n == n_steps:
        fdx, fdy = weights.u_final_dev(ux, uy)
        src_ux = src_ux + weights.beta_final_u * vol * fdx
        src_uy = src_uy + weights.beta_final_u * vol * fdy
        src_phi = src_phi + weights.beta_final_phi * vol * weights.phi_final_dev(phi)
    src_ux = np.array(src_ux, dtype=float, copy=True)
    src_uy = np.array(src_uy, dtype=float, copy=True)
    enforce_noslip(src_ux, src_uy)
    return src_ux, src_uy, np.asarray(src_phi, dtype=float)


@dataclass
class AdjointSolution:
    """Backward-sweep output: state adjoints and the control companion.

    q and (px, py) are the L2 adjoints of phase and velocity at the stored
    times (velocity projected to the divergence-free space).  ctrl_px/ctrl_py
    hold the momentum-source companion at the control slabs; the reduced
    cost gradient in L2 of space-time is gamma * v + ctrl_p.
    """

    grid: Grid
    dt: float
    times: np.ndarray
    q: np.ndarray        # (n_steps + 1, nx, ny)
    px: np.ndarray       # (n_steps + 1, nx + 1, ny)
    py: np.ndarray       # (n_steps + 1, nx, ny + 1)
    ctrl_px: np.ndarray  # (n_steps, nx + 1, ny)
    ctrl_py: np.ndarray  # (n_steps, nx, ny + 1)

    @property
    def n_steps(self) -> int:
        return self.ctrl_px.shape[0]

    def terminal(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.px[-1], self.py[-1], self.q[-1]


def solve_adjoint(traj: Trajectory, weights: CostWeights,
                  dk: DiscreteKernel, laws: MaterialLaws) -> AdjointSolution:
    """Run the transposed sweep of the tracking cost along a trajectory."""
    grid = traj.grid
    dt = traj.dt
    vol = grid.cell_volume
    n_steps = traj.n_steps
    weights.validate_shapes(grid, n_steps)
    eig = geo._poisson_eigenvalues(grid)

    q_out = np.zeros((n_steps + 1, grid.nx, grid.ny))
    px_out = np.zeros((n_steps + 1, grid.nx + 1, grid.ny))
    py_out = np.zeros((n_steps + 1, grid.nx, grid.ny + 1))
    cpx = np.zeros((n_steps, grid.nx + 1, grid.ny))
    cpy = np.zeros((n_steps, grid.nx, grid.ny + 1))

    pux, puy, pphi = _cost_sources(traj, weights, n_steps)

    def record(n, pux, puy, pphi):
        rx, ry, _ = geo._leray_project(grid, pux, puy, eig=eig)
        px_out[n] = rx / vol
        py_out[n] = ry / vol
        q_out[n] = pphi / vol

    record(n_steps, pux, puy, pphi)
    for n in range(n_steps - 1, -1, -1):
        ux, uy, phi_n = traj.state_arrays(n)
        phi_np1 = traj.snapshots[n + 1].phi.data
        ns = ns_build(grid, dk, laws, dt, phi_np1)
        usx, usy = reconstruct_ustar(grid, traj.snapshots[n + 1], dt)
        adj_ux, adj_uy, adj_phi1, bx, by = _ns_adjoint(
            grid, dk, laws, dt, ns, ux, uy, phi_np1, usx, usy, pux, puy, eig)
        cpx[n] = bx / (vol * dt)
        cpy[n] = by / (vol * dt)

        ch = ch_build(grid, dk, laws, dt, phi_n)
        q = pphi + adj_phi1
        dphi0, avx, avy = _ch_adjoint(grid, dk, laws, dt, ch, phi_n, ux, uy,
                                      phi_np1, q)

        sux, suy, sphi = _cost_sources(traj, weights, n)
        pux = adj_ux + avx + sux
        puy = adj_uy + avy + suy
        pphi = dphi0 + sphi
        record(n, pux, puy, pphi)

    return AdjointSolution(grid, dt, traj.times, q_out, px_out, py_out, cpx, cpy)


def tracking_directional(traj: Trajectory, lin: LinearizedTrajectory,
                         weights: CostWeights) -> float:
    """Derivative of the tracking terms along a linearized trajectory.

    Pairs the raw cost sources with the state perturbations; together with
    the explicit gamma term this is the tangent-side value whose agreement
    with the adjoint-side pairing certifies the gradient.
    """
    total = 0.0
    for n in range(traj.n_steps + 1):
        sux, suy, sphi = _cost_sources(traj, weights, n)
        total += float(np.vdot(sux, lin.dux[n]) + np.vdot(suy, lin.duy[n]))
        total += float(np.vdot(sphi, lin.dphi[n]))
    return total


def adjoint_directional(adj: AdjointSolution, control: Optional[ControlField],
                        dv: ControlField, gamma: float) -> float:
    """Adjoint-side directional derivative gamma<v, dv> + <ctrl_p, dv>."""
    vol = adj.grid.cell_volume
    dt = adj.dt
    total = 0.0
    for n in range(adj.n_steps):
        gx = adj.ctrl_px[n].copy()
        gy = adj.ctrl_py[n].copy()
        if gamma != 0.0 and control is not None:
            gx += gamma * control.vx[n]
            gy += gamma * control.vy[n]
        total += vol * dt * float(np.vdot(gx, dv.vx[n]) + np.vdot(gy, dv.vy[n]))
    return total


# ---------------------------------------------------------------------------
# verification probes


@dataclass
class TaylorReport:
    """First-order remainder decay of the solution map."""

    eps: np.ndarray
    remainders: np.ndarray      # ||S(v+eh) - S(v) - e T h|| / ||e h||
    first_order: np.ndarray     # ||S(v+eh) - S(v)|| / ||e h|| (context scale)
    direction_norm: float

    @property
    def decay_ratio(self) -> float:
        """Remainder ratio between the smallest and largest epsilon."""
        return float(self.remainders[-1] / max(self.remainders[0], 1e-300))

    def __str__(self) -> str:
        rows = [
            f"  eps={e:9.2e}  remainder={r:11.4e}  first-order={f:11.4e}"
            for e, r, f in zip(self.eps, self.remainders, self.first_order)
        ]
        return "taylor remainder decay (ratio {:.3e})\n{}".format(
            self.decay_ratio, "\n".join(rows))


def _state_delta_norm(grid: Grid, traj_a: Trajectory, traj_b: Trajectory,
                      lin: Optional[LinearizedTrajectory] = None,
                      eps: float = 0.0) -> float:
    """sup over time of L2 state distance, optionally minus eps * tangent."""
    best = 0.0
    for n in range(traj_a.n_steps + 1):
        ax, ay, ap = traj_a.state_arrays(n)
        bx, by, bp = traj_b.state_arrays(n)
        ddx = ax - bx
        ddy = ay - by
        ddp = ap - bp
        if lin is not None:
            ddx = ddx - eps * lin.dux[n]
            ddy = ddy - eps * lin.duy[n]
            ddp = ddp - eps * lin.dphi[n]
        best = max(best, geo.norm_faces(grid, ddx, ddy) + geo.norm_cells(grid, ddp))
    return best


def taylor_check(phi0, u0, v: ControlField, h: ControlField,
                 dk: DiscreteKernel, laws: MaterialLaws, cfg: SolverConfig,
                 eps: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> TaylorReport:
    """Verify that the tangent sweep is the derivative of the solution map.

    For each epsilon the nonlinear solver is re-run at v + eps*h and the
    first-order Taylor remainder is measured in the sup-in-time L2 norm,
    normalized by ||eps*h||.  An exact linearization gives remainders that
    shrink linearly in epsilon until rounding noise.
    """
    base = simulate(phi0, u0, v, dk, laws, cfg)
    lin = solve_linearized(base, h, dk, laws)
    hnorm = h.norm(cfg.dt)
    if hnorm == 0.0:
        raise ValueError("taylor_check needs a nonzero direction")

    eps_arr = np.array(sorted(eps, reverse=True), dtype=float)
    rems = np.empty_like(eps_arr)
    firsts = np.empty_like(eps_arr)
    for k, e in enumerate(eps_arr):
        vp = v.like(v.vx + e * h.vx, v.vy + e * h.vy)
        pert = simulate(phi0, u0, vp, dk, laws, cfg)
        rems[k] = _state_delta_norm(base.grid, pert, base, lin, e) / (e * hnorm)
        firsts[k] = _state_delta_norm(base.grid, pert, base) / (e * hnorm)
    return TaylorReport(eps_arr, rems, firsts, hnorm)


@dataclass
class LipschitzReport:
    """Solution-map increments measured against control increments."""

    ratios: np.ndarray

    @property
    def spread(self) -> float:
        lo = float(self.ratios.min())
        return float(self.ratios.max()) / max(lo, 1e-300)

    def __str__(self) -> str:
        return ("lipschitz probe: {} pairs, ratio range [{:.4e}, {:.4e}], "
                "spread {:.3f}").format(len(self.ratios), self.ratios.min(),
                                        self.ratios.max(), self.spread)


def _traj_w_distance(grid: Grid, dt: float, a: Trajectory, b: Trajectory) -> float:
    """Energy-norm distance: sup L2(u) + L2-in-time H1(u) + sup H1(phi)
    + L2-in-time of the cell Laplacian of phi."""
    mats = _grid_matrices(grid)
    w = mats.node_w.reshape(grid.nx + 1, grid.ny + 1)
    sup_u = 0.0
    sup_phi = 0.0
    acc_gu = 0.0
    acc_lap = 0.0
    for n in range(a.n_steps + 1):
        ax, ay, ap = a.state_arrays(n)
        bx, by, bp = b.state_arrays(n)
        dx, dy, dp = ax - bx, ay - by, ap - bp
        sup_u = max(sup_u, geo.norm_faces(grid, dx, dy))
        gx, gy = geo._grad(grid, dp)
        h1 = math.sqrt(geo.norm_cells(grid, dp) ** 2
                       + geo.dot_faces(grid, gx, gy, gx, gy))
        sup_phi = max(sup_phi, h1)
        dxux = (dx[1:, :] - dx[:-1, :]) / grid.hx
        dyuy = (dy[:, 1:] - dy[:, :-1]) / grid.hy
        gam = geo._shear_rate_nodes(grid, dx, dy)
        gu2 = grid.cell_volume * (2.0 * float(np.sum(dxux ** 2 + dyuy ** 2))
                                  + float(np.sum(w * gam ** 2)))
        lap = geo._div(grid, gx, gy)
        acc_gu += dt * gu2
        acc_lap += dt * geo.norm_cells(grid, lap) ** 2
    return sup_u + math.sqrt(acc_gu) + sup_phi + math.sqrt(acc_lap)


def _smooth_random_control(grid: Grid, n_steps: int, amplitude: float,
                           rng: np.random.Generator) -> ControlField:
    from scipy.ndimage import gaussian_filter

    vx = rng.standard_normal((n_steps, grid.nx + 1, grid.ny))
    vy = rng.standard_normal((n_steps, grid.nx, grid.ny + 1))
    vx = gaussian_filter(vx, sigma=(0.0, 1.0, 1.0), mode="nearest")
    vy = gaussian_filter(vy, sigma=(0.0, 1.0, 1.0), mode="nearest")
    return ControlField(grid, amplitude * vx, amplitude * vy)


def lipschitz_probe(phi0, u0, dk: DiscreteKernel, laws: MaterialLaws,
                    cfg: SolverConfig, n_pairs: int = 10, amplitude: float = 0.5,
                    seed: int = 0) -> LipschitzReport:
    """Measure solution-map increments over random admissible control pairs.

    A stable discretization keeps the ratio of state distance (in the
    dissipation-weighted trajectory norm) to control distance bounded over
    many random pairs; wild spread flags conditional instability.
    """
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(n_pairs):
        v1 = _smooth_random_control(phi0.grid, cfg.n_steps, amplitude, rng)
        v2 = _smooth_random_control(phi0.grid, cfg.n_steps, amplitude, rng)
        t1 = simulate(phi0, u0, v1, dk, laws, cfg)
        t2 = simulate(phi0, u0, v2, dk, laws, cfg)
        dist = _traj_w_distance(phi0.grid, cfg.dt, t1, t2)
        dv = v1.like(v1.vx - v2.vx, v1.vy - v2.vy)
        ratios.append(dist / max(dv.norm(cfg.dt), 1e-300))
    return LipschitzReport(np.array(ratios))
