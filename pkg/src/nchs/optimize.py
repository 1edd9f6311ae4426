"""Projected-gradient control optimization of the tracking cost.

The reduced cost

    J(v) = beta1/2 |u - u_Q|^2_Q + beta2/2 |phi - phi_Q|^2_Q
         + beta3/2 |u(T) - u_Om|^2 + beta4/2 |phi(T) - phi_Om|^2
         + gamma/2 |v|^2_Q

is minimized over box-constrained force controls.  Space-time integrals of
the states use the trapezoid rule over the stored time levels; the control
penalty uses the left-endpoint rule because controls carry one sample per
step.  The gradient comes from one backward sweep and is exact for the
discrete cost, so line searches can rely on it down to rounding noise.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .controls import ControlField, CostWeights
from .forward import SolverConfig, Trajectory, simulate
from .geometry import Grid, ScalarField, VectorField
from .kernels import DiscreteKernel
from .material import MaterialLaws
from .sensitivity import AdjointSolution, solve_adjoint


@dataclass
class Problem:
    """Everything that defines one control problem instance."""

    phi0: ScalarField
    u0: VectorField
    dk: DiscreteKernel
    laws: MaterialLaws
    cfg: SolverConfig
    weights: CostWeights

    @property
    def grid(self) -> Grid:
        return self.phi0.grid

    def simulate(self, v: Optional[ControlField]) -> Trajectory:
        return simulate(self.phi0, self.u0, v, self.dk, self.laws, self.cfg)

    def zero_control(self, lower: float = -math.inf,
                     upper: float = math.inf) -> ControlField:
        return ControlField.zeros(self.grid, self.cfg.n_steps, lower, upper)


@dataclass
class CostBreakdown:
    """The five cost terms and their sum."""

    track_u: float
    track_phi: float
    final_u: float
    final_phi: float
    control: float

    @property
    def total(self) -> float:
        return (self.track_u + self.track_phi + self.final_u
                + self.final_phi + self.control)

    def __str__(self) -> str:
        return (f"J={self.total:.6e} (track_u={self.track_u:.3e}, "
                f"track_phi={self.track_phi:.3e}, final_u={self.final_u:.3e}, "
                f"final_phi={self.final_phi:.3e}, control={self.control:.3e})")


def cost(traj: Trajectory, control: Optional[ControlField],
         weights: CostWeights) -> CostBreakdown:
    """Evaluate the tracking cost along a trajectory."""
    grid = traj.grid
    vol = grid.cell_volume
    dt = traj.dt
    n_steps = traj.n_steps
    weights.validate_shapes(grid, n_steps)

    acc_u = 0.0
    acc_phi = 0.0
    for n in range(n_steps + 1):
        wn = 0.5 if n in (0, n_steps) else 1.0
        ux, uy, phi = traj.state_arrays(n)
        dx, dy = weights.u_dev(n, ux, uy)
        acc_u += wn * (float(np.vdot(dx, dx)) + float(np.vdot(dy, dy)))
        dp = weights.phi_dev(n, phi)
        acc_phi += wn * float(np.vdot(dp, dp))
    track_u = 0.5 * weights.beta_track_u * dt * vol * acc_u
    track_phi = 0.5 * weights.beta_track_phi * dt * vol * acc_phi

    ux, uy, phi = traj.state_arrays(n_steps)
    fdx, fdy = weights.u_final_dev(ux, uy)
    final_u = 0.5 * weights.beta_final_u * vol * (
        float(np.vdot(fdx, fdx)) + float(np.vdot(fdy, fdy)))
    fdp = weights.phi_final_dev(phi)
    final_phi = 0.5 * weights.beta_final_phi * vol * float(np.vdot(fdp, fdp))

    ctrl = 0.0
    if control is not None and weights.gamma > 0.0:
        acc = float(np.vdot(control.vx, control.vx))
        acc += float(np.vdot(control.vy, control.vy))
        ctrl = 0.5 * weights.gamma * dt * vol * acc
    return CostBreakdown(track_u, track_phi, final_u, final_phi, ctrl)


@dataclass
class GradientAux:
    """Byproducts of a gradient evaluation worth keeping."""

    trajectory: Trajectory
    adjoint: AdjointSolution
    breakdown: CostBreakdown


def reduced_gradient(v: ControlField, problem: Problem,
                     traj: Optional[Trajectory] = None) -> tuple[ControlField, GradientAux]:
    """L2 gradient of the reduced cost: gamma * v plus the adjoint companion."""
    if traj is None:
        traj = problem.simulate(v)
    adj = solve_adjoint(traj, problem.weights, problem.dk, problem.laws)
    gx = problem.weights.gamma * v.vx + adj.ctrl_px
    gy = problem.weights.gamma * v.vy + adj.ctrl_py
    grad = v.like(gx, gy)
    return grad, GradientAux(traj, adj, cost(traj, v, problem.weights))


def project_box(v: ControlField) -> ControlField:
    """Pointwise projection onto the admissible box (walls stay pinned)."""
    return v.clamped()


def kkt_residual(v: ControlField, grad: ControlField, dt: float,
                 step: float = 1.0) -> float:
    """Norm of the projected-gradient fixed-point defect.

    ||v - P(v - step * grad)|| in L2 of space-time; zero exactly at a
    first-order critical point of the box-constrained problem.
    """
    trial = project_box(v.like(v.vx - step * grad.vx, v.vy - step * grad.vy))
    diff = v.like(v.vx - trial.vx, v.vy - trial.vy)
    return diff.norm(dt)


@dataclass
class OptimizerOptions:
    max_iterations: int = 50
    step_init: float = 1.0
    step_growth: float = 1.5
    step_shrink: float = 0.5
    step_min: float = 1e-14
    step_max: float = 1e8
    armijo: float = 1e-4
    kkt_tol: float = 1e-6
    kkt_step: float = 1.0
    callback: Optional[Callable] = None


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    breakdown: CostBreakdown
    kkt: float
    step: float
    backtracks: int
    elapsed: float


@dataclass
class OptimizationResult:
    control: ControlField
    trajectory: Trajectory
    breakdown: CostBreakdown
    history: list[IterationRecord]
    converged: bool
    message: str

    @property
    def cost(self) -> float:
        return self.breakdown.total

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)

    def summary(self) -> str:
        head = "it        cost          kkt        step  backtracks"
        rows = [
            f"{r.iteration:3d}  {r.cost:12.6e}  {r.kkt:9.3e}  {r.step:9.3e}  {r.backtracks:3d}"
            for r in self.history
        ]
        tail = f"{'converged' if self.converged else 'stopped'}: {self.message}"
        return "\n".join([head, *rows, tail])


def projected_gradient_descent(problem: Problem, v0: Optional[ControlField] = None,
                               options: Optional[OptimizerOptions] = None) -> OptimizationResult:
    """Armijo-backtracked projected gradient descent on the reduced cost.

    The step grows geometrically after every accepted iterate and shrinks
    during backtracking, so the method self-tunes to the local curvature.
    Stops when the projected-gradient residual (measured with the fixed
    reference step) drops below tolerance, the iteration budget runs out,
    or the line search cannot make progress.
    """
    opts = options or OptimizerOptions()
    v = project_box(v0 if v0 is not None else problem.zero_control())
    dt = problem.cfg.dt
    t0 = _time.perf_counter()

    grad, aux = reduced_gradient(v, problem)
    history: list[IterationRecord] = []
    step = opts.step_init
    converged = False
    message = f"iteration budget ({opts.max_iterations}) exhausted"

    for it in range(opts.max_iterations + 1):
        kkt = kkt_residual(v, grad, dt, opts.kkt_step)
        history.append(IterationRecord(it, aux.breakdown.total, aux.breakdown,
                                       kkt, step, 0, _time.perf_counter() - t0))
        if opts.callback is not None:
            opts.callback(history[-1])
        if kkt <= opts.kkt_tol:
            converged = True
            message = f"projected-gradient residual {kkt:.3e} <= {opts.kkt_tol:.1e}"
            break
        if it == opts.max_iterations:
            break

        accepted = False
        backtracks = 0
        while step >= opts.step_min:
            trial = project_box(v.like(v.vx - step * grad.vx, v.vy - step * grad.vy))
            dv = trial.like(trial.vx - v.vx, trial.vy - v.vy)
            pred = grad.dot(dv, dt)
            if pred >= 0.0:
                # projection returned the same point (or rounding): no descent
                break
            traj_t = problem.simulate(trial)
            bd_t = cost(traj_t, trial, problem.weights)
            if bd_t.total <= aux.breakdown.total + opts.armijo * pred:
                v = trial
                grad, aux = reduced_gradient(v, problem, traj=traj_t)
                step = min(step * opts.step_growth, opts.step_max)
                accepted = True
                break
            step *= opts.step_shrink
            backtracks += 1
        history[-1].backtracks = backtracks
        if not accepted:
            message = f"line search stalled at step {step:.3e}"
            break

    return OptimizationResult(v, aux.trajectory, aux.breakdown, history,
                              converged, message)


# ---------------------------------------------------------------------------
# finite-difference cross-checks


def fd_directional(problem: Problem, v: ControlField, d: ControlField,
                   eps: float = 1e-5) -> float:
    """Central finite-difference directional derivative of the reduced cost."""
    vp = v.like(v.vx + eps * d.vx, v.vy + eps * d.vy)
    vm = v.like(v.vx - eps * d.vx, v.vy - eps * d.vy)
    jp = cost(problem.simulate(vp), vp, problem.weights).total
    jm = cost(problem.simulate(vm), vm, problem.weights).total
    return (jp - jm) / (2.0 * eps)


@dataclass
class GradientCheckReport:
    directional_adjoint: np.ndarray
    directional_fd: np.ndarray
    rel_errors: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max())

    def __str__(self) -> str:
        rows = [
            f"  dir {k}: adj={a:13.6e}  fd={f:13.6e}  rel={r:9.3e}"
            for k, (a, f, r) in enumerate(
                zip(self.directional_adjoint, self.directional_fd, self.rel_errors))
        ]
        return "gradient check (max rel {:.3e})\n{}".format(
            self.max_rel_error, "\n".join(rows))


def fd_gradient_check(problem: Problem, v: ControlField, n_directions: int = 5,
                      eps: float = 1e-5, seed: int = 0) -> GradientCheckReport:
    """Compare adjoint directional derivatives with central differences.

    Random smooth directions exercise every coupling path; agreement is
    limited by the finite-difference truncation, not by the adjoint.
    """
    rng = np.random.default_rng(seed)
    grad, _ = reduced_gradient(v, problem)
    adjs = np.empty(n_directions)
    fds = np.empty(n_directions)
    for k in range(n_directions):
        dvx = rng.standard_normal(v.vx.shape)
        dvy = rng.standard_normal(v.vy.shape)
        d = v.like(dvx, dvy)
        scale = max(d.max_abs(), 1e-300)
        d = v.like(d.vx / scale, d.vy / scale)
        adjs[k] = grad.dot(d, problem.cfg.dt)
        fds[k] = fd_directional(problem, v, d, eps)
    denom = np.maximum(np.abs(fds), 1e-12)
    rel = np.abs(adjs - fds) / denom
    return GradientCheckReport(adjs, fds, rel)
