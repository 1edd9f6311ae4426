"""Release acceptance suite: twelve independent conformance criteria.

Each test checks one advertised guarantee end to end at desk scale and
prints a single [PASS]/[FAIL] line carrying the measured quantities, so a
verbose run doubles as a conformance report.  Runtime budgets are asserted
wall-clock on the governed portion of each criterion.
"""

import math
import time

import numpy as np
import pytest

import nchs.geometry as geo
import nchs.kernels as kr
import nchs.optimize as op
import nchs.sensitivity as sn
from nchs import (
    BoundViolationError,
    ControlField,
    CostWeights,
    Grid,
    Kernel,
    OptimizerOptions,
    SolverConfig,
    VectorField,
    build_kernel,
    energy_report,
    fd_gradient_check,
    lipschitz_probe,
    mass,
    projected_gradient_descent,
    refinement_stability,
    simulate,
    taylor_check,
    tracking_targets_from_states,
)
from nchs.workbench.presets import initial_pure, initial_stripe, initial_vortex


def _verdict(tag: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}", flush=True)
    assert ok, f"{tag}: {detail}"


# ---------------------------------------------------------------------------
# shared benchmark runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bench32(laws_log):
    """Stripe benchmark, 32^2 grid, 100 steps (criteria 1, 3, 4)."""
    grid = Grid(32, 32, 1.0, 1.0)
    dk = build_kernel(Kernel("gaussian", length_scale=0.2, amplitude=1.0), grid)
    phi0 = initial_stripe(grid, amplitude=0.9, width=0.4, interface=0.05)
    u0 = initial_vortex(grid, 0.2)
    cfg = SolverConfig(dt=1e-3, n_steps=100)
    t0 = time.perf_counter()
    traj = simulate(phi0, u0, None, dk, laws_log, cfg)
    return traj, time.perf_counter() - t0


@pytest.fixture(scope="module")
def halving_runs(laws_log):
    """The same 16^2 benchmark integrated at dt and dt/2 (criteria 4, 5)."""
    grid = Grid(16, 16, 1.0, 1.0)
    dk = build_kernel(Kernel("gaussian", length_scale=0.2, amplitude=1.0), grid)
    phi0 = initial_stripe(grid, amplitude=0.8, width=0.4, interface=0.12)
    u0 = initial_vortex(grid, 0.2)
    t0 = time.perf_counter()
    coarse = simulate(phi0, u0, None, dk, laws_log, SolverConfig(dt=2e-3, n_steps=50))
    fine = simulate(phi0, u0, None, dk, laws_log, SolverConfig(dt=1e-3, n_steps=100))
    elapsed = time.perf_counter() - t0
    return coarse, fine, dk, elapsed


@pytest.fixture(scope="module")
def small_setup(laws_log):
    """8^2 short-horizon configuration shared by the sensitivity criteria."""
    grid = Grid(8, 8, 1.0, 1.0)
    dk = build_kernel(Kernel("gaussian", length_scale=0.2, amplitude=0.8), grid)
    phi0 = initial_stripe(grid, amplitude=0.85, width=0.4, interface=0.1)
    u0 = initial_vortex(grid, 0.1)
    cfg = SolverConfig(dt=2e-3, n_steps=5)
    return grid, dk, phi0, u0, cfg


# ---------------------------------------------------------------------------
# the twelve criteria
# ---------------------------------------------------------------------------


def test_c01_mass_conservation_on_stripe_benchmark(bench32):
    traj, elapsed = bench32
    m0 = mass(traj.snapshots[0].phi)
    drift = max(abs(mass(s.phi) - m0) for s in traj.snapshots)
    ok = drift <= 1e-12 and elapsed < 5.0
    _verdict("criterion-01 mass-conservation",
             ok, f"max drift {drift:.3e} (tol 1e-12), runtime {elapsed:.2f}s (< 5s)")


def test_c02_pure_phases_are_fixed_points(laws_log):
    grid = Grid(16, 16, 1.0, 1.0)
    dk = build_kernel(Kernel("gaussian", length_scale=0.2, amplitude=0.8), grid)
    cfg = SolverConfig(dt=5e-3, n_steps=50)
    rng = np.random.default_rng(9)
    worst = 0.0
    for sign in (1, -1):
        phi0 = initial_pure(grid, sign)
        forcing = sn._smooth_random_control(grid, cfg.n_steps, 0.5, rng)
        traj = simulate(phi0, VectorField.zeros(grid), forcing, dk, laws_log, cfg)
        for snap in traj.snapshots:
            worst = max(worst, float(np.abs(snap.phi.data - sign).max()))
    ok = worst <= 1e-12
    _verdict("criterion-02 pure-phase-fixed-point",
             ok, f"max |phi -+ 1| over 50 forced steps {worst:.3e} (tol 1e-12)")


def test_c03_phase_bound_enforced_and_violations_abort(bench32, laws_log):
    traj, _ = bench32
    from nchs import bound_violation
    worst = max(bound_violation(s.phi) for s in traj.snapshots)
    aborted = False
    grid = Grid(16, 16, 1.0, 1.0)
    hot = build_kernel(Kernel("gaussian", length_scale=0.1, amplitude=80.0), grid)
    phi0 = initial_stripe(grid, amplitude=0.95, width=0.4, interface=0.05)
    try:
        simulate(phi0, VectorField.zeros(grid), None, hot, laws_log,
                 SolverConfig(dt=0.2, n_steps=3))
    except BoundViolationError:
        aborted = True
    ok = worst <= 1e-8 and aborted
    _verdict("criterion-03 bound-preservation",
             ok, f"max excess over 1 is {worst:.3e} (tol 1e-8); "
                 f"overdriven run aborted: {aborted}")


def test_c04_velocity_stays_divergence_free(bench32, halving_runs):
    coarse, fine, _, _ = halving_runs
    worst = 0.0
    n_snaps = 0
    for traj in (bench32[0], coarse, fine):
        for snap in traj.snapshots:
            worst = max(worst, snap.div_defect())
            n_snaps += 1
    ok = worst <= 1e-10
    _verdict("criterion-04 incompressibility",
             ok, f"max |div u| over {n_snaps} snapshots {worst:.3e} (tol 1e-10)")


def test_c05_energy_identity_residual_halves_with_dt(halving_runs, laws_log):
    coarse, fine, dk, elapsed = halving_runs
    r_coarse = energy_report(coarse, dk, laws_log).l1_residual
    r_fine = energy_report(fine, dk, laws_log).l1_residual
    ratio = r_coarse / r_fine
    ok = 1.4 <= ratio <= 2.6 and elapsed < 10.0
    _verdict("criterion-05 energy-identity-convergence",
             ok, f"l1 residual {r_coarse:.3e} -> {r_fine:.3e}, ratio {ratio:.3f} "
                 f"(want 2 +- 30%), runtime {elapsed:.2f}s (< 10s)")


def test_c06_operator_duality_suite(grid16, dk16):
    rng = np.random.default_rng(66)
    t0 = time.perf_counter()
    worst = 0.0
    g = grid16
    for _ in range(100):
        # summation by parts: <div w, p> = -<w, grad p>
        p = rng.standard_normal((g.nx, g.ny))
        wx = rng.standard_normal((g.nx + 1, g.ny))
        wy = rng.standard_normal((g.nx, g.ny + 1))
        geo.enforce_noslip(wx, wy)
        lhs = geo.dot_cells(g, geo._div(g, wx, wy), p)
        gx, gy = geo._grad(g, p)
        rhs = -geo.dot_faces(g, wx, wy, gx, gy)
        floor = geo.norm_faces(g, wx, wy) * geo.norm_cells(g, p)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), floor))

        # advection skew symmetry for divergence-free no-slip transport
        psi = rng.standard_normal((g.nx + 1, g.ny + 1))
        psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
        u = geo.velocity_from_stream(g, psi)
        phi = rng.standard_normal((g.nx, g.ny))
        form = geo.dot_cells(g, geo._advect_scalar(g, u.x, u.y, phi), phi)
        scale = u.max_abs() * geo.norm_cells(g, phi) ** 2 / g.hx
        worst = max(worst, abs(form) / max(scale, 1e-300))

        # convolution self-adjointness
        a = rng.standard_normal((g.nx, g.ny))
        b = rng.standard_normal((g.nx, g.ny))
        ka_b = geo.dot_cells(g, kr._conv_c(dk16, a), b)
        a_kb = geo.dot_cells(g, a, kr._conv_c(dk16, b))
        worst = max(worst, abs(ka_b - a_kb) / max(abs(ka_b), abs(a_kb), 1e-300))

        # gradient-convolution transpose pairing
        chi = rng.standard_normal((g.nx, g.ny))
        fx, fy = kr._gradconv_faces(dk16, chi)
        lhs = geo.dot_faces(g, wx, wy, fx, fy)
        rhs = geo.dot_cells(g, kr._gradconv_faces_t(dk16, wx, wy), chi)
        floor = geo.norm_faces(g, wx, wy) * geo.norm_cells(g, chi)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), floor))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5.0
    _verdict("criterion-06 operator-duality-suite",
             ok, f"worst relative defect over 100 trials {worst:.3e} (tol 1e-10), "
                 f"runtime {elapsed:.2f}s (< 5s)")


def test_c07_tangent_taylor_remainder_decays(small_setup, laws_log):
    grid, dk, phi0, u0, cfg = small_setup
    rng = np.random.default_rng(0)
    v = ControlField.zeros(grid, cfg.n_steps)
    # direction large enough that the quadratic remainder stays above the
    # arithmetic floor at the smallest epsilon
    h = sn._smooth_random_control(grid, cfg.n_steps, 3.0, rng)
    rep = taylor_check(phi0, u0, v, h, dk, laws_log, cfg)
    monotone = all(b < a for a, b in zip(rep.remainders, rep.remainders[1:]))
    ok = monotone and rep.decay_ratio <= 0.2
    _verdict("criterion-07 tangent-consistency",
             ok, f"remainders {[f'{r:.3e}' for r in rep.remainders]} over "
                 f"eps {[float(e) for e in rep.eps]}, "
                 f"decay ratio {rep.decay_ratio:.3e} (tol 0.2)")


def test_c08_adjoint_gradient_matches_finite_differences(small_setup, laws_log):
    grid, dk, phi0, u0, cfg = small_setup
    weights = CostWeights(beta_track_phi=1.0, beta_final_phi=0.8, gamma=0.5)
    problem = op.Problem(phi0, u0, dk, laws_log, cfg, weights)
    rng = np.random.default_rng(11)
    v = ControlField(grid,
                     0.3 * rng.standard_normal((cfg.n_steps, grid.nx + 1, grid.ny)),
                     0.3 * rng.standard_normal((cfg.n_steps, grid.nx, grid.ny + 1)))
    t0 = time.perf_counter()
    report = fd_gradient_check(problem, v, n_directions=5, eps=1e-4, seed=4)
    elapsed = time.perf_counter() - t0
    ok = report.max_rel_error <= 1e-6 and elapsed < 30.0
    _verdict("criterion-08 adjoint-gradient-check",
             ok, f"max relative error over 5 directions {report.max_rel_error:.3e} "
                 f"(tol 1e-6), runtime {elapsed:.2f}s (< 30s)")


def test_c09_tangent_adjoint_duality_gap(small_setup, laws_log):
    grid, dk, phi0, u0, cfg = small_setup
    rng = np.random.default_rng(90)
    v = sn._smooth_random_control(grid, cfg.n_steps, 0.3, rng)
    dv = sn._smooth_random_control(grid, cfg.n_steps, 1.0, rng)
    weights = CostWeights(beta_track_u=0.7, beta_track_phi=1.0,
                          beta_final_u=0.4, beta_final_phi=0.8, gamma=0.3)
    traj = simulate(phi0, u0, v, dk, laws_log, cfg)
    lin = sn.solve_linearized(traj, dv, dk, laws_log)
    tangent = sn.tracking_directional(traj, lin, weights) \
        + weights.gamma * v.dot(dv, cfg.dt)
    adj = sn.solve_adjoint(traj, weights, dk, laws_log)
    adjoint = sn.adjoint_directional(adj, v, dv, weights.gamma)
    gap = abs(tangent - adjoint) / max(abs(tangent), abs(adjoint), 1e-300)
    ok = gap <= 1e-9
    _verdict("criterion-09 discrete-duality",
             ok, f"tangent {tangent:.9e} vs adjoint {adjoint:.9e}, "
                 f"relative gap {gap:.3e} (tol 1e-9)")


def test_c10_projected_gradient_optimization_contract(laws_log):
    grid = Grid(16, 16, 1.0, 1.0)
    dk = build_kernel(Kernel("gaussian", length_scale=0.15, amplitude=0.5), grid)
    phi0 = initial_stripe(grid, amplitude=0.9, width=0.4, interface=0.1)
    u0 = VectorField.zeros(grid)
    cfg = SolverConfig(dt=1.5e-2, n_steps=20)

    # reachable target: states produced by a known in-box forcing
    xf, yf = np.meshgrid(np.linspace(0.0, 1.0, grid.nx + 1),
                         (np.arange(grid.ny) + 0.5) * grid.hy, indexing="ij")
    xc, yc = np.meshgrid((np.arange(grid.nx) + 0.5) * grid.hx,
                         np.linspace(0.0, 1.0, grid.ny + 1), indexing="ij")
    shape_x = np.sin(np.pi * xf) * np.sin(np.pi * yf)
    shape_y = -np.sin(np.pi * xc) * np.sin(np.pi * yc)
    v_true = ControlField(
        grid,
        1.4 * np.broadcast_to(shape_x, (cfg.n_steps, *shape_x.shape)).copy(),
        1.4 * np.broadcast_to(shape_y, (cfg.n_steps, *shape_y.shape)).copy(),
        lower=-1.0, upper=1.0,
    ).clamped()
    ref = simulate(phi0, u0, v_true, dk, laws_log, cfg)
    weights = tracking_targets_from_states(
        CostWeights(beta_track_u=1.0, gamma=1e-6),
        [ref.state_arrays(n) for n in range(cfg.n_steps + 1)])
    problem = op.Problem(phi0, u0, dk, laws_log, cfg, weights)

    t0 = time.perf_counter()
    res = projected_gradient_descent(
        problem, problem.zero_control(-1.0, 1.0),
        OptimizerOptions(max_iterations=20, step_init=1e4, kkt_tol=1e-6))
    elapsed = time.perf_counter() - t0

    costs = [r.cost for r in res.history]
    monotone = all(b <= a * (1.0 + 1e-12) for a, b in zip(costs, costs[1:]))
    reduction = 1.0 - costs[-1] / costs[0]
    kkt = res.history[-1].kkt
    grad, _ = op.reduced_gradient(res.control, problem, traj=res.trajectory)
    inactive_x = np.abs(res.control.vx) < 1.0 - 1e-9
    inactive_y = np.abs(res.control.vy) < 1.0 - 1e-9
    stat = max(float(np.abs(grad.vx[inactive_x]).max()),
               float(np.abs(grad.vy[inactive_y]).max()))
    ok = (monotone and reduction >= 0.5 and kkt <= 1e-4
          and stat <= 1e-4 and elapsed < 300.0)
    _verdict("criterion-10 optimization-contract",
             ok, f"monotone {monotone}, cost cut {100 * reduction:.1f}% "
                 f"(want >= 50%) in {res.iterations} iterations, final KKT "
                 f"{kkt:.3e} (tol 1e-4), inactive-set |gamma v + p| max "
                 f"{stat:.3e} (tol 1e-4), runtime {elapsed:.1f}s (< 300s)")


def test_c11_solution_map_lipschitz_spread(small_setup, laws_log):
    grid, dk, phi0, u0, cfg = small_setup
    rep = lipschitz_probe(phi0, u0, dk, laws_log, cfg,
                          n_pairs=10, amplitude=0.5, seed=2)
    finite = np.all(np.isfinite(rep.ratios)) and np.all(rep.ratios > 0.0)
    ok = bool(finite) and rep.spread <= 10.0
    _verdict("criterion-11 lipschitz-stability",
             ok, f"ratios in [{rep.ratios.min():.4e}, {rep.ratios.max():.4e}] "
                 f"over 10 pairs, spread {rep.spread:.3f} (tol 10)")


def test_c12_kernel_probe_stable_under_refinement():
    out = refinement_stability(
        Kernel("gaussian", length_scale=0.2, amplitude=1.0),
        Grid(16, 16, 1.0, 1.0), Grid(32, 32, 1.0, 1.0), p_values=(2.0,))
    coarse, fine, rel = out[2.0]
    ok = rel <= 0.25
    _verdict("criterion-12 admissibility-probe-stability",
             ok, f"p=2 estimate {coarse:.6e} -> {fine:.6e} under 16^2 -> 32^2, "
                 f"change {100 * rel:.2f}% (tol 25%)")
