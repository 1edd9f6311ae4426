"""Tangent and adjoint sweeps.

Each linearized step is checked two ways: against central finite differences
of the nonlinear step (derivative correctness) and against its adjoint via
raw inner-product pairing (exact transposition).  The full sweeps are then
checked end to end: Taylor remainder decay for the tangent, and the discrete
duality identity tying the adjoint to the linearized cost.
"""

import numpy as np
import pytest

import nchs.forward as fw
import nchs.geometry as geo
import nchs.sensitivity as sn
from nchs import (
    ControlField,
    CostWeights,
    Grid,
    Kernel,
    ScalarField,
    SolverConfig,
    VectorField,
    build_kernel,
    simulate,
    solve_adjoint,
    solve_linearized,
    taylor_check,
)
from nchs.workbench.presets import initial_stripe, initial_vortex


@pytest.fixture(scope="module")
def grid8():
    return Grid(8, 8, 1.0, 1.0)


@pytest.fixture(scope="module")
def dk8(grid8):
    return build_kernel(Kernel("gaussian", length_scale=0.2, amplitude=0.8), grid8)


@pytest.fixture(scope="module")
def base_run(grid8, dk8, laws_log):
    """Short forced run whose stored states seed the per-step checks."""
    rng = np.random.default_rng(40)
    phi0 = initial_stripe(grid8, amplitude=0.85, width=0.4, interface=0.1)
    u0 = initial_vortex(grid8, 0.1)
    ctrl = ControlField(
        grid8,
        0.3 * rng.standard_normal((5, grid8.nx + 1, grid8.ny)),
        0.3 * rng.standard_normal((5, grid8.nx, grid8.ny + 1)),
    )
    cfg = SolverConfig(dt=2e-3, n_steps=5)
    return simulate(phi0, u0, ctrl, dk8, laws_log, cfg)


def _rand_faces(grid, rng, noslip=True):
    ax = rng.standard_normal((grid.nx + 1, grid.ny))
    ay = rng.standard_normal((grid.nx, grid.ny + 1))
    if noslip:
        geo.enforce_noslip(ax, ay)
    return ax, ay


# ---------------------------------------------------------------------------
# phase step: tangent vs finite differences, adjoint vs tangent
# ---------------------------------------------------------------------------


def test_phase_tangent_matches_finite_differences(base_run, dk8, laws_log):
    grid = base_run.grid
    dt = base_run.dt
    ux, uy, phi_n = base_run.state_arrays(1)
    phi_np1 = base_run.snapshots[2].phi.data
    ch = fw.ch_build(grid, dk8, laws_log, dt, phi_n)

    rng = np.random.default_rng(41)
    dphi = rng.standard_normal(phi_n.shape)
    dux, duy = _rand_faces(grid, rng)
    got = sn._ch_tangent(grid, dk8, laws_log, dt, ch, phi_n, ux, uy, phi_np1,
                         dphi, dux, duy)

    def step(p, vx, vy):
        data = fw.ch_build(grid, dk8, laws_log, dt, p)
        return fw.ch_apply(grid, dt, data, p, vx, vy)

    e = 1e-6
    fd = (step(phi_n + e * dphi, ux + e * dux, uy + e * duy)
          - step(phi_n - e * dphi, ux - e * dux, uy - e * duy)) / (2 * e)
    assert np.abs(got - fd).max() <= 1e-6 * max(np.abs(fd).max(), 1e-30)


def test_phase_adjoint_is_exact_transpose(base_run, dk8, laws_log):
    grid = base_run.grid
    dt = base_run.dt
    ux, uy, phi_n = base_run.state_arrays(0)
    phi_np1 = base_run.snapshots[1].phi.data
    ch = fw.ch_build(grid, dk8, laws_log, dt, phi_n)

    rng = np.random.default_rng(42)
    for _ in range(10):
        dphi = rng.standard_normal(phi_n.shape)
        dux, duy = _rand_faces(grid, rng)
        q = rng.standard_normal(phi_n.shape)
        out = sn._ch_tangent(grid, dk8, laws_log, dt, ch, phi_n, ux, uy,
                             phi_np1, dphi, dux, duy)
        lhs = np.vdot(out, q)
        adj_phi, adj_ux, adj_uy = sn._ch_adjoint(grid, dk8, laws_log, dt, ch,
                                                 phi_n, ux, uy, phi_np1, q)
        rhs = np.vdot(dphi, adj_phi) + np.vdot(dux, adj_ux) + np.vdot(duy, adj_uy)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-30)


# ---------------------------------------------------------------------------
# momentum step: tangent vs finite differences, adjoint vs tangent
# ---------------------------------------------------------------------------


def _ns_pieces(base_run, dk8, laws_log, n):
    grid = base_run.grid
    dt = base_run.dt
    ux, uy, _ = base_run.state_arrays(n)
    phi_np1 = base_run.snapshots[n + 1].phi.data
    ns = fw.ns_build(grid, dk8, laws_log, dt, phi_np1)
    usx, usy = fw.reconstruct_ustar(grid, base_run.snapshots[n + 1], dt)
    eig = geo._poisson_eigenvalues(grid)
    return grid, dt, ux, uy, phi_np1, ns, usx, usy, eig


def test_momentum_tangent_matches_finite_differences(base_run, dk8, laws_log):
    grid, dt, ux, uy, phi_np1, ns, usx, usy, eig = _ns_pieces(base_run, dk8, laws_log, 2)
    ctrl = base_run.control
    vx, vy = ctrl.vx[2], ctrl.vy[2]

    rng = np.random.default_rng(43)
    dux, duy = _rand_faces(grid, rng)
    dphi1 = rng.standard_normal(phi_np1.shape)
    dvx, dvy = _rand_faces(grid, rng)
    got_x, got_y = sn._ns_tangent(grid, dk8, laws_log, dt, ns, ux, uy, phi_np1,
                                  usx, usy, dux, duy, dphi1, dvx, dvy, eig)

    def step(ax, ay, p1, wx, wy):
        data = fw.ns_build(grid, dk8, laws_log, dt, p1)
        ox, oy, _, _, _ = fw.ns_apply(grid, dt, data, ax, ay, wx, wy, eig=eig)
        return ox, oy

    e = 1e-6
    px1, py1 = step(ux + e * dux, uy + e * duy, phi_np1 + e * dphi1,
                    vx + e * dvx, vy + e * dvy)
    px2, py2 = step(ux - e * dux, uy - e * duy, phi_np1 - e * dphi1,
                    vx - e * dvx, vy - e * dvy)
    fdx = (px1 - px2) / (2 * e)
    fdy = (py1 - py2) / (2 * e)
    scale = max(np.abs(fdx).max(), np.abs(fdy).max(), 1e-30)
    assert np.abs(got_x - fdx).max() <= 2e-5 * scale
    assert np.abs(got_y - fdy).max() <= 2e-5 * scale


def test_momentum_adjoint_is_exact_transpose(base_run, dk8, laws_log):
    grid, dt, ux, uy, phi_np1, ns, usx, usy, eig = _ns_pieces(base_run, dk8, laws_log, 1)
    rng = np.random.default_rng(44)
    for _ in range(10):
        dux, duy = _rand_faces(grid, rng)
        dphi1 = rng.standard_normal(phi_np1.shape)
        dvx, dvy = _rand_faces(grid, rng)
        # adjoint seeds live in the no-slip subspace (cost sources and prior
        # step outputs are wall-zeroed); the projection is only symmetric there
        pux, puy = _rand_faces(grid, rng)
        ox, oy = sn._ns_tangent(grid, dk8, laws_log, dt, ns, ux, uy, phi_np1,
                                usx, usy, dux, duy, dphi1, dvx, dvy, eig)
        lhs = np.vdot(ox, pux) + np.vdot(oy, puy)
        aux, auy, aphi, bx, by = sn._ns_adjoint(grid, dk8, laws_log, dt, ns,
                                                ux, uy, phi_np1, usx, usy,
                                                pux, puy, eig)
        rhs = (np.vdot(dux, aux) + np.vdot(duy, auy) + np.vdot(dphi1, aphi)
               + np.vdot(dvx, bx) + np.vdot(dvy, by))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-30)


# ---------------------------------------------------------------------------
# full sweeps
# ---------------------------------------------------------------------------


def test_linearized_zero_direction_stays_zero(base_run, dk8, laws_log):
    dv = ControlField.zeros(base_run.grid, base_run.n_steps)
    lin = solve_linearized(base_run, dv, dk8, laws_log)
    assert lin.sup_norm() == 0.0


def test_linearized_is_linear_in_the_direction(base_run, dk8, laws_log):
    rng = np.random.default_rng(45)
    g = base_run.grid
    dv = ControlField(g, rng.standard_normal((5, g.nx + 1, g.ny)),
                      rng.standard_normal((5, g.nx, g.ny + 1)))
    lin1 = solve_linearized(base_run, dv, dk8, laws_log)
    dv2 = dv.like(2.0 * dv.vx, 2.0 * dv.vy)
    lin2 = solve_linearized(base_run, dv2, dk8, laws_log)
    for n in range(lin1.n_steps + 1):
        assert np.abs(lin2.dphi[n] - 2.0 * lin1.dphi[n]).max() <= 1e-12 * max(
            np.abs(lin1.dphi[n]).max(), 1e-30)
        assert np.abs(lin2.dux[n] - 2.0 * lin1.dux[n]).max() <= 1e-12 * max(
            np.abs(lin1.dux[n]).max(), 1e-30)


def test_initial_state_perturbations_propagate(base_run, dk8, laws_log):
    rng = np.random.default_rng(46)
    g = base_run.grid
    dphi0 = rng.standard_normal((g.nx, g.ny))
    lin = solve_linearized(base_run, None, dk8, laws_log, dphi0=dphi0)
    assert np.array_equal(lin.dphi[0], dphi0)
    assert np.abs(lin.dphi[-1]).max() > 0.0
    # a velocity seed is projected onto the divergence-free space first
    du0 = (rng.standard_normal((g.nx + 1, g.ny)), rng.standard_normal((g.nx, g.ny + 1)))
    lin2 = solve_linearized(base_run, None, dk8, laws_log, du0=du0)
    assert np.abs(geo._div(g, lin2.dux[0], lin2.duy[0])).max() <= 1e-10


def test_taylor_remainder_decays_linearly(grid8, dk8, laws_log):
    rng = np.random.default_rng(47)
    phi0 = initial_stripe(grid8, amplitude=0.85, width=0.4, interface=0.1)
    u0 = initial_vortex(grid8, 0.1)
    cfg = SolverConfig(dt=2e-3, n_steps=5)
    v = ControlField.zeros(grid8, 5)
    h = sn._smooth_random_control(grid8, 5, 1.0, rng)
    rep = taylor_check(phi0, u0, v, h, dk8, laws_log, cfg)
    assert rep.remainders[0] < rep.first_order[0]
    assert np.all(np.diff(rep.remainders) < 0.0)
    assert rep.decay_ratio <= 0.2
    assert "taylor remainder" in str(rep)


def test_taylor_check_rejects_zero_direction(grid8, dk8, laws_log):
    phi0 = initial_stripe(grid8, amplitude=0.85, width=0.4, interface=0.1)
    cfg = SolverConfig(dt=2e-3, n_steps=2)
    z = ControlField.zeros(grid8, 2)
    with pytest.raises(ValueError, match="nonzero direction"):
        taylor_check(phi0, VectorField.zeros(grid8), z, z, dk8, laws_log, cfg)


def test_adjoint_duality_identity(base_run, dk8, laws_log):
    # <linearized state, cost sources> must equal <adjoint companion, dv>
    # to rounding: both sides chain the same factorizations transposed
    rng = np.random.default_rng(48)
    g = base_run.grid
    weights = CostWeights(beta_track_u=0.7, beta_track_phi=1.0,
                          beta_final_u=0.4, beta_final_phi=0.8, gamma=0.3)
    dv = sn._smooth_random_control(g, base_run.n_steps, 1.0, rng)
    lin = solve_linearized(base_run, dv, dk8, laws_log)
    adj = solve_adjoint(base_run, weights, dk8, laws_log)

    lhs = sn.tracking_directional(base_run, lin, weights)
    lhs += weights.gamma * base_run.control.dot(dv, base_run.dt)
    rhs = sn.adjoint_directional(adj, base_run.control, dv, weights.gamma)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-30)


def test_adjoint_terminal_values(base_run, dk8, laws_log):
    # with only terminal weights the reported adjoint at t_N is the terminal
    # deviation itself (velocity part projected)
    weights = CostWeights(beta_final_u=2.0, beta_final_phi=3.0)
    adj = solve_adjoint(base_run, weights, dk8, laws_log)
    ux, uy, phi = base_run.state_arrays(base_run.n_steps)
    assert np.abs(adj.q[-1] - 3.0 * phi).max() <= 1e-12 * max(np.abs(phi).max(), 1e-30)
    # u_N is already divergence free, so the projection fixes it
    assert np.abs(adj.px[-1] - 2.0 * ux).max() <= 1e-10 * max(np.abs(ux).max(), 1e-30)
    assert np.abs(adj.py[-1] - 2.0 * uy).max() <= 1e-10 * max(np.abs(uy).max(), 1e-30)


def test_adjoint_velocity_is_divergence_free(base_run, dk8, laws_log):
    weights = CostWeights(beta_track_u=1.0, beta_track_phi=1.0, gamma=0.1)
    adj = solve_adjoint(base_run, weights, dk8, laws_log)
    g = base_run.grid
    for n in range(adj.n_steps + 1):
        scale = max(np.abs(adj.px[n]).max(), np.abs(adj.py[n]).max(), 1e-30)
        assert np.abs(geo._div(g, adj.px[n], adj.py[n])).max() <= 1e-9 * scale / g.hx


def test_cost_source_quadrature_weights(base_run):
    # interior levels carry weight dt, the endpoints dt/2 (trapezoid), and
    # the final level additionally the terminal weight without dt
    g = base_run.grid
    vol = g.cell_volume
    dt = base_run.dt
    n_steps = base_run.n_steps
    weights = CostWeights(beta_track_phi=1.0)
    for n, wn in ((0, 0.5), (1, 1.0), (n_steps, 0.5)):
        _, _, sphi = sn._cost_sources(base_run, weights, n)
        _, _, phi = base_run.state_arrays(n)
        assert np.abs(sphi - wn * dt * vol * phi).max() <= 1e-15
    weights2 = CostWeights(beta_final_phi=1.0)
    _, _, sphi = sn._cost_sources(base_run, weights2, n_steps)
    _, _, phi = base_run.state_arrays(n_steps)
    assert np.abs(sphi - vol * phi).max() <= 1e-15


# ---------------------------------------------------------------------------
# stability probe
# ---------------------------------------------------------------------------


def test_smooth_random_control_properties(grid8):
    rng = np.random.default_rng(49)
    c = sn._smooth_random_control(grid8, 4, 0.5, rng)
    assert c.vx.shape == (4, 9, 8) and c.vy.shape == (4, 8, 9)
    assert np.all(c.vx[:, 0, :] == 0.0) and np.all(c.vy[:, :, -1] == 0.0)
    assert c.max_abs() <= 0.5 * 4.0  # amplitude-scaled, smoothed noise


def test_lipschitz_probe_small(grid8, dk8, laws_log):
    phi0 = initial_stripe(grid8, amplitude=0.85, width=0.4, interface=0.1)
    cfg = SolverConfig(dt=2e-3, n_steps=4)
    rep = sn.lipschitz_probe(phi0, VectorField.zeros(grid8), dk8, laws_log, cfg,
                             n_pairs=3, amplitude=0.5, seed=5)
    assert rep.ratios.shape == (3,)
    assert np.all(rep.ratios > 0.0) and np.isfinite(rep.ratios).all()
    assert rep.spread >= 1.0
    assert "lipschitz probe" in str(rep)
