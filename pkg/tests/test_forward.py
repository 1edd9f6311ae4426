"""Split time stepper: dense-solve oracles, conservation, abort paths."""

import warnings

import numpy as np
import pytest

import nchs.forward as fw
import nchs.geometry as geo
import nchs.kernels as kr
from nchs import (
    AdmissibilityError,
    BoundViolationError,
    ControlField,
    Grid,
    Kernel,
    ScalarField,
    SolverConfig,
    SolverError,
    VectorField,
    build_kernel,
    ch_step,
    energy_report,
    get_laws,
    simulate,
)
from nchs.workbench.presets import initial_stripe, initial_vortex


def _stripe(grid, amplitude=0.8, interface=0.12):
    return initial_stripe(grid, amplitude=amplitude, width=0.4, interface=interface)


def _divfree(grid, rng, scale=0.1):
    psi = np.zeros((grid.nx + 1, grid.ny + 1))
    psi[1:-1, 1:-1] = scale * rng.standard_normal((grid.nx - 1, grid.ny - 1))
    return geo.velocity_from_stream(grid, psi)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_solver_config_validation():
    with pytest.raises(ValueError, match="dt"):
        SolverConfig(dt=0.0, n_steps=5)
    with pytest.raises(ValueError, match="n_steps"):
        SolverConfig(dt=0.1, n_steps=0)
    cfg = SolverConfig.from_duration(dt=0.002, t_final=0.1)
    assert cfg.n_steps == 50
    assert cfg.t_final == pytest.approx(0.1)
    with pytest.raises(ValueError, match="integer multiple"):
        SolverConfig.from_duration(dt=0.003, t_final=0.1)


# ---------------------------------------------------------------------------
# phase update against a dense solve
# ---------------------------------------------------------------------------


def _dense_stiffness(grid, lam_c):
    """Variable-coefficient five-point stiffness matrix, assembled by faces."""
    n = grid.n_cells

    def idx(i, j):
        return i * grid.ny + j

    a = np.zeros((n, n))
    for i in range(1, grid.nx):
        for j in range(grid.ny):
            w = 0.5 * (lam_c[i - 1, j] + lam_c[i, j]) / grid.hx**2
            p, q = idx(i - 1, j), idx(i, j)
            a[p, p] += w
            a[q, q] += w
            a[p, q] -= w
            a[q, p] -= w
    for i in range(grid.nx):
        for j in range(1, grid.ny):
            w = 0.5 * (lam_c[i, j - 1] + lam_c[i, j]) / grid.hy**2
            p, q = idx(i, j - 1), idx(i, j)
            a[p, p] += w
            a[q, q] += w
            a[p, q] -= w
            a[q, p] -= w
    return a


def test_phase_step_matches_dense_solve_diffusion_only(grid_odd, laws_quartic):
    # zero kernel and resting fluid reduce the step to weighted diffusion;
    # the quartic bundle gives a genuinely variable lam = 3 phi^2 + 1
    rng = np.random.default_rng(21)
    phi0 = 0.8 * np.tanh(rng.standard_normal((grid_odd.nx, grid_odd.ny)))
    dk = build_kernel(Kernel("zero"), grid_odd)
    dt = 0.05
    got = ch_step(ScalarField(grid_odd, phi0), VectorField.zeros(grid_odd),
                  dk, laws_quartic, dt)
    lam_c = laws_quartic.diffusivity(np.clip(phi0, -1.0, 1.0))
    m = np.eye(grid_odd.n_cells) / dt + _dense_stiffness(grid_odd, lam_c)
    want = np.linalg.solve(m, phi0.ravel() / dt).reshape(phi0.shape)
    assert np.abs(got.data - want).max() <= 1e-12 * np.abs(want).max()


def test_phase_step_matches_dense_solve_full(grid_odd, laws_log):
    # advection and nonlocal drift switched on; right side composed from the
    # independently verified primitive operators, system solved densely
    rng = np.random.default_rng(22)
    phi0 = 0.7 * np.tanh(rng.standard_normal((grid_odd.nx, grid_odd.ny)))
    u = _divfree(grid_odd, rng, scale=0.05)
    kernel = Kernel("gaussian", length_scale=0.25, amplitude=1.2)
    dk = build_kernel(kernel, grid_odd)
    dt = 0.02

    got = ch_step(ScalarField(grid_odd, phi0), u, dk, laws_log, dt)

    ax, ay = geo._avg_faces(grid_odd, phi0)
    m_c = np.clip(1.0 - np.clip(phi0, -1.0, 1.0) ** 2, 0.0, None)
    mfx, mfy = geo._avg_faces(grid_odd, m_c)
    gkx, gky = kr._gradconv_faces(dk, phi0)
    rhs = (phi0 / dt
           - geo._div(grid_odd, u.x * ax, u.y * ay)
           - geo._div(grid_odd, mfx * gkx, mfy * gky))
    lam_c = laws_log.diffusivity(np.clip(phi0, -1.0, 1.0))
    m = np.eye(grid_odd.n_cells) / dt + _dense_stiffness(grid_odd, lam_c)
    want = np.linalg.solve(m, rhs.ravel()).reshape(phi0.shape)
    assert np.abs(got.data - want).max() <= 1e-11 * np.abs(want).max()


def test_phase_step_conserves_mass_for_any_velocity(grid16, laws_log, dk16):
    # conservation is structural (telescoping fluxes), not a consequence of
    # incompressibility, so it must survive a divergent velocity too
    rng = np.random.default_rng(23)
    phi0 = ScalarField(grid16, 0.9 * np.tanh(rng.standard_normal((16, 16))))
    u = VectorField(grid16, rng.standard_normal((17, 16)), rng.standard_normal((16, 17)))
    before = fw.mass(phi0)
    after = fw.mass(ch_step(phi0, u, dk16, laws_log, 0.01))
    assert abs(after - before) <= 1e-13


def test_phase_step_fixes_pure_phases(grid16, laws_log, dk16):
    rng = np.random.default_rng(24)
    u = _divfree(grid16, rng, scale=0.3)
    for sign in (1.0, -1.0):
        phi = ScalarField.full(grid16, sign)
        out = ch_step(phi, u, dk16, laws_log, 0.05)
        assert np.abs(out.data - sign).max() <= 1e-13


# ---------------------------------------------------------------------------
# momentum update: residual of the implicit system, projection consistency
# ---------------------------------------------------------------------------


def test_viscous_matrix_agrees_with_stencil(grid_odd):
    rng = np.random.default_rng(25)
    nu_c = 0.2 + rng.random((grid_odd.nx, grid_odd.ny))
    nu_n = geo._cells_to_nodes(grid_odd, nu_c)
    a = fw._viscous_matrix(grid_odd, nu_c, nu_n)
    for _ in range(5):
        ux = rng.standard_normal((grid_odd.nx + 1, grid_odd.ny))
        uy = rng.standard_normal((grid_odd.nx, grid_odd.ny + 1))
        geo.enforce_noslip(ux, uy)
        vec = fw._gather_faces(grid_odd, ux, uy)
        vx, vy = geo._viscous_apply(grid_odd, nu_c, nu_n, ux, uy)
        want = -fw._gather_faces(grid_odd, vx, vy)
        got = a @ vec
        assert np.abs(got - want).max() <= 1e-12 * max(np.abs(want).max(), 1e-30)


def test_momentum_step_solves_its_system(grid16, laws_log, dk16):
    rng = np.random.default_rng(26)
    phi1 = 0.8 * np.tanh(rng.standard_normal((16, 16)))
    u = _divfree(grid16, rng, scale=0.2)
    vx = 0.3 * rng.standard_normal((17, 16))
    vy = 0.3 * rng.standard_normal((16, 17))
    geo.enforce_noslip(vx, vy)
    dt = 0.01

    ns = fw.ns_build(grid16, dk16, laws_log, dt, phi1)
    ux, uy, pi, sx, sy = fw.ns_apply(grid16, dt, ns, u.x, u.y, vx, vy)

    # the returned pre-projection velocity satisfies u*/dt - 2 div(nu D u*) = r
    advx, advy = geo._advect_velocity_bilinear(grid16, u.x, u.y, u.x, u.y)
    fx, fy = fw.capillary_force(grid16, ns)
    rx = u.x / dt - advx + fx + vx
    ry = u.y / dt - advy + fy + vy
    wx, wy = geo._viscous_apply(grid16, ns.nu_c, ns.nu_n, sx, sy)
    resx = (sx / dt - wx - rx)[1:-1, :]
    resy = (sy / dt - wy - ry)[:, 1:-1]
    scale = max(np.abs(rx).max(), np.abs(ry).max())
    assert max(np.abs(resx).max(), np.abs(resy).max()) <= 1e-10 * scale

    # projection: u = u* - grad(dt * pi) is divergence free
    gx, gy = geo._grad(grid16, dt * pi)
    assert np.abs(ux - (sx - gx)).max() <= 1e-12 * max(np.abs(sx).max(), 1e-30)
    assert np.abs(geo._div(grid16, ux, uy)).max() <= 1e-11 * scale


def test_reconstruct_prestep_velocity(grid16, laws_log, dk16):
    rng = np.random.default_rng(27)
    phi1 = 0.6 * np.tanh(rng.standard_normal((16, 16)))
    u = _divfree(grid16, rng, scale=0.2)
    dt = 0.01
    ns = fw.ns_build(grid16, dk16, laws_log, dt, phi1)
    ux, uy, pi, sx, sy = fw.ns_apply(grid16, dt, ns, u.x, u.y,
                                     np.zeros((17, 16)), np.zeros((16, 17)))
    snap = fw.StateSnapshot(dt, VectorField(grid16, ux, uy),
                            ScalarField(grid16, phi1), ScalarField(grid16, pi))
    rx, ry = fw.reconstruct_ustar(grid16, snap, dt)
    scale = max(np.abs(sx).max(), 1e-30)
    assert np.abs(rx - sx).max() <= 1e-12 * scale
    assert np.abs(ry - sy).max() <= 1e-12 * scale


def test_resting_fluid_stays_at_rest(grid16, laws_log):
    # without forcing and with a uniform phase there is nothing to move
    dk = build_kernel(Kernel("zero"), grid16)
    traj = simulate(ScalarField.full(grid16, 0.3), VectorField.zeros(grid16),
                    None, dk, laws_log, SolverConfig(dt=0.05, n_steps=5))
    assert traj.final.u.max_abs() == 0.0
    assert np.abs(traj.final.phi.data - 0.3).max() <= 1e-14


# ---------------------------------------------------------------------------
# the full loop
# ---------------------------------------------------------------------------


def test_simulate_basic_run(grid16, laws_log, dk16):
    phi0 = _stripe(grid16)
    u0 = initial_vortex(grid16, 0.2)
    cfg = SolverConfig(dt=0.002, n_steps=10)
    traj = simulate(phi0, u0, None, dk16, laws_log, cfg)

    assert traj.n_steps == 10
    assert np.allclose(traj.times, 0.002 * np.arange(11))
    m0 = fw.mass(traj.snapshots[0].phi)
    for s in traj.snapshots:
        assert abs(fw.mass(s.phi) - m0) <= 1e-12
        assert s.div_defect() <= cfg.tol_div
        assert fw.bound_violation(s.phi) <= cfg.tol_bound
        assert abs(s.pressure.mean()) <= 1e-12


def test_simulate_applies_control(grid16, laws_log, dk16):
    phi0 = _stripe(grid16)
    cfg = SolverConfig(dt=0.002, n_steps=5)
    quiet = simulate(phi0, VectorField.zeros(grid16), None, dk16, laws_log, cfg)
    ctrl = ControlField.zeros(grid16, 5)
    ctrl.vx[:, 5:9, :] = 2.0
    forced = simulate(phi0, VectorField.zeros(grid16), ctrl, dk16, laws_log, cfg)
    assert forced.final.u.max_abs() > 10.0 * max(quiet.final.u.max_abs(), 1e-12)
    assert forced.control is ctrl


def test_simulate_rejects_short_control(grid16, laws_log, dk16):
    ctrl = ControlField.zeros(grid16, 3)
    with pytest.raises(ValueError, match="control has 3 samples"):
        simulate(_stripe(grid16), VectorField.zeros(grid16), ctrl, dk16, laws_log,
                 SolverConfig(dt=0.01, n_steps=5))


def test_simulate_gates_unsafe_laws(grid16, laws_quartic, dk16):
    phi0 = _stripe(grid16)
    cfg = SolverConfig(dt=0.01, n_steps=2)
    with pytest.raises(AdmissibilityError, match="structural hypotheses"):
        simulate(phi0, VectorField.zeros(grid16), None, dk16, laws_quartic, cfg)
    cfg_ok = SolverConfig(dt=0.01, n_steps=2, allow_unsafe_laws=True)
    traj = simulate(phi0, VectorField.zeros(grid16), None, dk16, laws_quartic, cfg_ok)
    assert traj.n_steps == 2


def test_simulate_rejects_inadmissible_initial_state(grid16, laws_log, dk16):
    bad = ScalarField.full(grid16, 1.2)
    with pytest.raises(AdmissibilityError, match="inadmissible"):
        simulate(bad, VectorField.zeros(grid16), None, dk16, laws_log,
                 SolverConfig(dt=0.01, n_steps=2))


def test_simulate_initial_bound_check_without_admissibility(grid16, laws_log, dk16):
    bad = ScalarField.full(grid16, 1.0 + 2e-8)
    cfg = SolverConfig(dt=0.01, n_steps=2, check_admissibility=False)
    with pytest.raises(BoundViolationError) as exc:
        simulate(bad, VectorField.zeros(grid16), None, dk16, laws_log, cfg)
    assert exc.value.step == 0


def test_simulate_projects_initial_velocity(grid16, laws_log, dk16):
    rng = np.random.default_rng(31)
    u0 = VectorField(grid16, 0.1 * rng.standard_normal((17, 16)),
                     0.1 * rng.standard_normal((16, 17)))
    traj = simulate(_stripe(grid16), u0, None, dk16, laws_log,
                    SolverConfig(dt=0.002, n_steps=1))
    assert traj.snapshots[0].div_defect() <= 1e-10


def test_simulate_bound_abort_carries_partial_trajectory(grid16, laws_log):
    # aggregation strong enough to push the phase outside [-1, 1] in a few
    # coarse steps; the exception must carry everything computed so far
    dk = build_kernel(Kernel("gaussian", length_scale=0.1, amplitude=80.0), grid16)
    phi0 = initial_stripe(grid16, amplitude=0.95, width=0.4, interface=0.05)
    cfg = SolverConfig(dt=0.2, n_steps=40)
    with pytest.raises(BoundViolationError) as exc:
        simulate(phi0, VectorField.zeros(grid16), None, dk, laws_log, cfg)
    err = exc.value
    assert err.step >= 1 and err.value > cfg.tol_bound
    assert err.partial is not None
    assert err.partial.n_steps == err.step - 1
    assert isinstance(err.partial.snapshots[0], fw.StateSnapshot)


def test_simulate_warns_on_large_cfl(grid16, laws_log, dk16):
    ctrl = ControlField.zeros(grid16, 5)
    ctrl.vx[:] = 60.0
    cfg = SolverConfig(dt=0.05, n_steps=5)
    with pytest.warns(RuntimeWarning, match="CFL"):
        simulate(_stripe(grid16), VectorField.zeros(grid16), ctrl, dk16, laws_log, cfg)


# ---------------------------------------------------------------------------
# energy ledger
# ---------------------------------------------------------------------------


def test_energy_report_internal_consistency(grid16, laws_log, dk16):
    phi0 = _stripe(grid16)
    u0 = initial_vortex(grid16, 0.2)
    traj = simulate(phi0, u0, None, dk16, laws_log, SolverConfig(dt=0.002, n_steps=10))
    er = energy_report(traj, dk16, laws_log)

    assert er.energy.shape == (11,) and er.residual.shape == (10,)
    assert np.allclose(er.energy, er.kinetic + er.phase)
    # energy endpoints recomputed from raw snapshots
    vol = grid16.cell_volume
    s = traj.snapshots[0]
    e0 = 0.5 * vol * (np.sum(s.u.x**2) + np.sum(s.u.y**2) + np.sum(s.phi.data**2))
    assert er.energy[0] == pytest.approx(e0, rel=1e-14)
    # the residual column is exactly the stated combination
    recon = (np.diff(er.energy) / traj.dt + er.mixing_dissipation
             + er.viscous_dissipation - er.nonlocal_power - er.transport_power
             - er.control_power)
    assert np.allclose(recon, er.residual, atol=1e-12)
    assert er.l1_residual == pytest.approx(float(np.sum(np.abs(er.residual))) * traj.dt)
    # both dissipation channels are nonnegative quadratic forms
    assert (er.mixing_dissipation >= 0.0).all()
    assert (er.viscous_dissipation >= 0.0).all()
    # no control: zero injected power
    assert np.all(er.control_power == 0.0)


def test_energy_decays_without_forcing(grid16, laws_log):
    # pure viscous decay: no kernel, uniform phase, vortex start
    dk = build_kernel(Kernel("zero"), grid16)
    traj = simulate(ScalarField.full(grid16, 0.0), initial_vortex(grid16, 0.5),
                    None, dk, laws_log, SolverConfig(dt=0.01, n_steps=10))
    er = energy_report(traj, dk, laws_log)
    assert (np.diff(er.kinetic) < 0.0).all()


def test_mass_and_bound_helpers(grid16):
    phi = ScalarField.full(grid16, 0.25)
    assert fw.mass(phi) == pytest.approx(0.25, rel=1e-14)
    assert fw.bound_violation(phi) == pytest.approx(-0.75, rel=1e-14)
    assert fw.bound_violation(np.array([[1.5]])) == pytest.approx(0.5)
