import numpy as np
import pytest

from contraq.collisions import (EventCountMismatch, Hamiltonian, NotIncoming,
                                PhaseState, collision_multiplier,
                                equivalence_check, simulate_dirac_form,
                                simulate_step_form)
from contraq.constraints import ConstraintFunction, ConstraintSet
from contraq.flow import SimConfig

H_ENV = np.array([[2.0 / 3.0]])
K_ENV = np.array([[1.5]])


def envelope_ham(u=0.0):
    """Damped oscillator xddot = -xdot - x - u in phase form (q, p)."""
    return Hamiltonian(
        potential=lambda q, t: float(0.5 * q @ K_ENV @ q + 1.5 * u * q[0]),
        inv_mass=H_ENV,
        grad_potential=lambda q, t: K_ENV @ q + np.array([1.5 * u]),
        force=lambda q, p, t: -p)


def envelope_walls():
    up = ConstraintFunction(g=lambda x, t: x[0] - 2.0,
                            grad=lambda x, t: np.array([1.0]),
                            hess=lambda x, t: np.zeros((1, 1)),
                            d_dt=lambda x, t: 0.0, label="upper")
    lo = ConstraintFunction(g=lambda x, t: -x[0] - 2.0,
                            grad=lambda x, t: np.array([-1.0]),
                            hess=lambda x, t: np.zeros((1, 1)),
                            d_dt=lambda x, t: 0.0, label="lower")
    return ConstraintSet([up, lo])


def phase_from_velocity(x, v):
    # p = H^-1 v for the envelope inverse mass
    return PhaseState([x], [v / H_ENV[0, 0]], 0.0)


@pytest.mark.parametrize("v", [0.5, 1.0, 2.0])
def test_collision_multiplier_golden(v):
    ham = envelope_ham()
    wall = envelope_walls()[0]
    st = phase_from_velocity(2.0, v)
    assert collision_multiplier(ham, wall, st, 0.0) == pytest.approx(-1.5 * v, abs=1e-12)
    assert collision_multiplier(ham, wall, st, 1.0) == pytest.approx(-3.0 * v, abs=1e-12)


def test_collision_multiplier_not_incoming():
    ham = envelope_ham()
    wall = envelope_walls()[0]
    with pytest.raises(NotIncoming):
        collision_multiplier(ham, wall, phase_from_velocity(2.0, 0.0), 0.0)
    with pytest.raises(NotIncoming):
        collision_multiplier(ham, wall, phase_from_velocity(2.0, -1.0), 0.5)


def test_free_oscillation_no_events():
    ham = envelope_ham()
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=3.0)
    traj = simulate_step_form(ham, cs, PhaseState([1.5], [0.0]), 0.0, cfg)
    assert traj.events == []
    assert max(abs(s.x[0]) for s in traj.samples) < 2.0


def test_plastic_driven_contact():
    ham = envelope_ham(u=-3.0)  # steady push toward x = 3
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=4.0)
    traj = simulate_step_form(ham, cs, PhaseState([0.0], [0.0]), 0.0, cfg)
    colls = [e for e in traj.events if e.kind == "collision"]
    assert len(colls) == 1
    ev = colls[0]
    assert abs(ev.gdot_post) <= 1e-8 * max(1.0, abs(ev.gdot_pre))
    assert max(s.x[0] for s in traj.samples) <= 2.0 + 1e-7
    # sliding contact afterwards: g ~ 0 and gdot ~ 0
    tail = [s for s in traj.samples if s.t > ev.time + 0.2]
    assert max(abs(s.x[0] - 2.0) for s in tail) <= 1e-7
    assert max(abs(H_ENV[0, 0] * s.x[1]) for s in tail) <= 1e-7
    assert traj.final.active == (0,)


def test_plastic_dirac_matches_step_post_event():
    ham = envelope_ham(u=-3.0)
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=3.0)
    a = simulate_step_form(ham, cs, PhaseState([0.0], [0.0]), 0.0, cfg)
    b = simulate_dirac_form(ham, cs, PhaseState([0.0], [0.0]), 0.0, cfg)
    rep = equivalence_check(a, b, 1e-8)
    assert rep.passed


def test_elastic_bounce_reverses_velocity():
    ham = envelope_ham()
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=1.2)
    traj = simulate_step_form(ham, cs, PhaseState([1.0], [4.8]), 1.0, cfg)
    colls = [e for e in traj.events if e.kind == "collision"]
    assert len(colls) == 1
    ev = colls[0]
    assert ev.gdot_post == pytest.approx(-ev.gdot_pre, abs=1e-8)
    v_pre = H_ENV[0, 0] * ev.pre_state.p[0]
    v_post = H_ENV[0, 0] * ev.post_state.p[0]
    assert v_post == pytest.approx(-v_pre, abs=1e-8)


def test_elastic_energy_conserved_2d_repeated_bounces():
    rng = np.random.default_rng(42)
    B = rng.normal(size=(2, 2))
    H = B @ B.T + 2.0 * np.eye(2)
    K = np.array([[1.0, 0.2], [0.2, 0.8]])
    ham = Hamiltonian(potential=lambda q, t: float(0.5 * q @ K @ q),
                      inv_mass=H,
                      grad_potential=lambda q, t: K @ q)
    wall = ConstraintFunction(g=lambda x, t: x[0] - 2.0,
                              grad=lambda x, t: np.array([1.0, 0.0]),
                              hess=lambda x, t: np.zeros((2, 2)),
                              d_dt=lambda x, t: 0.0, label="wall")
    cs = ConstraintSet([wall])
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=6.0)
    traj = simulate_step_form(ham, cs, PhaseState([0.0, 0.0], [2.0, 0.5]), 1.0, cfg)
    colls = [e for e in traj.events if e.kind == "collision"]
    assert len(colls) >= 2
    for e in colls:
        t_pre = 0.5 * e.pre_state.p @ H @ e.pre_state.p
        t_post = 0.5 * e.post_state.p @ H @ e.post_state.p
        assert abs(t_post - t_pre) <= 1e-8 * max(1.0, t_pre)
        assert e.gdot_post == pytest.approx(-e.gdot_pre, abs=1e-8)


def test_contact_release_when_push_fades():
    # pushing input decays; contact must release once the wall force would pull
    def u(t):
        return -3.0 * np.cos(np.pi * t / 8.0)

    ham = Hamiltonian(
        potential=lambda q, t: float(0.5 * q @ K_ENV @ q + 1.5 * u(t) * q[0]),
        inv_mass=H_ENV,
        grad_potential=lambda q, t: K_ENV @ q + np.array([1.5 * u(t)]),
        force=lambda q, p, t: -p)
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=3.5)
    traj = simulate_step_form(ham, cs, PhaseState([0.0], [0.0]), 0.0, cfg)
    kinds = [e.kind for e in traj.events]
    assert "collision" in kinds and "release" in kinds
    rel = [e for e in traj.events if e.kind == "release"][0]
    # release when the required contact force crosses zero: x'' = -x - u = 0
    # at x = 2 means u = -2, i.e. t = (8/pi) acos(2/3)
    t_expected = 8.0 / np.pi * np.arccos(2.0 / 3.0)
    assert rel.time == pytest.approx(t_expected, abs=5e-3)
    after = [s for s in traj.samples if s.t > rel.time + 0.1]
    assert all(s.x[0] < 2.0 for s in after)


def test_grazing_start_on_wall_enters_contact_without_jump():
    ham = envelope_ham(u=-3.0)
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=1.0)
    traj = simulate_step_form(ham, cs, PhaseState([2.0], [0.0]), 0.0, cfg)
    colls = [e for e in traj.events if e.kind == "collision"]
    assert len(colls) == 1 and colls[0].impulse == 0.0
    assert max(s.x[0] for s in traj.samples) <= 2.0 + 1e-7
    assert traj.final.active == (0,)


def test_equivalence_identical_trajectories_zero():
    ham = envelope_ham()
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=1.2)
    a = simulate_step_form(ham, cs, PhaseState([1.0], [4.8]), 1.0, cfg)
    rep = equivalence_check(a, a, 1e-12)
    assert rep.max_deviation == 0.0 and rep.passed


def test_equivalence_event_count_mismatch():
    ham = envelope_ham()
    cs = envelope_walls()
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=1.2)
    bounce = simulate_step_form(ham, cs, PhaseState([1.0], [4.8]), 1.0, cfg)
    quiet = simulate_step_form(ham, cs, PhaseState([1.5], [0.0]), 1.0, cfg)
    with pytest.raises(EventCountMismatch):
        equivalence_check(bounce, quiet, 1e-6)


def test_elastic_equivalence_scales_with_dt():
    ham = envelope_ham()
    cs = envelope_walls()
    x0 = PhaseState([1.0], [4.8])
    devs = []
    for dt in (1e-3, 5e-4):
        cfg = SimConfig(dt_max=dt, event_tol=dt / 1000.0, t_end=1.2)
        a = simulate_step_form(ham, cs, x0, 1.0, cfg)
        b = simulate_dirac_form(ham, cs, x0, 1.0, cfg)
        devs.append(equivalence_check(a, b, 1.0).max_deviation)
    assert devs[0] <= 1e-5
    assert 1.7 <= devs[0] / devs[1] <= 2.3


def test_curved_inverse_mass_conserves_total_energy():
    # position-dependent H(q): without the quadratic momentum force term the
    # total energy drifts immediately
    def Hq(q):
        return (1.0 + 0.2 * q[1] ** 2) * np.eye(2) + 0.1 * np.outer(q, q)

    K = np.array([[1.0, 0.0], [0.0, 1.5]])
    ham = Hamiltonian(potential=lambda q, t: float(0.5 * q @ K @ q),
                      inv_mass=Hq,
                      grad_potential=lambda q, t: K @ q)
    cs = ConstraintSet([])
    cfg = SimConfig(dt_max=1e-3, event_tol=1e-6, t_end=2.0)
    x0 = PhaseState([0.4, -0.3], [0.5, 0.8])
    traj = simulate_step_form(ham, cs, x0, 0.0, cfg)
    e0 = ham.energy(x0.q, x0.p, 0.0)
    drift = max(abs(ham.energy(s.x[:2], s.x[2:], s.t) - e0) for s in traj.samples)
    assert drift <= 1e-6


def test_reduced_displacement_roundtrip():
    import contraq as cq
    grads = np.array([[1.0, 0.0, 1.0]])
    con = cq.ConstraintFunction(g=lambda x, t: 0.0, grad=lambda x, t: grads[0],
                                label="c")
    cs = cq.ConstraintSet([con])
    st = cq.StateVector([0.0, 0.0, 0.0])
    basis = cq.tangent_basis(cs, cq.ActiveSet((0,)), st)
    delta = basis.matrix @ np.array([0.7, -1.2])
    vd = cq.reduce_displacement(basis, delta)
    assert np.allclose(basis.matrix @ vd.reduced, vd.delta_x, atol=1e-12)
    assert abs(grads[0] @ vd.delta_x) <= 1e-10


def test_phase_state_validation():
    with pytest.raises(ValueError):
        PhaseState([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        PhaseState([np.inf], [0.0])
    st = PhaseState([1.0], [2.0], 0.5)
    with pytest.raises(ValueError):
        st.q[0] = 9.0
