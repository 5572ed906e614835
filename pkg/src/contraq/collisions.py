"""Impulsive Hamiltonian dynamics under position inequality constraints.

Two equivalent realizations of a collision are provided: the step form
anchors the velocity increment at the last feasible point of the localized
crossing bracket, the Dirac form transfers the same momentum impulse at the
first crossed point. Restitution e interpolates plastic (e=0, normal
velocity zeroed) to fully elastic (e=1, normal velocity reversed). Plastic
persistent contact is maintained by a continuous constraint force at the
velocity level with active-set releases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, InfeasibleState
from .flow import (Event, SimConfig, SimSample, Trajectory, _append_sample,
                   _bisect, _project_onto)
from .geometry import StateVector, central_gradient, check_spd


class NotIncoming(ValueError):
    """Collision resolution requires an approaching normal velocity."""


class EventCountMismatch(ValueError):
    """The two collision forms produced different event sequences."""


_GRAZE_TOL = 1e-12


@dataclass
class Hamiltonian:
    """Energy h = V(q,t) + 1/2 p^T H(q) p with H the inverse-mass matrix.

    ``inv_mass`` is either a constant SPD matrix or a callable of q. The
    optional ``force`` term adds dissipation or drive to the momentum
    equation; it is zero for a conservative system.
    """

    potential: "callable"
    inv_mass: "np.ndarray | callable"
    grad_potential: "callable | None" = None
    d_inv_mass: "callable | None" = None
    force: "callable | None" = None

    def __post_init__(self):
        if not callable(self.inv_mass):
            self._H_const = check_spd(np.asarray(self.inv_mass, dtype=float))
        else:
            self._H_const = None

    @property
    def dim(self) -> int:
        if self._H_const is not None:
            return self._H_const.shape[0]
        raise ValueError("dimension of a callable inverse-mass is state dependent")

    def H(self, q) -> np.ndarray:
        if self._H_const is not None:
            return self._H_const
        return check_spd(self.inv_mass(np.asarray(q, dtype=float)))

    def grad_V(self, q, t) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.grad_potential is not None:
            return np.asarray(self.grad_potential(q, t), dtype=float)
        return central_gradient(self.potential, q, t)

    def dH_dq(self, q) -> "np.ndarray | None":
        if self._H_const is not None:
            return None
        if self.d_inv_mass is not None:
            return np.asarray(self.d_inv_mass(np.asarray(q, dtype=float)), dtype=float)
        q = np.asarray(q, dtype=float)
        h = 1e-5 * np.maximum(1.0, np.abs(q))
        slabs = []
        for l in range(q.size):
            e = np.zeros_like(q)
            e[l] = h[l]
            slabs.append((self.H(q + e) - self.H(q - e)) / (2.0 * h[l]))
        return np.stack(slabs, axis=-1)

    def kinetic(self, q, p) -> float:
        p = np.asarray(p, dtype=float)
        return float(0.5 * p @ self.H(q) @ p)

    def energy(self, q, p, t) -> float:
        return float(self.potential(np.asarray(q, dtype=float), t)) + self.kinetic(q, p)


@dataclass(frozen=True)
class PhaseState:
    """Positions q, momenta p, time t."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError("q and p must be 1-d vectors of equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.isfinite(self.t)):
            raise ValueError("phase state has non-finite entries")
        object.__setattr__(self, "q", q.copy())
        object.__setattr__(self, "p", p.copy())
        self.q.flags.writeable = False
        self.p.flags.writeable = False


@dataclass(frozen=True)
class CollisionEvent:
    """One resolved impact: impulse lambda_j along the constraint normal."""

    time: float
    constraint: str
    restitution: float
    impulse: float
    normal: np.ndarray
    gdot_pre: float
    gdot_post: float
    pre_state: PhaseState
    post_state: PhaseState
    kind: str = "collision"


def _gdot(ham, con, q, p, t) -> float:
    n = con.gradient(q, t)
    return float(n @ (ham.H(q) @ p) + con.time_derivative(q, t))


def collision_multiplier(ham: Hamiltonian, g, state: PhaseState, e: float) -> float:
    """Impulse magnitude lambda = -(1+e) gdot / (n^T H n) for an incoming contact.

    e = 0 zeroes the normal velocity (plastic), e = 1 reverses it (elastic).
    """
    if not (0.0 <= e <= 1.0):
        raise ValueError("restitution must lie in [0, 1]")
    q, p, t = state.q, state.p, state.t
    gdot = _gdot(ham, g, q, p, t)
    if gdot <= 0.0:
        raise NotIncoming(f"constraint '{g.label}' not incoming: gdot = {gdot:.3e}")
    n = g.gradient(q, t)
    return float(-(1.0 + e) * gdot / (n @ ham.H(q) @ n))


def _smooth_rhs(ham, q, p, t):
    H = ham.H(q)
    qdot = H @ p
    pdot = -ham.grad_V(q, t)
    dH = ham.dH_dq(q)
    if dH is not None:
        pdot = pdot - 0.5 * np.einsum("abl,a,b->l", dH, p, p)
    if ham.force is not None:
        pdot = pdot + np.asarray(ham.force(q, p, t), dtype=float)
    return qdot, pdot


def _contact_mu(ham, cset, contact, q, p, t):
    """Contact forces mu (one per contact member) enforcing g_ddot = 0.

    The response of g_ddot to the force sum mu_k n_k is n_j^T H n_k; the
    unforced g_ddot is measured by central differencing gdot along the flow.
    """
    H = ham.H(q)
    N = np.stack([cset[j].gradient(q, t) for j in contact])
    B = N @ H @ N.T
    tau = 1e-6
    qd, pd = _smooth_rhs(ham, q, p, t)
    qp, pp = q + tau * qd, p + tau * pd
    qm, pm = q - tau * qd, p - tau * pd
    a = np.array([
        (_gdot(ham, cset[j], qp, pp, t + tau) - _gdot(ham, cset[j], qm, pm, t - tau))
        / (2.0 * tau) for j in contact])
    mu, *_ = np.linalg.lstsq(B, -a, rcond=None)
    return mu


def _simulate_impulsive(ham, cset, x0, e, config, anchor) -> Trajectory:
    if not (0.0 <= e <= 1.0):
        raise ValueError("restitution must lie in [0, 1]")
    d = x0.q.size
    act_tol = cset.activation_tol
    rel_tol = cset.release_tol
    dt = config.dt_max

    vals = cset.values(x0.q, x0.t)
    if np.any(vals > act_tol):
        j = int(np.argmax(vals))
        raise InfeasibleState(
            f"initial state violates '{cset.label_of(j)}': g = {vals[j]:.3e}")

    contact: list = []
    q = np.array(x0.q, dtype=float)
    p = np.array(x0.p, dtype=float)
    t = float(x0.t)
    traj = Trajectory(n_q=d)

    def rhs(z, tt):
        qq, pp = z[:d], z[d:]
        qd, pd = _smooth_rhs(ham, qq, pp, tt)
        if contact:
            mu = _contact_mu(ham, cset, tuple(contact), qq, pp, tt)
            for j, m in zip(contact, mu):
                pd = pd + m * cset[j].gradient(qq, tt)
        return np.concatenate([qd, pd])

    def rk4(z, tt, h):
        k1 = rhs(z, tt)
        k2 = rhs(z + (0.5 * h) * k1, tt + 0.5 * h)
        k3 = rhs(z + (0.5 * h) * k2, tt + 0.5 * h)
        k4 = rhs(z + h * k3, tt + h)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def snapshot(tt, qq, pp, kind, event=None):
        lam = {}
        if contact:
            mu = _contact_mu(ham, cset, tuple(contact), qq, pp, tt)
            lam = {j: float(m) for j, m in zip(contact, mu)}
        sample = SimSample(tt, np.concatenate([qq, pp]), tuple(contact),
                           lam, kind, event)
        _append_sample(traj.samples, sample)

    snapshot(t, q, p, "init")
    n_steps = max(1, int(np.ceil((config.t_end - t) / dt - 1e-12)))
    grid_times = [min(x0.t + k * dt, config.t_end) for k in range(1, n_steps + 1)]
    max_events = 1000 * max(1, len(cset)) + 1000
    n_events = 0

    for t_next in grid_times:
        if t_next - t < 1e-15:
            continue
        while True:
            step = t_next - t
            if step < 1e-15:
                break
            z = np.concatenate([q, p])
            z_trial = rk4(z, t, step)

            candidates = []
            for j in range(len(cset)):
                if j in contact:
                    continue
                if cset[j].value(z_trial[:d], t_next) > act_tol:
                    phi = lambda tau, jj=j: cset[jj].value(
                        rk4(z, t, tau)[:d], t + tau) if tau > 0.0 \
                        else cset[jj].value(q, t)
                    if phi(0.0) > 0.0:
                        candidates.append((0.0, 0.0, 0, j))
                        continue
                    lo, hi = _bisect(phi, 0.0, step, config.event_tol)
                    candidates.append((lo, hi, 0, j))
            if contact:
                mu_end = _contact_mu(ham, cset, tuple(contact),
                                     z_trial[:d], z_trial[d:], t_next)
                for pos, j in enumerate(contact):
                    if mu_end[pos] > rel_tol:
                        def psi(tau, pp=pos):
                            zt = rk4(z, t, tau) if tau > 0.0 else z
                            return _contact_mu(ham, cset, tuple(contact),
                                               zt[:d], zt[d:], t + tau)[pp] - rel_tol
                        if psi(0.0) > 0.0:
                            candidates.append((0.0, 0.0, 1, j))
                            continue
                        lo, hi = _bisect(psi, 0.0, step, config.event_tol)
                        candidates.append((lo, lo, 1, j))

            if not candidates:
                q, p = z_trial[:d], z_trial[d:]
                t = t_next
                for j in contact:
                    if abs(cset[j].value(q, t)) > act_tol:
                        q = _project_onto(cset[j], q, t, act_tol)
                    n = cset[j].gradient(q, t)
                    gd = _gdot(ham, cset[j], q, p, t)
                    p = p - n * gd / (n @ ham.H(q) @ n)
                break

            n_events += 1
            if n_events > max_events:
                raise RuntimeError("event cascade: too many collision events")
            tau_min = min(c[0] for c in candidates)
            near = [c for c in candidates if c[0] - tau_min <= config.event_tol]
            near.sort(key=lambda c: (c[2], c[3]))
            lo, hi, ekind, j = near[0]

            if ekind == 0:
                tau_e = lo if anchor == "pre" else hi
                z_e = rk4(z, t, tau_e) if tau_e > 0.0 else z.copy()
                t_e = t + tau_e
                q_e, p_e = z_e[:d], z_e[d:]
                pre = PhaseState(q_e, p_e, t_e)
                q_e = _project_onto(cset[j], q_e, t_e, act_tol)
                n = cset[j].gradient(q_e, t_e)
                H = ham.H(q_e)
                nHn = float(n @ H @ n)
                gdot_pre = float(n @ (H @ p_e) + cset[j].time_derivative(q_e, t_e))
                if gdot_pre > _GRAZE_TOL:
                    lam = -(1.0 + e) * gdot_pre / nHn
                    p_e = p_e + lam * n
                else:
                    lam = 0.0
                gdot_post = float(n @ (H @ p_e) + cset[j].time_derivative(q_e, t_e))
                ev = CollisionEvent(t_e, cset.label_of(j), e, float(lam), n.copy(),
                                    gdot_pre, gdot_post, pre,
                                    PhaseState(q_e, p_e, t_e))
                traj.events.append(ev)
                q, p, t = q_e, p_e, t_e
                if abs(gdot_post) <= 1e-10 * max(1.0, abs(gdot_pre)):
                    mu = _contact_mu(ham, cset, tuple(sorted(contact + [j])), q, p, t)
                    pos = sorted(contact + [j]).index(j)
                    if mu[pos] <= rel_tol:
                        contact = sorted(contact + [j])
                snapshot(t, q, p, "event", ev)
            else:
                tau_e = lo
                z_e = rk4(z, t, tau_e) if tau_e > 0.0 else z.copy()
                t_e = t + tau_e
                q, p, t = z_e[:d], z_e[d:], t_e
                contact = [c for c in contact if c != j]
                st = StateVector(np.concatenate([q, p]), t_e)
                ev = Event("release", t_e, cset.label_of(j), st, st)
                traj.events.append(ev)
                snapshot(t, q, p, "event", ev)

        snapshot(t, q, p, "grid")
    return traj


def simulate_step_form(ham: Hamiltonian, constraints: ConstraintSet,
                       x0: PhaseState, e: float, config: SimConfig) -> Trajectory:
    """Collision dynamics with the step velocity increment.

    The jump is anchored at the last feasible point of the crossing bracket
    and the position is projected exactly onto the boundary, so samples stay
    feasible to the activation tolerance.
    """
    return _simulate_impulsive(ham, constraints, x0, e, config, anchor="pre")


def simulate_dirac_form(ham: Hamiltonian, constraints: ConstraintSet,
                        x0: PhaseState, e: float, config: SimConfig) -> Trajectory:
    """Collision dynamics with the Dirac momentum impulse.

    The transferred impulse lambda_j is applied along the constraint
    gradient at the first crossed point of the bracket (the delta has fired
    once g crossed zero); the position is then drift-projected back onto
    the boundary.
    """
    return _simulate_impulsive(ham, constraints, x0, e, config, anchor="post")


@dataclass
class EquivalenceReport:
    max_deviation: float
    tol: float
    passed: bool
    n_compared: int
    events_step: int
    events_dirac: int


def equivalence_check(traj_step: Trajectory, traj_dirac: Trajectory,
                      tol: float) -> EquivalenceReport:
    """Maximum position deviation between the two forms on the shared grid."""
    cs = sum(1 for e in traj_step.events if getattr(e, "kind", "") == "collision")
    cd = sum(1 for e in traj_dirac.events if getattr(e, "kind", "") == "collision")
    if cs != cd:
        raise EventCountMismatch(f"step form saw {cs} collisions, Dirac form {cd}")
    ga, gb = traj_step.grid_samples(), traj_dirac.grid_samples()
    if len(ga) != len(gb):
        raise EventCountMismatch("sample grids differ between the two forms")
    d = traj_step.n_q
    dev = 0.0
    for sa, sb in zip(ga, gb):
        dev = max(dev, float(np.linalg.norm(sa.x[:d] - sb.x[:d])))
    return EquivalenceReport(dev, tol, dev <= tol, len(ga), cs, cd)
