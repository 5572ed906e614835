"""Event-driven integration of the constrained flow M xdot = f + sum lambda_j dg_j/dx.

Classical fixed-step RK4 between events; constraint crossings are
localized by bisection in time, states are projected onto the crossed
boundary, and multiplier sign changes release constraints. Trajectories
stay feasible (g_j <= activation tolerance) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import (ActiveSet, ConstraintSet, InfeasibleState,
                          _pinv_with_rank, detect_active, gram_matrix,
                          solve_multipliers)
from .geometry import CovectorField, MetricField, StateVector


class StepTooSmall(RuntimeError):
    """Event bisection underflowed the 1e-14 step floor."""


@dataclass
class SimConfig:
    """Fixed-step integration settings."""

    dt_max: float
    event_tol: float
    t_end: float
    integrator_order: int = 4

    def __post_init__(self):
        if self.dt_max <= 0.0:
            raise ValueError("dt_max must be positive")
        if self.event_tol <= 0.0:
            raise ValueError("event_tol must be positive")
        if self.integrator_order != 4:
            raise ValueError("only the order-4 integrator is provided")


@dataclass(frozen=True)
class Event:
    """Tagged activation or release of one constraint."""

    kind: str
    time: float
    constraint: str
    pre_state: StateVector
    post_state: StateVector


@dataclass
class SimSample:
    """One trajectory sample with active-set and multiplier snapshots."""

    t: float
    x: np.ndarray
    active: tuple
    lambdas: dict
    kind: str = "grid"          # "init" | "grid" | "event"
    event: "Event | None" = None


@dataclass
class Trajectory:
    samples: list = field(default_factory=list)
    events: list = field(default_factory=list)
    n_q: "int | None" = None    # set for phase-space runs: x = concat(q, p)

    def times(self, kinds=("init", "grid", "event")) -> np.ndarray:
        return np.array([s.t for s in self.samples if s.kind in kinds])

    def states(self, kinds=("init", "grid", "event")) -> np.ndarray:
        return np.stack([s.x for s in self.samples if s.kind in kinds])

    def grid_samples(self) -> list:
        return [s for s in self.samples if s.kind in ("init", "grid")]

    @property
    def final(self) -> SimSample:
        return self.samples[-1]


def _append_sample(samples, sample):
    """Append keeping t strictly increasing; same-time samples merge.

    A cascade (activation plus immediate release, or an event landing on a
    grid time) yields one sample carrying the latest state; grid membership
    is preserved so paired runs stay aligned.
    """
    if samples and sample.t == samples[-1].t:
        last = samples[-1]
        if "init" in (last.kind, sample.kind):
            sample.kind = "init"
        elif "grid" in (last.kind, sample.kind):
            sample.kind = "grid"
        if sample.event is None:
            sample.event = last.event
        samples[-1] = sample
    else:
        samples.append(sample)


def rk4_step(v, x, t, dt) -> np.ndarray:
    """One classical Runge-Kutta order-4 step of xdot = v(x, t)."""
    k1 = v(x, t)
    k2 = v(x + (0.5 * dt) * k1, t + 0.5 * dt)
    k3 = v(x + (0.5 * dt) * k2, t + 0.5 * dt)
    k4 = v(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _constrained_velocity(metric, f, cset, active_idx, x, t):
    M = metric.eval(x, t)
    fv = f.eval(x, t)
    if not active_idx:
        return np.linalg.solve(M, fv)
    sol = solve_multipliers(cset, ActiveSet(active_idx), metric, f,
                            StateVector(x, t))
    return np.linalg.solve(M, fv + sol.force(cset, x, t))


def solve_velocity(metric: MetricField, f: CovectorField, constraints: ConstraintSet,
                   state: StateVector) -> np.ndarray:
    """xdot = M^-1 (f + sum lambda_j dg_j/dx) at a feasible state."""
    active = detect_active(constraints, state)
    return _constrained_velocity(metric, f, constraints, tuple(active),
                                 state.x, state.t)


def _raw_multipliers(cset, active_idx, metric, f, x, t) -> np.ndarray:
    """Unpivoted lambda = -G^+ b for a fixed active list (release detection)."""
    st = StateVector(x, t)
    G = gram_matrix(cset, ActiveSet(active_idx), metric, st)
    M = metric.eval(x, t)
    Minv_f = np.linalg.solve(M, f.eval(x, t))
    b = np.array([cset[j].gradient(x, t) @ Minv_f + cset[j].time_derivative(x, t)
                  for j in active_idx])
    Gpinv, _ = _pinv_with_rank(G)
    return -(Gpinv @ b)


def _project_onto(con, x, t, tol):
    """Newton steps along the constraint gradient until |g| <= tol."""
    x = np.array(x, dtype=float)
    for _ in range(50):
        val = con.value(x, t)
        if abs(val) <= tol:
            return x
        grad = con.gradient(x, t)
        g2 = grad @ grad
        if g2 <= 1e-20:
            raise InfeasibleState(f"degenerate gradient while projecting onto '{con.label}'")
        x -= (val / g2) * grad
    raise InfeasibleState(f"projection onto '{con.label}' did not converge")


def _bisect(phi, lo, hi, event_tol):
    """Shrink a sign-change bracket of phi to width <= event_tol.

    phi(lo) <= 0 < phi(hi) on entry; returns the final (lo, hi).
    """
    while (hi - lo) > event_tol:
        if (hi - lo) < 1e-14:
            raise StepTooSmall(f"event bracket underflowed at width {hi - lo:.3e}")
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            raise StepTooSmall("event bisection exhausted float resolution")
        if phi(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return lo, hi


def simulate(metric: MetricField, f: CovectorField, constraints: ConstraintSet,
             x0: StateVector, config: SimConfig) -> Trajectory:
    """Integrate the constrained flow, tagging activation and release events.

    Grid samples are emitted every dt_max (and at t_end); extra samples are
    emitted at every event. Crossings are activated sequentially, lowest
    constraint index first when two localize within event_tol.
    """
    cset = constraints
    act_tol = cset.activation_tol
    rel_tol = cset.release_tol
    dt = config.dt_max

    active = list(detect_active(cset, x0))
    x, t = np.array(x0.x, dtype=float), float(x0.t)
    # drop constraints the flow immediately leaves (no events before start)
    while active:
        lam = _raw_multipliers(cset, tuple(active), metric, f, x, t)
        leaving = [j for j, l in zip(active, lam) if l > rel_tol]
        if not leaving:
            break
        active.remove(min(leaving))

    traj = Trajectory()
    events = traj.events

    def snapshot(tt, xx, kind, event=None):
        sol = solve_multipliers(cset, ActiveSet(tuple(active)), metric, f,
                                StateVector(xx, tt))
        sample = SimSample(tt, xx.copy(), tuple(active), dict(sol.lambdas),
                           kind, event)
        _append_sample(traj.samples, sample)

    snapshot(t, x, "init")

    n_steps = max(1, int(np.ceil((config.t_end - t) / dt - 1e-12)))
    grid_times = [min(x0.t + k * dt, config.t_end) for k in range(1, n_steps + 1)]
    max_events = 1000 * max(1, len(cset)) + 1000

    for t_next in grid_times:
        if t_next - t < 1e-15:
            continue
        guard = 0
        while True:
            guard += 1
            if guard > max_events:
                raise RuntimeError("event cascade: too many events within one step")
            step = t_next - t
            if step < 1e-15:
                break
            vel = lambda xx, tt: _constrained_velocity(metric, f, cset,
                                                       tuple(active), xx, tt)
            x_trial = rk4_step(vel, x, t, step)

            # candidate activations: inactive constraints crossing g = 0
            candidates = []
            for j in range(len(cset)):
                if j in active:
                    continue
                if cset[j].value(x_trial, t_next) > act_tol:
                    phi = lambda tau, jj=j: cset[jj].value(
                        rk4_step(vel, x, t, tau), t + tau) if tau > 0.0 \
                        else cset[jj].value(x, t)
                    if phi(0.0) > 0.0:
                        candidates.append((0.0, 0, j))
                        continue
                    lo, _hi = _bisect(phi, 0.0, step, config.event_tol)
                    candidates.append((lo, 0, j))
            # candidate releases: active multipliers turning positive
            if active:
                lam_end = _raw_multipliers(cset, tuple(active), metric, f,
                                           x_trial, t_next)
                for pos, j in enumerate(active):
                    if lam_end[pos] > rel_tol:
                        psi = lambda tau, p=pos: _raw_multipliers(
                            cset, tuple(active), metric, f,
                            rk4_step(vel, x, t, tau) if tau > 0.0 else x,
                            t + tau)[p] - rel_tol
                        if psi(0.0) > 0.0:
                            candidates.append((0.0, 1, j))
                            continue
                        lo, _hi = _bisect(psi, 0.0, step, config.event_tol)
                        candidates.append((lo, 1, j))

            if not candidates:
                x = x_trial
                t = t_next
                for j in active:
                    if abs(cset[j].value(x, t)) > act_tol:
                        x = _project_onto(cset[j], x, t, act_tol)
                break

            # earliest event; ties within event_tol: activations first, then lowest index
            tau_min = min(c[0] for c in candidates)
            near = [c for c in candidates if c[0] - tau_min <= config.event_tol]
            near.sort(key=lambda c: (c[1], c[2]))
            tau_e, ekind, j = near[0]
            x_e = rk4_step(vel, x, t, tau_e) if tau_e > 0.0 else x.copy()
            t_e = t + tau_e

            if ekind == 0:
                pre = StateVector(x_e, t_e)
                x_e = _project_onto(cset[j], x_e, t_e, act_tol)
                active = sorted(active + [j])
                ev = Event("activation", t_e, cset.label_of(j), pre,
                           StateVector(x_e, t_e))
                events.append(ev)
                snapshot(t_e, x_e, "event", ev)
                # immediate releases triggered by the new contact
                while active:
                    lam = _raw_multipliers(cset, tuple(active), metric, f, x_e, t_e)
                    leaving = [jj for jj, l in zip(active, lam) if l > rel_tol]
                    if not leaving:
                        break
                    drop = min(leaving)
                    active.remove(drop)
                    ev = Event("release", t_e, cset.label_of(drop),
                               StateVector(x_e, t_e), StateVector(x_e, t_e))
                    events.append(ev)
                    snapshot(t_e, x_e, "event", ev)
            else:
                active.remove(j)
                st = StateVector(x_e, t_e)
                ev = Event("release", t_e, cset.label_of(j), st, st)
                events.append(ev)
                snapshot(t_e, x_e, "event", ev)

            x, t = x_e, t_e

        snapshot(t, x, "grid")

    return traj
