"""Contraction bounds on the constraint tangent space and empirical checks.

The generalized Jacobian sym(grad_M f + 1/2 dM/dt + sum lambda_j grad_M^2 g_j)
projected by the tangent basis bounds how fast neighboring trajectories
approach each other in the metric M. Virtual displacements are propagated
Jacobian-free along simulated trajectories, and rate measurements compare
paired trajectories against the eigenvalue envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, eigvalsh, solve_triangular

from .constraints import (ActiveSet, ConstraintSet, MultiplierSolution,
                          detect_active, solve_multipliers, tangent_basis)
from .flow import SimConfig, Trajectory, _raw_multipliers, simulate
from .geometry import (CovectorField, MetricField, NonSPDMetric, StateVector,
                       covariant_derivative_vector, covariant_hessian_scalar)


class DivergedPair(RuntimeError):
    """Paired trajectories separated too far to measure a linearized rate."""


_MAX_SEPARATION = 1e-1


@dataclass(frozen=True)
class VirtualDisplacement:
    """Separation delta_x between neighboring trajectories, with reduced
    coordinates in the constraint tangent basis."""

    delta_x: np.ndarray
    reduced: np.ndarray


def reduce_displacement(basis, delta) -> VirtualDisplacement:
    """Express a displacement in tangent-basis coordinates.

    On an active constraint delta must lie in the span of the basis, so
    delta = G_par @ reduced reconstructs it; callers that only have the
    ambient vector use this after the activation jump.
    """
    delta = np.asarray(delta, dtype=float)
    reduced = basis.matrix.T @ delta
    return VirtualDisplacement(delta_x=delta, reduced=reduced)


@dataclass
class ContractionBounds:
    """Extreme rates of the projected generalized eigenproblem."""

    lambda_min: float
    lambda_max: float
    generalized_jacobian: np.ndarray


def generalized_jacobian(metric: MetricField, f: CovectorField,
                         constraints: ConstraintSet, active: ActiveSet,
                         multipliers: MultiplierSolution,
                         state: StateVector) -> np.ndarray:
    """Symmetric part of grad_M f + 1/2 dM/dt + sum_j lambda_j grad_M^2 g_j."""
    A = covariant_derivative_vector(f, metric, state)
    A = A + 0.5 * metric.d_dt(state.x, state.t)
    for j, lam in multipliers.lambdas.items():
        A = A + lam * covariant_hessian_scalar(constraints[j], metric, state)
    return 0.5 * (A + A.T)


def contraction_bounds(metric: MetricField, f: CovectorField,
                       constraints: ConstraintSet,
                       state: StateVector) -> ContractionBounds:
    """Extreme eigenvalues of G^T (.)_H G v = lambda G^T M G v.

    Solved by whitening with the Cholesky factor of G^T M G; the retained
    active set (after multiplier releases) defines the tangent basis.
    """
    active = detect_active(constraints, state)
    sol = solve_multipliers(constraints, active, metric, f, state)
    retained = ActiveSet(tuple(sol.lambdas))
    Gp = tangent_basis(constraints, retained, state).matrix
    A_H = generalized_jacobian(metric, f, constraints, retained, sol, state)
    B = Gp.T @ A_H @ Gp
    W = Gp.T @ metric.eval(state.x, state.t) @ Gp
    try:
        L = cholesky(0.5 * (W + W.T), lower=True)
    except np.linalg.LinAlgError:
        raise NonSPDMetric("projected metric G^T M G is not positive definite") from None
    Y = solve_triangular(L, B, lower=True)
    C = solve_triangular(L, Y.T, lower=True).T
    C = 0.5 * (C + C.T)
    w = eigvalsh(C)
    return ContractionBounds(float(w[0]), float(w[-1]), B)


def activation_jump(metric: MetricField, normal: np.ndarray, delta: np.ndarray,
                    x, t) -> np.ndarray:
    """M-orthogonal projection applied to delta_x when a constraint activates.

    delta <- (I - M^-1 n n^T / (n^T M^-1 n)) delta, removing the component
    along the new constraint normal without expanding the M-norm.
    """
    M = metric.eval(x, t)
    Minv_n = np.linalg.solve(M, normal)
    return delta - Minv_n * (normal @ delta) / (normal @ Minv_n)


def _frozen_velocity(metric, f, cset, active_idx, x, t):
    """Velocity with the active set frozen and the equality multiplier solve.

    This is the smooth field whose directional derivatives carry the
    dlambda/dx contribution implicitly; no release pivoting.
    """
    M = metric.eval(x, t)
    fv = f.eval(x, t)
    if not active_idx:
        return np.linalg.solve(M, fv)
    lam = _raw_multipliers(cset, active_idx, metric, f, x, t)
    force = fv.copy()
    for j, l in zip(active_idx, lam):
        force += l * cset[j].gradient(x, t)
    return np.linalg.solve(M, force)


def propagate_delta(metric: MetricField, f: CovectorField,
                    constraints: ConstraintSet, trajectory: Trajectory,
                    delta0) -> list:
    """Propagate a virtual displacement along a simulated trajectory.

    Between events the variational dynamics are integrated Jacobian-free via
    centered directional differences of the constrained velocity,
    delta_dot = [v(x + h delta) - v(x - h delta)] / (2 h); at every
    activation event the displacement is projected M-orthogonally onto the
    new tangent space. Returns [(t, delta_x)] at every trajectory sample.
    """
    samples = trajectory.samples
    delta = np.array(delta0, dtype=float)
    out = [(samples[0].t, delta.copy())]
    for prev, cur in zip(samples[:-1], samples[1:]):
        dt = cur.t - prev.t
        if dt > 1e-15:
            active_idx = prev.active

            def vel(xx, tt):
                return _frozen_velocity(metric, f, constraints, active_idx, xx, tt)

            def delta_rhs(xx, dd, tt):
                nd = np.linalg.norm(dd)
                if nd < 1e-300:
                    return np.zeros_like(dd)
                h = 1e-6 * max(1.0, np.linalg.norm(xx)) / nd
                return (vel(xx + h * dd, tt) - vel(xx - h * dd, tt)) / (2.0 * h)

            x0, t0 = prev.x, prev.t
            k1x = vel(x0, t0)
            k1d = delta_rhs(x0, delta, t0)
            k2x = vel(x0 + 0.5 * dt * k1x, t0 + 0.5 * dt)
            k2d = delta_rhs(x0 + 0.5 * dt * k1x, delta + 0.5 * dt * k1d, t0 + 0.5 * dt)
            k3x = vel(x0 + 0.5 * dt * k2x, t0 + 0.5 * dt)
            k3d = delta_rhs(x0 + 0.5 * dt * k2x, delta + 0.5 * dt * k2d, t0 + 0.5 * dt)
            k4x = vel(x0 + dt * k3x, t0 + dt)
            k4d = delta_rhs(x0 + dt * k3x, delta + dt * k3d, t0 + dt)
            delta = delta + (dt / 6.0) * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
        if cur.kind == "event" and cur.event is not None and cur.event.kind == "activation":
            j = next(i for i in range(len(constraints))
                     if constraints.label_of(i) == cur.event.constraint)
            n = constraints[j].gradient(cur.x, cur.t)
            delta = activation_jump(metric, n, delta, cur.x, cur.t)
        out.append((cur.t, delta.copy()))
    return out


def _metric_distance(metric, xa, xb, t) -> float:
    d = xb - xa
    M = metric.eval(0.5 * (xa + xb), t)
    return float(np.sqrt(d @ M @ d))


def empirical_rate(metric: MetricField, f: CovectorField,
                   constraints: ConstraintSet, x0: StateVector,
                   epsilon, config: SimConfig, offset=None) -> list:
    """Measured log-distance rate between two neighboring trajectories.

    The pair starts at x0 and x0 + offset (offset defaults to epsilon along
    the normalized all-ones direction); both must be feasible. Returns
    [(t, d/dt log d_M)] by centered differencing of the straight-line
    M-weighted distance on the shared sample grid.
    """
    if offset is None:
        n = x0.n
        offset = float(epsilon) * np.ones(n) / np.sqrt(n)
    offset = np.asarray(offset, dtype=float)
    xb = StateVector(x0.x + offset, x0.t)
    ta = simulate(metric, f, constraints, x0, config)
    tb = simulate(metric, f, constraints, xb, config)
    ga, gb = ta.grid_samples(), tb.grid_samples()
    if len(ga) != len(gb):
        raise DivergedPair("paired runs produced different sample grids")
    times = np.array([s.t for s in ga])
    dists = np.array([
        _metric_distance(metric, sa.x, sb.x, sa.t) for sa, sb in zip(ga, gb)])
    if np.any(dists > _MAX_SEPARATION):
        raise DivergedPair(
            f"pair separation reached {dists.max():.3e}; linearization invalid")
    if np.any(dists <= 0.0):
        raise DivergedPair("pair collapsed to zero separation")
    logd = np.log(dists)
    rates = (logd[2:] - logd[:-2]) / (times[2:] - times[:-2])
    return list(zip(times[1:-1].tolist(), rates.tolist()))
