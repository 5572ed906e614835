"""Inequality constraints, active sets, multipliers, and tangent bases.

Constraints are scalar functions g_j(x,t) <= 0. On the boundary the
dynamics acquire a force sum_j lambda_j dg_j/dx with the multipliers
solved from the metric-weighted Gram system; the admissible virtual
displacements live in the orthonormal null-space basis of the active
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .geometry import (MetricField, StateVector, central_gradient,
                       central_hessian, central_time_derivative)


class InfeasibleState(ValueError):
    """A constraint value exceeds the activation tolerance."""


class AcuteCorner(ValueError):
    """Two active gradients have a negative M^-1-weighted inner product.

    The multiplier construction assumes obtuse corners; acute ones are
    rejected with a diagnostic instead of being split.
    """


class NoConvergence(RuntimeError):
    """The multiplier release iteration did not settle."""


_GRAD_MIN = 1e-10
_PINV_RCOND = 1e-10


@dataclass
class ConstraintFunction:
    """One scalar constraint g(x,t) <= 0 with derivatives.

    ``grad``, ``hess`` and ``d_dt`` are optional analytic callables;
    central finite differences are used when they are missing.
    """

    g: "callable"
    grad: "callable | None" = None
    hess: "callable | None" = None
    d_dt: "callable | None" = None
    label: str = "g"

    def value(self, x, t) -> float:
        return float(self.g(np.asarray(x, dtype=float), t))

    def gradient(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x, t), dtype=float)
        return central_gradient(self.g, x, t)

    def hessian(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess is not None:
            return np.asarray(self.hess(x, t), dtype=float)
        return central_hessian(self.g, x, t)

    def time_derivative(self, x, t) -> float:
        x = np.asarray(x, dtype=float)
        if self.d_dt is not None:
            return float(self.d_dt(x, t))
        return float(central_time_derivative(lambda xx, tt: self.g(xx, tt), x, t))


@dataclass
class ConstraintSet:
    """Ordered collection of constraints with activation tolerances."""

    constraints: list = field(default_factory=list)
    activation_tol: float = 1e-9
    release_tol: float = 1e-9

    def __post_init__(self):
        labels = [c.label for c in self.constraints]
        if len(set(labels)) != len(labels):
            raise ValueError(f"constraint labels must be unique, got {labels}")
        if not (0.0 < self.activation_tol <= 1e-6):
            raise ValueError("activation_tol must lie in (0, 1e-6]")
        if not (0.0 < self.release_tol <= 1e-6):
            raise ValueError("release_tol must lie in (0, 1e-6]")

    def __len__(self) -> int:
        return len(self.constraints)

    def __getitem__(self, j) -> ConstraintFunction:
        return self.constraints[j]

    def values(self, x, t) -> np.ndarray:
        return np.array([c.value(x, t) for c in self.constraints])

    def label_of(self, j: int) -> str:
        return self.constraints[j].label


@dataclass(frozen=True)
class ActiveSet:
    """Sorted indices of constraints holding with equality."""

    indices: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(set(self.indices))))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, j) -> bool:
        return j in self.indices


@dataclass
class MultiplierSolution:
    """Active multipliers plus Gram-system diagnostics.

    ``lambdas`` maps retained active indices to lambda_j <= 0; constraints
    whose multiplier came out positive were released and re-solved.
    """

    lambdas: dict
    gram: np.ndarray
    gram_rank: int
    used_pseudoinverse: bool
    released: tuple = ()

    def force(self, cset: ConstraintSet, x, t) -> np.ndarray:
        """sum_j lambda_j dg_j/dx over the retained active constraints."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for j, lam in self.lambdas.items():
            out += lam * cset[j].gradient(x, t)
        return out


@dataclass(frozen=True)
class TangentBasis:
    """Orthonormal basis G_par of the active-constraint tangent space."""

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def projector(self) -> np.ndarray:
        return self.matrix @ self.matrix.T


def detect_active(cset: ConstraintSet, state: StateVector) -> ActiveSet:
    """Indices with |g_j| <= activation_tol; raises on infeasible states."""
    vals = cset.values(state.x, state.t)
    tol = cset.activation_tol
    bad = np.nonzero(vals > tol)[0]
    if bad.size:
        j = int(bad[0])
        raise InfeasibleState(
            f"constraint '{cset.label_of(j)}' violated: g = {vals[j]:.3e} > {tol:.1e}")
    active = [int(j) for j in np.nonzero(vals >= -tol)[0]]
    for j in active:
        gn = np.linalg.norm(cset[j].gradient(state.x, state.t))
        if gn <= _GRAD_MIN:
            raise ValueError(
                f"constraint '{cset.label_of(j)}' has degenerate gradient on its boundary")
    return ActiveSet(tuple(active))


def gram_matrix(cset: ConstraintSet, active: ActiveSet, metric: MetricField,
                state: StateVector) -> np.ndarray:
    """G_jk = (dg_j/dx)^T M^-1 (dg_k/dx) over the active set."""
    idx = list(active)
    if not idx:
        return np.zeros((0, 0))
    A = np.stack([cset[j].gradient(state.x, state.t) for j in idx])
    M = metric.eval(state.x, state.t)
    G = A @ np.linalg.solve(M, A.T)
    G = 0.5 * (G + G.T)
    off = G - np.diag(np.diag(G))
    if off.size and off.min() < -1e-10:
        a, b = np.unravel_index(np.argmin(off), off.shape)
        raise AcuteCorner(
            f"constraints '{cset.label_of(idx[a])}' and '{cset.label_of(idx[b])}' "
            f"form an acute corner (G_jk = {off[a, b]:.3e})")
    return G


def _pinv_with_rank(G: np.ndarray):
    """Moore-Penrose inverse with singular values below 1e-10*sigma_max dropped."""
    if G.size == 0:
        return G.copy(), 0
    U, s, Vt = np.linalg.svd(G)
    cutoff = _PINV_RCOND * s[0] if s.size else 0.0
    keep = s > cutoff
    sinv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * sinv) @ U.T, int(keep.sum())


def solve_multipliers(cset: ConstraintSet, active: ActiveSet, metric: MetricField,
                      f, state: StateVector, restitution: float = 0.0) -> MultiplierSolution:
    """Active-set multipliers lambda = -(1+e) G^+ b with release pivoting.

    b_k = (dg_k/dx)^T M^-1 f + dg_k/dt. Components with lambda_j > 0 are
    released (lowest index first) and the reduced system re-solved, at most
    once per constraint. The persistent-contact flow uses e = 0; collision
    resolution scales the same solve by (1+e).
    """
    if not (0.0 <= restitution <= 1.0):
        raise ValueError("restitution must lie in [0, 1]")
    remaining = list(active)
    released = []
    if not remaining:
        return MultiplierSolution({}, np.zeros((0, 0)), 0, False)
    x, t = state.x, state.t
    M = metric.eval(x, t)
    fv = f.eval(x, t) if hasattr(f, "eval") else np.asarray(f, dtype=float)
    Minv_f = np.linalg.solve(M, fv)
    for _ in range(len(active) + 1):
        if not remaining:
            return MultiplierSolution({}, np.zeros((0, 0)), 0, False,
                                      released=tuple(released))
        sub = ActiveSet(tuple(remaining))
        G = gram_matrix(cset, sub, metric, state)
        b = np.array([cset[j].gradient(x, t) @ Minv_f + cset[j].time_derivative(x, t)
                      for j in remaining])
        Gpinv, rank = _pinv_with_rank(G)
        lam = -(1.0 + restitution) * (Gpinv @ b)
        positive = [j for j, l in zip(remaining, lam) if l > 0.0]
        if not positive:
            return MultiplierSolution(
                lambdas={j: float(l) for j, l in zip(remaining, lam)},
                gram=G, gram_rank=rank,
                used_pseudoinverse=bool(rank < len(remaining)),
                released=tuple(released))
        drop = min(positive)
        remaining.remove(drop)
        released.append(drop)
    raise NoConvergence("multiplier release iteration exceeded the constraint count")


def tangent_basis(cset: ConstraintSet, active: ActiveSet,
                  state: StateVector) -> TangentBasis:
    """Orthonormal null-space basis of the stacked active gradients.

    Computed by a rank-revealing SVD; columns carry a deterministic sign
    (first entry above 1e-12 of the column max is positive). An empty
    active set returns the identity.
    """
    n = state.n
    idx = list(active)
    if not idx:
        return TangentBasis(np.eye(n))
    A = np.stack([cset[j].gradient(state.x, state.t) for j in idx])
    ns = null_space(A)
    for c in range(ns.shape[1]):
        col = ns[:, c]
        big = np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300)
        first = np.nonzero(big)[0]
        if first.size and col[first[0]] < 0:
            ns[:, c] = -col
    return TangentBasis(ns)
