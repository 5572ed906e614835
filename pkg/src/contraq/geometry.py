"""Metric fields, Christoffel terms, and covariant derivatives.

Systems are written in covariant form M(x,t) xdot = f(x,t) with M a
Riemannian metric. This module evaluates M, its derivatives, the
Christoffel correction gamma_ij^k, and the first/second covariant
derivatives that the contraction bounds are built from.

Index conventions:
    d_dx(x,t)[i, j, l]  = dM_ij / dx_l
    gamma[i, j, k]      = gamma_ij^k   (k is the contracted, raised index)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonSPDMetric(ValueError):
    """Metric matrix failed the symmetric positive definite check."""


class DerivativeUnavailable(RuntimeError):
    """No analytic derivative supplied and finite differences disabled."""


_SYM_RTOL = 1e-12

# Central-difference step scales. First derivatives use h_i = FD_STEP * max(1, |x_i|)
# per coordinate; second derivatives use the coarser FD_STEP2.
FD_STEP = 1e-5
FD_STEP2 = 1e-4


def _as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"expected a 1-d state vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state vector has non-finite entries")
    return x


@dataclass(frozen=True)
class StateVector:
    """System state: coordinates x and time t."""

    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", _as_vector(self.x).copy())
        self.x.flags.writeable = False
        if not np.isfinite(self.t):
            raise ValueError("time must be finite")

    @property
    def n(self) -> int:
        return self.x.size


def fd_steps(x: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.maximum(1.0, np.abs(x))


def central_jacobian(fn, x, t, scale=FD_STEP) -> np.ndarray:
    """Central-difference Jacobian d fn_i / d x_j of a vector map fn(x, t)."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, scale)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        cols.append((np.asarray(fn(x + e, t), dtype=float)
                     - np.asarray(fn(x - e, t), dtype=float)) / (2.0 * h[j]))
    return np.stack(cols, axis=-1)


def central_gradient(fn, x, t, scale=FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar map fn(x, t)."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, scale)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (fn(x + e, t) - fn(x - e, t)) / (2.0 * h[j])
    return g


def central_hessian(fn, x, t, scale=FD_STEP2) -> np.ndarray:
    """Second derivatives of a scalar map by nested central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = fd_steps(x, scale)
    H = np.zeros((n, n))
    f0 = fn(x, t)
    for i in range(n):
        ei = np.zeros_like(x)
        ei[i] = h[i]
        H[i, i] = (fn(x + ei, t) - 2.0 * f0 + fn(x - ei, t)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros_like(x)
            ej[j] = h[j]
            H[i, j] = (fn(x + ei + ej, t) - fn(x + ei - ej, t)
                       - fn(x - ei + ej, t) + fn(x - ei - ej, t)) / (4.0 * h[i] * h[j])
            H[j, i] = H[i, j]
    return H


def central_time_derivative(fn, x, t, scale=FD_STEP):
    h = scale * max(1.0, abs(t))
    return (np.asarray(fn(x, t + h), dtype=float)
            - np.asarray(fn(x, t - h), dtype=float)) / (2.0 * h)


def check_spd(M: np.ndarray) -> np.ndarray:
    """Validate symmetry/positive-definiteness; return the symmetrized matrix.

    Asymmetry below 1e-12 relative is averaged away; anything larger is a
    hard error, as is a non positive definite result.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonSPDMetric(f"metric must be square, got shape {M.shape}")
    scale = max(np.abs(M).max(), 1e-300)
    asym = np.abs(M - M.T).max() / scale
    if asym > _SYM_RTOL:
        raise NonSPDMetric(f"metric asymmetry {asym:.3e} exceeds {_SYM_RTOL:.0e} relative")
    Ms = 0.5 * (M + M.T)
    try:
        np.linalg.cholesky(Ms)
    except np.linalg.LinAlgError:
        raise NonSPDMetric("metric is not positive definite") from None
    return Ms


@dataclass
class MetricField:
    """Riemannian metric M(x,t) with spatial and temporal derivatives.

    ``matrix`` maps (x, t) to the n x n metric. Analytic derivatives are
    optional; missing ones fall back to central finite differences.
    """

    matrix: "callable"
    d_dx_fn: "callable | None" = None
    d_dt_fn: "callable | None" = None
    allow_fd: bool = True

    @property
    def derivative_mode(self) -> str:
        return "analytic" if (self.d_dx_fn and self.d_dt_fn) else "finite-difference"

    def eval(self, x, t) -> np.ndarray:
        return check_spd(self.matrix(np.asarray(x, dtype=float), t))

    def d_dx(self, x, t) -> np.ndarray:
        """Array dM[i, j, l] = dM_ij/dx_l, symmetric in (i, j)."""
        x = np.asarray(x, dtype=float)
        if self.d_dx_fn is not None:
            dM = np.asarray(self.d_dx_fn(x, t), dtype=float)
        elif not self.allow_fd:
            raise DerivativeUnavailable(
                "no analytic dM/dx and finite differences are disabled")
        else:
            h = fd_steps(x, FD_STEP)
            slabs = []
            for l in range(x.size):
                e = np.zeros_like(x)
                e[l] = h[l]
                slabs.append((np.asarray(self.matrix(x + e, t), dtype=float)
                              - np.asarray(self.matrix(x - e, t), dtype=float)) / (2.0 * h[l]))
            dM = np.stack(slabs, axis=-1)
        scale = max(np.abs(dM).max(), 1.0)
        if np.abs(dM - dM.transpose(1, 0, 2)).max() > 1e-9 * scale:
            raise NonSPDMetric("dM/dx is not symmetric in (i, j)")
        return dM

    def d_dt(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.d_dt_fn is not None:
            return np.asarray(self.d_dt_fn(x, t), dtype=float)
        if not self.allow_fd:
            raise DerivativeUnavailable(
                "no analytic dM/dt and finite differences are disabled")
        return central_time_derivative(self.matrix, x, t)

    @classmethod
    def constant(cls, M) -> "MetricField":
        """Constant metric; all derivatives exactly zero."""
        M0 = check_spd(np.asarray(M, dtype=float))
        n = M0.shape[0]
        return cls(matrix=lambda x, t: M0,
                   d_dx_fn=lambda x, t: np.zeros((n, n, n)),
                   d_dt_fn=lambda x, t: np.zeros((n, n)))

    @classmethod
    def identity(cls, n: int) -> "MetricField":
        return cls.constant(np.eye(n))


@dataclass
class CovectorField:
    """Covariant vector field f(x,t) with Jacobian df/dx."""

    fn: "callable"
    jacobian_fn: "callable | None" = None
    allow_fd: bool = True

    @property
    def derivative_mode(self) -> str:
        return "analytic" if self.jacobian_fn else "finite-difference"

    def eval(self, x, t) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float), t), dtype=float)

    def jacobian(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(x, t), dtype=float)
        if not self.allow_fd:
            raise DerivativeUnavailable(
                "no analytic Jacobian and finite differences are disabled")
        return central_jacobian(self.fn, x, t)

    @classmethod
    def affine(cls, A, b=None) -> "CovectorField":
        """f(x) = A x + b with exact Jacobian A."""
        A = np.asarray(A, dtype=float)
        b0 = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
        return cls(fn=lambda x, t: A @ x + b0, jacobian_fn=lambda x, t: A)


@dataclass(frozen=True)
class ChristoffelTensor:
    """gamma[i, j, k] = gamma_ij^k; symmetric in (i, j)."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]


def christoffel(metric: MetricField, state: StateVector) -> ChristoffelTensor:
    """Christoffel symbols of the metric at the given state.

    gamma_ij^k = 1/2 sum_l (dM_il/dx_j + dM_jl/dx_i - dM_ij/dx_l) (M^-1)_kl
    """
    M = metric.eval(state.x, state.t)
    dM = metric.d_dx(state.x, state.t)
    Minv = np.linalg.inv(M)
    # B[i, j, l] = dM_il/dx_j + dM_jl/dx_i - dM_ij/dx_l
    B = dM.transpose(0, 2, 1) + dM.transpose(2, 0, 1) - dM
    gamma = 0.5 * np.einsum("ijl,kl->ijk", B, Minv)
    return ChristoffelTensor(gamma=gamma)


def covariant_derivative_vector(f: CovectorField, metric: MetricField,
                                state: StateVector) -> np.ndarray:
    """(grad_M f)_ij = df_i/dx_j - sum_k gamma_ij^k f_k."""
    J = f.jacobian(state.x, state.t)
    gamma = christoffel(metric, state).gamma
    fv = f.eval(state.x, state.t)
    return J - np.einsum("ijk,k->ij", gamma, fv)


def covariant_hessian_scalar(g, metric: MetricField, state: StateVector) -> np.ndarray:
    """Second covariant derivative of a scalar constraint function.

    (grad_M^2 g)_ij = d2g/dx_i dx_j - sum_k gamma_ij^k dg/dx_k; symmetric.
    ``g`` is any object exposing gradient(x, t) and hessian(x, t).
    """
    H = np.asarray(g.hessian(state.x, state.t), dtype=float)
    grad = np.asarray(g.gradient(state.x, state.t), dtype=float)
    gamma = christoffel(metric, state).gamma
    out = H - np.einsum("ijk,k->ij", gamma, grad)
    return 0.5 * (out + out.T)
