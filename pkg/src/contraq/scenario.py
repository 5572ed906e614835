"""Declarative scenario files: schema validation and solver-object builders.

Scenarios are JSON documents selecting built-in dynamics/constraint
families with coefficient tables; no expression parsing. Three kinds are
supported: "flow" (first-order constrained dynamics), "hamiltonian"
(impulsive collision dynamics), and "geodesic" (polygonal shortest paths).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline

from .collisions import Hamiltonian, PhaseState
from .constraints import ConstraintFunction, ConstraintSet
from .flow import SimConfig
from .geodesics import PolygonalWorld
from .geometry import CovectorField, MetricField, StateVector


class SchemaError(ValueError):
    """Scenario file failed validation; message carries the field path."""


class UnknownBuiltin(SchemaError):
    """Scenario referenced a dynamics or constraint family that does not exist."""


_CHECKS_BY_KIND = {
    "flow": {"feasibility", "bounds", "empirical_rate"},
    "hamiltonian": {"equivalence", "restitution", "energy"},
    "geodesic": {"paths"},
}


@dataclass
class Scenario:
    name: str
    kind: str
    checks: dict = field(default_factory=dict)
    # flow
    metric: "MetricField | None" = None
    f: "CovectorField | None" = None
    constraints: "ConstraintSet | None" = None
    x0: "StateVector | None" = None
    config: "SimConfig | None" = None
    # hamiltonian
    hamiltonian: "Hamiltonian | None" = None
    phase0: "PhaseState | None" = None
    restitution: float = 0.0
    # geodesic
    world: "PolygonalWorld | None" = None
    k: int = 1
    speed: float = 1.0


def _fail(path, msg):
    raise SchemaError(f"field '{path}': {msg}")


def _get(d, key, path, typ=None, required=True, default=None):
    if key not in d:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing")
        return default
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        _fail(f"{path}.{key}" if path else key,
              f"expected {getattr(typ, '__name__', typ)}, got {type(v).__name__}")
    return v


def _check_finite(obj, path):
    if isinstance(obj, bool):
        return
    if isinstance(obj, (int, float)):
        if not math.isfinite(obj):
            _fail(path, f"non-finite number {obj!r}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")


def _matrix(d, key, path, square=True):
    raw = _get(d, key, path, list)
    try:
        M = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        _fail(f"{path}.{key}", "not a numeric matrix")
    if M.ndim != 2 or (square and M.shape[0] != M.shape[1]):
        _fail(f"{path}.{key}", f"bad matrix shape {M.shape}")
    return M


def _vector(d, key, path, required=True, default=None):
    raw = _get(d, key, path, list, required=required, default=default)
    if raw is None:
        return None
    v = np.asarray(raw, dtype=float)
    if v.ndim != 1:
        _fail(f"{path}.{key}", f"bad vector shape {v.shape}")
    return v


def _build_metric(spec, path):
    builtin = _get(spec, "builtin", path, str)
    if builtin == "identity":
        n = _get(spec, "n", path, int)
        return MetricField.identity(n)
    if builtin == "constant":
        return MetricField.constant(_matrix(spec, "matrix", path))
    raise UnknownBuiltin(f"field '{path}.builtin': unknown metric family '{builtin}'")


def _build_dynamics(spec, path):
    builtin = _get(spec, "builtin", path, str)
    if builtin == "affine":
        A = _matrix(spec, "A", path)
        b = _vector(spec, "b", path, required=False)
        return CovectorField.affine(A, b)
    raise UnknownBuiltin(f"field '{path}.builtin': unknown dynamics family '{builtin}'")


def _spline_or_constant(spec, path, dim):
    """Time signal c(t): constant vector or spline through knots."""
    builtin = _get(spec, "builtin", path, str)
    if builtin == "constant":
        val = _vector(spec, "value", path)
        if val.size != dim:
            _fail(f"{path}.value", f"expected length {dim}")
        zero = np.zeros(dim)
        return (lambda t: val), (lambda t: zero)
    if builtin == "spline":
        ts = _vector(spec, "t", path)
        vals = np.asarray(_get(spec, "values", path, list), dtype=float)
        if vals.ndim != 2 or vals.shape != (ts.size, dim):
            _fail(f"{path}.values", f"expected shape ({ts.size}, {dim})")
        if ts.size == 1:
            c0 = vals[0]
            zero = np.zeros(dim)
            return (lambda t: c0), (lambda t: zero)
        spl = make_interp_spline(ts, vals, k=min(3, ts.size - 1))
        dspl = spl.derivative()
        return (lambda t: np.asarray(spl(t))), (lambda t: np.asarray(dspl(t)))
    raise UnknownBuiltin(f"field '{path}.builtin': unknown signal family '{builtin}'")


def _build_constraint(spec, idx, n):
    path = f"constraints[{idx}]"
    family = _get(spec, "family", path, str)
    label = _get(spec, "label", path, str)
    if family == "linear":
        a = _vector(spec, "a", path)
        c = float(_get(spec, "c", path, (int, float)))
        if a.size != n:
            _fail(f"{path}.a", f"expected length {n}")
        zero_h = np.zeros((n, n))
        return ConstraintFunction(
            g=lambda x, t, a=a, c=c: float(a @ x + c),
            grad=lambda x, t, a=a: a,
            hess=lambda x, t: zero_h,
            d_dt=lambda x, t: 0.0,
            label=label)
    if family == "quadratic_form":
        Q = _matrix(spec, "Q", path)
        a = _vector(spec, "a", path, required=False)
        c = float(_get(spec, "c", path, (int, float), required=False, default=0.0))
        if Q.shape[0] != n:
            _fail(f"{path}.Q", f"expected {n}x{n}")
        a0 = np.zeros(n) if a is None else a
        S = Q + Q.T
        return ConstraintFunction(
            g=lambda x, t: float(x @ Q @ x + a0 @ x + c),
            grad=lambda x, t: S @ x + a0,
            hess=lambda x, t: S,
            d_dt=lambda x, t: 0.0,
            label=label)
    if family == "circle":
        if n != 2:
            _fail(path, "circle constraints require a 2-d state")
        r = float(_get(spec, "radius", path, (int, float)))
        center, dcenter = _spline_or_constant(_get(spec, "center", path, dict),
                                              f"{path}.center", 2)
        eye2 = -2.0 * np.eye(2)
        return ConstraintFunction(
            g=lambda x, t: float(r * r - np.sum((x - center(t)) ** 2)),
            grad=lambda x, t: -2.0 * (x - center(t)),
            hess=lambda x, t: eye2,
            d_dt=lambda x, t: float(2.0 * (x - center(t)) @ dcenter(t)),
            label=label)
    raise UnknownBuiltin(f"field '{path}.family': unknown constraint family '{family}'")


def _build_constraint_set(raw, n, sim_spec):
    cons = [_build_constraint(c, i, n) for i, c in enumerate(raw)]
    kwargs = {}
    if sim_spec is not None:
        if "activation_tol" in sim_spec:
            kwargs["activation_tol"] = float(sim_spec["activation_tol"])
        if "release_tol" in sim_spec:
            kwargs["release_tol"] = float(sim_spec["release_tol"])
    return ConstraintSet(cons, **kwargs)


def _build_sim(spec, path):
    return SimConfig(
        dt_max=float(_get(spec, "dt_max", path, (int, float))),
        event_tol=float(_get(spec, "event_tol", path, (int, float))),
        t_end=float(_get(spec, "t_end", path, (int, float))))


def _build_hamiltonian(spec, path):
    H = _matrix(spec, "H", path)
    d = H.shape[0]
    vspec = _get(spec, "V", path, dict)
    vb = _get(vspec, "builtin", f"{path}.V", str)
    if vb != "quadratic":
        raise UnknownBuiltin(f"field '{path}.V.builtin': unknown potential family '{vb}'")
    K = _matrix(vspec, "K", f"{path}.V")
    if K.shape[0] != d:
        _fail(f"{path}.V.K", f"expected {d}x{d}")
    fspec = _get(vspec, "forcing", f"{path}.V", dict, required=False)
    if fspec is not None:
        cfun, _ = _spline_or_constant(fspec, f"{path}.V.forcing", d)
    else:
        zero = np.zeros(d)
        cfun = lambda t: zero
    damping = None
    if "damping" in spec:
        damping = _matrix(spec, "damping", path)
        if damping.shape[0] != d:
            _fail(f"{path}.damping", f"expected {d}x{d}")

    def V(q, t):
        return float(0.5 * q @ K @ q + cfun(t) @ q)

    def grad_V(q, t):
        return K @ q + cfun(t)

    force = None
    if damping is not None:
        D = damping
        force = lambda q, p, t: -(D @ p)
    return Hamiltonian(potential=V, inv_mass=H, grad_potential=grad_V, force=force)


def _validate_checks(raw, kind):
    checks = {}
    for name, cfg in raw.items():
        if name not in _CHECKS_BY_KIND[kind]:
            _fail(f"checks.{name}", f"not valid for kind '{kind}'")
        if not isinstance(cfg, dict):
            _fail(f"checks.{name}", "expected an object")
        checks[name] = dict(cfg)
    return checks


def build_scenario(doc: dict, source: str = "<dict>") -> Scenario:
    if not isinstance(doc, dict):
        raise SchemaError(f"{source}: scenario document must be an object")
    version = _get(doc, "schema_version", "", int)
    if version != 1:
        _fail("schema_version", f"unsupported version {version}")
    _check_finite(doc, source)
    name = _get(doc, "name", "", str)
    kind = _get(doc, "kind", "", str)
    if kind not in _CHECKS_BY_KIND:
        _fail("kind", f"must be one of {sorted(_CHECKS_BY_KIND)}")
    checks = _validate_checks(_get(doc, "checks", "", dict, required=False,
                                   default={}), kind)

    if kind == "flow":
        x0 = _vector(doc, "x0", "")
        n = x0.size
        metric = _build_metric(_get(doc, "metric", "", dict), "metric")
        f = _build_dynamics(_get(doc, "dynamics", "", dict), "dynamics")
        sim_spec = _get(doc, "sim", "", dict)
        cset = _build_constraint_set(_get(doc, "constraints", "", list,
                                          required=False, default=[]), n, sim_spec)
        t0 = float(_get(doc, "t0", "", (int, float), required=False, default=0.0))
        return Scenario(name=name, kind=kind, checks=checks, metric=metric, f=f,
                        constraints=cset, x0=StateVector(x0, t0),
                        config=_build_sim(sim_spec, "sim"))

    if kind == "hamiltonian":
        ham = _build_hamiltonian(_get(doc, "hamiltonian", "", dict), "hamiltonian")
        x0spec = _get(doc, "x0", "", dict)
        q0 = _vector(x0spec, "q", "x0")
        p0 = _vector(x0spec, "p", "x0")
        t0 = float(_get(doc, "t0", "", (int, float), required=False, default=0.0))
        sim_spec = _get(doc, "sim", "", dict)
        cset = _build_constraint_set(_get(doc, "constraints", "", list,
                                          required=False, default=[]),
                                     q0.size, sim_spec)
        e = float(_get(doc, "restitution", "", (int, float)))
        if not (0.0 <= e <= 1.0):
            _fail("restitution", "must lie in [0, 1]")
        return Scenario(name=name, kind=kind, checks=checks, hamiltonian=ham,
                        constraints=cset, phase0=PhaseState(q0, p0, t0),
                        restitution=e, config=_build_sim(sim_spec, "sim"))

    wspec = _get(doc, "world", "", dict)
    obstacles = _get(wspec, "obstacles", "world", list)
    source_pt = _vector(wspec, "source", "world")
    target_pt = _vector(wspec, "target", "world")
    try:
        world = PolygonalWorld(obstacles, source_pt, target_pt)
    except ValueError as exc:
        raise SchemaError(f"field 'world': {exc}") from None
    k = _get(doc, "k", "", int, required=False, default=1)
    speed = float(_get(doc, "speed", "", (int, float), required=False, default=1.0))
    if speed <= 0:
        _fail("speed", "must be positive")
    return Scenario(name=name, kind=kind, checks=checks, world=world, k=k,
                    speed=speed)


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario JSON file into solver-ready objects."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return build_scenario(doc, source=str(path))
