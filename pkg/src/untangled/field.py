"""Spatial domains, time grids, and velocity fields.

Domains are closed axis-aligned boxes, which keeps the tangent cone exactly
computable.  Velocity fields come from a small registry of analytic families
(possibly discontinuous) or from grid-sampled data with multilinear
interpolation.  Every field declares a constant linear-growth envelope
``|b(t,x)| <= growth_c * (1 + |x|)`` which is checked, never assumed.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError

Array = np.ndarray


@dataclasses.dataclass(frozen=True)
class SpatialDomain:
    """Closed box ``prod_i [lower_i, upper_i]`` in R^d."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ConfigError("domain bounds must be vectors of equal length")
        if not np.all(lower < upper):
            raise ConfigError("domain requires lower_i < upper_i for all i")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_batch(self, points: Array, tol: float = 0.0) -> Array:
        """Vectorized membership for points of shape (n, d)."""
        return np.all(
            (points >= self.lower - tol) & (points <= self.upper + tol), axis=-1
        )

    def clip(self, points: Array) -> Array:
        return np.clip(points, self.lower, self.upper)


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    """Uniform-by-default partition of ``[t_start, t_end]`` into n_steps steps."""

    t_start: float
    t_end: float
    n_steps: int
    nodes: Array = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("time grid needs n_steps >= 1")
        if self.t_end <= self.t_start:
            raise ConfigError("time grid needs t_end > t_start")
        if self.nodes is None:
            nodes = np.linspace(self.t_start, self.t_end, self.n_steps + 1)
        else:
            nodes = np.asarray(self.nodes, dtype=float)
            if nodes.size != self.n_steps + 1 or np.any(np.diff(nodes) <= 0):
                raise ConfigError("time grid nodes must be strictly increasing "
                                  "with length n_steps + 1")
            if nodes[0] != self.t_start or nodes[-1] != self.t_end:
                raise ConfigError("time grid nodes must span [t_start, t_end]")
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        """Index of the grid node equal to t (within tol)."""
        k = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[k] - t) > tol * max(1.0, abs(self.t_end)):
            raise DataError(f"t={t} is not a node of the time grid")
        return k


@dataclasses.dataclass(frozen=True)
class VelocityField:
    """Velocity field b(t, x) with a declared linear-growth envelope.

    Immutable after construction; evaluation is a pure function and safe to
    call concurrently.  ``evaluate`` accepts a batch of points shaped (n, d)
    and returns (n, d); it is the bit-deterministic primitive every other
    module builds on.
    """

    kind: str
    params: tuple
    growth_c: float
    dim: int
    _eval: Callable[[float, Array], Array] = dataclasses.field(repr=False)

    def evaluate(self, t: float, points: Array) -> Array:
        points = np.asarray(points, dtype=float)
        squeeze = points.ndim == 1
        pts = np.atleast_2d(points)
        if pts.shape[1] != self.dim:
            raise DataError(f"expected points in R^{self.dim}, got shape {points.shape}")
        out = self._eval(t, pts)
        return out[0] if squeeze else out


def eval_velocity(field: VelocityField, t: float, x) -> Array:
    """Evaluate b(t, x) at a single point, checking finiteness."""
    v = field.evaluate(t, np.asarray(x, dtype=float))
    if not np.all(np.isfinite(v)):
        raise DomainError(f"velocity field '{field.kind}' is not finite at x={x}")
    return v


# --- analytic registry ------------------------------------------------------

def _constant(params, dim):
    v = np.asarray(params, dtype=float)
    if v.size == 0:
        raise ConfigError("constant field needs the velocity components as params")

    def ev(t, pts):
        return np.broadcast_to(v, pts.shape).copy()

    return ev, float(np.linalg.norm(v)), v.size


def _sqrt(params, dim):
    # b(x) = 2 sqrt(x) on x >= 0; 2 sqrt(x) <= 1 + x so growth_c = 1 certifies.
    def ev(t, pts):
        x = pts[:, 0]
        if np.any(x < -1e-12):
            raise DomainError("sqrt field is defined for x >= 0 only")
        return 2.0 * np.sqrt(np.maximum(x, 0.0))[:, None]

    return ev, 1.0, 1


def _sign1d(params, dim):
    # +1 for x <= 0, -1 for x > 0 (value at 0 is +1 by definition).
    def ev(t, pts):
        return np.where(pts[:, 0] <= 0.0, 1.0, -1.0)[:, None]

    return ev, 1.0, 1


def _compressive_sign(params, dim):
    def ev(t, pts):
        return -np.sign(pts[:, 0])[:, None]

    return ev, 1.0, 1


def _mollified_sign(params, dim):
    # Top-hat mollification of the compressive sign field: piecewise linear
    # ramp of half-width eps.  sign1d and compressive-sign differ on a null
    # set, so both mollify to the same ramp.
    if len(params) != 1 or params[0] <= 0:
        raise ConfigError("mollified sign field needs params = [eps > 0]")
    eps = float(params[0])

    def ev(t, pts):
        return -np.clip(pts[:, 0] / eps, -1.0, 1.0)[:, None]

    return ev, 1.0, 1


def _linear1d(params, dim):
    if len(params) != 1:
        raise ConfigError("linear1d field needs params = [a]")
    a = float(params[0])

    def ev(t, pts):
        return a * pts[:, :1]

    return ev, abs(a), 1


def _rotating2d(params, dim):
    omega = float(params[0]) if params else 1.0

    def ev(t, pts):
        out = np.empty_like(pts)
        out[:, 0] = -omega * pts[:, 1]
        out[:, 1] = omega * pts[:, 0]
        return out

    return ev, abs(omega), 2


_REGISTRY = {
    "constant": _constant,
    "sqrt": _sqrt,
    "sign1d": _sign1d,
    "compressive-sign": _compressive_sign,
    "mollified-sign1d": _mollified_sign,
    "mollified-compressive-sign": _mollified_sign,
    "linear1d": _linear1d,
    "rotating-2d": _rotating2d,
}


def make_field(kind: str, params: Sequence[float] = (), growth_c: float | None = None,
               dim: int | None = None) -> VelocityField:
    """Construct a registry field; growth_c defaults to the registered bound."""
    if kind not in _REGISTRY:
        raise ConfigError(f"unknown velocity field kind '{kind}'; "
                          f"known: {sorted(_REGISTRY)}")
    ev, default_c, registry_dim = _REGISTRY[kind](tuple(params), dim)
    c = default_c if growth_c is None else float(growth_c)
    if c < 0:
        raise ConfigError("growth_c must be nonnegative")
    return VelocityField(kind=kind, params=tuple(float(p) for p in params),
                         growth_c=c, dim=registry_dim, _eval=ev)


def grid_sampled_field(domain: SpatialDomain, values: Array, growth_c: float,
                       axes: Sequence[Array] | None = None) -> VelocityField:
    """Time-independent field sampled on a regular grid over the domain.

    ``values`` has shape (n_1, ..., n_d, d); evaluation uses multilinear
    interpolation inside cells, so the result is continuous.  Points outside
    the grid raise a domain error.
    """
    values = np.asarray(values, dtype=float)
    d = domain.dim
    if values.ndim != d + 1 or values.shape[-1] != d:
        raise ConfigError(f"grid values must have shape (n_1..n_{d}, {d})")
    if axes is None:
        axes = [np.linspace(domain.lower[i], domain.upper[i], values.shape[i])
                for i in range(d)]
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator(axes, values, method="linear",
                                     bounds_error=True)

    def ev(t, pts):
        try:
            return np.asarray(interp(pts), dtype=float)
        except ValueError as exc:
            raise DomainError(f"point outside sampled grid: {exc}") from exc

    return VelocityField(kind="grid-sampled", params=(), growth_c=float(growth_c),
                         dim=d, _eval=ev)


# --- admissibility diagnostics ----------------------------------------------

@dataclasses.dataclass
class FieldDiagnostics:
    growth_violations: int = 0
    osl_modulus_estimate: float = float("nan")
    tangent_violations: int = 0

    def __post_init__(self):
        if self.growth_violations < 0 or self.tangent_violations < 0:
            raise DataError("diagnostic counts must be nonnegative")


def tangent_cone_admissible(domain: SpatialDomain, x, v, tol: float = 0.0) -> bool:
    """True iff v lies in the tangent cone of the box at x.

    For a box the cone is explicit: on an active lower face the component
    must be >= -tol, on an active upper face <= tol; interior points admit
    every direction.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not domain.contains(x):
        raise DomainError(f"x={x} is outside the domain")
    at_lower = x <= domain.lower
    at_upper = x >= domain.upper
    if np.any(v[at_lower] < -tol) or np.any(v[at_upper] > tol):
        return False
    return True


def clamp_to_tangent_cone(domain: SpatialDomain, x: Array, v: Array,
                          face_tol: float = 0.0) -> Array:
    """Project v onto the tangent cone at x (zero out outward face components)."""
    w = np.array(v, dtype=float)
    at_lower = x <= domain.lower + face_tol
    at_upper = x >= domain.upper - face_tol
    w[at_lower & (w < 0)] = 0.0
    w[at_upper & (w > 0)] = 0.0
    return w


def check_growth(field: VelocityField, samples: Sequence[tuple]) -> FieldDiagnostics:
    """Count samples violating |b(t,x)| <= growth_c * (1 + |x|).

    Report-only: zero violations certifies the declared envelope on the
    sample set.
    """
    if not samples:
        raise DataError("check_growth needs a nonempty sample list")
    times = np.array([t for t, _ in samples], dtype=float)
    points = np.atleast_2d(np.array([np.atleast_1d(x) for _, x in samples],
                                    dtype=float))
    if np.all(times == times[0]) or not getattr(field, "time_dependent", False):
        vel = field.evaluate(times[0], points)
    else:
        vel = np.array([field.evaluate(t, x[None, :])[0]
                        for t, x in zip(times, points)])
    bounds = field.growth_c * (1.0 + np.linalg.norm(points, axis=1))
    norms = np.linalg.norm(np.atleast_2d(vel), axis=1)
    violations = int(np.sum(norms > bounds * (1.0 + 1e-12) + 1e-300))
    return FieldDiagnostics(growth_violations=violations)


def estimate_osl_modulus(field: VelocityField, t: float, pairs: Sequence[tuple]) -> float:
    """Max of <b(t,y)-b(t,x), y-x> / |y-x|^2 over the sampled pairs.

    A nonpositive value certifies one-sided Lipschitz (compressive) behavior
    on the sample.  Coincident pairs are rejected.
    """
    if not pairs:
        raise DataError("estimate_osl_modulus needs a nonempty pair list")
    worst = -np.inf
    for x, y in pairs:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        diff = y - x
        nn = float(np.dot(diff, diff))
        if nn == 0.0:
            raise DataError("estimate_osl_modulus: coincident pair")
        bx = field.evaluate(t, x)
        by = field.evaluate(t, y)
        worst = max(worst, float(np.dot(by - bx, diff)) / nn)
    return worst


def diagnose_field(field: VelocityField, domain: SpatialDomain, grid: TimeGrid,
                   n_samples: int = 256, seed: int = 0) -> FieldDiagnostics:
    """Full admissibility report: growth, OSL estimate, boundary tangency."""
    from scipy.stats import qmc

    sampler = qmc.LatinHypercube(d=domain.dim + 1, seed=seed)
    u = sampler.random(n_samples)
    times = grid.t_start + u[:, 0] * (grid.t_end - grid.t_start)
    points = domain.lower + u[:, 1:] * (domain.upper - domain.lower)
    diag = check_growth(field, list(zip(times, points)))

    rng = np.random.default_rng(seed)
    idx = rng.permutation(n_samples)
    pairs = [(points[i], points[j]) for i, j in zip(idx[: n_samples // 2],
                                                    idx[n_samples // 2:])
             if not np.array_equal(points[i], points[j])]
    diag.osl_modulus_estimate = estimate_osl_modulus(field, grid.t_start, pairs)

    tangent_violations = 0
    for i in range(domain.dim):
        for bound in (domain.lower, domain.upper):
            pts = points[: max(8, n_samples // 8)].copy()
            pts[:, i] = bound[i]
            for t, x in zip(times, pts):
                v = field.evaluate(t, x)
                if not tangent_cone_admissible(domain, x, v, tol=1e-9):
                    tangent_violations += 1
    diag.tangent_violations = tangent_violations
    return diag


# --- scalar data fields (transport coefficients and initial data) -----------

@dataclasses.dataclass(frozen=True)
class ScalarField:
    """Scalar function of (t, z) used for reaction coefficients, sources,
    and initial data.  ``evaluate`` is vectorized over points (n, d)."""

    kind: str
    params: tuple
    _eval: Callable[[float, Array], Array] = dataclasses.field(repr=False)

    def evaluate(self, t: float, points: Array) -> Array:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._eval(t, pts)


def _scalar_registry():
    def const(params):
        a = float(params[0]) if params else 0.0
        return lambda t, pts: np.full(pts.shape[0], a)

    def time(params):
        return lambda t, pts: np.full(pts.shape[0], float(t))

    def space_square(params):
        return lambda t, pts: np.sum(pts * pts, axis=1)

    def time_times_space(params):
        return lambda t, pts: float(t) * pts[:, 0]

    def sign(params):
        return lambda t, pts: np.sign(pts[:, 0])

    def coordinate(params):
        return lambda t, pts: pts[:, 0]

    def trig(params):
        # a0 + a1 * sin(wt * t) * cos(wx * z_1); defaults keep it positive.
        a0 = float(params[0]) if len(params) > 0 else 1.0
        a1 = float(params[1]) if len(params) > 1 else 0.5
        wt = float(params[2]) if len(params) > 2 else 2.0 * np.pi
        wx = float(params[3]) if len(params) > 3 else np.pi
        return lambda t, pts: a0 + a1 * np.sin(wt * t) * np.cos(wx * pts[:, 0])

    def gauss(params):
        s = float(params[0]) if params else 0.25
        return lambda t, pts: np.exp(-0.5 * np.sum(pts * pts, axis=1) / (s * s))

    return {"const": const, "time": time, "space-square": space_square,
            "time-times-space": time_times_space, "sign": sign,
            "coordinate": coordinate, "trig": trig, "gauss": gauss}


_SCALARS = _scalar_registry()


def make_scalar(kind: str, params: Sequence[float] = ()) -> ScalarField:
    if kind not in _SCALARS:
        raise ConfigError(f"unknown scalar field kind '{kind}'; "
                          f"known: {sorted(_SCALARS)}")
    return ScalarField(kind=kind, params=tuple(float(p) for p in params),
                       _eval=_SCALARS[kind](tuple(params)))
