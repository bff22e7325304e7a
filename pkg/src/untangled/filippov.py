"""Convex velocity envelopes for discontinuous fields.

The envelope F(t,x) of a field b is the intersection of half-spaces
``{v : xi . v <= h(t,x,xi)}`` over unit directions xi, where h is the
essential supremum of ``xi . b`` over small balls around x, in the limit of
vanishing radius.  Numerically the essential sup is approximated by a plain
max over low-discrepancy samples of the ball intersected with the domain:
null sets are hit with probability zero, which is exactly the invariance the
essential sup is after.  The radius follows a decreasing schedule and the
value at the final (smallest) radius is reported; no extrapolation to radius
zero is attempted.

Everything here is a pure function of immutable inputs plus an explicit
seed, so concurrent use is safe.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DataError, NumericalError, SamplingWarning
from .field import SpatialDomain, VelocityField

Array = np.ndarray

MONOTONICITY_SLACK = 1e-9

# Default radius schedule, as fractions of the domain diameter.
DELTA_FRACTIONS = (0.2, 0.1, 0.05, 0.025)


@dataclasses.dataclass(frozen=True)
class DirectionSet:
    """Finite set of unit directions on the sphere S^{d-1}.

    d=1 uses {+1, -1} (exact); d=2 uses n_dir equally spaced angles.
    """

    directions: Array

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise DataError("directions must have unit norm within 1e-12")
        if len({tuple(row) for row in np.round(dirs, 15)}) != len(dirs):
            raise DataError("directions must be pairwise distinct")
        object.__setattr__(self, "directions", dirs)

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def __len__(self) -> int:
        return self.directions.shape[0]


def direction_set(dim: int, n_dir: int = 32) -> DirectionSet:
    if dim == 1:
        return DirectionSet(np.array([[1.0], [-1.0]]))
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(n_dir) / n_dir
        return DirectionSet(np.column_stack([np.cos(angles), np.sin(angles)]))
    raise DataError("direction sets are provided for d <= 2")


@dataclasses.dataclass(frozen=True)
class EnvelopeParams:
    """Sampling parameters for envelope construction."""

    delta_schedule: tuple
    samples_per_ball: int = 64
    n_dir: int = 32
    seed: int = 0

    def __post_init__(self):
        sched = tuple(float(d) for d in self.delta_schedule)
        if not sched or any(d <= 0 for d in sched):
            raise DataError("delta schedule must be positive")
        if any(sched[i + 1] >= sched[i] for i in range(len(sched) - 1)):
            raise DataError("delta schedule must be strictly decreasing")
        if self.samples_per_ball < 1:
            raise DataError("samples_per_ball must be >= 1")
        object.__setattr__(self, "delta_schedule", sched)

    @staticmethod
    def default(domain: SpatialDomain, samples_per_ball: int = 64, n_dir: int = 32,
                seed: int = 0) -> "EnvelopeParams":
        diam = domain.diameter
        return EnvelopeParams(tuple(f * diam for f in DELTA_FRACTIONS),
                              samples_per_ball, n_dir, seed)


@dataclasses.dataclass(frozen=True)
class FilippovEnvelope:
    """Support-function table of F(t,x) over a finite direction set.

    The envelope is the intersection of the half-spaces
    ``{v : xi . v <= support[i]}``; distance, membership, projection, and
    extreme velocities are all computed from the table alone.
    """

    t: float
    x: Array
    directions: Array
    support: Array
    delta_used: float
    samples_per_ball: int
    monotonicity_flags: int = 0

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def width(self) -> float:
        """Max over direction pairs (xi, -xi) of h(xi) + h(-xi): the extent
        of the envelope; zero for a singleton."""
        w = 0.0
        for i in range(len(self.directions)):
            j = _opposite_index(self.directions, i)
            if j is not None:
                w = max(w, float(self.support[i] + self.support[j]))
        return w


def _opposite_index(dirs: Array, i: int):
    d = -dirs[i]
    dots = dirs @ d
    j = int(np.argmax(dots))
    return j if dots[j] > 1.0 - 1e-12 else None


# --- ball sampling -----------------------------------------------------------

_POOL_CACHE: dict = {}


def _unit_pool(dim: int, m: int, seed: int) -> Array:
    """Low-discrepancy points in the unit ball, oversampled so that the
    intersection with the domain retains at least m points at box corners."""
    factor = 4 if dim == 1 else 8
    key = (dim, m, seed, factor)
    pool = _POOL_CACHE.get(key)
    if pool is None:
        n = factor * m
        sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
        u = sampler.random(n)
        if dim == 1:
            pool = 2.0 * u - 1.0
        else:
            r = np.sqrt(u[:, 0])
            theta = 2.0 * np.pi * u[:, 1]
            pool = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        _POOL_CACHE[key] = pool
    return pool


def _ball_values(field: VelocityField, domain: SpatialDomain, t: float,
                 states: Array, delta: float, m: int, seed: int):
    """Velocity samples over B_delta(x_k) -| domain for a batch of states.

    Returns (values, offsets) where values stacks per-state rows of b-samples
    and offsets delimits each state's block (for segmented reductions).
    """
    pool = _unit_pool(domain.dim, m, seed)
    pts = states[:, None, :] + delta * pool[None, :, :]
    inside = domain.contains_batch(pts)
    take = inside & (np.cumsum(inside, axis=1) <= m)
    counts = take.sum(axis=1)
    if np.any(counts == 0):
        raise NumericalError("empty ball-domain intersection (state outside domain?)")
    flat_pts = pts[take]
    values = field.evaluate(t, flat_pts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return values, offsets, counts


def _support_table(field: VelocityField, domain: SpatialDomain, t: float,
                   states: Array, dirs: Array, params: EnvelopeParams):
    """Support values at the final schedule radius for a batch of states.

    Returns (supports, flags): supports has shape (n_states, n_dir); flags
    counts per-state monotonicity violations beyond slack along the schedule.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    flags = np.zeros(n, dtype=int)
    prev = None
    supports = None
    for delta in params.delta_schedule:
        values, offsets, counts = _ball_values(field, domain, t, states, delta,
                                               params.samples_per_ball, params.seed)
        proj = values @ dirs.T
        supports = np.maximum.reduceat(proj, offsets, axis=0)
        if prev is not None:
            bad = np.any(supports > prev + MONOTONICITY_SLACK, axis=1)
            flags += bad.astype(int)
        prev = supports
    if np.any(flags):
        warnings.warn("sampled support values increased along the radius "
                      "schedule beyond slack (sampling artifact)",
                      SamplingWarning, stacklevel=3)
    return supports, flags


# --- public operations -------------------------------------------------------

def support_function(field: VelocityField, domain: SpatialDomain, t: float, x,
                     xi, delta: float, m: int, seed: int = 0) -> float:
    """Sampled sup of xi . b(t, y) over y in B_delta(x) -| domain."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    params = EnvelopeParams((float(delta),), m, seed=seed)
    sup, _ = _support_table(field, domain, t, x[None, :], xi[None, :], params)
    return float(sup[0, 0])


def essential_support(field: VelocityField, domain: SpatialDomain, t: float, x,
                      xi, delta_schedule: Sequence[float], m: int,
                      seed: int = 0) -> float:
    """Essential supporting function approximated along the radius schedule.

    The sampled sequence is checked to be nonincreasing within slack (the
    exact h_delta is monotone in delta); violations emit a SamplingWarning.
    The value at the final, smallest radius is returned.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    params = EnvelopeParams(tuple(delta_schedule), m, seed=seed)
    sup, _ = _support_table(field, domain, t, x[None, :], xi[None, :], params)
    return float(sup[0, 0])


def filippov_envelope(field: VelocityField, domain: SpatialDomain, t: float, x,
                      params: EnvelopeParams,
                      dirs: DirectionSet | None = None) -> FilippovEnvelope:
    """Full support table of F(t,x) over a direction set."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dirs is None:
        dirs = direction_set(domain.dim, params.n_dir)
    sup, flags = _support_table(field, domain, t, x[None, :], dirs.directions, params)
    return FilippovEnvelope(t=float(t), x=x, directions=dirs.directions,
                            support=sup[0], delta_used=params.delta_schedule[-1],
                            samples_per_ball=params.samples_per_ball,
                            monotonicity_flags=int(flags[0]))


def envelope_batch(field: VelocityField, domain: SpatialDomain, t: float,
                   states: Array, params: EnvelopeParams,
                   dirs: DirectionSet | None = None):
    """Support tables for a batch of states; returns (supports, dirs, flags)."""
    if dirs is None:
        dirs = direction_set(domain.dim, params.n_dir)
    sup, flags = _support_table(field, domain, t, np.atleast_2d(states),
                                dirs.directions, params)
    return sup, dirs, flags


def set_distance(env: FilippovEnvelope, y) -> float:
    """Distance from y to the polyhedral outer approximation of F(t,x):
    ``max(0, max_xi (xi . y - h(xi)))``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(max(0.0, np.max(env.directions @ y - env.support)))


def set_distance_batch(support: Array, dirs: Array, velocities: Array) -> Array:
    """Vectorized set_distance for rows of ``velocities`` against one table."""
    gaps = velocities @ dirs.T - support
    return np.maximum(0.0, np.max(gaps, axis=-1))


def membership(env: FilippovEnvelope, v, tol: float) -> bool:
    return set_distance(env, v) <= tol


def _interval(env) -> tuple:
    """[lo, hi] representation for d=1 support tables."""
    dirs = env.directions[:, 0]
    sup = env.support
    hi = np.min(sup[dirs > 0] / dirs[dirs > 0])
    lo = np.max(-sup[dirs < 0] / (-dirs[dirs < 0]))
    return float(lo), float(hi)


def _vertices_2d(dirs: Array, support: Array) -> Array:
    """Vertices of the half-plane intersection via pairwise line crossings."""
    n = len(dirs)
    scale = max(1.0, float(np.max(np.abs(support))))
    pts = []
    for i in range(n):
        for j in range(i + 1, n):
            a = np.array([dirs[i], dirs[j]])
            det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            if abs(det) < 1e-12:
                continue
            p = np.linalg.solve(a, np.array([support[i], support[j]]))
            if np.all(dirs @ p <= support + 1e-9 * scale):
                pts.append(p)
    if not pts:
        raise NumericalError("inconsistent support table: empty half-plane "
                             "intersection")
    vertices = np.array(sorted(map(tuple, pts)))
    keep = [0]
    for k in range(1, len(vertices)):
        if np.linalg.norm(vertices[k] - vertices[keep[-1]]) > 1e-12 * scale:
            keep.append(k)
    return vertices[keep]


def project_to_envelope(env: FilippovEnvelope, y) -> Array:
    """Euclidean projection of y onto the half-space intersection (d <= 2)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if env.dim == 1:
        lo, hi = _interval(env)
        if lo > hi:
            if lo - hi > 1e-9 * max(1.0, abs(lo), abs(hi)):
                raise NumericalError("inconsistent support table: empty interval")
            lo = hi = 0.5 * (lo + hi)
        return np.array([min(max(y[0], lo), hi)])
    if env.dim != 2:
        raise DataError("projection is implemented for d <= 2")
    if set_distance(env, y) <= 0.0:
        return y.copy()
    verts = _vertices_2d(env.directions, env.support)
    if len(verts) == 1:
        return verts[0].copy()
    if len(verts) == 2:
        return _segment_projection(y, verts[0], verts[1])
    from scipy.spatial import ConvexHull

    hull = ConvexHull(verts)
    best, best_d = None, np.inf
    for a, b in zip(hull.vertices, np.roll(hull.vertices, -1)):
        p = _segment_projection(y, verts[a], verts[b])
        d = np.linalg.norm(p - y)
        if d < best_d:
            best, best_d = p, d
    return best


def _segment_projection(y: Array, a: Array, b: Array) -> Array:
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return a.copy()
    s = min(1.0, max(0.0, float(np.dot(y - a, ab)) / denom))
    return a + s * ab


def extreme_velocity(env: FilippovEnvelope, xi) -> Array:
    """Supporting point of the envelope in direction xi (d <= 2)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if env.dim == 1:
        lo, hi = _interval(env)
        if lo > hi:
            lo = hi = 0.5 * (lo + hi)
        return np.array([hi if xi[0] > 0 else lo])
    verts = _vertices_2d(env.directions, env.support)
    return verts[int(np.argmax(verts @ xi))].copy()
