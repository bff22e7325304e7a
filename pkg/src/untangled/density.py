"""Push-forward densities along a flow map.

The initial measure is carried by a weighted particle ensemble whose
positions are flow seeds; pushing forward just moves each particle to its
trajectory's position, so mass is conserved exactly (weights are never
rescaled).  Clusters of particles that the flow has merged show up as atoms
(Dirac masses); the remainder is binned into a histogram over the domain.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .errors import DataError
from .field import SpatialDomain, TimeGrid
from .select import FlowMap

Array = np.ndarray


@dataclasses.dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted particles (x_i, w_i) carrying the initial measure."""

    positions: Array
    weights: Array
    flow_ref: str = ""

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[0] == 1 and np.asarray(self.positions).ndim == 1 \
                and np.asarray(self.positions).size > 1:
            pos = pos.T
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != pos.shape[0]:
            raise DataError("one weight per particle required")
        if np.any(w <= 0):
            raise DataError("particle weights must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self) -> int:
        return self.positions.shape[0]


def uniform_ensemble(box_lower, box_upper, n: int, flow_ref: str = "") -> ParticleEnsemble:
    """Lebesgue measure on a box, realized as a regular lattice of equally
    weighted particles (cell centers); total mass equals the box volume."""
    lower = np.atleast_1d(np.asarray(box_lower, dtype=float))
    upper = np.atleast_1d(np.asarray(box_upper, dtype=float))
    d = lower.size
    if d == 1:
        pos = (lower + (upper - lower) * (2 * np.arange(n) + 1) / (2 * n))[:, None]
    elif d == 2:
        side = int(round(np.sqrt(n)))
        axes = [lo + (hi - lo) * (2 * np.arange(side) + 1) / (2 * side)
                for lo, hi in zip(lower, upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pos = np.column_stack([m.ravel() for m in mesh])
        n = pos.shape[0]
    else:
        raise DataError("uniform ensembles provided for d <= 2")
    volume = float(np.prod(upper - lower))
    weights = np.full(pos.shape[0], volume / pos.shape[0])
    return ParticleEnsemble(positions=pos, weights=weights, flow_ref=flow_ref)


@dataclasses.dataclass(frozen=True)
class DensitySnapshot:
    """Histogram plus detected atoms at one time."""

    t: float
    bin_edges: tuple           # per-axis edge arrays
    bin_masses: Array
    atoms: tuple               # (location, mass, particle_count) triples
    total_mass: float

    def __post_init__(self):
        binned = float(np.sum(self.bin_masses))
        atomic = float(sum(m for _, m, _ in self.atoms))
        if abs(binned + atomic - self.total_mass) > 1e-12 * max(1.0, self.total_mass):
            raise DataError("snapshot mass does not match the ensemble mass")

    @property
    def atom_mass(self) -> float:
        return float(sum(m for _, m, _ in self.atoms))


def _clusters(points: Array, merge_tol: float) -> list:
    """Index groups of points within merge_tol chains (1D exact; for d=2 the
    chain runs along the lexicographic order, adequate for merged flows where
    clusters are point-like)."""
    n = points.shape[0]
    if n == 0:
        return []
    order = np.lexsort(points.T[::-1])
    groups = [[order[0]]]
    for prev, cur in zip(order[:-1], order[1:]):
        if np.linalg.norm(points[cur] - points[prev]) <= merge_tol:
            groups[-1].append(cur)
        else:
            groups.append([cur])
    return groups


def particle_positions(flow: FlowMap, ensemble: ParticleEnsemble, t: float,
                       s: float | None = None) -> Array:
    """Particle locations X(t, s, x_i) read off the flow trajectories."""
    if s is None:
        s = min(si for si, _ in flow.seeds)
    out = np.empty_like(ensemble.positions)
    for i, x in enumerate(ensemble.positions):
        idx = flow.seed_index(s, x)
        out[i] = flow.state(idx, t)
    return out


def push_forward(flow: FlowMap, ensemble: ParticleEnsemble, t: float,
                 domain: SpatialDomain, n_bins: int = 32,
                 merge_tol: float | None = None,
                 atom_fraction: float = 0.01) -> DensitySnapshot:
    """Density snapshot of the pushed-forward measure at a grid time t.

    Particles within merge_tol chains form clusters; clusters of at least
    max(2, atom_fraction * N) particles are reported as atoms (location =
    mass-weighted mean), everything else is histogrammed.  Mass is conserved
    exactly: bin masses and atom masses are plain sums of particle weights.
    """
    if merge_tol is None:
        merge_tol = 1e-8 * domain.diameter
    pts = particle_positions(flow, ensemble, t)
    w = ensemble.weights
    threshold = max(2, int(np.ceil(atom_fraction * len(ensemble))))
    atoms = []
    loose_idx = []
    for group in _clusters(pts, merge_tol):
        if len(group) >= threshold:
            gw = w[group]
            mass = float(np.sum(gw))
            loc = np.average(pts[group], axis=0, weights=gw)
            atoms.append((loc, mass, len(group)))
        else:
            loose_idx.extend(group)
    loose_idx = np.array(sorted(loose_idx), dtype=int)
    edges = tuple(np.linspace(domain.lower[a], domain.upper[a], n_bins + 1)
                  for a in range(domain.dim))
    if loose_idx.size:
        hist, _ = np.histogramdd(pts[loose_idx], bins=edges,
                                 weights=w[loose_idx])
    else:
        hist = np.zeros([n_bins] * domain.dim)
    atoms.sort(key=lambda a: tuple(a[0]))
    return DensitySnapshot(t=float(t), bin_edges=edges, bin_masses=hist,
                           atoms=tuple(atoms), total_mass=ensemble.total_mass)


def cluster_count(flow: FlowMap, ensemble: ParticleEnsemble, t: float,
                  merge_tol: float) -> int:
    """Number of distinct particle clusters at time t (nonincreasing along a
    forward-untangled flow)."""
    pts = particle_positions(flow, ensemble, t)
    return len(_clusters(pts, merge_tol))


@dataclasses.dataclass(frozen=True)
class SpaceTimeBump:
    """C^1 test function with compact support in (0,T) x interior(domain):
    psi(t,z) = q((t-tc)/rt) * q(|z-zc|/rz) with q(u) = max(0, 1-u^2)^2."""

    t_center: float
    t_radius: float
    z_center: Array
    z_radius: float

    def __post_init__(self):
        object.__setattr__(self, "z_center",
                           np.atleast_1d(np.asarray(self.z_center, dtype=float)))

    @staticmethod
    def _q(u):
        return np.maximum(0.0, 1.0 - u * u) ** 2

    @staticmethod
    def _dq(u):
        g = np.maximum(0.0, 1.0 - u * u)
        return -4.0 * u * g

    def value(self, t, z):
        u = (t - self.t_center) / self.t_radius
        r = np.linalg.norm(z - self.z_center, axis=-1) / self.z_radius
        return self._q(u) * self._q(r)

    def dt(self, t, z):
        u = (t - self.t_center) / self.t_radius
        r = np.linalg.norm(z - self.z_center, axis=-1) / self.z_radius
        return self._dq(u) / self.t_radius * self._q(r)

    def grad(self, t, z):
        u = (t - self.t_center) / self.t_radius
        diff = z - self.z_center
        dist = np.linalg.norm(diff, axis=-1, keepdims=True)
        r = dist / self.z_radius
        safe = np.where(dist > 0, dist, 1.0)
        direction = diff / safe
        return (self._q(u) * self._dq(r) / self.z_radius) * direction


def continuity_residual(flow: FlowMap, ensemble: ParticleEnsemble,
                        grid: TimeGrid, test_fns: Sequence[SpaceTimeBump]) -> float:
    """Weak residual of the continuity equation against space-time bumps.

    For each test function the particle sum of the transported derivative
    d/dt psi(t, X(t)) = dt_psi + v . grad_psi is integrated by the midpoint
    rule, with v the trajectory's own discrete velocity; for compactly
    supported psi the exact integral vanishes, so the value reported is pure
    discretization error (O(dt) or better).
    """
    n = len(ensemble)
    paths = np.empty((n, grid.nodes.size, ensemble.positions.shape[1]))
    for i, x in enumerate(ensemble.positions):
        idx = flow.seed_index(grid.t_start, x)
        paths[i] = flow.trajectories[idx].states
    dts = np.diff(grid.nodes)
    mid_t = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    mid_z = 0.5 * (paths[:, :-1] + paths[:, 1:])
    vel = np.diff(paths, axis=1) / dts[:, None]
    worst = 0.0
    for psi in test_fns:
        total = psi.dt(mid_t[None, :], mid_z)
        total = total + np.sum(vel * psi.grad(mid_t[None, :, None], mid_z), axis=-1)
        integral = float(np.sum(ensemble.weights @ (total * dts)))
        worst = max(worst, abs(integral))
    return worst


def near_incompressibility(snapshots: Sequence[DensitySnapshot], c_bound: float,
                           rho_ref: float | None = None) -> dict:
    """Check that every nonempty bin's density stays within [1/c, c] of the
    reference (initial) density; any atom fails the check outright."""
    if not snapshots:
        raise DataError("need at least one snapshot")
    if rho_ref is None:
        first = snapshots[0]
        vol = _cell_volume(first.bin_edges)
        masses = first.bin_masses[first.bin_masses > 0]
        dens = masses / vol
        rho_ref = float(np.sum(masses * dens) / np.sum(masses))
    ok = True
    worst = 1.0
    for snap in snapshots:
        if snap.atoms:
            ok = False
            worst = float("inf")
            continue
        vol = _cell_volume(snap.bin_edges)
        dens = snap.bin_masses[snap.bin_masses > 0] / vol
        ratio = dens / rho_ref
        worst = max(worst, float(np.max(ratio)), float(np.max(1.0 / ratio)))
        if np.any(ratio > c_bound) or np.any(ratio < 1.0 / c_bound):
            ok = False
    return {"ok": ok, "worst_ratio": worst}


def _cell_volume(edges: tuple) -> float:
    return float(np.prod([e[1] - e[0] for e in edges]))
