"""Solution funnels of the velocity differential inclusion.

The funnel of a seed (s, x) is approximated by a beam of branching
forward-Euler trajectories: at every step each live trajectory branches into
the envelope's extreme supporting velocities, the projection of the raw
field value onto the envelope, and (when the envelope nearly contains zero)
the resting velocity.  Higher-order steppers are pointless across
discontinuities, which is where this machinery earns its keep.

Candidates are clamped to the tangent cone of the box, duplicate states are
merged, and the beam is pruned to a fixed width by a deterministic
farthest-point rule on current states.  Every returned member is certified:
its realized step velocities stay within ``resid_tol`` of the sampled
envelope.

The optional trajectory store lets a flow builder force merging with
already-selected flow lines (members within one admissible step of a stored
line step exactly onto it and adopt its tail).  Standalone funnels never use
the store.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .errors import DataError, InfeasibleError
from .field import SpatialDomain, TimeGrid, VelocityField, clamp_to_tangent_cone
from .filippov import (
    EnvelopeParams,
    direction_set,
    envelope_batch,
    set_distance_batch,
)

Array = np.ndarray


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """Time-sampled curve on a suffix of the scenario time grid."""

    times: Array
    states: Array

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or states.shape[0] != times.size:
            raise DataError("trajectory needs one state per time node")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def node_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(self.end_time)):
            raise DataError(f"t={t} is not a node of this trajectory")
        return k

    def state_at(self, t: float) -> Array:
        return self.states[self.node_index(t)]

    def velocities(self) -> Array:
        """Realized step velocities (finite differences), shape (n-1, d)."""
        dt = np.diff(self.times)[:, None]
        return np.diff(self.states, axis=0) / dt


@dataclasses.dataclass
class Funnel:
    """Beam of candidate inclusion solutions from one seed."""

    seed_time: float
    seed_point: Array
    members: list
    beam_width: int
    branch_factor: int
    resid_bound: float = 0.0

    def __post_init__(self):
        if not self.members:
            raise DataError("funnel must be nonempty")

    def __len__(self) -> int:
        return len(self.members)


@dataclasses.dataclass(frozen=True)
class FunnelParams:
    """Beam construction knobs; tolerances default from domain and grid.

    merge_tol defaults to 1e-8 * diam(domain); resid_tol to 10 * dt *
    growth_c (the Euler residual scales with the step size); stick_tol to
    resid_tol.
    """

    envelope: EnvelopeParams
    branch_factor: int = 2
    beam_width: int = 16
    merge_tol: float | None = None
    resid_tol: float | None = None
    stick_tol: float | None = None

    def resolved(self, domain: SpatialDomain, grid: TimeGrid,
                 field: VelocityField) -> "FunnelParams":
        merge = self.merge_tol
        if merge is None:
            merge = 1e-8 * domain.diameter
        resid = self.resid_tol
        if resid is None:
            resid = 10.0 * grid.dt * max(field.growth_c, 1e-12)
        stick = self.stick_tol if self.stick_tol is not None else resid
        return dataclasses.replace(self, merge_tol=merge, resid_tol=resid,
                                   stick_tol=stick)


def _branch_directions(dim: int, branch_factor: int) -> Array:
    if dim == 1:
        base = np.array([[1.0], [-1.0]])
        return base[: max(1, min(branch_factor, 2))]
    return direction_set(dim, max(branch_factor, 3)).directions[:branch_factor]


class _Member:
    """One beam trajectory under construction."""

    __slots__ = ("states", "resid", "tail", "tv", "rest", "seq")

    def __init__(self, states: list, resid: float = 0.0, tail=None,
                 tv: float = 0.0, rest: int = 0, seq: int = 0):
        self.states = states  # list of d-vectors, one per elapsed node
        self.resid = resid    # max envelope distance of realized steps
        self.tail = tail      # adopted remainder: (store_id, states array)
        self.tv = tv          # accumulated path length of the prefix
        self.rest = rest      # trailing steps spent resting at the current state
        self.seq = seq        # deterministic creation rank within the beam

    @property
    def parked(self) -> bool:
        return self.tail is not None


def _canonical_order(members: Sequence[_Member], quant: float) -> list:
    """Stillest history first: path length (quantized), longest trailing
    rest, then creation rank.

    Among beam prefixes that reached the same state (hence share their
    future branching) this keeps the one that moved there directly and
    rested; in particular constant curves survive dedupe through
    discontinuities, and "arrive early, rest" beats "drift late" when
    their path lengths tie (as they always do for monotone 1D paths).
    Path lengths are compared at merge-tolerance resolution so that
    float-accumulation noise cannot break the ties the rest count is
    meant to decide; the creation rank is a deterministic final tie-break.
    """
    return sorted(range(len(members)),
                  key=lambda i: (round(members[i].tv / quant), -members[i].rest,
                                 members[i].seq))


def _dedupe(members: list, merge_tol: float) -> list:
    """Keep one representative per current-state cluster, canonical first."""
    order = _canonical_order(members, merge_tol)
    kept: list = []
    for i in order:
        cur = members[i].states[-1]
        if all(np.linalg.norm(cur - members[j].states[-1]) > merge_tol
               for j in kept):
            kept.append(i)
    return [members[i] for i in sorted(kept)]


def _prune(members: list, beam_width: int, merge_tol: float) -> list:
    """Farthest-point greedy on current states, seeded canonically."""
    if len(members) <= beam_width:
        return members
    order = _canonical_order(members, merge_tol)
    current = np.array([m.states[-1] for m in members])
    chosen = [order[0]]
    dist = np.linalg.norm(current - current[order[0]], axis=1)
    while len(chosen) < beam_width:
        best = None
        best_d = -1.0
        for i in order:
            if i in chosen:
                continue
            if dist[i] > best_d:
                best, best_d = i, dist[i]
        chosen.append(best)
        dist = np.minimum(dist, np.linalg.norm(current - current[best], axis=1))
    chosen.sort()
    return [members[i] for i in chosen]


def _cap_parked(parked: list, cap: int, merge_tol: float) -> list:
    """Dedupe parked members by adopted line, canonical prefix first."""
    order = _canonical_order(parked, merge_tol)
    seen: set = set()
    kept = []
    for i in order:
        tid = parked[i].tail[0]
        if tid not in seen:
            seen.add(tid)
            kept.append(i)
    kept = sorted(kept)[:cap]
    return [parked[i] for i in kept]


def _support_rows(field, domain, t, states, env_params, dirs, cache):
    """Support tables for a batch of states, via the shared cache when the
    field is autonomous (tables then depend on the state alone).

    Large batches are reduced to their unique states first; flow marches
    revisit the same lattice of states over and over, so this collapses
    most of the sampling work.
    """
    if cache is None:
        sup, _, _ = envelope_batch(field, domain, t, states, env_params, dirs)
        return sup
    if len(states) > 16:
        uniq, inv = np.unique(states, axis=0, return_inverse=True)
        rows = _rows_cached(field, domain, t, uniq, env_params, dirs, cache)
        return rows[np.ravel(inv)]
    return _rows_cached(field, domain, t, states, env_params, dirs, cache)


def _rows_cached(field, domain, t, states, env_params, dirs, cache):
    rows = [None] * len(states)
    miss = []
    for i, st in enumerate(states):
        hit = cache.get(st.tobytes())
        if hit is None:
            miss.append(i)
        else:
            rows[i] = hit
    if miss:
        sup, _, _ = envelope_batch(field, domain, t, states[miss], env_params,
                                   dirs)
        for j, i in enumerate(miss):
            rows[i] = sup[j]
            cache[states[i].tobytes()] = sup[j]
        if len(cache) > 200_000:
            cache.clear()
    return np.array(rows)


def integrate_branching(field: VelocityField, domain: SpatialDomain,
                        grid: TimeGrid, s: float, x,
                        params: FunnelParams, seed: int | None = None,
                        store=None, table_cache: dict | None = None,
                        park_patience: int | None = 8) -> Funnel:
    """Approximate the solution funnel from (s, x) by a branching beam.

    Every member starts at (s, x) and runs to the end of the grid.  Branch
    velocities are the envelope's extreme supporting velocities in
    ``branch_factor`` directions, the projection of b(t,x) onto the
    envelope, and the zero velocity whenever it lies within ``stick_tol`` of
    the envelope (the resting candidate realizes the constant solutions that
    the envelope admits at discontinuities).

    With a trajectory store, members that can reach a stored flow line in
    one admissible step are forced onto it and adopt its tail; members still
    live ``park_patience`` steps after the first adoption are pruned (they
    had their chance to diverge, and the beam exists to feed the selection,
    which the adopted lines dominate).

    Raises InfeasibleError when every branch of every live member leaves the
    domain after tangent-cone clamping.
    """
    params = params.resolved(domain, grid, field)
    env_params = params.envelope
    if seed is not None:
        env_params = dataclasses.replace(env_params, seed=seed)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not domain.contains(x, tol=1e-12):
        raise DataError(f"seed point {x} outside the domain")
    k0 = grid.index_of(s)
    nodes = grid.nodes
    dirs = direction_set(domain.dim, env_params.n_dir)
    branch_dirs = _branch_directions(domain.dim, params.branch_factor)
    edge_tol = 1e-12 * max(1.0, domain.diameter)

    if table_cache is None and not getattr(field, "time_dependent", False):
        table_cache = {}
    members = [_Member([domain.clip(x)])]
    seq_counter = 1
    first_park = None
    for k in range(k0, grid.n_steps):
        t = nodes[k]
        dt = nodes[k + 1] - nodes[k]
        live_idx = [i for i, m in enumerate(members) if not m.parked]
        if store is not None:
            for i in live_idx:
                m = members[i]
                hit = store.nearest(k, m.states[-1], params.merge_tol)
                if hit is not None:
                    tid, _ = hit
                    m.tail = (tid, store.states_from(tid, k + 1))
                    m.resid = max(m.resid, store.resid(tid))
                    if first_park is None:
                        first_park = k
            live_idx = [i for i, m in enumerate(members) if not m.parked]
        if not live_idx:
            break
        if (first_park is not None and park_patience is not None
                and k - first_park >= park_patience):
            members = [m for m in members if m.parked]
            break
        live = [members[i] for i in live_idx]
        states = np.array([m.states[-1] for m in live])
        supports = _support_rows(field, domain, t, states, env_params, dirs,
                                 table_cache)
        b_raw = field.evaluate(t, np.atleast_2d(states))
        children: list = []
        for i, m in enumerate(live):
            cur = states[i]
            # states this far from every face cannot leave the box in one
            # admissible step: skip clamping and containment work
            margin = dt * (field.growth_c * (1.0 + float(np.abs(cur).max())
                                             * np.sqrt(cur.size)) + 1.0)
            safe = bool(np.all(cur - domain.lower > margin)
                        and np.all(domain.upper - cur > margin))
            cands = _candidate_velocities(cur, supports[i], dirs.directions,
                                          branch_dirs, b_raw[i], params, dt, t,
                                          k, store, field.growth_c)
            for v, extra in cands:
                if safe:
                    nxt = cur + dt * v
                else:
                    clamped = clamp_to_tangent_cone(domain, cur, v,
                                                    face_tol=edge_tol)
                    if not np.array_equal(clamped, v):
                        # clamping changed the branch: it stays admissible
                        # only if the envelope allows moving along the face
                        gap = float(set_distance_batch(supports[i], dirs.directions,
                                                       clamped[None, :])[0])
                        if gap > params.resid_tol:
                            continue
                        extra = max(extra, gap)
                    v = clamped
                    nxt = cur + dt * v
                    if not domain.contains(nxt, tol=edge_tol):
                        continue
                    nxt = domain.clip(nxt)
                if cur.size == 1:
                    hop = abs(float(nxt[0]) - float(cur[0]))
                else:
                    hop = float(np.linalg.norm(nxt - cur))
                children.append(_Member(m.states + [nxt],
                                        resid=max(m.resid, extra),
                                        tv=m.tv + hop,
                                        rest=m.rest + 1 if hop <= params.merge_tol
                                        else 0,
                                        seq=seq_counter))
                seq_counter += 1
        parked = [m for m in members if m.parked]
        if not children and not parked:
            raise InfeasibleError(
                f"all branches leave the domain at t={t}: envelope incompatible "
                "with the tangent cone")
        parked = _cap_parked(parked, max(1, params.beam_width // 2),
                             params.merge_tol)
        children = _dedupe(children, params.merge_tol)
        children = _prune(children, max(1, params.beam_width - len(parked)),
                          params.merge_tol)
        members = parked + children

    trajectories = []
    resid_bound = 0.0
    for m in members:
        states = np.array(m.states)
        if m.parked:
            states = np.vstack([states, m.tail[1]])
        times = nodes[k0: k0 + len(states)]
        trajectories.append(Trajectory(times=times, states=states))
        resid_bound = max(resid_bound, m.resid)
    order = sorted(range(len(trajectories)),
                   key=lambda i: tuple(trajectories[i].states.ravel()))
    trajectories = [trajectories[i] for i in order]
    return Funnel(seed_time=float(s), seed_point=x, members=trajectories,
                  beam_width=params.beam_width,
                  branch_factor=params.branch_factor, resid_bound=resid_bound)


def _candidate_velocities(cur: Array, sup: Array, dirs: Array,
                          branch_dirs: Array, b_raw: Array,
                          params: FunnelParams, dt: float, t: float, k: int,
                          store, growth_c: float) -> list:
    """Candidate (velocity, residual_increment) pairs for one member.

    A reachable stored flow line forces the merging step (sole candidate):
    once lines can meet at the step resolution, they do meet, which is the
    discrete form of forward untangledness.
    """
    dim = cur.size
    reach = dt * (growth_c * (1.0 + float(np.linalg.norm(cur))) + 1.0)
    if store is not None:
        hit = store.best_merge(k + 1, cur, reach, dt, sup, dirs,
                               _merge_gap_tol(sup, dirs, params))
        if hit is not None:
            _, y, gap = hit
            return [((y - cur) / dt, gap)]

    out = []
    if dim == 1:
        lo, hi = -sup[1], sup[0]
        if lo > hi:
            lo = hi = 0.5 * (lo + hi)
        extremes = [np.array([hi]), np.array([lo])][: len(branch_dirs)]
        proj_b = np.array([min(max(b_raw[0], lo), hi)])
        dist0 = max(0.0, lo, -hi)
    else:
        from .filippov import FilippovEnvelope, extreme_velocity, project_to_envelope

        env = FilippovEnvelope(t=t, x=cur, directions=dirs, support=sup,
                               delta_used=params.envelope.delta_schedule[-1],
                               samples_per_ball=params.envelope.samples_per_ball)
        extremes = [extreme_velocity(env, bd) for bd in branch_dirs]
        proj_b = project_to_envelope(env, b_raw)
        dist0 = max(0.0, float(np.max(-sup)))

    for v in extremes:
        out.append((v, 0.0))
    out.append((proj_b, 0.0))
    if dist0 <= params.stick_tol:
        suppressed = (store is not None
                      and store.nearest(k + 1, cur, 2.0 * reach) is not None)
        if not suppressed:
            out.append((np.zeros(dim), dist0))
    return out


def _merge_gap_tol(sup: Array, dirs: Array, params: FunnelParams) -> float:
    """Admissibility slack for merging steps.

    The merging velocity must lie inside the envelope up to the envelope's
    own resolution (half its width), never up to the full Euler slack:
    otherwise nearby smooth flow lines would be glued together.  Genuinely
    wide envelopes (discontinuity bands) keep the full residual budget.
    """
    width = 0.0
    for i in range(len(dirs)):
        dots = dirs @ -dirs[i]
        j = int(np.argmax(dots))
        if dots[j] > 1.0 - 1e-12:
            width = max(width, float(sup[i] + sup[j]))
    return min(0.9 * params.resid_tol, max(params.merge_tol, 0.5 * width))


def inclusion_residual(traj: Trajectory, field: VelocityField,
                       domain: SpatialDomain, env_params: EnvelopeParams) -> float:
    """Max over steps of the distance from the realized step velocity to the
    sampled envelope at the step's left node."""
    states = traj.states[:-1]
    vels = traj.velocities()
    dirs = direction_set(domain.dim, env_params.n_dir)
    if not getattr(field, "time_dependent", False):
        sup, _, _ = envelope_batch(field, domain, traj.times[0], states,
                                   env_params, dirs)
        gaps = np.maximum(0.0, np.max(vels @ dirs.directions.T - sup, axis=1))
        return float(np.max(gaps))
    worst = 0.0
    for k in range(states.shape[0]):
        sup, _, _ = envelope_batch(field, domain, traj.times[k],
                                   states[k][None, :], env_params, dirs)
        worst = max(worst, float(set_distance_batch(sup[0], dirs.directions,
                                                    vels[k][None, :])[0]))
    return worst


def splice(gamma: Trajectory, eta: Trajectory, s: float,
           merge_tol: float = 1e-9) -> Trajectory:
    """Concatenate gamma on [start, s] with eta on [s, T].

    eta must start at s and agree with gamma(s) within merge_tol; the value
    of gamma is kept at the junction node.
    """
    ks = gamma.node_index(s)
    if abs(eta.start_time - s) > 1e-12 * max(1.0, abs(s)):
        raise DataError("eta must start at the splice time")
    if np.linalg.norm(gamma.states[ks] - eta.states[0]) > merge_tol:
        raise DataError("curves disagree at the splice time beyond merge_tol")
    times = np.concatenate([gamma.times[: ks + 1], eta.times[1:]])
    states = np.vstack([gamma.states[: ks + 1], eta.states[1:]])
    return Trajectory(times=times, states=states)


def restrict(gamma: Trajectory, s: float) -> Trajectory:
    """Tail of gamma from the grid node s onward."""
    ks = gamma.node_index(s)
    return Trajectory(times=gamma.times[ks:], states=gamma.states[ks:])


def gronwall_bound(seed_norm: float, growth_c: float, elapsed) -> float:
    """Linear-growth a-priori bound (|x| + c dt) exp(c dt)."""
    return (seed_norm + growth_c * elapsed) * np.exp(growth_c * elapsed)


def gronwall_violations(trajectories: Sequence[Trajectory], growth_c: float,
                        tol: float = 1e-9) -> int:
    """Count trajectory nodes violating the a-priori Gronwall envelope."""
    count = 0
    for traj in trajectories:
        x0 = float(np.linalg.norm(traj.states[0]))
        elapsed = traj.times - traj.times[0]
        bound = gronwall_bound(x0, growth_c, elapsed) + tol
        norms = np.linalg.norm(traj.states, axis=1)
        count += int(np.sum(norms > bound))
    return count
