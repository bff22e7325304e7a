import itertools

import numpy as np
import pytest

from untangled.errors import DataError
from untangled.field import SpatialDomain, TimeGrid, make_field
from untangled.filippov import EnvelopeParams
from untangled.funnel import Funnel, FunnelParams, Trajectory, integrate_branching
from untangled.select import (
    FlowMap,
    FunctionalSchedule,
    TentFunction,
    build_flow,
    check_semigroup,
    check_untangled,
    classical_flow,
    functional_value,
    iterated_argmax,
)


def brute_force_filter(members, schedule, tie_tol=1e-9):
    """Independent oracle for the iterated argmax: evaluate every functional
    on every member with plain trapezoids and filter stage by stage."""
    alive = list(range(len(members)))
    for lam, tent in schedule.entries:
        vals = {}
        for i in alive:
            t = members[i].times
            integrand = np.exp(-lam * t) * tent(members[i].states)
            vals[i] = np.trapezoid(integrand, t)
        vmax, vmin = max(vals.values()), min(vals.values())
        tol = tie_tol * (vmax - vmin)
        alive = [i for i in alive if vals[i] >= vmax - tol]
        if len(alive) == 1:
            return alive[0]
    return sorted(alive, key=lambda i: tuple(members[i].states.ravel()))[0]


def test_schedule_rates_satisfy_divergence_condition(interval):
    sched = FunctionalSchedule.default(interval, length=32)
    lams = sorted({lam for lam, _ in sched.entries})
    assert all(lam >= 1.0 for lam in lams)
    assert len(lams) == len(set(lams))
    # Blaschke-type sum over mu_n = n diverges: partial sums keep growing
    partial = np.cumsum([1.0 - abs(n - 1.0) / abs(n + 1.0)
                         for n in range(1, 200)])
    assert partial[-1] > partial[30] > 2.0


def test_schedule_centers_on_dyadic_grid(interval):
    sched = FunctionalSchedule.default(interval, length=32, levels=3)
    dyadic = {round(-1.0 + 0.25 * j, 10) for j in range(9)}
    for _, tent in sched.entries:
        assert round(float(tent.center[0]), 10) in dyadic
    # anchored enumeration puts the midpoint tent first
    assert sched.entries[0][1].center[0] == 0.0
    assert sched.entries[0][0] == 1.0


def test_functional_value_missed_tent(grid100):
    traj = Trajectory(times=grid100.nodes, states=np.zeros_like(grid100.nodes))
    tent = TentFunction(np.array([5.0]), steepness=1.0)
    assert functional_value(traj, 1.0, tent) == 0.0


def test_functional_value_constant_trajectory_closed_form():
    # gamma at the tent peak: integral of e^{-t} over [0, T] = 1 - e^{-T}
    grid = TimeGrid(0.0, 1.0, 1000)
    traj = Trajectory(times=grid.nodes, states=np.full_like(grid.nodes, 0.25))
    tent = TentFunction(np.array([0.25]), steepness=4.0)
    got = functional_value(traj, 1.0, tent)
    assert got == pytest.approx(1.0 - np.exp(-1.0), abs=1e-6)


def test_zero_curve_dominates_departures_under_origin_tent(half_line, grid100,
                                                           sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5), 2, 24)
    fun = integrate_branching(sqrt_field, half_line, grid100, 0.0, [0.0], fp)
    tent = TentFunction(np.array([0.0]), steepness=1.0)
    zero_idx = next(i for i, m in enumerate(fun.members)
                    if np.max(np.abs(m.states)) == 0.0)
    for lam in (0.5, 1.0, 3.0):
        vals = [functional_value(m, lam, tent) for m in fun.members]
        assert int(np.argmax(vals)) == zero_idx


def test_iterated_argmax_singleton(grid100):
    traj = Trajectory(times=grid100.nodes, states=np.zeros_like(grid100.nodes))
    fun = Funnel(0.0, np.array([0.0]), [traj], beam_width=4, branch_factor=2)
    sched = FunctionalSchedule.default(SpatialDomain([-1.0], [1.0]), length=8)
    assert iterated_argmax(fun, sched) is traj


def test_iterated_argmax_matches_brute_force(half_line, grid100, sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5), 2, 24)
    fun = integrate_branching(sqrt_field, half_line, grid100, 0.0, [0.0], fp)
    sched = FunctionalSchedule.default(half_line, length=16, anchor=[0.0])
    oracle = brute_force_filter(fun.members, sched)
    selected = iterated_argmax(fun, sched)
    assert selected is fun.members[oracle]
    assert np.max(np.abs(selected.states)) == 0.0


def test_iterated_argmax_order_invariant_for_twins(grid100, interval):
    base = np.zeros_like(grid100.nodes)
    twin_a = Trajectory(times=grid100.nodes, states=base)
    twin_b = Trajectory(times=grid100.nodes, states=base + 1e-12)
    other = Trajectory(times=grid100.nodes, states=base + 0.4)
    sched = FunctionalSchedule.default(interval, length=8)
    picked = []
    for members in ([twin_a, twin_b, other], [other, twin_b, twin_a]):
        fun = Funnel(0.0, np.array([0.0]), list(members), 4, 2)
        sel = iterated_argmax(fun, sched)
        picked.append(np.max(np.abs(sel.states)))
    assert picked[0] == picked[1] <= 1e-12


def test_iterated_argmax_empty_funnel_rejected(interval):
    sched = FunctionalSchedule.default(interval, length=4)
    with pytest.raises(Exception):
        iterated_argmax(Funnel.__new__(Funnel), sched)


def test_selection_k_stability(half_line, grid100, sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5), 2, 24)
    fun = integrate_branching(sqrt_field, half_line, grid100, 0.0, [0.0], fp)
    picks = []
    for K in (8, 16, 32):
        sched = FunctionalSchedule.default(half_line, length=K, anchor=[0.0])
        picks.append(iterated_argmax(fun, sched))
    assert all(np.array_equal(p.states, picks[0].states) for p in picks)


def test_selection_scale_invariance(half_line, grid100, sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5), 2, 24)
    fun = integrate_branching(sqrt_field, half_line, grid100, 0.0, [0.0], fp)
    sched = FunctionalSchedule.default(half_line, length=16, anchor=[0.0])
    a = iterated_argmax(fun, sched)
    b = iterated_argmax(fun, sched.scaled(37.0))
    assert np.array_equal(a.states, b.states)


def test_build_flow_constant_field(grid100):
    dom = SpatialDomain([0.0], [2.0])
    field = make_field("constant", [1.0])
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(dom, length=8)
    seeds = [(0.0, [x]) for x in (0.1, 0.4, 0.8)]
    flow = build_flow(field, dom, grid100, seeds, fp, sched)
    for (s, x), traj in zip(flow.seeds, flow.trajectories):
        assert np.allclose(traj.states[:, 0], x[0] + traj.times - s, atol=1e-12)


def test_build_flow_compressive_matches_sticky_oracle(interval, grid100,
                                                      compressive):
    # oracle: X(t, 0, x) = sign(x) max(|x| - t, 0)
    fp = FunnelParams(EnvelopeParams((0.04, 0.02), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(interval, length=16)
    xs = [-0.5, -0.2, 0.31, 0.5]
    flow = build_flow(compressive, interval, grid100, [(0.0, [x]) for x in xs],
                      fp, sched)
    tol = 0.02 + 2 * grid100.dt  # final envelope radius + Euler slack
    for x, traj in zip(xs, flow.trajectories):
        oracle = np.sign(x) * np.maximum(abs(x) - traj.times, 0.0)
        assert np.max(np.abs(traj.states[:, 0] - oracle)) <= tol


def test_build_flow_sqrt_seed_origin_selects_zero(half_line, grid100,
                                                  sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5), 2, 24)
    sched = FunctionalSchedule.default(half_line, length=16, anchor=[0.0])
    flow = build_flow(sqrt_field, half_line, grid100, [(0.0, [0.0])], fp, sched)
    assert np.max(np.abs(flow.trajectories[0].states)) == 0.0


def test_check_semigroup_constant(grid100):
    dom = SpatialDomain([0.0], [2.0])
    field = make_field("constant", [1.0])
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(dom, length=8)
    svals = [0.0, 0.25, 0.5]
    xvals = [round(0.25 * i, 6) for i in range(6)]
    seeds = [(s, [x]) for s in svals for x in xvals]
    flow = build_flow(field, dom, grid100, seeds, fp, sched)
    triples = [(r, s, t, [0.25]) for r, s, t in
               itertools.product(svals, repeat=3) if r <= s <= t]
    rep = check_semigroup(flow, triples, snap_tol=1e-9)
    assert rep["max_defect"] <= 1e-12
    assert rep["skipped"] == 0
    # degenerate triples have defect exactly zero
    rep0 = check_semigroup(flow, [(0.0, 0.0, 0.5, [0.25]),
                                  (0.0, 0.5, 0.5, [0.25])], snap_tol=1e-9)
    assert rep0["max_defect"] <= 1e-12


def test_check_semigroup_compressive(interval, grid100, compressive):
    fp = FunnelParams(EnvelopeParams((0.04, 0.02), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(interval, length=16)
    svals = [0.0, 0.25, 0.5]
    xvals = [round(-0.5 + 0.25 * i, 6) for i in range(5)]
    seeds = [(s, [x]) for s in svals for x in xvals]
    flow = build_flow(compressive, interval, grid100, seeds, fp, sched)
    rep = check_semigroup(flow, [(0.0, 0.5, 1.0, [0.5])], snap_tol=0.125)
    assert rep["max_defect"] <= 2 * grid100.dt


def test_check_untangled_constant_no_merges(grid100):
    dom = SpatialDomain([0.0], [2.0])
    field = make_field("constant", [1.0])
    flow = classical_flow(field, dom, grid100,
                          [(0.0, [0.1]), (0.0, [0.5]), (0.0, [0.9])])
    rep = check_untangled(flow, 1e-9, 1e-8)
    assert rep == {"violations": 0, "worst_resep": 0.0, "merges": 0}


def test_check_untangled_compressive_merge_and_hold(interval, grid100,
                                                    compressive):
    fp = FunnelParams(EnvelopeParams((0.04, 0.02), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(interval, length=16)
    flow = build_flow(compressive, interval, grid100,
                      [(0.0, [-0.5]), (0.0, [0.5])], fp, sched)
    merge_tol = 2e-8
    rep = check_untangled(flow, merge_tol, 10 * merge_tol)
    assert rep["merges"] == 1
    assert rep["violations"] == 0


def test_check_untangled_flags_crossing_fixture(grid100):
    # adversarial non-selected flow: the curves cross at t = 0.5, coincide at
    # one node, then drift apart again
    t = grid100.nodes
    a = Trajectory(times=t, states=(0.5 - t)[:, None])
    b = Trajectory(times=t, states=(t - 0.5)[:, None])
    flow = FlowMap(grid=grid100, seeds=[(0.0, np.array([0.5])),
                                        (0.0, np.array([-0.5]))],
                   trajectories=[a, b], resid_max=0.0)
    rep = check_untangled(flow, 1e-9, 1e-8)
    assert rep["violations"] >= 1
    assert rep["worst_resep"] > 0.4


def test_restriction_consistency(interval, grid100, compressive):
    # the tail of a selected line is itself the selected line of its own
    # state, up to snapping and one Euler step
    fp = FunnelParams(EnvelopeParams((0.04, 0.02), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(interval, length=16)
    svals = [0.0, 0.5]
    xvals = [round(-0.5 + 0.1 * i, 6) for i in range(11)]
    seeds = [(s, [x]) for s in svals for x in xvals]
    flow = build_flow(compressive, interval, grid100, seeds, fp, sched)
    i = flow.seed_index(0.0, [0.3])
    y = flow.state(i, 0.5)
    snapped = flow.snap_seed(0.5, y, snap_tol=0.05)
    assert snapped is not None
    tail = flow.trajectories[i].states[grid100.index_of(0.5):]
    other = flow.trajectories[snapped].states
    assert np.max(np.abs(tail - other)) <= 0.05 + 2 * grid100.dt


def test_build_flow_deterministic(interval, grid100, compressive):
    fp = FunnelParams(EnvelopeParams((0.04, 0.02), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(interval, length=16)
    seeds = [(0.0, [x]) for x in np.linspace(-0.9, 0.9, 12)]
    a = build_flow(compressive, interval, grid100, seeds, fp, sched)
    b = build_flow(compressive, interval, grid100, seeds, fp, sched)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert np.array_equal(ta.states, tb.states)


def test_flow_map_seed_lookup(grid100, interval, compressive):
    flow = classical_flow(compressive, interval, grid100,
                          [(0.0, [0.25]), (0.0, [-0.25])])
    assert flow.seed_index(0.0, [0.25]) == 0
    with pytest.raises(DataError):
        flow.seed_index(0.0, [0.3])
