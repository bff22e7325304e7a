import numpy as np
import pytest

from untangled.errors import DataError, InfeasibleError
from untangled.field import SpatialDomain, make_field
from untangled.filippov import EnvelopeParams
from untangled.funnel import (
    FunnelParams,
    Trajectory,
    gronwall_violations,
    inclusion_residual,
    integrate_branching,
    restrict,
    splice,
)


@pytest.fixture
def travel_domain():
    return SpatialDomain([0.0], [2.0])


def test_constant_field_single_member(travel_domain, grid100, funnel_params):
    field = make_field("constant", [1.0])
    for beam in (1, 4, 16):
        fp = FunnelParams(funnel_params.envelope, branch_factor=2,
                          beam_width=beam)
        fun = integrate_branching(field, travel_domain, grid100, 0.0, [0.5], fp)
        assert len(fun) == 1
        assert np.allclose(fun.members[0].states[:, 0], 0.5 + grid100.nodes,
                           atol=1e-12)


def test_sign_field_zero_curve_is_member(interval, grid100, sign_field,
                                         funnel_params):
    fun = integrate_branching(sign_field, interval, grid100, 0.0, [0.0],
                              funnel_params)
    zero = [m for m in fun.members if np.max(np.abs(m.states)) == 0.0]
    assert len(zero) == 1


def test_sqrt_funnel_contains_departure_family(half_line, grid100, sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5),
                      branch_factor=2, beam_width=24)
    fun = integrate_branching(sqrt_field, half_line, grid100, 0.0, [0.0], fp)
    assert len(fun) >= 16
    zero = [m for m in fun.members if np.max(np.abs(m.states)) == 0.0]
    assert len(zero) == 1
    # members realize several departure times c and stay near (t - c)_+^2
    departures = set()
    for m in fun.members:
        at_zero = np.where(m.states[:, 0] == 0.0)[0]
        c = m.times[at_zero[-1]] if at_zero.size else m.times[0]
        departures.add(round(float(c), 6))
        model = np.maximum(m.times - c, 0.0) ** 2
        assert np.max(np.abs(m.states[:, 0] - model)) < 0.5
    assert len(departures) >= 4


def test_residual_constant_line(travel_domain, grid100, funnel_params):
    field = make_field("constant", [1.0])
    line = Trajectory(times=grid100.nodes, states=0.5 + grid100.nodes)
    assert inclusion_residual(line, field, travel_domain,
                              funnel_params.envelope) <= 1e-12


def test_residual_zero_curve_sign_field(interval, grid100, sign_field, env64):
    zero = Trajectory(times=grid100.nodes, states=np.zeros_like(grid100.nodes))
    assert inclusion_residual(zero, sign_field, interval, env64) == 0.0


def test_residual_flags_spurious_sqrt_curve(half_line, grid100, sqrt_field,
                                            env64):
    # gamma(t) = t starts with slope 1 where the envelope hugs {0}
    bad = Trajectory(times=grid100.nodes, states=grid100.nodes.copy())
    assert inclusion_residual(bad, sqrt_field, half_line, env64) > 0.5


def test_splice_idempotent(half_line, grid100, sqrt_field):
    fp = FunnelParams(EnvelopeParams((0.05, 0.025), 64, seed=5), 2, 8)
    fun = integrate_branching(sqrt_field, half_line, grid100, 0.0, [0.3], fp)
    gamma = fun.members[0]
    again = splice(gamma, restrict(gamma, 0.5), 0.5)
    assert np.array_equal(again.states, gamma.states)


def test_splice_recovers_departure_curve(grid100):
    # zero curve spliced with the parabola leaving at s = 0.5 reproduces the
    # canonical departure solution gamma_c with c = 0.5
    zero = Trajectory(times=grid100.nodes, states=np.zeros_like(grid100.nodes))
    eta = Trajectory(times=grid100.nodes[50:],
                     states=(grid100.nodes[50:] - 0.5) ** 2)
    spliced = splice(zero, eta, 0.5)
    model = np.maximum(grid100.nodes - 0.5, 0.0) ** 2
    assert np.allclose(spliced.states[:, 0], model, atol=1e-15)


def test_splice_residual_no_worse(half_line, grid100, sqrt_field, env64):
    zero = Trajectory(times=grid100.nodes, states=np.zeros_like(grid100.nodes))
    eta = Trajectory(times=grid100.nodes[50:],
                     states=(grid100.nodes[50:] - 0.5) ** 2)
    spliced = splice(zero, eta, 0.5)
    r_in = max(inclusion_residual(zero, sqrt_field, half_line, env64),
               inclusion_residual(eta, sqrt_field, half_line, env64))
    r_sp = inclusion_residual(spliced, sqrt_field, half_line, env64)
    assert r_sp <= r_in + 1e-12


def test_splice_rejects_mismatch(grid100):
    zero = Trajectory(times=grid100.nodes, states=np.zeros_like(grid100.nodes))
    eta = Trajectory(times=grid100.nodes[50:],
                     states=0.5 + (grid100.nodes[50:] - 0.5) ** 2)
    with pytest.raises(DataError):
        splice(zero, eta, 0.5, merge_tol=1e-9)


def test_restrict(grid100):
    curve = Trajectory(times=grid100.nodes,
                       states=np.maximum(grid100.nodes - 0.25, 0.0) ** 2)
    tail = restrict(curve, 0.5)
    assert tail.start_time == 0.5
    assert np.allclose(tail.states[:, 0], (tail.times - 0.25) ** 2)
    same = restrict(curve, 0.0)
    assert np.array_equal(same.states, curve.states)
    with pytest.raises(DataError):
        restrict(curve, 1.5)


def test_restrict_residual_monotone(half_line, grid100, sqrt_field, env64):
    curve = Trajectory(times=grid100.nodes,
                       states=np.maximum(grid100.nodes - 0.25, 0.0) ** 2)
    full = inclusion_residual(curve, sqrt_field, half_line, env64)
    tail = inclusion_residual(restrict(curve, 0.5), sqrt_field, half_line,
                              env64)
    assert tail <= full + 1e-15


def test_gronwall_envelope(interval, grid100, compressive, funnel_params):
    fun = integrate_branching(compressive, interval, grid100, 0.0, [0.5],
                              funnel_params)
    assert gronwall_violations(fun.members, growth_c=1.0) == 0


def test_funnel_determinism(interval, grid100, compressive, funnel_params):
    a = integrate_branching(compressive, interval, grid100, 0.0, [0.37],
                            funnel_params)
    b = integrate_branching(compressive, interval, grid100, 0.0, [0.37],
                            funnel_params)
    assert len(a) == len(b)
    for ma, mb in zip(a.members, b.members):
        assert np.array_equal(ma.states, mb.states)


def test_infeasible_at_outflow_boundary(grid100):
    # outward constant field: the envelope never meets the tangent cone at
    # the face the trajectory is pushed against
    dom = SpatialDomain([0.0], [1.0])
    field = make_field("constant", [1.0])
    fp = FunnelParams(EnvelopeParams((0.05, 0.02), 32, seed=5), 2, 8)
    with pytest.raises(InfeasibleError):
        integrate_branching(field, dom, grid100, 0.0, [1.0], fp)


def test_funnel_respects_beam_width(interval, grid100, compressive):
    fp = FunnelParams(EnvelopeParams((0.1, 0.05), 64, seed=5), 2, beam_width=4)
    fun = integrate_branching(compressive, interval, grid100, 0.0, [0.02], fp)
    assert 1 <= len(fun) <= 4
