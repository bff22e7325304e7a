import numpy as np
import pytest

from untangled.density import (
    SpaceTimeBump,
    cluster_count,
    continuity_residual,
    near_incompressibility,
    push_forward,
    uniform_ensemble,
)
from untangled.field import SpatialDomain, TimeGrid, make_field
from untangled.filippov import EnvelopeParams
from untangled.funnel import FunnelParams
from untangled.select import FunctionalSchedule, build_flow, classical_flow


@pytest.fixture(scope="module")
def sticky_flow():
    domain = SpatialDomain([-1.0], [1.0])
    grid = TimeGrid(0.0, 1.0, 100)
    field = make_field("compressive-sign")
    fp = FunnelParams(EnvelopeParams((0.04, 0.02), 32, seed=5), 2, 8)
    sched = FunctionalSchedule.default(domain, length=16)
    ens = uniform_ensemble([-1.0], [1.0], 2000)
    flow = build_flow(field, domain, grid,
                      [(0.0, x) for x in ens.positions], fp, sched)
    return flow, ens


def test_uniform_ensemble_mass_is_volume():
    ens = uniform_ensemble([-1.0], [1.0], 500)
    assert ens.total_mass == pytest.approx(2.0, abs=1e-12)
    assert len(ens) == 500
    assert np.all(np.diff(ens.positions[:, 0]) > 0)


def test_push_forward_translation(grid100):
    # constant field: the histogram translates, no atoms appear
    dom = SpatialDomain([0.0], [4.0])
    field = make_field("constant", [1.0])
    ens = uniform_ensemble([0.5], [1.5], 400)
    flow = classical_flow(field, dom, grid100, [(0.0, x) for x in ens.positions])
    snap0 = push_forward(flow, ens, 0.0, dom, n_bins=40)
    snap1 = push_forward(flow, ens, 1.0, dom, n_bins=40)
    assert not snap0.atoms and not snap1.atoms
    # mass moves by exactly 10 bins (bin width 0.1)
    assert np.allclose(np.roll(snap0.bin_masses, 10), snap1.bin_masses,
                       atol=1e-12)


def test_push_forward_identity_at_t0(sticky_flow, interval):
    flow, ens = sticky_flow
    snap = push_forward(flow, ens, 0.0, interval, n_bins=40)
    assert snap.atoms == ()
    assert float(np.sum(snap.bin_masses)) == pytest.approx(ens.total_mass,
                                                           rel=1e-14)


def test_sticky_atom_mass_tracks_min_t(sticky_flow, interval, grid100):
    # oracle: |x| <= t has merged, so the atom mass is total * min(t, 1)
    flow, ens = sticky_flow
    total = ens.total_mass
    for t in (0.3, 0.6):
        snap = push_forward(flow, ens, t, interval, n_bins=40)
        assert len(snap.atoms) >= 1
        assert snap.atom_mass == pytest.approx(min(t, 1.0) * total,
                                               abs=2 * total / np.sqrt(len(ens)))
        loc = snap.atoms[0][0][0]
        assert abs(loc) <= 0.02 + 2 * grid100.dt


def test_mass_conserved_exactly(sticky_flow, interval):
    flow, ens = sticky_flow
    checksum = float(np.sum(ens.weights))
    for t in (0.0, 0.25, 0.5, 1.0):
        snap = push_forward(flow, ens, t, interval, n_bins=32)
        assert float(np.sum(ens.weights)) == checksum  # weights untouched
        assert (float(np.sum(snap.bin_masses)) + snap.atom_mass
                == pytest.approx(checksum, rel=1e-13))


def test_histogram_refinement_conserves_mass(sticky_flow, interval):
    flow, ens = sticky_flow
    coarse = push_forward(flow, ens, 0.5, interval, n_bins=20)
    fine = push_forward(flow, ens, 0.5, interval, n_bins=40)
    assert (float(np.sum(coarse.bin_masses)) + coarse.atom_mass
            == pytest.approx(float(np.sum(fine.bin_masses)) + fine.atom_mass,
                             rel=1e-14))


def test_cluster_count_monotone(sticky_flow):
    flow, ens = sticky_flow
    counts = [cluster_count(flow, ens, t, 2e-8)
              for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[0] == len(ens)
    assert counts[-1] < 0.1 * len(ens)


def test_continuity_residual_zero_test_function(sticky_flow, grid100):
    flow, ens = sticky_flow

    class Zero(SpaceTimeBump):
        def dt(self, t, z):
            return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(z)[:-1]))

        def grad(self, t, z):
            return np.zeros_like(z)

    zero = Zero(0.5, 0.4, [0.0], 0.5)
    assert continuity_residual(flow, ens, grid100, [zero]) == 0.0


def test_continuity_residual_smooth_case_scales_with_dt():
    dom = SpatialDomain([0.0], [4.0])
    field = make_field("constant", [1.0])
    ens = uniform_ensemble([0.5], [1.5], 200)
    psi = SpaceTimeBump(0.5, 0.45, [1.5], 0.9)
    resids = []
    for n in (50, 100):
        grid = TimeGrid(0.0, 1.0, n)
        flow = classical_flow(field, dom, grid,
                              [(0.0, x) for x in ens.positions])
        resids.append(continuity_residual(flow, ens, grid, [psi]))
    # midpoint-rule residual, at worst O(dt); tiny in absolute terms
    assert resids[0] <= 5e-4
    assert resids[1] <= max(resids[0] / 1.5, 1e-12)


def test_continuity_residual_with_atoms(sticky_flow, grid100):
    # the Dirac is a valid measure solution: the weak residual stays small
    flow, ens = sticky_flow
    psi = SpaceTimeBump(0.5, 0.45, [0.0], 0.6)
    resid = continuity_residual(flow, ens, grid100, [psi])
    assert resid <= 0.05 * (grid100.dt + 1.0 / np.sqrt(len(ens))) * 100


def test_near_incompressibility_uniform_translation(grid100):
    dom = SpatialDomain([0.0], [4.0])
    field = make_field("constant", [1.0])
    ens = uniform_ensemble([0.5], [1.5], 1000)
    flow = classical_flow(field, dom, grid100, [(0.0, x) for x in ens.positions])
    snaps = [push_forward(flow, ens, t, dom, n_bins=8) for t in (0.0, 1.0)]
    rep = near_incompressibility(snaps, c_bound=1.5)
    assert rep["ok"]
    assert rep["worst_ratio"] == pytest.approx(1.0, abs=1e-9)


def test_near_incompressibility_fails_on_atoms(sticky_flow, interval):
    flow, ens = sticky_flow
    snaps = [push_forward(flow, ens, t, interval, n_bins=20) for t in (0.0, 0.5)]
    rep = near_incompressibility(snaps, c_bound=10.0)
    assert not rep["ok"]


def test_near_incompressibility_expanding_field_jacobian():
    # oracle: X(t, x) = e^t x thins the density by the Jacobian e^t;
    # at t = ln 2 the support doubles and the worst ratio is 2
    dom = SpatialDomain([-2.0], [2.0])
    field = make_field("linear1d", [1.0])
    t_end = float(np.log(2.0))
    grid = TimeGrid(0.0, t_end, 256)
    ens = uniform_ensemble([-1.0], [1.0], 4000)
    flow = classical_flow(field, dom, grid, [(0.0, x) for x in ens.positions])
    snaps = [push_forward(flow, ens, t, dom, n_bins=16) for t in (0.0, t_end)]
    rep = near_incompressibility(snaps, c_bound=2.2)
    assert rep["ok"]
    assert rep["worst_ratio"] == pytest.approx(2.0, rel=0.1)
