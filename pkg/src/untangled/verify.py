"""Property suites behind ``untangled verify``.

Each check exercises one invariant from the library against the configured
scenario and reports pass/fail with a short detail string.  The untangled
checker additionally gets a hand-built tangled flow as a negative control:
a checker that cannot flag crossing-and-reseparating lines would be
worthless.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .density import cluster_count, push_forward, uniform_ensemble
from .field import tangent_cone_admissible, diagnose_field
from .filippov import envelope_batch, direction_set, set_distance_batch
from .funnel import (
    Trajectory,
    gronwall_violations,
    inclusion_residual,
    integrate_branching,
    restrict,
    splice,
)
from .galerkin import (
    assemble_from_flow,
    discrete_inf_sup,
    galerkin_orthogonality_defect,
    l2_norm,
    make_test_space,
    raw_hat_inf_sup,
    residual_norm,
    solve as galerkin_solve,
    graph_norm,
    trial_to_test,
)
from .select import FlowMap, build_flow, check_semigroup, check_untangled
from .transport import pull_back_data, solve_characteristic_ode

from .cli import Scenario, worker_count


def run_all(scenario: Scenario) -> list:
    checks = []

    def record(name, ok, detail):
        checks.append({"name": name, "ok": bool(ok), "detail": str(detail)})

    params = scenario.resolved_funnel()
    grid = scenario.grid
    domain = scenario.domain
    field = scenario.field
    rng = np.random.default_rng(scenario.envelope.seed + 1)

    # ---- field ----
    diag = diagnose_field(field, domain, grid, n_samples=10_000,
                          seed=scenario.envelope.seed)
    record("field.growth_envelope", diag.growth_violations == 0,
           f"{diag.growth_violations} violations over 10000 LHS samples")
    corners = [domain.lower, domain.upper,
               *(rng.uniform(domain.lower, domain.upper, (8, domain.dim)))]
    zero_ok = all(tangent_cone_admissible(domain, x, np.zeros(domain.dim))
                  for x in corners)
    record("field.tangent_zero_vector", zero_ok,
           "zero velocity tangent everywhere")

    # ---- envelope ----
    pts = rng.uniform(domain.lower, domain.upper, (64, domain.dim))
    dirs = direction_set(domain.dim, scenario.envelope.n_dir)
    flagged = 0
    sup_all = None
    for delta_i, delta in enumerate(scenario.envelope.delta_schedule):
        import dataclasses as _dc

        single = _dc.replace(scenario.envelope, delta_schedule=(delta,))
        sup, _, _ = envelope_batch(field, domain, grid.t_start, pts, single, dirs)
        if sup_all is not None:
            flagged += int(np.sum(np.any(sup > sup_all + 1e-9, axis=1) > 0))
        sup_all = sup
    record("envelope.monotonicity", flagged <= 0.1 * len(pts) *
           (len(scenario.envelope.delta_schedule) - 1),
           f"{flagged} sampled increases along the radius schedule "
           "(sampling artifacts allowed up to 10%)")
    delta_f = scenario.envelope.delta_schedule[-1]
    bound = field.growth_c * (1.0 + np.linalg.norm(pts, axis=1) + delta_f)
    record("envelope.growth_bound",
           bool(np.all(np.abs(sup_all) <= bound[:, None] + 1e-12)),
           "|h| <= growth_c (1 + |x| + delta)")
    ok_lip = True
    for i in range(16):
        y1 = rng.normal(size=domain.dim)
        y2 = rng.normal(size=domain.dim)
        d1 = set_distance_batch(sup_all[i], dirs.directions, y1[None, :])[0]
        d2 = set_distance_batch(sup_all[i], dirs.directions, y2[None, :])[0]
        ok_lip &= abs(d1 - d2) <= np.linalg.norm(y1 - y2) + 1e-12
    record("envelope.distance_lipschitz", ok_lip, "1-Lipschitz in y")

    # ---- funnel ----
    seed_pts = scenario.seed_grid()[:4]
    funnels = [integrate_branching(field, domain, grid, grid.t_start, x, params)
               for x in seed_pts]
    record("funnel.nonempty", all(len(f) >= 1 for f in funnels),
           f"member counts {[len(f) for f in funnels]}")
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        resids = list(pool.map(
            lambda m: inclusion_residual(m, field, domain, scenario.envelope),
            [f.members[0] for f in funnels]))
    record("funnel.certified", all(r <= params.resid_tol for r in resids),
           f"max recomputed residual {max(resids):.2e} <= {params.resid_tol:.2e}")
    again = integrate_branching(field, domain, grid, grid.t_start, seed_pts[0],
                                params)
    record("funnel.determinism",
           len(again) == len(funnels[0]) and all(
               np.array_equal(a.states, b.states)
               for a, b in zip(again.members, funnels[0].members)),
           "identical rebuild")
    record("funnel.gronwall",
           gronwall_violations([m for f in funnels for m in f.members],
                               field.growth_c) == 0,
           "a-priori bound holds on every member")
    gamma = funnels[0].members[0]
    s_mid = grid.nodes[grid.n_steps // 2]
    sub = integrate_branching(field, domain, grid, s_mid, gamma.state_at(s_mid),
                              params)
    eta = sub.members[0]
    spliced = splice(gamma, eta, s_mid, merge_tol=params.merge_tol)
    r_s = inclusion_residual(spliced, field, domain, scenario.envelope)
    r_in = max(inclusion_residual(gamma, field, domain, scenario.envelope),
               inclusion_residual(eta, field, domain, scenario.envelope))
    record("funnel.splice_closure", r_s <= r_in + 1e-12,
           f"spliced residual {r_s:.2e} <= inputs {r_in:.2e}")
    r_r = inclusion_residual(restrict(gamma, s_mid), field, domain,
                             scenario.envelope)
    record("funnel.restrict_monotone",
           r_r <= inclusion_residual(gamma, field, domain,
                                     scenario.envelope) + 1e-15,
           "restriction never increases the residual")

    # ---- selection / flow ----
    xgrid = scenario.seed_grid()
    flow = scenario.make_flow([(s, x) for s in scenario.s_values for x in xgrid])
    face_tol = 1e-9 * max(1.0, domain.diameter)
    visited = 0
    tangent_ok = True
    for traj in flow.trajectories:
        on_face = np.any((traj.states <= domain.lower + face_tol)
                         | (traj.states >= domain.upper - face_tol), axis=1)
        for k in np.where(on_face)[0]:
            visited += 1
            v = field.evaluate(traj.times[k], traj.states[k])
            tangent_ok &= tangent_cone_admissible(domain, traj.states[k], v,
                                                  tol=params.resid_tol)
    record("field.boundary_tangency", tangent_ok,
           f"tangency holds at every boundary state the flow visits "
           f"({visited} states)")
    rep = check_untangled(flow, params.merge_tol, 10 * params.merge_tol,
                          s=min(scenario.s_values))
    record("select.untangled", rep["violations"] == 0,
           f"{rep['violations']} violations over {rep['merges']} merged pairs")
    record("select.untangled_negative_control",
           check_untangled(_tangled_fixture(grid), 1e-9, 1e-8)["violations"] >= 1,
           "hand-built crossing flow is flagged")
    if len(scenario.s_values) > 1:
        import itertools

        triples = [(r, s, t, x) for r, s, t in
                   itertools.product(scenario.s_values, repeat=3)
                   if r <= s <= t for x in xgrid[:5]]
        sg = check_semigroup(flow, triples, snap_tol=scenario.snap_tol or 1e-9)
        record("select.semigroup",
               sg["max_defect"] <= 2 * grid.dt * max(field.growth_c, 1e-12),
               f"defect {sg['max_defect']:.2e} over {sg['checked']} triples")
    if scenario.flow_method == "selected":
        one_seed = [(grid.t_start, xgrid[0])]
        base = build_flow(field, domain, grid, one_seed, params,
                          scenario.schedule, scenario.tie_tol)
        half = build_flow(field, domain, grid, one_seed, params,
                          _truncated_schedule(scenario,
                                              len(scenario.schedule) // 2),
                          scenario.tie_tol)
        record("select.k_stability",
               np.array_equal(half.trajectories[0].states,
                              base.trajectories[0].states),
               "halving the schedule keeps the selected curve")
        scaled = build_flow(field, domain, grid, one_seed, params,
                            scenario.schedule.scaled(3.0), scenario.tie_tol)
        record("select.scale_invariance",
               np.array_equal(scaled.trajectories[0].states,
                              base.trajectories[0].states),
               "argmax invariant under tent scaling")

    # ---- density ----
    ensemble = uniform_ensemble(scenario.support_lower, scenario.support_upper,
                                min(scenario.particles, 2000))
    flow_p = scenario.make_flow([(grid.t_start, x) for x in ensemble.positions])
    times = [grid.t_start] + scenario.snapshot_times
    snaps = [push_forward(flow_p, ensemble, t, domain, scenario.bins,
                          params.merge_tol, scenario.atom_fraction)
             for t in times]
    drift = max(abs(float(np.sum(s.bin_masses)) + s.atom_mass
                    - ensemble.total_mass) for s in snaps)
    record("density.mass_conservation",
           drift <= 1e-12 * max(1.0, ensemble.total_mass),
           f"worst snapshot drift {drift:.2e}")
    counts = [cluster_count(flow_p, ensemble, t, params.merge_tol)
              for t in times]
    record("density.merging_monotone",
           all(b <= a for a, b in zip(counts[:-1], counts[1:])),
           f"cluster counts {counts}")
    fine = push_forward(flow_p, ensemble, times[-1], domain, 2 * scenario.bins,
                        params.merge_tol, scenario.atom_fraction)
    record("density.refinement_consistency",
           abs(float(np.sum(fine.bin_masses)) + fine.atom_mass
               - (float(np.sum(snaps[-1].bin_masses)) + snaps[-1].atom_mass))
           <= 1e-12 * max(1.0, ensemble.total_mass),
           "halving the bin width conserves total mass")

    # ---- transport ----
    problem = pull_back_data(scenario.c_field, scenario.f_field, flow_p, grid,
                             scenario.u0_field)
    if float(np.min(problem.C)) >= 0:
        hom = solve_characteristic_ode(type(problem)(
            grid=grid, seeds=problem.seeds, C=problem.C,
            F=np.zeros_like(problem.F), U0=np.abs(problem.U0) + 1.0))
        sup_t = np.max(np.abs(hom.U), axis=0)
        record("transport.maximum_principle",
               bool(np.all(np.diff(sup_t) <= 1e-12)),
               "sup |U| nonincreasing for F=0, C>=0")
    pa = type(problem)(grid=grid, seeds=problem.seeds, C=problem.C,
                       F=rng.normal(size=problem.F.shape),
                       U0=rng.normal(size=problem.U0.shape))
    pb = type(problem)(grid=grid, seeds=problem.seeds, C=problem.C,
                       F=rng.normal(size=problem.F.shape),
                       U0=rng.normal(size=problem.U0.shape))
    pc = type(problem)(grid=grid, seeds=problem.seeds, C=problem.C,
                       F=2 * pa.F - 0.5 * pb.F, U0=2 * pa.U0 - 0.5 * pb.U0)
    Ua = solve_characteristic_ode(pa).U
    Ub = solve_characteristic_ode(pb).U
    Uc = solve_characteristic_ode(pc).U
    defect = float(np.max(np.abs(Uc - (2 * Ua - 0.5 * Ub))))
    record("transport.linearity", defect <= 1e-10,
           f"superposition defect {defect:.2e}")
    merged = _merged_pairs(flow_p, params.merge_tol)
    if merged:
        j1, j2, k_merge = merged[0]
        sol = solve_characteristic_ode(problem)
        # post-merge both lines carry the same C, so the difference decays
        # exactly with the common integrating factor; normalized by it the
        # difference is constant (and zero when the initial data agree)
        factor = np.exp(sol.I[j1, k_merge:] - sol.I[j1, k_merge])
        normalized = (sol.U[j1, k_merge:] - sol.U[j2, k_merge:]) * factor
        spread = float(np.max(normalized) - np.min(normalized))
        record("transport.merge_consistency",
               spread <= 1e-9 * max(1.0, abs(float(normalized[0]))),
               f"integrating-factor-normalized post-merge U difference "
               f"drifts by {spread:.2e}")

    # ---- galerkin ----
    space = make_test_space(grid.t_start, grid.t_end, scenario.galerkin_cells)
    sub = FlowMap(grid=grid, seeds=flow_p.seeds[:4],
                  trajectories=flow_p.trajectories[:4],
                  resid_max=flow_p.resid_max)
    system = assemble_from_flow(space, sub, grid, scenario.c_field,
                                scenario.f_field, scenario.u0_field)
    gal = galerkin_solve(system)
    record("galerkin.orthogonality",
           galerkin_orthogonality_defect(system, gal["coeffs"]) <= 1e-10,
           "b(U_h, v) = l(v) on the test basis")
    inf_sup = discrete_inf_sup(system)
    record("galerkin.inf_sup", 1 - 1e-8 <= inf_sup <= 1 + 1e-8,
           f"measured {inf_sup:.12f}")
    record("galerkin.inf_sup_negative_control",
           raw_hat_inf_sup(system) < 0.99,
           f"raw-hat pairing {raw_hat_inf_sup(system):.4f} < 0.99")
    worst = 0.0
    for _ in range(16):
        W = rng.normal(size=gal["coeffs"].shape)
        direct = l2_norm(system, gal["U_h"] - np.stack(
            [W[j] @ system.bstar[j] for j in range(system.n_nodes)]))
        worst = max(worst, abs(residual_norm(system, W) - direct))
    record("galerkin.residual_identity", worst <= 1e-8,
           f"worst |residual - L2 error| = {worst:.2e}")
    u = rng.normal(size=gal["coeffs"].shape)
    v = trial_to_test(system, u)
    iso = abs(graph_norm(system, v)
              - l2_norm(system, np.stack([u[j] @ system.bstar[j]
                                          for j in range(system.n_nodes)])))
    record("galerkin.trial_to_test_isometry", iso <= 1e-10,
           f"|  ||V_U||_Y - ||U||_L2 | = {iso:.2e}")
    T = grid.t_end - grid.t_start
    tq, wq = space.quadrature()
    phi = space.basis_values(tq)
    poincare_ok = True
    for m in range(space.n_basis):
        e = np.zeros(space.n_basis)
        e[m] = 1.0
        lhs = float(np.sqrt(np.sum(wq * (e @ phi) ** 2)))
        rhs = 2.0 * T * float(np.sqrt(e @ system.gram[0] @ e))
        poincare_ok &= lhs <= rhs + 1e-12
    record("galerkin.poincare", poincare_ok, "||V|| <= 2T ||B* V||")
    ref = np.stack([np.interp(tq, grid.nodes,
                              solve_characteristic_ode(pull_back_data(
                                  scenario.c_field, scenario.f_field, sub,
                                  grid, scenario.u0_field)).U[j])
                    for j in range(system.n_nodes)])
    err = l2_norm(system, gal["U_h"] - ref)
    best = _best_approximation_error(system, ref)
    record("galerkin.quasi_optimality",
           err <= (1.0 + 1.0 / inf_sup) * best + 1e-10,
           f"error {err:.2e} <= (1+1/beta) best {best:.2e}")

    return checks


def _truncated_schedule(scenario, k):
    from .select import FunctionalSchedule

    return FunctionalSchedule(scenario.schedule.entries[:max(1, k)])


def _tangled_fixture(grid) -> FlowMap:
    """Two lines that cross at mid-time and re-separate: the checker must
    count at least one violation on this flow."""
    t = grid.nodes
    mid = 0.5 * (t[0] + t[-1])
    a = Trajectory(times=t, states=(mid - t)[:, None])
    b = Trajectory(times=t, states=(t - mid)[:, None])
    return FlowMap(grid=grid, seeds=[(t[0], np.array([mid - t[0]])),
                                     (t[0], np.array([t[0] - mid]))],
                   trajectories=[a, b], resid_max=0.0)


def _merged_pairs(flow, merge_tol):
    idx, times, states = flow.states_matrix(flow.grid.t_start)
    out = []
    n = len(idx)
    for a in range(min(n, 32)):
        for b in range(a + 1, min(n, 32)):
            sep = np.linalg.norm(states[a] - states[b], axis=1)
            close = np.where(sep <= merge_tol)[0]
            if close.size:
                out.append((a, b, int(close[0])))
                if len(out) >= 4:
                    return out
    return out


def _best_approximation_error(system, ref):
    """L2-projection error of the reference onto the trial space."""
    from scipy.linalg import cho_factor, cho_solve

    _, wq = system.space.quadrature()
    total = 0.0
    for j in range(system.n_nodes):
        bs = system.bstar[j]
        G = system.gram[j]
        rhs = (bs * wq[None, :]) @ ref[j]
        c = cho_solve(cho_factor(G), rhs)
        diff = ref[j] - c @ bs
        total += system.node_weights[j] * float(np.sum(wq * diff * diff))
    return float(np.sqrt(total))
