"""Scenario runner: ``untangled run|verify|study|envelope <config>``.

A scenario is a single TOML file describing the domain, time grid, velocity
field, envelope sampling, funnel and selection parameters, particle
ensemble, transport data, and Galerkin mesh.  ``run`` executes the full
pipeline and writes CSV/JSON artifacts plus rendered figures; ``verify``
runs the property suites of every module against the configured scenario;
``study`` produces the mollification-stability and mesh-refinement tables;
``envelope`` dumps a support table at one point for debugging.

Exit codes: 0 all certificates within tolerance, 1 certificate violation,
2 configuration error, 3 numerical/stage error.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import report
from .density import (
    SpaceTimeBump,
    cluster_count,
    near_incompressibility,
    push_forward,
    uniform_ensemble,
)
from .errors import ConfigError, UntangledError
from .field import (
    ScalarField,
    SpatialDomain,
    TimeGrid,
    VelocityField,
    diagnose_field,
    make_field,
    make_scalar,
)
from .filippov import EnvelopeParams, filippov_envelope
from .funnel import FunnelParams, gronwall_violations
from .galerkin import (
    assemble_from_flow,
    discrete_inf_sup,
    galerkin_orthogonality_defect,
    l2_norm,
    make_test_space,
    residual_norm,
    solve as galerkin_solve,
)
from .select import (
    FlowMap,
    FunctionalSchedule,
    build_flow,
    check_semigroup,
    check_untangled,
    classical_flow,
)
from .transport import (
    pull_back_data,
    shift_zeroth_order,
    solve_characteristic_ode,
    undo_shift,
    assemble_flow_solution,
)

log = logging.getLogger("untangled")


def worker_count() -> int:
    """Worker cap from UNTANGLED_THREADS (default: cpu count)."""
    env = os.environ.get("UNTANGLED_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"UNTANGLED_THREADS must be an integer: {env!r}") from exc
    return os.cpu_count() or 1


class Scenario:
    """Parsed and validated scenario configuration."""

    def __init__(self, cfg: dict, base_dir: str = "."):
        self.raw = cfg
        self.name = cfg.get("scenario", "scenario")
        self.output_dir = os.path.join(base_dir, cfg.get("output_dir", f"out/{self.name}"))

        dom = cfg.get("domain")
        if not dom or "lower" not in dom or "upper" not in dom:
            raise ConfigError("config must provide domain.lower and domain.upper")
        self.domain = SpatialDomain(dom["lower"], dom["upper"])

        tm = cfg.get("time", {})
        n_steps = tm.get("n_steps", 100)
        if n_steps < 1:
            raise ConfigError("time.n_steps must be a positive integer")
        if tm.get("t_end", 1.0) <= tm.get("t_start", 0.0):
            raise ConfigError("time.t_end must exceed time.t_start "
                              "(the step size would not be positive)")
        self.grid = TimeGrid(tm.get("t_start", 0.0), tm.get("t_end", 1.0), n_steps)

        fld = cfg.get("field", {})
        if "kind" not in fld:
            raise ConfigError("config must provide field.kind")
        self.field = make_field(fld["kind"], fld.get("params", ()),
                                fld.get("growth_c"))
        if self.field.dim != self.domain.dim:
            raise ConfigError(f"field.kind '{fld['kind']}' has dimension "
                              f"{self.field.dim}, domain has {self.domain.dim}")

        env = cfg.get("envelope", {})
        schedule = env.get("delta_schedule")
        if schedule is None:
            self.envelope = EnvelopeParams.default(
                self.domain, env.get("samples_per_ball", 64),
                env.get("n_dir", 32), env.get("seed", 0))
        else:
            self.envelope = EnvelopeParams(tuple(schedule),
                                           env.get("samples_per_ball", 64),
                                           env.get("n_dir", 32),
                                           env.get("seed", 0))

        fu = cfg.get("funnel", {})
        self.funnel = FunnelParams(self.envelope,
                                   branch_factor=fu.get("branch_factor", 2),
                                   beam_width=fu.get("beam_width", 16),
                                   merge_tol=fu.get("merge_tol"),
                                   resid_tol=fu.get("resid_tol"),
                                   stick_tol=fu.get("stick_tol"))

        sel = cfg.get("selection", {})
        self.tie_tol = sel.get("tie_tol", 1e-9)
        self.schedule = FunctionalSchedule.default(
            self.domain, length=sel.get("length", 32),
            levels=sel.get("tent_levels", 3),
            steepness=sel.get("steepness", (1.0, 2.0, 4.0, 8.0)),
            anchor=sel.get("tent_anchor"))

        sd = cfg.get("seeds", {})
        self.seed_count = sd.get("count", 16)
        self.seed_lower = np.atleast_1d(np.asarray(
            sd.get("box_lower", self.domain.lower), dtype=float))
        self.seed_upper = np.atleast_1d(np.asarray(
            sd.get("box_upper", self.domain.upper), dtype=float))
        self.s_values = [float(v) for v in sd.get("s_values", [self.grid.t_start])]

        dn = cfg.get("density", {})
        self.particles = dn.get("particles", 1000)
        self.bins = dn.get("bins", 32)
        self.atom_fraction = dn.get("atom_fraction", 0.01)
        self.support_lower = np.atleast_1d(np.asarray(
            dn.get("support_lower", self.seed_lower), dtype=float))
        self.support_upper = np.atleast_1d(np.asarray(
            dn.get("support_upper", self.seed_upper), dtype=float))

        tr = cfg.get("transport", {})
        self.c_field = _scalar_from(tr.get("c", {"kind": "const", "params": [0.0]}))
        self.f_field = _scalar_from(tr.get("f", {"kind": "const", "params": [0.0]}))
        self.u0_field = _scalar_from(tr.get("u0", {"kind": "const", "params": [1.0]}))
        self.lambda_shift = float(tr.get("lambda_shift", 0.0))

        ga = cfg.get("galerkin", {})
        self.galerkin_cells = ga.get("cells", 32)
        self.galerkin_nodes = ga.get("max_nodes", 8)

        st = cfg.get("study", {})
        self.mollify_eps = [float(e) for e in st.get("mollify_eps", [])]
        self.dt_levels = st.get("dt_levels", 0)

        ck = cfg.get("checks", {})
        self.snapshot_times = [float(t) for t in
                               ck.get("snapshot_times", [self.grid.t_end])]
        self.c_bound = float(ck.get("c_bound", 0.0))
        self.snap_tol = ck.get("snap_tol")
        self.flow_method = cfg.get("flow", {}).get("method", "selected")
        if self.flow_method not in ("selected", "classical"):
            raise ConfigError("flow.method must be 'selected' or 'classical'")

    # ---- derived quantities ----

    def seed_grid(self):
        axes = [np.linspace(self.seed_lower[a], self.seed_upper[a],
                            self.seed_count)
                for a in range(self.domain.dim)]
        if self.domain.dim == 1:
            return [np.array([v]) for v in axes[0]]
        mesh = np.meshgrid(*axes, indexing="ij")
        return list(np.column_stack([m.ravel() for m in mesh]))

    def make_flow(self, seeds) -> FlowMap:
        if self.flow_method == "classical":
            return classical_flow(self.field, self.domain, self.grid, seeds)
        return build_flow(self.field, self.domain, self.grid, seeds,
                          self.funnel, self.schedule, self.tie_tol)

    def resolved_funnel(self) -> FunnelParams:
        return self.funnel.resolved(self.domain, self.grid, self.field)


def _scalar_from(block) -> ScalarField:
    if not isinstance(block, dict) or "kind" not in block:
        raise ConfigError("scalar field blocks need at least a 'kind' key")
    return make_scalar(block["kind"], block.get("params", ()))


def load_scenario(path: str, output_override: str | None = None) -> Scenario:
    resolved = _resolve_config_path(path)
    with open(resolved, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {resolved}: {exc}") from exc
    if cfg.get("schema_version", 1) != 1:
        raise ConfigError("unsupported schema_version (expected 1)")
    scenario = Scenario(cfg)
    if output_override:
        scenario.output_dir = output_override
    return scenario


def _resolve_config_path(path: str) -> str:
    if os.path.exists(path):
        return path
    from importlib import resources

    name = path if path.endswith(".toml") else path + ".toml"
    candidate = resources.files("untangled").joinpath("configs", name)
    if candidate.is_file():
        return str(candidate)
    raise ConfigError(f"config not found: {path}")


# --- run ----------------------------------------------------------------------

class _Stage:
    """Tags stage failures and accumulates wall-clock timings."""

    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.tic = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.tic
        if exc is not None and isinstance(exc, UntangledError):
            exc.args = (f"[stage {self.name}] {exc}",)
        return False


def run_scenario(scenario: Scenario) -> dict:
    """Full pipeline: flow, certificates, density, transport, Galerkin.

    Artifacts are written as each stage completes, so a failing stage
    leaves the earlier stages' outputs in place.
    """
    os.makedirs(scenario.output_dir, exist_ok=True)
    manifest = []
    timings = {}
    certificates = {}
    t_total = time.perf_counter()
    out = scenario.output_dir

    # flow over the certificate seed grid (all configured start times)
    with _Stage("flow", timings):
        xgrid = scenario.seed_grid()
        cert_seeds = [(s, x) for s in scenario.s_values for x in xgrid]
        flow_cert = scenario.make_flow(cert_seeds)

    with _Stage("certificates", timings):
        params = scenario.resolved_funnel()
        certificates["inclusion_residual_max"] = flow_cert.resid_max
        certificates["gronwall_violations"] = gronwall_violations(
            flow_cert.trajectories, scenario.field.growth_c)
        rep = check_untangled(flow_cert, params.merge_tol,
                              10 * params.merge_tol,
                              s=min(scenario.s_values))
        certificates["untangled_violations"] = rep["violations"]
        certificates["untangled_worst_resep"] = rep["worst_resep"]
        if len(scenario.s_values) > 1:
            spacing = (np.min(np.diff(sorted(v[0] for v in
                                             map(np.atleast_1d, xgrid))))
                       if len(xgrid) > 1 else scenario.domain.diameter)
            snap_tol = (scenario.snap_tol if scenario.snap_tol is not None
                        else spacing)
            triples = [(r, s, t, x) for r, s, t in
                       itertools.product(scenario.s_values, repeat=3)
                       if r <= s <= t for x in xgrid[:10]]
            sg = check_semigroup(flow_cert, triples, snap_tol)
            certificates["semigroup_defect"] = sg["max_defect"]
            certificates["semigroup_checked"] = sg["checked"]
            certificates["semigroup_skipped"] = sg["skipped"]
        manifest.append(report.write_flow_csv(
            os.path.join(out, "trajectories.csv"), flow_cert))
        manifest.append(report.render_flow_figure(
            os.path.join(out, "flow.png"), flow_cert))

    with _Stage("density", timings):
        ensemble = uniform_ensemble(scenario.support_lower,
                                    scenario.support_upper,
                                    scenario.particles, flow_ref=scenario.name)
        flow_particles = scenario.make_flow([(scenario.grid.t_start, x)
                                             for x in ensemble.positions])
        snapshots = [push_forward(flow_particles, ensemble, t, scenario.domain,
                                  scenario.bins, params.merge_tol,
                                  scenario.atom_fraction)
                     for t in [scenario.grid.t_start] + scenario.snapshot_times]
        drift = max(abs(float(np.sum(s.bin_masses)) + s.atom_mass
                        - ensemble.total_mass) for s in snapshots)
        certificates["mass_drift"] = drift
        if scenario.c_bound > 0:
            nic = near_incompressibility(snapshots, scenario.c_bound)
            certificates["near_incompressibility_ok"] = bool(nic["ok"])
            certificates["worst_density_ratio"] = nic["worst_ratio"]
        manifest.append(report.write_snapshots_csv(
            os.path.join(out, "snapshots.csv"), snapshots))
        manifest.append(report.write_atoms_json(
            os.path.join(out, "atoms.json"), snapshots))
        manifest.append(report.render_density_figure(
            os.path.join(out, "density.png"), snapshots))

    with _Stage("transport", timings):
        problem = pull_back_data(scenario.c_field, scenario.f_field,
                                 flow_particles, scenario.grid,
                                 scenario.u0_field)
        lam = max(scenario.lambda_shift, -float(np.min(problem.C)), 0.0)
        if lam > 0:
            solution = undo_shift(solve_characteristic_ode(
                shift_zeroth_order(problem, lam)), lam)
        else:
            solution = solve_characteristic_ode(problem)
        mid = 0.5 * (scenario.domain.lower + scenario.domain.upper)
        probes = [SpaceTimeBump(
            0.5 * (scenario.grid.t_start + scenario.grid.t_end),
            0.45 * (scenario.grid.t_end - scenario.grid.t_start),
            mid, 0.4 * scenario.domain.diameter).value]
        probe_values = assemble_flow_solution(solution, flow_particles,
                                              ensemble.weights, probes)
        stride = max(1, len(ensemble) // scenario.galerkin_nodes)
        manifest.append(report.write_characteristics_csv(
            os.path.join(out, "characteristics.csv"), solution,
            problem.seeds, stride=stride))
        manifest.append(report.write_json(os.path.join(out, "probes.json"),
                                          {"values": probe_values}))

    with _Stage("galerkin", timings):
        sub_idx = list(range(0, len(ensemble), stride))
        sub_flow = FlowMap(grid=scenario.grid,
                           seeds=[flow_particles.seeds[i] for i in sub_idx],
                           trajectories=[flow_particles.trajectories[i]
                                         for i in sub_idx],
                           resid_max=flow_particles.resid_max)
        space = make_test_space(scenario.grid.t_start, scenario.grid.t_end,
                                scenario.galerkin_cells)
        system = assemble_from_flow(space, sub_flow, scenario.grid,
                                    scenario.c_field, scenario.f_field,
                                    scenario.u0_field)
        gal = galerkin_solve(system)
        certificates["inf_sup"] = discrete_inf_sup(system)
        certificates["galerkin_orthogonality_defect"] = \
            galerkin_orthogonality_defect(system, gal["coeffs"])
        rng = np.random.default_rng(scenario.envelope.seed)
        worst_ident = 0.0
        for _ in range(8):
            W = rng.normal(size=gal["coeffs"].shape)
            direct = l2_norm(system, gal["U_h"]
                             - np.stack([W[j] @ system.bstar[j]
                                         for j in range(system.n_nodes)]))
            worst_ident = max(worst_ident,
                              abs(residual_norm(system, W) - direct))
        certificates["residual_identity_defect"] = worst_ident
        manifest.append(report.write_galerkin_csv(
            os.path.join(out, "galerkin.csv"), system, gal))
        manifest.append(report.render_galerkin_figure(
            os.path.join(out, "galerkin.png"), system, gal))

    timings["total"] = time.perf_counter() - t_total

    ok = _certificates_ok(scenario, params, certificates)
    run_report = {"scenario": scenario.name, "ok": ok,
                  "certificates": certificates,
                  "manifest": sorted(os.path.basename(p) for p in manifest),
                  "timings_s": {k: round(v, 4) for k, v in timings.items()}}
    report.write_json(os.path.join(out, "report.json"), run_report)
    return run_report


def _certificates_ok(scenario, params, certs) -> bool:
    grid = scenario.grid
    checks = [certs["untangled_violations"] == 0,
              certs["gronwall_violations"] == 0,
              certs["mass_drift"] <= 1e-12 * max(1.0, scenario.particles)]
    if scenario.flow_method == "selected":
        checks.append(certs["inclusion_residual_max"] <= params.resid_tol)
    if "semigroup_defect" in certs:
        checks.append(certs["semigroup_defect"]
                      <= 2.0 * grid.dt * max(scenario.field.growth_c, 1e-12))
    if "inf_sup" in certs:
        checks.append(certs["inf_sup"] >= 1.0 - 1e-8)
        checks.append(certs["residual_identity_defect"] <= 1e-8)
    if "near_incompressibility_ok" in certs:
        checks.append(certs["near_incompressibility_ok"])
    return all(bool(c) for c in checks)


# --- verify -------------------------------------------------------------------

def verify_scenario(scenario: Scenario) -> dict:
    """Property suites of every module, run against the scenario."""
    from . import verify as verify_mod

    results = verify_mod.run_all(scenario)
    ok = all(r["ok"] for r in results)
    payload = {"scenario": scenario.name, "ok": ok, "checks": results}
    os.makedirs(scenario.output_dir, exist_ok=True)
    report.write_json(os.path.join(scenario.output_dir, "verify.json"), payload)
    return payload


# --- study --------------------------------------------------------------------

def convergence_study(scenario: Scenario) -> dict:
    """Mollification stability plus Galerkin mesh refinement tables."""
    out = scenario.output_dir
    os.makedirs(out, exist_ok=True)
    table = {"mollification": [], "galerkin": []}

    if scenario.mollify_eps:
        ensemble = uniform_ensemble(scenario.support_lower,
                                    scenario.support_upper,
                                    scenario.particles)
        seeds = [(scenario.grid.t_start, x) for x in ensemble.positions]
        flow_ref = scenario.make_flow(seeds)
        _, times, ref_paths = flow_ref.states_matrix(scenario.grid.t_start)
        problem_ref = pull_back_data(scenario.c_field, scenario.f_field,
                                     flow_ref, scenario.grid, scenario.u0_field)
        sol_ref = solve_characteristic_ode(problem_ref)
        mid = 0.5 * (scenario.domain.lower + scenario.domain.upper)
        probe = SpaceTimeBump(
            0.5 * (scenario.grid.t_start + scenario.grid.t_end),
            0.45 * (scenario.grid.t_end - scenario.grid.t_start),
            mid, 0.4 * scenario.domain.diameter).value
        ref_probe = assemble_flow_solution(sol_ref, flow_ref, ensemble.weights,
                                           [probe])[0]
        base_kind = ("mollified-compressive-sign"
                     if scenario.field.kind in ("compressive-sign",
                                                "mollified-compressive-sign")
                     else "mollified-sign1d")
        for eps in scenario.mollify_eps:
            smooth = make_field(base_kind, [eps])
            flow_eps = classical_flow(smooth, scenario.domain, scenario.grid,
                                      seeds)
            _, _, paths = flow_eps.states_matrix(scenario.grid.t_start)
            diff = np.linalg.norm(paths - ref_paths, axis=2)
            dts = np.diff(times)
            per_seed = 0.5 * ((diff[:, :-1] + diff[:, 1:]) @ dts)
            l1 = float(np.mean(per_seed))
            w1 = _w1_distance(paths[:, -1, 0], ref_paths[:, -1, 0])
            problem_eps = pull_back_data(scenario.c_field, scenario.f_field,
                                         flow_eps, scenario.grid,
                                         scenario.u0_field)
            sol_eps = solve_characteristic_ode(problem_eps)
            probe_eps = assemble_flow_solution(sol_eps, flow_eps,
                                               ensemble.weights, [probe])[0]
            table["mollification"].append(
                {"eps": eps, "flow_l1_error": l1, "density_w1_error": w1,
                 "probe_error": abs(probe_eps - ref_probe)})

    if scenario.dt_levels:
        table["galerkin"] = galerkin_refinement_table(scenario)

    rows = [(r["eps"], r["flow_l1_error"], r["density_w1_error"],
             r["probe_error"]) for r in table["mollification"]]
    manifest = []
    if rows:
        manifest.append(report.write_csv(
            os.path.join(out, "study_mollification.csv"),
            ["eps", "flow_l1_error", "density_w1_error", "probe_error"], rows))
    if table["galerkin"]:
        manifest.append(report.write_csv(
            os.path.join(out, "study_galerkin.csv"),
            ["dtau", "l2_error", "rate"],
            [(r["dtau"], r["l2_error"], r["rate"]) for r in table["galerkin"]]))
    manifest.append(report.render_convergence_figure(
        os.path.join(out, "convergence.png"), table))
    payload = {"scenario": scenario.name, "table": table,
               "manifest": sorted(os.path.basename(p) for p in manifest)}
    report.write_json(os.path.join(out, "study.json"), payload)
    return payload


def galerkin_refinement_table(scenario: Scenario, base_cells: int = 8) -> list:
    """L2 error of the Galerkin solution against characteristics under
    mesh halving, with observed rates."""
    zero = make_field("constant", [0.0] * scenario.domain.dim)
    xs = scenario.seed_grid()[: scenario.galerkin_nodes]
    flow = classical_flow(zero, scenario.domain, scenario.grid,
                          [(scenario.grid.t_start, x) for x in xs])
    fine = solve_characteristic_ode(pull_back_data(
        scenario.c_field, scenario.f_field, flow,
        scenario.grid, scenario.u0_field))
    rows = []
    prev = None
    for level in range(scenario.dt_levels):
        cells = base_cells * 2**level
        space = make_test_space(scenario.grid.t_start, scenario.grid.t_end,
                                cells)
        system = assemble_from_flow(space, flow, scenario.grid,
                                    scenario.c_field, scenario.f_field,
                                    scenario.u0_field)
        sol = galerkin_solve(system)
        tq, _ = space.quadrature()
        ref = np.stack([np.interp(tq, scenario.grid.nodes, fine.U[j])
                        for j in range(fine.U.shape[0])])
        err = l2_norm(system, sol["U_h"] - ref)
        rate = float("nan") if prev is None else float(np.log2(prev / err))
        rows.append({"dtau": (scenario.grid.t_end - scenario.grid.t_start)
                     / cells, "l2_error": err, "rate": rate})
        prev = err
    return rows


def _w1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1-Wasserstein distance between equal-weight empirical measures."""
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


# --- envelope debug dump ------------------------------------------------------

def envelope_dump(scenario: Scenario, at: str) -> dict:
    parts = [float(v) for v in at.split(",")]
    t, x = parts[0], parts[1:]
    if len(x) != scenario.domain.dim:
        raise ConfigError(f"--at needs t,{scenario.domain.dim} coordinates")
    env = filippov_envelope(scenario.field, scenario.domain, t, x,
                            scenario.envelope)
    return {"t": env.t, "x": list(map(float, env.x)),
            "delta_used": env.delta_used,
            "samples_per_ball": env.samples_per_ball,
            "monotonicity_flags": env.monotonicity_flags,
            "support": [{"direction": list(map(float, d)), "value": float(h)}
                        for d, h in zip(env.directions, env.support)]}


# --- entry point ----------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="untangled",
        description="Forward-untangled flows for discontinuous velocity "
                    "fields, with transport solvers and error control.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify", "study"):
        p = sub.add_parser(name)
        p.add_argument("config", help="scenario TOML path or bundled name")
        p.add_argument("--output", help="override output directory")
    p_env = sub.add_parser("envelope")
    p_env.add_argument("config")
    p_env.add_argument("--at", required=True, metavar="t,x1[,x2]")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        scenario = load_scenario(args.config, getattr(args, "output", None))
        if args.command == "run":
            rep = run_scenario(scenario)
            for key, value in sorted(rep["certificates"].items()):
                print(f"{key}: {value}")
            print(f"report: {os.path.join(scenario.output_dir, 'report.json')}")
            return 0 if rep["ok"] else 1
        if args.command == "verify":
            rep = verify_scenario(scenario)
            for check in rep["checks"]:
                status = "pass" if check["ok"] else "FAIL"
                print(f"[{status}] {check['name']}: {check['detail']}")
            return 0 if rep["ok"] else 1
        if args.command == "study":
            rep = convergence_study(scenario)
            for row in rep["table"]["mollification"]:
                print(f"eps={row['eps']:g} flow_l1={row['flow_l1_error']:.6f} "
                      f"w1={row['density_w1_error']:.6f}")
            for row in rep["table"]["galerkin"]:
                print(f"dtau={row['dtau']:g} l2={row['l2_error']:.8f} "
                      f"rate={row['rate']:.2f}")
            return 0
        if args.command == "envelope":
            import json as _json

            print(_json.dumps(envelope_dump(scenario, args.at), indent=2,
                              sort_keys=True))
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UntangledError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 2


if __name__ == "__main__":
    sys.exit(main())
