"""Command-line interface.

Subcommands:

* ``mts run <cfg>`` - execute a configured solve; writes per-step CSV,
  field snapshots (legacy VTK in 2D, x/value CSV in 1D), a JSON summary,
  and optional matplotlib figures.
* ``mts analyze <cfg>`` - stability report: per-subdomain spectral
  bounds, critical steps, the Baumgarte parameter cap, verdicts.
* ``mts convergence <cfg> --levels k`` - system time-step sweep with an
  observed-order fit.
* ``mts mesh-info <mesh>`` - mesh/partition statistics.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, reporting
from .expressions import ExpressionError
from .mesh import MeshFormatError, MeshValidationError, load_mesh, load_partition
from .mts_core import (
    ConfigurationError,
    CouplingConfig,
    SolverError,
    run as run_problem,
)
from .problems import (
    BimolecularScenario,
    SplitDofExact,
    run_scenario,
)
from .runconfig import RunConfig, load_run_config

_CONFIG_ERRORS = (
    ConfigurationError,
    MeshFormatError,
    MeshValidationError,
    ExpressionError,
    FileNotFoundError,
    KeyError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mts",
        description="Multi-time-step coupled transport solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured solve")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=Path("mts-out"))
    p_run.add_argument("--snapshots", type=int, default=None,
                       help="number of field snapshots (overrides config)")
    p_run.add_argument("--full-fixtures", action="store_true",
                       help="use full-scale fixtures instead of desk-scale")
    p_run.add_argument("--plots", action="store_true",
                       help="render matplotlib figures next to the CSV output")
    p_run.set_defaults(func=cmd_run)

    p_an = sub.add_parser("analyze", help="stability report for a config")
    p_an.add_argument("config", type=Path)
    p_an.add_argument("--out", type=Path, default=None)
    p_an.add_argument("--export-matrices", type=Path, default=None,
                      help="write MatrixMarket dumps of M_i / K_i here")
    p_an.add_argument("--full-fixtures", action="store_true")
    p_an.set_defaults(func=cmd_analyze)

    p_cv = sub.add_parser("convergence", help="system time-step sweep")
    p_cv.add_argument("config", type=Path)
    p_cv.add_argument("--levels", type=int, required=True)
    p_cv.add_argument("--out", type=Path, default=Path("mts-out"))
    p_cv.add_argument("--plots", action="store_true")
    p_cv.set_defaults(func=cmd_convergence)

    p_mi = sub.add_parser("mesh-info", help="mesh statistics")
    p_mi.add_argument("mesh", type=Path)
    p_mi.add_argument("--format", choices=("native", "msh2"), default="native")
    p_mi.add_argument("--partition", type=Path, default=None)
    p_mi.set_defaults(func=cmd_mesh_info)
    return parser


def _snapshot_steps(n_steps: int, count: int):
    if count <= 0 or n_steps == 0:
        return []
    marks = np.unique(np.round(np.linspace(0, n_steps, count + 1)).astype(int))
    return [int(m) for m in marks if m > 0]


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.full_fixtures:
        cfg.reduced_fixtures = False
    snapshots = cfg.output.snapshots if args.snapshots is None else args.snapshots
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    built = cfg.build_problem()
    if isinstance(built, BimolecularScenario):
        return _run_scenario(built, cfg, out, snapshots, args.plots)
    return _run_single(built, cfg, out, snapshots, args.plots)


def _warn_stability(systems, coupling) -> None:
    report = analysis.stability_report(systems, coupling)
    for s in report.subdomains:
        if not s.dt_ok:
            print(f"warning: subdomain {s.subdomain}: dt_sub={s.dt_sub:g} exceeds "
                  f"critical step {s.dt_critical:g}", file=sys.stderr)
    if coupling.method == "baumgarte" and not report.alpha_ok:
        print(f"warning: alpha={coupling.alpha:g} exceeds alpha_max="
              f"{report.alpha_max:g}", file=sys.stderr)
    note = report.scope_note()
    if note:
        print(f"note: {note}", file=sys.stderr)


def _run_single(problem, cfg: RunConfig, out: Path, snapshots: int,
                plots: bool) -> int:
    coupling = cfg.coupling
    assembled = problem.assemble(coupling)
    _warn_stability(assembled.systems, coupling)
    trajectory, drift = run_problem(assembled, coupling)

    is_baumgarte = coupling.method == "baumgarte"
    header = ["step", "time", "newton_iterations", "newton_increment",
              "d_drift_2", "d_drift_inf", "v_drift_2", "v_drift_inf",
              "energy_Q"]
    if is_baumgarte:
        header.append("energy_U")
    rows = []
    for n, state in enumerate(trajectory):
        diag = drift.diagnostics[n - 1] if n > 0 else None
        row = [n, state.time,
               diag.newton_iterations if diag else 0,
               diag.increment_norm if diag else 0.0,
               drift.d_norm2[n], drift.d_norm_inf[n],
               drift.v_norm2[n], drift.v_norm_inf[n],
               analysis.rate_energy(assembled.systems, state,
                                    method="d_continuity")]
        if is_baumgarte:
            row.append(analysis.rate_energy(assembled.systems, state,
                                            method="baumgarte",
                                            alpha=coupling.alpha))
        rows.append(row)
    reporting.write_timeseries_csv(out / "timeseries.csv", rows, header)
    reporting.write_drift_csv(out / "drift.csv", drift)

    snap_files = _write_snapshots(out, problem, assembled, trajectory, snapshots)

    summary = {
        "problem": problem.name,
        "method": coupling.method,
        "dt_system": coupling.dt_system,
        "steps": coupling.n_steps,
        "final_time": trajectory[-1].time,
        "subdomain_dofs": [s.n_dofs for s in assembled.systems],
        "n_lambda": assembled.constraints.n_lambda,
        "terminal_d_drift_inf": float(drift.d_norm_inf[-1]),
        "terminal_v_drift_inf": float(drift.v_norm_inf[-1]),
        "max_newton_iterations": max(
            (d.newton_iterations for d in drift.diagnostics), default=0),
    }
    final = trajectory[-1]
    summary["min_nodal_value"] = min(float(d.min()) for d in final.d)
    summary["max_nodal_value"] = max(float(d.max()) for d in final.d)
    _add_reference_metrics(summary, problem, assembled, trajectory)
    reporting.write_summary_json(out / "summary.json", summary)

    if plots:
        _render_run_plots(out, problem, assembled, trajectory, drift, rows,
                          header)
    print(f"wrote {out / 'timeseries.csv'}, {out / 'summary.json'}"
          + (f", {len(snap_files)} snapshots" if snap_files else ""))
    return 0


def _add_reference_metrics(summary, problem, assembled, trajectory) -> None:
    ref = problem.reference
    if ref is None:
        return
    if isinstance(ref, SplitDofExact):
        err_c = max(
            float(np.abs(np.concatenate(s.d) - ref.concentration(s.time)).max())
            for s in trajectory
        )
        err_lam = max(
            float(np.abs(s.lam - ref.multiplier(s.time)).max())
            for s in trajectory
        )
        summary["max_abs_error_c"] = err_c
        summary["max_abs_error_lambda"] = err_lam
        return
    if callable(ref) and problem.mesh is not None:
        final = trajectory[-1]
        num = 0.0
        den = 0.0
        for system, values in zip(assembled.systems, final.d):
            dm = system.dof_map
            xs = problem.mesh.nodes[dm.free_nodes_global]
            target = np.array([float(np.squeeze(ref(x))) for x in xs])
            num += float(np.sum((values - target) ** 2))
            den += float(np.sum(target**2))
        if den > 0:
            summary["rel_l2_error_vs_reference"] = math.sqrt(num / den)


def _write_snapshots(out, problem, assembled, trajectory, count):
    if problem.mesh is None or count <= 0:
        return []
    steps = _snapshot_steps(len(trajectory) - 1, count)
    files = []
    for n in steps:
        state = trajectory[n]
        field = reporting.global_field(problem.mesh, assembled.systems,
                                       state.d, state.time)
        if problem.mesh.dimension == 1:
            target = out / f"snapshot_{n:06d}.csv"
            reporting.write_snapshot_csv_1d(target, problem.mesh, {"c": field})
        else:
            target = out / f"snapshot_{n:06d}.vtk"
            reporting.write_snapshot_vtk(target, problem.mesh, {"c": field},
                                         title=f"{problem.name} t={state.time:g}")
        files.append(target)
    return files


def _render_run_plots(out, problem, assembled, trajectory, drift, rows, header):
    from . import plots

    times = [state.time for state in trajectory]
    series = {
        "d_drift_inf": drift.d_norm_inf,
        "v_drift_inf": drift.v_norm_inf,
        "energy_Q": [row[header.index("energy_Q")] for row in rows],
    }
    plots.plot_timeseries(out / "timeseries.png", times, series)
    if problem.mesh is not None:
        final = trajectory[-1]
        field = reporting.global_field(problem.mesh, assembled.systems,
                                       final.d, final.time)
        if problem.mesh.dimension == 1:
            ref = problem.reference if callable(problem.reference) else None
            plots.plot_snapshot_1d(out / "snapshot_final.png",
                                   problem.mesh.nodes[:, 0], {"c": field},
                                   reference=(lambda x: ref([x])) if ref else None)
        else:
            plots.plot_snapshot_2d(out / "snapshot_final.png", problem.mesh,
                                   field, title=f"{problem.name} "
                                   f"t={final.time:g}")


def _run_scenario(scenario, cfg: RunConfig, out: Path, snapshots: int,
                  plots_flag: bool) -> int:
    coupling = cfg.coupling
    result = run_scenario(scenario, coupling)
    problem_f = scenario.invariant_F
    assembled_f = result.assembled["F"]
    assembled_g = result.assembled["G"]
    _warn_stability(assembled_f.systems, coupling)

    header = ["step", "time", "drift_C_inf", "min_A", "min_B", "min_C",
              "max_C"]
    rows = []
    for n, (time, (c_a, c_b, c_c)) in enumerate(zip(result.times, result.species)):
        rows.append([
            n, time, result.drift_c_inf[n],
            min(float(v.min()) for v in c_a),
            min(float(v.min()) for v in c_b),
            min(float(v.min()) for v in c_c),
            max(float(v.max()) for v in c_c),
        ])
    reporting.write_timeseries_csv(out / "timeseries.csv", rows, header)

    from .problems import recover_species

    steps = _snapshot_steps(len(result.times) - 1, snapshots)
    mesh = problem_f.mesh
    for n in steps:
        state_f = result.invariants["F"][n]
        state_g = result.invariants["G"][n]
        fields = {
            "F": reporting.global_field(mesh, assembled_f.systems,
                                        state_f.d, state_f.time),
            "G": reporting.global_field(mesh, assembled_g.systems,
                                        state_g.d, state_g.time),
        }
        # species recovery is nodal, so it applies to the merged field too
        fields["A"], fields["B"], fields["C"] = recover_species(
            scenario, fields["F"], fields["G"])
        reporting.write_snapshot_vtk(out / f"snapshot_{n:06d}.vtk", mesh,
                                     fields,
                                     title=f"{scenario.name} t={result.times[n]:g}")

    summary = {
        "problem": scenario.name,
        "method": coupling.method,
        "dt_system": coupling.dt_system,
        "steps": coupling.n_steps,
        "final_time": float(result.times[-1]),
        "n_lambda": result.constraints.n_lambda,
        "terminal_drift_C_inf": float(result.drift_c_inf[-1]),
        "min_species_value": min(
            float(v.min()) for fields in result.species
            for parts in fields for v in parts),
        "max_product_value": max(float(v.max()) for v in result.species[-1][2]),
    }
    reporting.write_summary_json(out / "summary.json", summary)

    if plots_flag:
        from . import plots

        plots.plot_timeseries(out / "timeseries.png", result.times,
                              {"drift_C_inf": result.drift_c_inf})
        state_f = result.invariants["F"][-1]
        state_g = result.invariants["G"][-1]
        full_f = reporting.global_field(mesh, assembled_f.systems, state_f.d,
                                        state_f.time)
        full_g = reporting.global_field(mesh, assembled_g.systems, state_g.d,
                                        state_g.time)
        _, _, full_c = recover_species(scenario, full_f, full_g)
        plots.plot_snapshot_2d(out / "snapshot_final.png", mesh, full_c,
                               title=f"product C, t={result.times[-1]:g}")
    print(f"wrote {out / 'timeseries.csv'}, {out / 'summary.json'}"
          + (f", {len(steps)} snapshots" if steps else ""))
    return 0


def cmd_analyze(args) -> int:
    cfg = load_run_config(args.config)
    if args.full_fixtures:
        cfg.reduced_fixtures = False
    built = cfg.build_problem()
    problem = built.invariant_F if isinstance(built, BimolecularScenario) else built
    assembled = problem.assemble(cfg.coupling)
    report = analysis.stability_report(assembled.systems, cfg.coupling)

    print(f"problem: {problem.name}   method: {cfg.coupling.method}")
    print(f"{'sub':>3} {'omega':>12} {'dt_critical':>12} {'theta':>6} "
          f"{'dt_sub':>9} {'eta':>4} {'dt_ok':>6} {'sym_K':>6}")
    for s in report.subdomains:
        crit = "inf" if math.isinf(s.dt_critical) else f"{s.dt_critical:.6g}"
        print(f"{s.subdomain:>3} {s.omega:>12.6g} {crit:>12} {s.theta:>6g} "
              f"{s.dt_sub:>9g} {s.eta:>4} {str(s.dt_ok):>6} "
              f"{str(s.symmetric_transport):>6}")
    amax = "inf" if math.isinf(report.alpha_max) else f"{report.alpha_max:.6g}"
    print(f"alpha_max = {amax}")
    if cfg.coupling.method == "baumgarte":
        print(f"alpha = {cfg.coupling.alpha:g} -> "
              + ("within bound" if report.alpha_ok else "EXCEEDS bound"))
    verdict = "stable" if report.stable else "outside proven-stability region"
    print(f"verdict: {verdict}")
    note = report.scope_note()
    if note:
        print(f"note: {note}")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        reporting.write_stability_csv(args.out / "stability.csv", report)
        print(f"wrote {args.out / 'stability.csv'}")
    if args.export_matrices:
        written = reporting.export_matrices(args.export_matrices,
                                            assembled.systems)
        print(f"wrote {len(written)} MatrixMarket files to "
              f"{args.export_matrices}")
    return 0


def cmd_convergence(args) -> int:
    if args.levels < 3:
        raise ConfigurationError("convergence study needs at least 3 levels")
    cfg = load_run_config(args.config)
    built = cfg.build_problem()
    if isinstance(built, BimolecularScenario):
        raise ConfigurationError(
            "convergence sweeps operate on single-field problems")
    base_dt = cfg.coupling.dt_system
    end_time = 1.0 if cfg.end_time is None else cfg.end_time
    if end_time <= 0.0:
        raise ConfigurationError(
            "convergence study needs a positive end_time (zero steps)")
    dts = [base_dt / 2**k for k in range(args.levels)]
    # "system" sweeps the system step at fixed subdomain steps; the
    # "proportional" mode keeps every subcycle count instead, so the whole
    # discretization refines together (plain scheme-order studies)
    base_etas = built.subcycle_counts(cfg.coupling) \
        if cfg.sweep_mode == "proportional" else None

    def level_problem(dt):
        if base_etas is None:
            return built
        return built.with_overrides(dt_subs=[dt / e for e in base_etas])

    reference = built.reference if isinstance(built.reference, SplitDofExact) \
        else None
    ref_states = None
    if reference is None:
        ref_dt = dts[-1] / 4.0
        steps = int(round(end_time / ref_dt))
        ref_cfg = _with_dt(cfg.coupling, ref_dt, steps)
        assembled = level_problem(ref_dt).assemble(ref_cfg)
        ref_traj, _ = run_problem(assembled, ref_cfg)
        ref_states = {round(s.time, 12): s for s in ref_traj}

    rows = []
    for dt in dts:
        steps = max(1, int(round(end_time / dt)))
        coupling = _with_dt(cfg.coupling, dt, steps)
        assembled = level_problem(dt).assemble(coupling)
        trajectory, _ = run_problem(assembled, coupling)
        final = trajectory[-1]
        if reference is not None:
            err = float(np.abs(np.concatenate(final.d)
                               - reference.concentration(final.time)).max())
        else:
            key = round(final.time, 12)
            if key not in ref_states:
                raise ConfigurationError(
                    f"reference trajectory has no state at t={final.time:g}; "
                    "choose an end_time divisible by every swept step")
            ref = ref_states[key]
            err = max(
                float(np.abs(a - b).max())
                for a, b in zip(final.d, ref.d)
            )
        rows.append((dt, err))
        print(f"dt={dt:<10g} steps={steps:<6d} error={err:.6e}")

    x = np.log([r[0] for r in rows])
    y = np.log([max(r[1], 1e-300) for r in rows])
    order = float(np.polyfit(x, y, 1)[0])
    print(f"observed order: {order:.3f}")

    args.out.mkdir(parents=True, exist_ok=True)
    reporting.write_timeseries_csv(args.out / "convergence.csv", rows,
                                   ["dt_system", "error"])
    reporting.write_summary_json(args.out / "convergence.json", {
        "problem": built.name,
        "end_time": end_time,
        "levels": args.levels,
        "errors": {repr(dt): err for dt, err in rows},
        "observed_order": order,
    })
    if args.plots:
        from . import plots

        plots.plot_convergence(args.out / "convergence.png",
                               [r[0] for r in rows], [r[1] for r in rows],
                               order)
    return 0


def _with_dt(coupling: CouplingConfig, dt: float, steps: int) -> CouplingConfig:
    return CouplingConfig(
        method=coupling.method,
        dt_system=dt,
        n_steps=steps,
        alpha=coupling.alpha,
        newton_max_iters=coupling.newton_max_iters,
        newton_abs_tol=coupling.newton_abs_tol,
        newton_rel_tol=coupling.newton_rel_tol,
    )


def cmd_mesh_info(args) -> int:
    mesh = load_mesh(args.mesh, format=args.format)
    kinds = {}
    for kind, _ in mesh.elements:
        kinds[kind] = kinds.get(kind, 0) + 1
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    print(f"mesh: {args.mesh}")
    print(f"  dimension: {mesh.dimension}")
    print(f"  nodes: {mesh.n_nodes}")
    print(f"  elements: {mesh.n_elements} "
          + " ".join(f"{k}={v}" for k, v in sorted(kinds.items())))
    print("  bounding box: "
          + " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(lo, hi)))
    for name, ids in mesh.boundary_sets.items():
        print(f"  set {name}: {ids.size} nodes")
    if args.partition:
        part = load_partition(args.partition, mesh)
        counts = np.bincount(part.element_to_subdomain,
                             minlength=part.subdomain_count + 1)[1:]
        print(f"  partition: {part.subdomain_count} subdomains, elements "
              + " ".join(f"{i+1}:{c}" for i, c in enumerate(counts)))
        from .decomposition import build_constraints, build_dof_maps

        dm = build_dof_maps(mesh, part)
        con = build_constraints(dm)
        print(f"  interface nodes: {dm.interface_nodes.size}, "
              f"constraint rows: {con.n_lambda}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
