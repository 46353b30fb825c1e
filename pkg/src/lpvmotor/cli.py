"""Command-line front end: synthesize, simulate, compare, verify.

Exit codes: 0 success, 1 failed verification or comparison gate, 2 config
or usage error, 3 synthesis infeasible, 4 SDP solver failure, 5 simulation
divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, ToolkitConfig, default_config, dump_config, load_config
from .lmi_synthesis import (
    SolverFailureError,
    SynthesisInfeasibleError,
    load_artifact,
    save_artifact,
    synthesize,
    verify_solution,
)
from .simulation import FocPiGains, SimTrace, metrics, simulate

EXIT_OK = 0
EXIT_GATE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_DIVERGED = 5


def _out_dir(config: ToolkitConfig, override: str | None) -> Path:
    path = override or os.environ.get("LPVMOTOR_OUTDIR") or config.output_dir
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _refined(counts: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple(2 * c - 1 if c > 1 else c for c in counts)


def cmd_synthesize(args) -> int:
    config = load_config(args.config)
    problem = config.synthesis_problem(robust=args.robust)
    out = _out_dir(config, args.output_dir)

    started = time.perf_counter()
    solution = synthesize(problem)
    elapsed = time.perf_counter() - started

    solution.meta = {
        "config": str(args.config),
        "robust": bool(args.robust),
        "b1_physical": config.schedule.b1_physical,
    }
    kind = "robust" if args.robust else "nominal"
    artifact_path = Path(args.output) if args.output else out / f"controller_{kind}.json"
    save_artifact(solution, artifact_path)

    report_lines = [
        f"synthesis ({kind})",
        f"  gamma: {solution.gamma:.9g}",
        f"  epsilon: {solution.epsilon}",
        f"  grid: {solution.grid_counts}, rate vertices: {solution.info['n_rate_vertices']}",
        f"  solver: {solution.info['solver']} ({solution.info['status']})",
        f"  wall time: {elapsed:.1f} s",
        f"  training LMI margin: {solution.info['training_lmi_margin']:.3e}",
        f"  training coupling margin: {solution.info['training_coupling_margin']:.3e}",
        f"  artifact: {artifact_path}",
    ]

    verified = True
    if not args.skip_verify:
        counts = _refined(solution.grid_counts)
        report = verify_solution(solution, counts)
        verified = report.passed
        report_lines.append(str(report))

    report_doc = {
        "kind": kind,
        "gamma": solution.gamma,
        "epsilon": solution.epsilon,
        "wall_time_s": elapsed,
        "info": solution.info,
        "artifact": str(artifact_path),
        "verified": verified,
    }
    (out / f"synthesis_report_{kind}.json").write_text(
        json.dumps(report_doc, indent=1, sort_keys=True) + "\n"
    )
    text = "\n".join(report_lines)
    (out / f"synthesis_report_{kind}.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK if verified else EXIT_GATE


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.scenario not in config.scenarios:
        raise ConfigError(
            f"scenario {args.scenario!r} not in config "
            f"(available: {sorted(config.scenarios)})"
        )
    scenario = config.scenarios[args.scenario]
    out = _out_dir(config, args.output_dir)

    if args.baseline_pi:
        controller = FocPiGains()
        tag = "foc-pi"
    else:
        if not args.artifact:
            raise ConfigError("either --artifact PATH or --baseline-pi is required")
        controller = load_artifact(args.artifact)
        n = controller.basis.B2.shape[0]
        if n != 4:
            raise ConfigError(
                f"artifact {args.artifact} has state dimension {n}, "
                f"config plant has 4"
            )
        tag = "lpv-robust" if controller.is_robust else "lpv-nominal"

    trace = simulate(scenario, controller, config.motor)
    stem = f"{scenario.name}_{tag}"
    trace.to_csv(out / f"{stem}.csv")
    trace.to_long_csv(out / f"{stem}_long.csv")
    report = metrics(trace)
    doc = report.as_dict()
    doc["scenario"] = scenario.name
    doc["scenario_hash"] = trace.scenario_hash
    doc["controller"] = tag
    (out / f"{stem}_metrics.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    print(f"trace: {out / (stem + '.csv')}")
    print(f"metrics: {out / (stem + '_metrics.json')}")
    if trace.divergent:
        print(f"DIVERGED at t={trace.abort_time:.6g} s", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _format_compare(rows: list[dict]) -> str:
    lines = ["comparison (first trace is the baseline for deltas)"]
    for row in rows:
        lines.append(f"  [{row['controller']}] {row['file']}")
        overall = row["metrics"]["overall"]
        lines.append(
            f"    overall: rms {overall['rms_rpm']:.4g} rpm, "
            f"itae {overall['itae']:.4g}, peak {overall['peak_error_rpm']:.4g} rpm"
        )
        for seg in row["metrics"]["segments"]:
            lines.append(
                f"    step {seg['from_rpm']:.0f}->{seg['to_rpm']:.0f} rpm @ {seg['t_step']:g} s: "
                f"overshoot {seg['overshoot_pct']:.3g}%, settle {seg['settling_time_s']:.4g} s, "
                f"rise {seg['rise_time_s']:.4g} s"
            )
        for dist in row["metrics"]["disturbances"]:
            lines.append(
                f"    disturbance @ {dist['t_event']:g} s: peak {dist['peak_error_rpm']:.4g} rpm, "
                f"itae {dist['itae']:.4g}"
            )
    return "\n".join(lines)


def cmd_compare(args) -> int:
    traces = []
    for path in args.traces:
        try:
            traces.append(SimTrace.from_csv(path))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read trace {path}: {exc}") from exc

    hashes = {t.scenario_hash for t in traces}
    if len(hashes) != 1:
        detail = ", ".join(
            f"{Path(p).name}={t.scenario_hash}" for p, t in zip(args.traces, traces)
        )
        print(f"refusing to compare traces from different scenarios: {detail}",
              file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    for path, trace in zip(args.traces, traces):
        rows.append({
            "file": str(path),
            "controller": trace.controller_label,
            "divergent": trace.divergent,
            "metrics": metrics(trace).as_dict(),
        })
    base = rows[0]["metrics"]["overall"]
    for row in rows:
        row["delta_overall"] = {
            key: row["metrics"]["overall"][key] - base[key] for key in base
        }

    doc = {"scenario_hash": hashes.pop(), "traces": rows}
    text = _format_compare(rows)
    print(text)
    if args.output:
        Path(args.output).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(f"report: {args.output}")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = load_config(args.config)
    solution = load_artifact(args.artifact)
    if args.grid:
        try:
            counts = tuple(int(c) for c in args.grid.split(","))
        except ValueError as exc:
            raise ConfigError(f"--grid must be three comma-separated integers: {exc}")
        if len(counts) != 3:
            raise ConfigError("--grid must be three comma-separated integers")
    else:
        counts = _refined(solution.grid_counts)
    report = verify_solution(solution, counts, rate_samples=args.rate_samples)
    print(report)
    out = _out_dir(config, args.output_dir)
    doc = {
        "passed": report.passed,
        "threshold": report.threshold,
        "worst_lmi_margin": report.worst_lmi_margin,
        "worst_coupling_margin": report.worst_coupling_margin,
        "grid_counts": list(report.grid_counts),
        "n_points": report.n_points,
        "n_failures": len(report.failures),
    }
    (out / "verify_report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK if report.passed else EXIT_GATE


def cmd_init_config(args) -> int:
    path = Path(args.path)
    if path.exists() and not args.force:
        raise ConfigError(f"{path} exists; use --force to overwrite")
    dump_config(default_config(), path)
    print(f"wrote default config: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpvmotor",
        description="Gain-scheduled LPV speed-control toolkit for surface PMSMs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("synthesize", help="solve the controller SDP and save an artifact")
    p_syn.add_argument("config")
    p_syn.add_argument("--robust", action="store_true",
                       help="include the norm-bounded uncertainty channels")
    p_syn.add_argument("--output", help="artifact path (default: <out>/controller_<kind>.json)")
    p_syn.add_argument("--output-dir", help="override the config output directory")
    p_syn.add_argument("--skip-verify", action="store_true",
                       help="skip the refined-grid verification pass")
    p_syn.set_defaults(func=cmd_synthesize)

    p_sim = sub.add_parser("simulate", help="run one scenario and export trace + metrics")
    p_sim.add_argument("config")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--artifact", help="controller artifact JSON")
    p_sim.add_argument("--baseline-pi", action="store_true",
                       help="use the field-oriented PI baseline instead of an artifact")
    p_sim.add_argument("--output-dir", help="override the config output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="side-by-side metrics of traces from one scenario")
    p_cmp.add_argument("traces", nargs="+")
    p_cmp.add_argument("--output", help="write the machine-readable report here")
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="re-check an artifact on a denser grid")
    p_ver.add_argument("config")
    p_ver.add_argument("--artifact", required=True)
    p_ver.add_argument("--grid", help="comma-separated grid counts, e.g. 9,9,5")
    p_ver.add_argument("--rate-samples", type=int, default=2)
    p_ver.add_argument("--output-dir", help="override the config output directory")
    p_ver.set_defaults(func=cmd_verify)

    p_init = sub.add_parser("init-config", help="write the default configuration file")
    p_init.add_argument("path")
    p_init.add_argument("--force", action="store_true")
    p_init.set_defaults(func=cmd_init_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SynthesisInfeasibleError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
