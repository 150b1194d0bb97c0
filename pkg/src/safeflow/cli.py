"""Command-line interface: run, compare, validate-config, list-scenarios.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 acceptance-check failure (only when --check is passed).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from safeflow import __version__
from safeflow.config import ConfigError, config_hash, describe, parse_config
from safeflow.constraints import ConstraintEvaluationError, EMPTY_SET, expand
from safeflow.diagnostics import compute_trace, decay_check, default_slack, divergence_proxy
from safeflow.experiments import SCENARIOS, run_projection_baseline, validate_scenario
from safeflow.integrate import FlowAbort, run, sample_prior
from safeflow.models import ModelEvaluationError
from safeflow.output import emit_outputs
from safeflow.config import resolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safeflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--scenario", help="scenario name (instead of a config file)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=None, help="worker count (1 = bitwise deterministic)")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")

    p_run = sub.add_parser("run", help="integrate the safe particle flow and emit artifacts")
    add_common(p_run)
    p_run.add_argument("--check", action="store_true", help="fail (exit 4) unless decay holds and no QP was relaxed")

    p_cmp = sub.add_parser("compare", help="safe flow vs unconstrained and projected baselines")
    add_common(p_cmp)

    p_val = sub.add_parser("validate-config", help="validate a config and print it fully resolved")
    p_val.add_argument("--config", required=True)

    sub.add_parser("list-scenarios", help="list available scenarios")
    return parser


def _resolve_inputs(args):
    if args.config:
        scenario, flow, output_dir = parse_config(args.config)
    elif args.scenario:
        if args.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {args.scenario!r} (known: {sorted(SCENARIOS)})")
        scenario, flow, output_dir = resolve({"scenario": args.scenario})
    else:
        raise ConfigError("one of --config or --scenario is required")
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            flow = replace(flow, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    out = args.out or output_dir
    if out is None:
        root = os.environ.get("SAFEFLOW_OUTPUT_ROOT", "runs")
        out = str(Path(root) / scenario.name)
    return scenario, flow, Path(out)


def _single_run(scenario, flow, label, cset, initial):
    result = run(flow, scenario.model, cset, initial)
    result.scenario_name = scenario.name
    result.label = label
    return result


def _reference_states(scenario, flow):
    if scenario.reference_sampler is None:
        return None
    rng = np.random.default_rng(flow.seed + 10_000)
    return scenario.reference_sampler(rng, max(flow.particles, 1000))


def cmd_run(args) -> int:
    scenario, flow, outdir = _resolve_inputs(args)
    if not scenario.constraints_overridden:
        report = validate_scenario(scenario)
        if not report.nonempty:
            raise ConfigError(f"scenario {scenario.name!r}: feasible set scan found no feasible points")
    cset = expand(scenario.constraints)
    initial = sample_prior(scenario.model.prior, flow.particles, flow.seed)
    result = _single_run(scenario, flow, "safe-flow", cset, initial)
    trace = compute_trace(result, cset)
    decay = decay_check(trace, flow.alpha_g, default_slack(trace)) if len(cset) else None
    reference = _reference_states(scenario, flow)
    divergence = divergence_proxy(result.final, reference) if reference is not None else None
    emit_outputs(
        result, trace, outdir,
        geometries=[c.geometry for c in scenario.constraints],
        decay=decay, divergence=divergence,
        config_hash=config_hash(scenario, flow), code_version=__version__,
    )
    if decay is not None:
        print(decay.describe())
    print(f"run complete: {len(result.snapshots)} snapshots, "
          f"{result.relaxed_total} relaxed QP events -> {outdir}")
    if args.check:
        ok = result.relaxed_total == 0 and (decay is None or decay.passed)
        if not ok:
            print("acceptance check FAILED", file=sys.stderr)
            return EXIT_CHECK
        print("acceptance check passed")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario, flow, outdir = _resolve_inputs(args)
    cset = expand(scenario.constraints)
    initial = sample_prior(scenario.model.prior, flow.particles, flow.seed)

    safe = _single_run(scenario, flow, "safe-flow", cset, initial.copy())
    unconstrained = _single_run(scenario, flow, "unconstrained", EMPTY_SET, initial.copy())
    baseline = run_projection_baseline(flow, scenario.model, scenario.constraints, initial.copy())
    baseline.scenario_name = scenario.name

    geometries = [c.geometry for c in scenario.constraints]
    rows = []
    reference = unconstrained.final
    for result in (safe, unconstrained, baseline):
        trace = compute_trace(result, cset)
        decay = decay_check(trace, flow.alpha_g, default_slack(trace)) if len(cset) else None
        # Proxy for posterior-approximation quality: divergence of each final
        # ensemble from the unconstrained flow's final ensemble.
        divergence = None
        if result.label != "unconstrained":
            divergence = divergence_proxy(result.final, reference)
        emit_outputs(
            result, trace, outdir / result.label,
            geometries=geometries, decay=decay, divergence=divergence,
            config_hash=config_hash(scenario, flow), code_version=__version__,
        )
        rows.append(
            {
                "label": result.label,
                "violation_fraction": float(trace.violation_fraction[-1]),
                "barrier_terminal": [float(v) for v in trace.h[-1]],
                "divergence_vs_unconstrained": divergence,
                "relaxed_qp_events": int(result.relaxed_total),
            }
        )

    import json

    table_path = Path(outdir) / "comparison.json"
    table_path.parent.mkdir(parents=True, exist_ok=True)
    table_path.write_text(json.dumps({"scenario": scenario.name, "rows": rows}, indent=2, sort_keys=True) + "\n")
    header = f"{'method':32s} {'violation':>10s} {'divergence':>11s} {'relaxed':>8s}"
    print(header)
    for row in rows:
        div = "-" if row["divergence_vs_unconstrained"] is None else f"{row['divergence_vs_unconstrained']:.3f}"
        print(f"{row['label']:32s} {row['violation_fraction']:10.4f} {div:>11s} {row['relaxed_qp_events']:8d}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    scenario, flow, _ = parse_config(args.config)
    print(describe(scenario, flow), end="")
    print(f"config_hash: {config_hash(scenario, flow)}")
    return EXIT_OK


def cmd_list_scenarios(_args) -> int:
    for name in sorted(SCENARIOS):
        scenario = SCENARIOS[name]()
        print(f"{name:20s} {scenario.description}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "compare": cmd_compare,
        "validate-config": cmd_validate_config,
        "list-scenarios": cmd_list_scenarios,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowAbort, ModelEvaluationError, ConstraintEvaluationError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
