"""Command-line interface: ``aggload {simulate,fit,htable,report}``.

Exit codes: 0 on success (a fit that hit the iteration cap still exits 0
with ``status`` set in its result), 2 on bad input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, dump_json, load_fit_config, load_fraud, load_scenario
from .counts import TooLargeError, estimate_h_table, exact_h
from .dataio import DataFormatError, load_data, reported_path_for, save_data, save_reported
from .fit import fit
from .likelihood import NumericalError
from .report import (
    SchemaError,
    csv_manifest,
    fit_result_to_dict,
    load_result,
    make_manifest,
    write_fit_outputs,
    write_report,
)
from .simulate import build_case, simulate_dataset

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _parse_counts(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"expected nonnegative counts, got {text!r}")
    return vals


def cmd_simulate(args) -> int:
    if args.config:
        scenario = load_scenario(args.config)
    else:
        scenario = build_case(args.case or 1)
    if args.seed is not None:
        scenario.seed = args.seed
    if args.replicates is not None:
        if args.replicates < 1:
            raise ConfigError("--replicates must be >= 1")
        scenario.replicates = args.replicates
    scenario = scenario.with_reported()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "data.csv"
    rep_path = reported_path_for(data_path)
    truth_path = out / "truth.json"
    scen_path = out / "scenario.json"
    fraud_path = out / "fraud.json"
    manifest = make_manifest(
        "simulate",
        config=args.config,
        outputs=[data_path, rep_path, truth_path, scen_path, fraud_path],
        seed=scenario.seed,
    )
    data = simulate_dataset(scenario)
    save_data(data, data_path, rep_path, manifest=csv_manifest(manifest, data_path.name))
    save_reported(data, rep_path, manifest=csv_manifest(manifest, rep_path.name))
    params = scenario.params()
    truth = {
        "manifest": manifest,
        "params": params.to_dict(),
        "true_counts": scenario.true_counts.tolist(),
        "reported_counts": scenario.reported_counts.tolist(),
        "typologies": {
            "time_hours": scenario.times.tolist(),
            "alpha": params.typologies(scenario.times).tolist(),
        },
    }
    dump_json(truth, truth_path)
    dump_json({"manifest": manifest, **scenario.to_dict()}, scen_path)
    dump_json({"manifest": manifest, "fraud_matrix": scenario.fraud.to_list()}, fraud_path)
    print(f"wrote {len(data)} transformers x {scenario.replicates} day(s) to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    basis, cfg = load_fit_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.b_runs is not None:
        cfg.b_runs = args.b_runs
    if args.max_iters is not None:
        cfg.max_outer_iters = args.max_iters
    if args.tol is not None:
        cfg.rel_tol = args.tol
    cfg.__post_init__()
    F = load_fraud(args.fraud)
    data = load_data(args.data, args.reported)
    result = fit(data, F, cfg, basis)
    out = Path(args.out)
    manifest = make_manifest(
        "fit",
        config=args.config,
        inputs=[args.data, args.reported or reported_path_for(args.data), args.fraud],
        outputs=[out / n for n in ("fit_result.json", "typologies.csv", "counts.csv", "aggregates.csv")],
        seed=cfg.seed,
    )
    write_fit_outputs(fit_result_to_dict(result, data, F), out, manifest)
    print(f"fit {result.status} after {result.iterations} iteration(s); loglik {result.loglik:.6f}")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_htable(args) -> int:
    F = load_fraud(args.fraud)
    R = args.reported
    if len(R) != F.num_classes:
        raise ConfigError(f"--reported has {len(R)} entries, fraud matrix has {F.num_classes} classes")
    if args.exact:
        table = exact_h(F, R, exact=True)
    else:
        table = estimate_h_table(F, R, args.b_runs, args.seed if args.seed is not None else 0)
    lines = []
    for m in sorted(table.entries):
        v = table.entries[m]
        if args.exact:
            lines.append(f"{','.join(map(str, m))}\t{v.numerator}/{v.denominator}\t{float(v):.6f}")
        else:
            lines.append(f"{','.join(map(str, m))}\t{float(v):.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        if out.suffix == ".json":
            manifest = make_manifest("htable", inputs=[args.fraud], outputs=[out], seed=table.seed)
            dump_json({"manifest": manifest, **table.to_dict()}, out)
        else:
            out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    result = load_result(args.result)
    manifest = make_manifest("report", inputs=[args.result], seed=result.get("seed"))
    paths = write_report(result, args.out, manifest)
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggload", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="scenario JSON (built-in case or fully custom)")
    p.add_argument("--case", type=int, choices=[1, 2, 3, 4], help="built-in case when no --config")
    p.add_argument("--replicates", type=int, help="days per transformer")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate typologies, variances and true counts")
    p.add_argument("--data", required=True)
    p.add_argument("--reported", help="reported-count CSV (default: <data>_reported.csv)")
    p.add_argument("--fraud", required=True)
    p.add_argument("--config", help="fit JSON with 'basis' and 'fit' sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--b-runs", type=int, dest="b_runs")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--tol", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("htable", help="tabulate H for one reported-count vector")
    p.add_argument("--fraud", required=True)
    p.add_argument("--reported", required=True, type=_parse_counts, help="e.g. 32,43")
    p.add_argument("--b-runs", type=int, default=100_000, dest="b_runs")
    p.add_argument("--seed", type=int)
    p.add_argument("--exact", action="store_true", help="enumerate exactly (small totals only)")
    p.add_argument("--out", help="write to file (.json for the full table)")
    p.set_defaults(func=cmd_htable)

    p = sub.add_parser("report", help="plots and plot-ready tables from a fit result")
    p.add_argument("--result", required=True, help="fit_result.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        ConfigError,
        DataFormatError,
        SchemaError,
        TooLargeError,
        FileNotFoundError,
        KeyError,
        ValueError,
    ) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
