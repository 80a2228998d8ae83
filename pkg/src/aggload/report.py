"""Fit-result serialisation, tabular outputs and static plots."""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .counts import FraudMatrix
from .fit import FitResult
from .likelihood import Workspace
from .model import ModelParams, TransformerData

REQUIRED_RESULT_FIELDS = ("params", "typologies", "transformers", "trace", "status")


class SchemaError(ValueError):
    """A fit-result file lacks required fields."""


def make_manifest(command: str, *, config=None, inputs=(), outputs=(), seed=None) -> dict:
    return {
        "command": command,
        "config": None if config is None else str(config),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def csv_manifest(manifest: dict | None, output_name: str) -> dict | None:
    """Reproducible subset of a manifest for CSV headers (no timestamp, base names)."""
    if manifest is None:
        return None
    return {
        "command": manifest["command"],
        "config": None if manifest.get("config") is None else Path(manifest["config"]).name,
        "inputs": [Path(p).name for p in manifest.get("inputs", [])],
        "output": output_name,
        "seed": manifest.get("seed"),
        "tool_version": manifest["tool_version"],
    }


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def fit_result_to_dict(
    result: FitResult, data: list[TransformerData], F: FraudMatrix, manifest: dict | None = None
) -> dict:
    p = result.params
    ws = Workspace(data, p.basis)
    curves = ws.Phi @ p.gammas.T
    transformers = []
    for i, td in enumerate(data):
        transformers.append(
            {
                "transformer_id": td.transformer_id,
                "num_consumers": td.num_consumers,
                "reported": td.reported.tolist(),
                "estimated": p.counts[i].tolist(),
                "fitted_aggregate": (curves @ p.counts[i]).tolist(),
                "observed_mean": td.Y.mean(axis=1).tolist(),
                "observed": td.Y.T.tolist(),
                "lstar": [
                    {"m": list(m), "value": _finite_or_none(v)}
                    for m, v in sorted(result.lstar_tables[i].items())
                ],
            }
        )
    return {
        "manifest": manifest,
        "status": result.status,
        "converged": result.converged,
        "iterations": result.iterations,
        "loglik": _finite_or_none(result.loglik),
        "seed": result.config.seed,
        "config": result.config.to_dict(),
        "fraud_matrix": F.to_list(),
        "params": p.to_dict(),
        "typologies": {"time_hours": ws.times.tolist(), "alpha_hat": curves.tolist()},
        "transformers": transformers,
        "trace": [
            {"iteration": it, "step": step, "loglik": _finite_or_none(v)} for it, step, v in result.trace
        ],
        "htables": [h.provenance for h in result.htables],
        "warnings": result.warnings,
    }


def _write_csv(path: Path, header: list[str], rows, manifest: dict | None) -> None:
    buf = io.StringIO()
    if manifest is not None:
        buf.write("# manifest: " + json.dumps(manifest, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def write_fit_outputs(result_dict: dict, out_dir, manifest: dict | None = None) -> list[Path]:
    """Result JSON plus typology, count-table and aggregate-overlay CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "result": out / "fit_result.json",
        "typologies": out / "typologies.csv",
        "counts": out / "counts.csv",
        "aggregates": out / "aggregates.csv",
    }
    result_dict = dict(result_dict)
    result_dict["manifest"] = manifest
    paths["result"].write_text(json.dumps(result_dict, indent=2) + "\n")

    times = result_dict["typologies"]["time_hours"]
    alpha = np.array(result_dict["typologies"]["alpha_hat"])
    C = alpha.shape[1]
    _write_csv(
        paths["typologies"],
        ["time_hours"] + [f"alpha_hat_{c + 1}" for c in range(C)],
        ([repr(t)] + [repr(float(a)) for a in row] for t, row in zip(times, alpha)),
        csv_manifest(manifest, paths["typologies"].name),
    )
    _write_csv(
        paths["counts"],
        ["transformer", "class", "reported", "estimated"],
        (
            [tr["transformer_id"], c + 1, tr["reported"][c], tr["estimated"][c]]
            for tr in result_dict["transformers"]
            for c in range(C)
        ),
        csv_manifest(manifest, paths["counts"].name),
    )
    _write_csv(
        paths["aggregates"],
        ["transformer", "time_hours", "fitted_kva", "observed_mean_kva"],
        (
            [tr["transformer_id"], repr(t), repr(f), repr(o)]
            for tr in result_dict["transformers"]
            for t, f, o in zip(times, tr["fitted_aggregate"], tr["observed_mean"])
        ),
        csv_manifest(manifest, paths["aggregates"].name),
    )
    return list(paths.values())


def load_result(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    missing = [k for k in REQUIRED_RESULT_FIELDS if k not in obj]
    if missing:
        raise SchemaError(f"{path}: missing field(s) {', '.join(missing)}")
    for k in ("time_hours", "alpha_hat"):
        if k not in obj["typologies"]:
            raise SchemaError(f"{path}: missing field typologies.{k}")
    for j, tr in enumerate(obj["transformers"]):
        for k in ("transformer_id", "fitted_aggregate", "observed_mean"):
            if k not in tr:
                raise SchemaError(f"{path}: missing field transformers[{j}].{k}")
    return obj


def write_report(result: dict, out_dir, manifest: dict | None = None) -> list[Path]:
    """Plot-ready CSVs and PNG figures from a loaded fit-result dictionary."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    times = np.array(result["typologies"]["time_hours"])
    alpha = np.array(result["typologies"]["alpha_hat"])
    C = alpha.shape[1]

    for c in range(C):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(times, alpha[:, c], color=f"C{c}")
        ax.set(xlabel="hour", ylabel="kVA", title=f"Estimated typology, class {c + 1}")
        path = out / f"typology_class{c + 1}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for c in range(C):
        ax.plot(times, alpha[:, c], label=f"class {c + 1}")
    ax.set(xlabel="hour", ylabel="kVA", title="Estimated typologies")
    ax.legend()
    path = out / "typologies_combined.png"
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    trace = [t for t in result["trace"] if t["loglik"] is not None]
    rows = [[k, t["iteration"], t["step"], repr(t["loglik"])] for k, t in enumerate(trace)]
    path = out / "loglik_trace.csv"
    _write_csv(path, ["step_index", "iteration", "step", "loglik"], rows, csv_manifest(manifest, path.name))
    written.append(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([r[0] for r in rows], [t["loglik"] for t in trace], marker=".")
    ax.set(xlabel="half-step", ylabel="log-likelihood", title="Log-likelihood trace")
    path = out / "loglik_trace.png"
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    path = out / "typologies.csv"
    _write_csv(
        path,
        ["time_hours"] + [f"alpha_hat_{c + 1}" for c in range(C)],
        ([repr(float(t))] + [repr(float(a)) for a in row] for t, row in zip(times, alpha)),
        csv_manifest(manifest, path.name),
    )
    written.append(path)

    path = out / "aggregates_overlay.csv"
    _write_csv(
        path,
        ["transformer", "time_hours", "fitted_kva", "observed_mean_kva"],
        (
            [tr["transformer_id"], repr(float(t)), repr(f), repr(o)]
            for tr in result["transformers"]
            for t, f, o in zip(times, tr["fitted_aggregate"], tr["observed_mean"])
        ),
        csv_manifest(manifest, path.name),
    )
    written.append(path)
    n_tr = len(result["transformers"])
    fig, axes = plt.subplots(n_tr, 1, figsize=(6, 2.2 * n_tr), squeeze=False, sharex=True)
    for ax, tr in zip(axes[:, 0], result["transformers"]):
        for day in tr.get("observed", []):
            ax.plot(times, day, color="0.7", lw=0.7)
        ax.plot(times, tr["observed_mean"], color="k", lw=1, label="observed mean")
        ax.plot(times, tr["fitted_aggregate"], color="C3", lw=1.5, label="fitted")
        ax.set_ylabel(f"T{tr['transformer_id']} kVA")
    axes[0, 0].legend(fontsize="small")
    axes[-1, 0].set_xlabel("hour")
    path = out / "aggregates_overlay.png"
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def params_from_result(result: dict) -> ModelParams:
    return ModelParams.from_dict(result["params"])
