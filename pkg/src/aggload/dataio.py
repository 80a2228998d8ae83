"""CSV storage for aggregated load data and reported counts.

Data file, one row per observation::

    transformer_id,day,time_index,time_hours,value_kva

Reported-count file, one row per transformer::

    transformer_id,reported_1,...,reported_C

Lines starting with ``#`` are comments (run manifests) and are skipped.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .model import TransformerData

DATA_HEADER = ["transformer_id", "day", "time_index", "time_hours", "value_kva"]


class DataFormatError(ValueError):
    """Malformed or inconsistent input file."""


def reported_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_reported.csv")


def _comment_lines(manifest: dict | None) -> str:
    if not manifest:
        return ""
    return "# manifest: " + json.dumps(manifest, sort_keys=True) + "\n"


def _rows(path: Path):
    """Yield ``(line_number, fields)`` for non-comment, non-blank lines."""
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, next(csv.reader([line]))


def save_data(data: list[TransformerData], path, reported_path=None, manifest: dict | None = None) -> None:
    """Write the data CSV and its companion reported-count CSV."""
    path = Path(path)
    reported_path = reported_path_for(path) if reported_path is None else Path(reported_path)
    buf = io.StringIO()
    buf.write(_comment_lines(manifest))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATA_HEADER)
    for td in data:
        n, D = td.Y.shape
        for d in range(D):
            for j in range(n):
                w.writerow([td.transformer_id, d + 1, j + 1, repr(float(td.times[j])), repr(float(td.Y[j, d]))])
    path.write_text(buf.getvalue())
    save_reported(data, reported_path, manifest=manifest)


def save_reported(data: list[TransformerData], path, manifest: dict | None = None) -> None:
    C = data[0].reported.shape[0] if data else 0
    buf = io.StringIO()
    buf.write(_comment_lines(manifest))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["transformer_id"] + [f"reported_{c + 1}" for c in range(C)])
    for td in data:
        w.writerow([td.transformer_id] + [int(v) for v in td.reported])
    Path(path).write_text(buf.getvalue())


def load_reported(path) -> dict[str, np.ndarray]:
    path = Path(path)
    rows = iter(_rows(path))
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise DataFormatError(f"{path}: no transformers") from None
    if not header or header[0] != "transformer_id" or len(header) < 2:
        raise DataFormatError(f"{path}:{lineno}: expected header transformer_id,reported_1,...")
    C = len(header) - 1
    out: dict[str, np.ndarray] = {}
    for lineno, fields in rows:
        if len(fields) != C + 1:
            raise DataFormatError(f"{path}:{lineno}: expected {C + 1} fields, got {len(fields)}")
        try:
            counts = np.array([int(v) for v in fields[1:]], dtype=np.int64)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: reported counts must be integers") from None
        if np.any(counts < 0):
            raise DataFormatError(f"{path}:{lineno}: negative reported count")
        if fields[0] in out:
            raise DataFormatError(f"{path}:{lineno}: duplicate transformer {fields[0]!r}")
        out[fields[0]] = counts
    if not out:
        raise DataFormatError(f"{path}: no transformers")
    return out


def load_data(path, reported_path=None) -> list[TransformerData]:
    """Read a data CSV (and its reported-count CSV) into transformer records."""
    path = Path(path)
    reported_path = reported_path_for(path) if reported_path is None else Path(reported_path)
    rows = iter(_rows(path))
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise DataFormatError(f"{path}: no transformers") from None
    if [h.strip() for h in header] != DATA_HEADER:
        raise DataFormatError(f"{path}:{lineno}: expected header {','.join(DATA_HEADER)}")

    obs: dict[str, dict[int, dict[int, tuple[float, float, int]]]] = {}
    for lineno, fields in rows:
        if len(fields) != 5:
            raise DataFormatError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
        tid = fields[0]
        try:
            day, tidx = int(fields[1]), int(fields[2])
            t, v = float(fields[3]), float(fields[4])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: could not parse numeric fields") from None
        if day < 1 or tidx < 1:
            raise DataFormatError(f"{path}:{lineno}: day and time_index start at 1")
        cell = obs.setdefault(tid, {}).setdefault(day, {})
        if tidx in cell:
            raise DataFormatError(f"{path}:{lineno}: duplicate observation for transformer {tid} day {day} index {tidx}")
        cell[tidx] = (t, v, lineno)
    if not obs:
        raise DataFormatError(f"{path}: no transformers")

    reported = load_reported(reported_path)
    grid: np.ndarray | None = None
    out = []
    for tid, days in obs.items():
        D = max(days)
        if sorted(days) != list(range(1, D + 1)):
            raise DataFormatError(f"{path}: transformer {tid} days are not 1..{D}")
        Y = None
        for d in range(1, D + 1):
            cell = days[d]
            n = max(cell)
            idx = sorted(cell)
            times = np.array([cell[k][0] for k in idx])
            bad_line = cell[idx[0]][2]
            if idx != list(range(1, n + 1)):
                raise DataFormatError(f"{path}:{bad_line}: transformer {tid} day {d} has gaps in time_index")
            if grid is None:
                grid = times
            elif times.shape != grid.shape or not np.array_equal(times, grid):
                mism = 0 if times.shape != grid.shape else int(np.argmax(times != grid))
                line = cell[idx[min(mism, len(idx) - 1)]][2]
                raise DataFormatError(f"{path}:{line}: time grid of transformer {tid} day {d} differs from the first grid")
            if Y is None:
                Y = np.empty((n, D))
            Y[:, d - 1] = [cell[k][1] for k in idx]
        if tid not in reported:
            raise DataFormatError(f"{reported_path}: no reported counts for transformer {tid!r}")
        out.append(TransformerData(transformer_id=tid, Y=Y, times=grid.copy(), reported=reported[tid]))
    return out
