"""CSV/JSON persistence of result records and convergence traces."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import astuple, fields
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from .runner import ResultRecord

HEADER = [f.name for f in fields(ResultRecord)]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path, header, rows):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.json")


def summarize(records: Sequence[ResultRecord]) -> List[Dict]:
    """Mean and standard error of the sum rate per (algorithm, sweep point, SNR)."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.scenario, r.algorithm, r.sweep_name, r.sweep_value, r.snr_db)].append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        rates = [r.sum_rate_bits for r in rs]
        n = len(rates)
        mean = math.fsum(rates) / n
        if n > 1:
            var = math.fsum((x - mean) ** 2 for x in rates) / (n - 1)
            stderr = math.sqrt(var / n)
        else:
            stderr = 0.0
        scenario, algorithm, sweep_name, sweep_value, snr = key
        out.append({
            "scenario": scenario,
            "algorithm": algorithm,
            "sweep_name": sweep_name,
            "sweep_value": sweep_value,
            "snr_db": snr,
            "trials": n,
            "mean_sum_rate_bits": mean,
            "stderr_sum_rate_bits": stderr,
            "mean_outer_iterations": math.fsum(r.outer_iterations for r in rs) / n,
            "converged_fraction": sum(r.converged for r in rs) / n,
        })
    return out


def emit_results(records: Iterable[ResultRecord], path) -> Path:
    """Write the record table as CSV plus a ``.summary.json`` next to it."""
    records = list(records)
    path = _write_rows(path, HEADER, (astuple(r) for r in records))
    with open(summary_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summarize(records), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"bad boolean {s!r}")
    return s == "true"


def read_results(path) -> List[ResultRecord]:
    """Parse a CSV written by :func:`emit_results` back into records."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HEADER:
            raise ValueError(f"unexpected header {header}")
        recs = []
        for row in reader:
            sc, sn, sv, snr, tr, alg, rate, it, wt, conv = row
            recs.append(ResultRecord(
                sc, sn, float(sv), float(snr), int(tr), alg, float(rate), int(it), float(wt),
                _parse_bool(conv),
            ))
    return recs


def emit_convergence_trace(trace: Sequence[float], path) -> Path:
    """``iteration,objective`` CSV for one run."""
    return _write_rows(path, ["iteration", "objective"], ((i, float(v)) for i, v in enumerate(trace)))


def read_convergence_trace(path) -> List[float]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["iteration", "objective"]:
            raise ValueError("not a convergence trace")
        return [float(obj) for _, obj in reader]
