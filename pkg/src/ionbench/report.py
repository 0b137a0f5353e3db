"""Plot-ready summaries of a sweep: heatmap, per-group box plots, envelope curves."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .noise import DeviceModel
from .oracles import SweepResult, expected_envelope, success_metrics

QUANTILES = ("min", "q1", "median", "q3", "max")


def boxplot_quantiles(values) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        raise ValueError("no values to summarize")
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {**dict(zip(QUANTILES, (float(x) for x in q))), "count": int(len(v))}


def group_key(sweep: SweepResult) -> tuple[str, np.ndarray]:
    """BV oracles are grouped by two-qubit count n, HS oracles by single-qubit count m."""
    if sweep.algorithm == "bv":
        return "n", np.asarray(sweep.n_2q)
    return "m", np.asarray(sweep.n_1q)


def envelope_curves(algorithm: str, device: DeviceModel, xs) -> dict[str, list[float]]:
    """Envelopes at the device's best, average and worst fidelities; SPAM held at its average."""
    avg = device.averages()
    f2 = list(device.f_2q.values())
    spam = avg["f_spam"]
    settings = {
        "best": (max(f2), max(device.f_1q)),
        "average": (avg["f_2q"], avg["f_1q"]),
        "worst": (min(f2), min(device.f_1q)),
    }
    return {
        name: [expected_envelope(algorithm, int(x), f_2q, f_1q, spam) for x in xs]
        for name, (f_2q, f_1q) in settings.items()
    }


def build_report(sweep: SweepResult, device: DeviceModel | None = None) -> dict:
    metrics = success_metrics(sweep)
    key, groups = group_key(sweep)
    success = metrics.per_oracle_success
    valid = groups >= 0
    xs = sorted(int(g) for g in np.unique(groups[valid]))
    boxes = [{key: x, **boxplot_quantiles(success[groups == x])} for x in xs]
    report = {
        "algorithm": sweep.algorithm,
        "group_by": key,
        "boxes": boxes,
        "average_success": metrics.average_success,
        "argmax_correct_count": metrics.argmax_correct_count,
    }
    if device is not None:
        report["envelope"] = {key: xs, **envelope_curves(sweep.algorithm, device, xs)}
    return report


def write_report(report: dict, sweep: SweepResult, outdir: str | Path) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    name = report["algorithm"]
    paths = {
        "json": outdir / f"{name}_report.json",
        "boxplot": outdir / f"{name}_boxplot.csv",
        "heatmap": outdir / f"{name}_heatmap.npy",
    }
    paths["json"].write_text(json.dumps(report, indent=1, sort_keys=True))
    key = report["group_by"]
    with open(paths["boxplot"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key, "count", *QUANTILES])
        for b in report["boxes"]:
            w.writerow([b[key], b["count"], *(f"{b[q]:.6g}" for q in QUANTILES)])
    if "envelope" in report:
        env = report["envelope"]
        paths["envelope"] = outdir / f"{name}_envelope.csv"
        with open(paths["envelope"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([key, "best", "average", "worst"])
            for i, x in enumerate(env[key]):
                w.writerow([x, *(f"{env[c][i]:.6g}" for c in ("best", "average", "worst"))])
    np.save(paths["heatmap"], sweep.process_matrix.astype(np.float32))
    return paths
