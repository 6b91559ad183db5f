"""Metrics comparing predicted tumor densities against reference
simulations: thresholded DICE overlap, masked MAE, per-tissue MAE, and
aggregate report emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volumes import Anatomy, ScalarField3D

# Density above this value counts as tumor for masking purposes; a strict
# "> 0" would let denormal noise define the mask.
TUMOR_MASK_EPS = 1e-5

HIST_BIN_WIDTH = 0.02

DICE_THRESHOLDS = (0.2, 0.4, 0.8)


@dataclass
class MetricReport:
    """Per-sample metric records plus aggregate statistics and histograms."""

    records: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def dice(a: ScalarField3D, b: ScalarField3D, u_c: float) -> float:
    """Thresholded overlap 2|X n Y| / (|X| + |Y|) with X = {a > u_c},
    Y = {b > u_c}. Two empty sets count as perfect agreement (1.0); a single
    empty set scores 0."""
    if a.dims != b.dims:
        raise ValueError(f"dim mismatch: {a.dims} vs {b.dims}")
    x = a.data > u_c
    y = b.data > u_c
    nx, ny = int(x.sum()), int(y.sum())
    if nx == 0 and ny == 0:
        return 1.0
    inter = int(np.logical_and(x, y).sum())
    return 2.0 * inter / (nx + ny)


def mae_masked(pred: ScalarField3D, sim: ScalarField3D, mask: np.ndarray) -> float:
    """Mean absolute error over the masked voxels."""
    if pred.data.shape != sim.data.shape:
        raise ValueError(f"dim mismatch: {pred.dims} vs {sim.dims}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.data.shape:
        raise ValueError("mask shape mismatch")
    if not np.any(mask):
        raise ValueError("empty mask")
    return float(np.mean(np.abs(pred.data[mask] - sim.data[mask])))


def tissue_masks(anatomy: Anatomy) -> dict[str, np.ndarray]:
    """Dominant-tissue masks: argmax of (wm, gm, csf) per voxel with ties
    going to WM, restricted to voxels carrying any tissue at all."""
    stack = np.stack([anatomy.wm.data, anatomy.gm.data, anatomy.csf.data])
    present = stack.sum(axis=0) > 0
    best = np.argmax(stack, axis=0)  # argmax takes the first maximum: ties -> WM
    return {
        "wm": present & (best == 0),
        "gm": present & (best == 1),
        "csf": present & (best == 2),
    }


def per_tissue_mae(pred: ScalarField3D, sim: ScalarField3D, anatomy: Anatomy) -> tuple[dict[str, float], list[str]]:
    """MAE within each dominant-tissue class. Absent classes are omitted
    from the result and reported in the flags list."""
    if pred.dims != anatomy.dims or sim.dims != anatomy.dims:
        raise ValueError("dims must match the anatomy")
    out: dict[str, float] = {}
    flags: list[str] = []
    for name, mask in tissue_masks(anatomy).items():
        if not np.any(mask):
            flags.append(f"{name} absent")
            continue
        out[name] = mae_masked(pred, sim, mask)
    return out, flags


def evaluate_set(pairs, anatomies) -> MetricReport:
    """Per-sample metrics and aggregates for (prediction, simulation) pairs.

    ``pairs`` is a sequence of (pred, sim) fields; ``anatomies`` the
    matching anatomy for each pair. Ordering of records follows the input;
    aggregation uses exact (compensated) summation so it is independent of
    ordering.
    """
    pairs = list(pairs)
    anatomies = list(anatomies)
    if not pairs:
        raise ValueError("empty pair list")
    if len(anatomies) != len(pairs):
        raise ValueError("need one anatomy per pair")

    report = MetricReport()
    for i, ((pred, sim), anat) in enumerate(zip(pairs, anatomies)):
        rec: dict = {"index": i}
        for t in DICE_THRESHOLDS:
            rec[f"dice@{t}"] = dice(pred, sim, t)
        tumor_mask = sim.data > TUMOR_MASK_EPS
        if np.any(tumor_mask):
            rec["mae_tumor"] = mae_masked(pred, sim, tumor_mask)
        else:
            rec["mae_tumor"] = math.nan
            report.flags.append(f"sample {i}: empty tumor mask")
        tissue, flags = per_tissue_mae(pred, sim, anat)
        for name in ("wm", "gm", "csf"):
            rec[f"mae_{name}"] = tissue.get(name, math.nan)
        report.flags.extend(f"sample {i}: {f}" for f in flags)
        report.records.append(rec)

    metric_names = [k for k in report.records[0] if k != "index"]
    for m in metric_names:
        vals = [r[m] for r in report.records if not math.isnan(r[m])]
        if not vals:
            report.aggregates[m] = {"mean": math.nan, "sd": math.nan, "n": 0}
            continue
        n = len(vals)
        mean = math.fsum(vals) / n
        var = math.fsum((v - mean) ** 2 for v in vals) / n
        report.aggregates[m] = {"mean": mean, "sd": math.sqrt(var), "n": n}
        edges = np.arange(0.0, 1.0 + HIST_BIN_WIDTH, HIST_BIN_WIDTH)
        counts, _ = np.histogram(np.clip(vals, 0.0, 1.0), bins=edges)
        report.histograms[m] = {"edges": edges.tolist(), "counts": counts.tolist()}
    return report


def write_report(report: MetricReport, out_dir, config_echo: dict | None = None) -> tuple[Path, Path]:
    """Emit report.csv (one row per sample) and report.json (aggregates)."""
    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    cols = list(report.records[0].keys())
    with open(csv_path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        for rec in report.records:
            wr.writerow(rec)
    json_path = out / "report.json"
    payload = {
        "tool_version": __version__,
        "n_samples": len(report.records),
        "aggregates": report.aggregates,
        "histograms": report.histograms,
        "flags": report.flags,
        "config": config_echo or {},
    }
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path, json_path
