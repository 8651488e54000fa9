"""Evaluation metrics (PSNR / SSIM / LPIPS) and metric-report serialization.

Metrics run on post-processed predictions; column order in the CSV output
is fixed: sample_id, psnr_db, ssim, lpips.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import torch

from . import losses
from .perceptual import LpipsDistance
from .types import MetricReport

METRIC_COLUMNS = ["sample_id", "psnr_db", "ssim", "lpips"]


def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """10*log10(range^2 / MSE); identical images return +inf."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def ssim(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5), in float64."""
    p = torch.from_numpy(np.asarray(pred, dtype=np.float64))
    t = torch.from_numpy(np.asarray(target, dtype=np.float64))
    if p.dim() == 2:
        p, t = p[None], t[None]
    return float(losses.ssim(p, t, data_range=data_range))


def lpips(pred: np.ndarray, target: np.ndarray, distance: LpipsDistance) -> float:
    """Perceptual distance in metric mode (no gradients)."""
    p = torch.from_numpy(np.asarray(pred, dtype=np.float32))
    t = torch.from_numpy(np.asarray(target, dtype=np.float32))
    if p.dim() == 2:
        p, t = p[None], t[None]
    return float(distance.metric(p.unsqueeze(0), t.unsqueeze(0))[0])


def _fmt(x: float) -> str:
    return repr(float(x))


def report_to_csv(report: MetricReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for sid, p, s, l in report.per_sample:
            writer.writerow([sid, _fmt(p), _fmt(s), _fmt(l)])


def report_to_json(report: MetricReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    p, s, l = report.fold_mean
    doc = {
        "fold_id": report.fold_id,
        "n_samples": len(report.per_sample),
        "fold_mean": {"psnr_db": p, "ssim": s, "lpips": l},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_report_csv(path: Path, fold_id: int = -1) -> MetricReport:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [
            (r["sample_id"], float(r["psnr_db"]), float(r["ssim"]), float(r["lpips"]))
            for r in reader
        ]
    return MetricReport(fold_id=fold_id, per_sample=rows)


def aggregate_reports(reports: list[MetricReport]) -> dict:
    """Mean and std of fold means, one row per metric (summary-table layout)."""
    means = np.array([r.fold_mean for r in reports], dtype=np.float64)
    out = {"n_folds": len(reports), "folds": []}
    for r in reports:
        p, s, l = r.fold_mean
        out["folds"].append(
            {"fold_id": r.fold_id, "psnr_db": p, "ssim": s, "lpips": l,
             "n_samples": len(r.per_sample)}
        )
    for i, name in enumerate(["psnr_db", "ssim", "lpips"]):
        out[name] = {
            "mean": float(means[:, i].mean()),
            "std": float(means[:, i].std()),
        }
    return out
