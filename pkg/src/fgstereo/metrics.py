"""Disparity accuracy metrics and weighted aggregation.

Only pixels with valid ground truth are evaluated; occluded regions are not
excluded.  Estimates must be valid wherever ground truth is.
"""
from dataclasses import asdict, dataclass, field
import csv
import json
import math

import numpy as np

from .image_io import INVALID


@dataclass
class MetricsReport:
    avg_err: float
    psnr: float
    bad: float
    threshold: float = 2.0
    count: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass
class SceneRecord:
    name: str
    weight: float
    stages: dict  # stage name -> MetricsReport
    iterations: int = 0
    wall_time: float = 0.0


@dataclass
class WeightedSummary:
    scenes: list = field(default_factory=list)
    averages: dict = field(default_factory=dict)  # stage -> MetricsReport of weighted means


def _pair(est, gt):
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {gt.shape}")
    mask = np.isfinite(gt)
    if not np.isfinite(est[mask]).all():
        raise ValueError("estimate has invalid pixels where ground truth is valid")
    return est[mask] - gt[mask]


def avg_err(est, gt):
    """Mean absolute disparity error over ground-truth-valid pixels."""
    diff = _pair(est, gt)
    return float(np.abs(diff).mean()) if diff.size else 0.0


def psnr(est, gt):
    """10 log10(255^2 * count / SSE); +inf for a perfect estimate."""
    diff = _pair(est, gt)
    sse = float((diff * diff).sum())
    if sse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 * diff.size / sse)


def bad_percent(est, gt, T=2.0):
    """Percentage of evaluated pixels whose absolute error exceeds ``T``."""
    diff = _pair(est, gt)
    if diff.size == 0:
        return 0.0
    return 100.0 * float((np.abs(diff) > T).mean())


def error_map(est, gt):
    """Signed ``est - gt`` where ground truth is valid, INVALID elsewhere."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {gt.shape}")
    out = np.full(gt.shape, INVALID, dtype=np.float32)
    mask = np.isfinite(gt) & np.isfinite(est)
    out[mask] = (est[mask] - gt[mask]).astype(np.float32)
    return out


def evaluate(est, gt, T=2.0):
    count = int(np.isfinite(np.asarray(gt)).sum())
    return MetricsReport(avg_err(est, gt), psnr(est, gt), bad_percent(est, gt, T), T, count)


def weighted_average(entries):
    """sum(w * v) / sum(w) over (weight, value) pairs."""
    entries = list(entries)
    if not entries:
        raise ValueError("weighted_average needs at least one entry")
    w = np.array([e[0] for e in entries], dtype=np.float64)
    v = np.array([e[1] for e in entries], dtype=np.float64)
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    return float((w * v).sum() / w.sum())


def summarize(records):
    """Weighted per-stage averages over scene records."""
    if not records:
        raise ValueError("no scenes to summarize")
    stages = [s for s in records[0].stages if all(s in r.stages for r in records)]
    averages = {}
    for stage in stages:
        reps = [(r.weight, r.stages[stage]) for r in records]
        averages[stage] = MetricsReport(
            weighted_average((w, m.avg_err) for w, m in reps),
            weighted_average((w, m.psnr) for w, m in reps),
            weighted_average((w, m.bad) for w, m in reps),
            reps[0][1].threshold,
            sum(m.count for _, m in reps),
        )
    return WeightedSummary(list(records), averages)


# ---------------------------------------------------------- serialization

def summary_to_json(summary):
    return {
        "scenes": [
            {
                "name": r.name,
                "weight": r.weight,
                "iterations": r.iterations,
                "wall_time": r.wall_time,
                "stages": {k: m.as_dict() for k, m in r.stages.items()},
            }
            for r in summary.scenes
        ],
        "weighted_average": {k: m.as_dict() for k, m in summary.averages.items()},
    }


def summary_from_json(data):
    scenes = [
        SceneRecord(s["name"], float(s["weight"]),
                    {k: MetricsReport(**m) for k, m in s["stages"].items()},
                    int(s.get("iterations", 0)), float(s.get("wall_time", 0.0)))
        for s in data["scenes"]
    ]
    averages = {k: MetricsReport(**m) for k, m in data.get("weighted_average", {}).items()}
    return WeightedSummary(scenes, averages)


def write_json(summary, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary_to_json(summary), fh, indent=2)


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return summary_from_json(json.load(fh))


CSV_FIELDS = ["name", "stage", "weight", "avg_err", "psnr", "bad", "threshold", "iterations", "wall_time"]


def write_csv(summary, path):
    """One row per (scene, stage) plus weighted-average rows named ``WEIGHTED_AVERAGE``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_FIELDS)
        for r in summary.scenes:
            for stage, m in r.stages.items():
                wr.writerow([r.name, stage, r.weight, m.avg_err, m.psnr, m.bad, m.threshold,
                             r.iterations, r.wall_time])
        for stage, m in summary.averages.items():
            wr.writerow(["WEIGHTED_AVERAGE", stage, "", m.avg_err, m.psnr, m.bad, m.threshold, "", ""])
