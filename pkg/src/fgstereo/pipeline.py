"""End-to-end disparity estimation, dataset sweeps and report comparison.

Stage order: illumination correction, texture segmentation, feature matches
and zonal ranges, sparse cost volume, prior, dependency neighbourhoods, LBP,
MAP, then left-right check, fill and weighted median.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import glob
import io
import logging
import math
import os
import time

import numpy as np

from . import config as config_mod
from . import metrics
from .config import PipelineConfig
from .cost_volume import (build_cost_volume, detect_candidates, initial_disparity, match_candidates,
                          prior_field, zonal_ranges)
from .factor_graph import LbpTrace, build_graph, map_disparity, run_lbp
from .image_io import (INVALID, parse_calib, read_disparity, read_image, render_colormap, write_pfm,
                       write_png)
from .neighborhood import build_dependency_structure
from .postprocess import postprocess
from .preprocess import homomorphic_correct
from .segmentation import gabor_bank, segment_texture

log = logging.getLogger("fgstereo")

STAGES = ("initial", "fgs", "final")


@dataclass
class DirectionResult:
    initial: np.ndarray
    fgs: np.ndarray
    iterations: int
    converged: bool
    trace: LbpTrace
    reference: np.ndarray  # corrected reference image
    segments: object = None
    volume: object = None
    neighbors: object = None
    matches: list = field(default_factory=list)


@dataclass
class PipelineResult:
    initial: np.ndarray
    fgs: np.ndarray
    final: np.ndarray
    occlusion: np.ndarray
    iterations: int
    converged: bool
    wall_time: float
    trace: LbpTrace
    metrics: dict = field(default_factory=dict)  # stage -> MetricsReport
    paths: dict = field(default_factory=dict)
    left: DirectionResult = None


class InputError(ValueError):
    """Unusable pipeline input."""


def downsample(img, factor=4):
    """Block-mean downsampling; the image is cropped to a multiple of ``factor``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = (img.shape[0] // factor) * factor, (img.shape[1] // factor) * factor
    if h == 0 or w == 0:
        raise InputError(f"image {img.shape} too small to downsample by {factor}")
    return img[:h, :w].reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def downsample_disparity(disp, factor=4):
    """Block mean of the valid entries, scaled by ``1 / factor``; empty blocks are invalid."""
    disp = np.asarray(disp, dtype=np.float64)
    h, w = (disp.shape[0] // factor) * factor, (disp.shape[1] // factor) * factor
    blocks = disp[:h, :w].reshape(h // factor, factor, w // factor, factor)
    valid = np.isfinite(blocks)
    count = valid.sum(axis=(1, 3))
    total = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
    out = np.full(count.shape, INVALID, dtype=np.float32)
    ok = count > 0
    out[ok] = (total[ok] / count[ok] / factor).astype(np.float32)
    return out


def estimate_direction(left, right, ndisp, cfg):
    """Initial (prior argmax) and FGS (LBP MAP) maps with ``left`` as the reference."""
    if cfg.homomorphic:
        hc = cfg.homomorphic_config()
        left_c, right_c = homomorphic_correct(left, hc), homomorphic_correct(right, hc)
    else:
        left_c, right_c = np.asarray(left, dtype=np.float64), np.asarray(right, dtype=np.float64)
    d_max = ndisp - 1
    bank = gabor_bank(cfg.gabor_config(), left_c.shape)
    seg = segment_texture(left_c, bank, cfg.segments, cfg.kmeans_replicates, cfg.kmeans_max_iter,
                          cfg.seed, cfg.coord_weight)
    pts = detect_candidates(left_c, cfg.corner_quality, cfg.corner_min_distance)
    matches = match_candidates(left_c, right_c, pts, (0, d_max), cfg.match_window,
                               cfg.match_min_score, cfg.match_min_margin)
    stats = zonal_ranges(seg, matches, 0, d_max, cfg.zone_min_width)
    vol = build_cost_volume(left_c, right_c, seg, stats, cfg.template, d_range=(0, d_max))
    prior = prior_field(vol)
    initial = initial_disparity(prior)
    nbrs = build_dependency_structure(left_c, cfg.neighbor_config())
    graph = build_graph(prior, nbrs)
    trace = LbpTrace()
    post, iterations, converged = run_lbp(graph, cfg.lbp_config(), trace)
    log.info("segments=%d matches=%d mean-degree=%.2f lbp-iterations=%d converged=%s",
             seg.K, len(matches), float(np.diff(nbrs.ptr).mean()), iterations, converged)
    return DirectionResult(initial, map_disparity(post), iterations, converged, trace, left_c,
                           seg, vol, nbrs, matches)


def estimate(left, right, ndisp, cfg=PipelineConfig()):
    """Run both directions and post-processing on in-memory images."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape:
        raise InputError(f"stereo pair dimensions differ: {left.shape} vs {right.shape}")
    if ndisp < 1:
        raise InputError("ndisp must be >= 1")
    t0 = time.perf_counter()
    lres = estimate_direction(left, right, ndisp, cfg)
    if cfg.lrc:
        # right-reference map: mirror and swap the pair, then mirror the result back
        rres = estimate_direction(right[:, ::-1], left[:, ::-1], ndisp, cfg)
        disp_right = rres.fgs[:, ::-1]
        final, occ = postprocess(lres.fgs, disp_right, lres.reference, cfg.lrc_tol, cfg.median_window,
                                 cfg.bf_sigma_s, cfg.bf_sigma_r, cfg.median_scope)
    else:
        occ = np.zeros(left.shape, dtype=bool)
        final = lres.fgs.copy()
    return PipelineResult(lres.initial, lres.fgs, final, occ, lres.iterations, lres.converged,
                          time.perf_counter() - t0, lres.trace, left=lres)


def _error_png(err, T):
    return render_colormap(np.abs(err), (0.0, 4.0 * max(T, 0.5)), cmap="hot")


def run_pipeline(left_path, right_path, calib_path, cfg=PipelineConfig(), out_dir=".",
                 gt_path=None, gt_scale=1.0, name=None, weight=1.0):
    """Estimate disparity for one pair and write every artifact into ``out_dir``."""
    for p in (left_path, right_path):
        if not os.path.exists(p):
            raise InputError(f"missing input image {p}")
    if calib_path is None or not os.path.exists(calib_path):
        raise InputError(f"missing calibration file {calib_path}")
    calib = parse_calib(calib_path)
    left = read_image(left_path, cfg.gray_weights)
    right = read_image(right_path, cfg.gray_weights)
    if left.shape != right.shape:
        raise InputError(f"stereo pair dimensions differ: {left.shape} vs {right.shape}")
    ndisp = calib.ndisp
    gt = read_disparity(gt_path, gt_scale) if gt_path else None
    if cfg.quarter:
        left, right = downsample(left), downsample(right)
        ndisp = max(1, int(math.ceil(ndisp / 4.0)))
        if gt is not None:
            gt = downsample_disparity(gt)
    if gt is not None and gt.shape != left.shape:
        raise InputError(f"ground truth {gt.shape} does not match images {left.shape}")

    res = estimate(left, right, ndisp, cfg)
    os.makedirs(out_dir, exist_ok=True)
    maps = {"initial": res.initial, "fgs": res.fgs, "final": res.final}
    for stage, disp in maps.items():
        pfm = os.path.join(out_dir, f"disp_{stage}.pfm")
        write_pfm(disp, pfm)
        write_png(render_colormap(disp, (0, ndisp - 1)), os.path.join(out_dir, f"disp_{stage}.png"))
        res.paths[stage] = pfm
    write_png(np.where(res.occlusion, 255, 0).astype(np.uint8)[..., None].repeat(3, axis=2),
              os.path.join(out_dir, "occlusion.png"))
    res.trace.write_csv(os.path.join(out_dir, "trace.csv"))
    config_mod.save(cfg, os.path.join(out_dir, "config.txt"))

    name = name or os.path.basename(os.path.dirname(os.path.abspath(left_path))) or "scene"
    if gt is not None:
        for stage, disp in maps.items():
            err = metrics.error_map(disp, gt)
            write_pfm(err, os.path.join(out_dir, f"error_{stage}.pfm"))
            write_png(_error_png(err, cfg.bad_threshold), os.path.join(out_dir, f"error_{stage}.png"))
            res.metrics[stage] = metrics.evaluate(disp, gt, cfg.bad_threshold)
        _check_ordering(name, res.metrics)
        record = metrics.SceneRecord(name, weight, res.metrics, res.iterations, res.wall_time)
        summary = metrics.summarize([record])
        metrics.write_json(summary, os.path.join(out_dir, "metrics.json"))
        metrics.write_csv(summary, os.path.join(out_dir, "metrics.csv"))
    return res


def _check_ordering(name, reports):
    a = [reports[s].avg_err for s in STAGES if s in reports]
    if len(a) == 3 and not (a[2] <= a[1] <= a[0]):
        log.warning("%s: avg_err not monotone over stages (initial %.3f, fgs %.3f, final %.3f)",
                    name, *a)


# ---------------------------------------------------------------- datasets

def read_weights(path):
    """Scene weights from ``name weight`` lines (comma or whitespace separated, # comments)."""
    weights = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].replace(",", " ").split()
            if not line:
                continue
            if len(line) != 2:
                raise ValueError(f"{path}: bad weight line {raw.strip()!r}")
            weights[line[0]] = float(line[1])
    return weights


def default_weights_path():
    return os.path.join(os.path.dirname(__file__), "data", "middlebury_v3_weights.txt")


def _first(pattern_dir, names):
    for n in names:
        hits = sorted(glob.glob(os.path.join(pattern_dir, n)))
        if hits:
            return hits[0]
    return None


def find_scene(path):
    """Locate (left, right, calib, gt) in a Middlebury-style scene directory."""
    left = _first(path, ["im0.png", "im0.pgm", "im0.ppm", "im0.*"])
    right = _first(path, ["im1.png", "im1.pgm", "im1.ppm", "im1.*"])
    calib = _first(path, ["calib.txt"])
    gt = _first(path, ["disp0GT.pfm", "disp0.pfm", "gt.pfm"])
    return left, right, calib, gt


def _scene_job(args):
    name, files, cfg, out_dir, weight = args
    _configure_worker()
    left, right, calib, gt = files
    res = run_pipeline(left, right, calib, cfg, out_dir, gt_path=gt, name=name, weight=weight)
    return metrics.SceneRecord(name, weight, res.metrics, res.iterations, res.wall_time)


def _configure_worker():
    from ._accel import configure_threads

    configure_threads()


def run_dataset(root, cfg=PipelineConfig(), out_dir=".", weights_path=None, workers=None):
    """Run every scene under ``root`` and aggregate with per-scene weights."""
    weights = read_weights(weights_path or default_weights_path())
    jobs = []
    for entry in sorted(os.listdir(root)):
        path = os.path.join(root, entry)
        if not os.path.isdir(path):
            continue
        files = find_scene(path)
        if not all(files):
            missing = [k for k, f in zip(("im0", "im1", "calib", "gt"), files) if not f]
            log.warning("skipping scene %s: missing %s", entry, ", ".join(missing))
            continue
        if entry not in weights:
            log.warning("scene %s has no weight entry; using 1", entry)
        jobs.append((entry, files, cfg, os.path.join(out_dir, entry), weights.get(entry, 1.0)))
    if not jobs:
        raise InputError(f"no usable scenes under {root}")
    if workers is None:
        workers = int(os.environ.get("FGSTEREO_SCENE_WORKERS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_scene_job, jobs))
    else:
        records = [_scene_job(j) for j in jobs]
    summary = metrics.summarize(records)
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_json(summary, os.path.join(out_dir, "summary.json"))
    metrics.write_csv(summary, os.path.join(out_dir, "summary.csv"))
    return summary


# ----------------------------------------------------------------- compare

METRIC_KEYS = ("avg_err", "psnr", "bad")


def compare(report_paths, out=None):
    """Per-scene, per-stage metric deltas of each report against the first, as CSV text."""
    if len(report_paths) < 2:
        raise ValueError("compare needs at least two reports")
    reports = [metrics.read_json(p) for p in report_paths]
    base = {r.name: r for r in reports[0].scenes}
    for path, rep in zip(report_paths[1:], reports[1:]):
        names = {r.name for r in rep.scenes}
        if names != set(base):
            only_a = sorted(set(base) - names)
            only_b = sorted(names - set(base))
            raise ValueError(f"scene sets differ between {report_paths[0]} and {path}: "
                             f"only in first {only_a}, only in second {only_b}")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["report", "scene", "stage", "metric", "base", "value", "delta"])
    for path, rep in zip(report_paths[1:], reports[1:]):
        for rec in rep.scenes:
            ref = base[rec.name]
            for stage, m in rec.stages.items():
                if stage not in ref.stages:
                    continue
                for key in METRIC_KEYS:
                    a, b = getattr(ref.stages[stage], key), getattr(m, key)
                    delta = 0.0 if a == b else b - a
                    wr.writerow([os.path.basename(path), rec.name, stage, key, a, b, delta])
    text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
