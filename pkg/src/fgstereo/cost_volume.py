"""Sparse disparity cost volume and the prior disparity distribution.

Each pixel carries a contiguous integer label support ``lo .. lo + size - 1``
taken from its segment's zonal range.  Scores are zero-normalised
cross-correlations of small templates, clamped at zero.  Disparity is positive
leftward: left pixel (x, y) matches right pixel (x - d, y).
"""
from dataclasses import dataclass, field
import math
import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage, signal

from . import _accel
from ._accel import njit, prange

VAR_EPS = 1e-12
MAGIC = b"FGSCV\x01"


@dataclass
class LabelField:
    """Per-pixel vectors over contiguous label supports, zero-padded to a common width."""

    shape: tuple
    lo: np.ndarray
    size: np.ndarray
    values: np.ndarray

    @property
    def n(self):
        return self.shape[0] * self.shape[1]

    def vector(self, i):
        return self.values[i, : self.size[i]]

    def labels(self, i):
        return np.arange(self.lo[i], self.lo[i] + self.size[i])


PriorField = LabelField


@dataclass
class SparseCostVolume(LabelField):
    d_min: int = 0
    d_max: int = 0

    @property
    def scores(self):
        return self.values


@dataclass
class ZonalStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    global_range: tuple = field(default=(0, 0))


# --------------------------------------------------------------- features

def min_eigenvalue_map(img, window=3):
    """Smallest eigenvalue of the windowed 2x2 structure tensor at every pixel."""
    img = np.asarray(img, dtype=np.float64)
    gy, gx = np.gradient(img)
    sxx = ndimage.uniform_filter(gx * gx, window, mode="constant") * window * window
    syy = ndimage.uniform_filter(gy * gy, window, mode="constant") * window * window
    sxy = ndimage.uniform_filter(gx * gy, window, mode="constant") * window * window
    half_tr = 0.5 * (sxx + syy)
    disc = np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy ** 2, 0.0))
    return np.maximum(half_tr - disc, 0.0)


def detect_candidates(img, quality=0.01, min_distance=5, window=3):
    """Shi-Tomasi corners as a list of (x, y), strongest first."""
    if not 0 < quality <= 1:
        raise ValueError("quality must be in (0, 1]")
    lam = min_eigenvalue_map(img, window)
    peak = float(lam.max())
    # rounding noise in flat regions is not a corner
    if peak <= 1e-12:
        return []
    h, w = lam.shape
    ys, xs = np.nonzero(lam > quality * peak)
    order = np.lexsort((ys * w + xs, -lam[ys, xs]))
    blocked = np.zeros((h, w), dtype=bool)
    r = int(math.ceil(min_distance))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = (dx * dx + dy * dy) < min_distance * min_distance
    out = []
    for k in order:
        x, y = int(xs[k]), int(ys[k])
        if blocked[y, x]:
            continue
        out.append((x, y))
        y0, y1 = max(0, y - r), min(h, y + r + 1)
        x0, x1 = max(0, x - r), min(w, x + r + 1)
        blocked[y0:y1, x0:x1] |= disk[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r]
    return out


def _zncc(a, b):
    """ZNCC between the last axes of ``a`` and ``b`` (unclamped); flat patches give 0."""
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    va = (a * a).sum(axis=-1)
    vb = (b * b).sum(axis=-1)
    num = (a * b).sum(axis=-1)
    ok = (va > VAR_EPS) & (vb > VAR_EPS)
    out = np.zeros(np.broadcast(va, vb).shape)
    np.divide(num, np.sqrt(va * vb), out=out, where=ok)
    return out


def match_candidates(left, right, pts, d_range, window=9, min_score=0.8, min_margin=0.05):
    """Confident integer disparities at candidate points, as (x, y, d, score).

    The runner-up score ignores the labels adjacent to the best one, so a
    smooth correlation peak is not mistaken for ambiguity.
    """
    if window % 2 == 0:
        raise ValueError("window must be odd")
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    h, w = left.shape
    r = window // 2
    d_lo, d_hi = int(d_range[0]), int(d_range[1])
    out = []
    for x, y in pts:
        if y - r < 0 or y + r >= h or x - r < 0 or x + r >= w:
            continue
        ds = np.arange(d_lo, d_hi + 1)
        ds = ds[(x - ds - r >= 0) & (x - ds + r < w)]
        if ds.size == 0:
            continue
        patch = left[y - r:y + r + 1, x - r:x + r + 1].ravel()
        strip = right[y - r:y + r + 1]
        cands = np.stack([strip[:, x - d - r:x - d + r + 1].ravel() for d in ds])
        scores = _zncc(patch[None, :], cands)
        best = int(np.argmax(scores))
        others = np.abs(ds - ds[best]) > 1
        second = scores[others].max() if others.any() else -1.0
        if scores[best] >= min_score and scores[best] - second >= min_margin:
            out.append((x, y, int(ds[best]), float(scores[best])))
    return out


def _round(v):
    return int(math.floor(v + 0.5))


def _zone(mu, sigma, d_min, d_max, min_width=3):
    lo = min(max(_round(mu - sigma), d_min), d_max)
    hi = max(min(_round(mu + sigma), d_max), d_min)
    target = min(min_width, d_max - d_min + 1)
    while hi - lo + 1 < target:
        if (mu - lo <= hi - mu and lo > d_min) or hi >= d_max:
            lo -= 1
        else:
            hi += 1
    return lo, hi


def zonal_ranges(seg, matches, d_min, d_max, min_width=3):
    """Per-segment label range [round(mu - sigma), round(mu + sigma)] from the matches.

    Segments without matches fall back to the range over all matches, or the
    full [d_min, d_max] when there are none at all.
    """
    labels = seg.labels if hasattr(seg, "labels") else np.asarray(seg)
    k = int(seg.K) if hasattr(seg, "K") else int(labels.max()) + 1
    mu = np.full(k, np.nan)
    sigma = np.full(k, np.nan)
    count = np.zeros(k, dtype=np.int64)
    per_seg = [[] for _ in range(k)]
    for x, y, d, *_ in matches:
        per_seg[labels[y, x]].append(d)
    all_d = np.array([m[2] for m in matches], dtype=np.float64)
    if all_d.size:
        global_range = _zone(all_d.mean(), all_d.std(), d_min, d_max, min_width)
    else:
        global_range = (d_min, d_max)
    lo = np.full(k, global_range[0], dtype=np.int64)
    hi = np.full(k, global_range[1], dtype=np.int64)
    for s, ds in enumerate(per_seg):
        if not ds:
            continue
        ds = np.asarray(ds, dtype=np.float64)
        mu[s], sigma[s], count[s] = ds.mean(), ds.std(), ds.size
        lo[s], hi[s] = _zone(mu[s], sigma[s], d_min, d_max, min_width)
    return ZonalStats(mu, sigma, count, lo, hi, global_range)


# ------------------------------------------------------------------- NCC

def _as_xy(pixel, width):
    if isinstance(pixel, (tuple, list)):
        return int(pixel[0]), int(pixel[1])
    return int(pixel) % width, int(pixel) // width


def ncc_scores(left, right, pixel, labels, template=3):
    """Clamped ZNCC of the template at ``pixel`` against each candidate label.

    ``pixel`` is a linear index or an (x, y) pair.  Both templates use
    replicate padding at the image border; a label whose right window centre
    ``x - d`` leaves the frame scores 0.
    """
    if template % 2 == 0:
        raise ValueError("template must be odd")
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    h, w = left.shape
    r = template // 2
    x, y = _as_xy(pixel, w)
    rows = np.clip(np.arange(y - r, y + r + 1), 0, h - 1)
    cols = np.clip(np.arange(x - r, x + r + 1), 0, w - 1)
    a = left[np.ix_(rows, cols)].ravel()
    out = np.zeros(len(labels))
    for n, d in enumerate(labels):
        xr = x - int(d)
        if xr < 0 or xr > w - 1:
            continue
        b = right[np.ix_(rows, np.clip(np.arange(xr - r, xr + r + 1), 0, w - 1))].ravel()
        out[n] = max(float(_zncc(a, b)), 0.0)
    return out


def _box_sum(a, t, method):
    if method == "fft":
        return signal.fftconvolve(a, np.ones((t, t)), mode="valid")
    return sliding_window_view(a, (t, t)).sum(axis=(-2, -1))


def ncc_dense(left, right, d, template=3, method="fft"):
    """Clamped ZNCC map for a single disparity ``d``.

    ``method="fft"`` forms every window sum by frequency-domain convolution;
    ``"direct"`` sums sliding windows in the spatial domain.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    h, w = left.shape
    r = template // 2
    n = template * template
    lp = np.pad(left, r, mode="edge")
    rp = np.pad(right, r, mode="edge")
    # column j of the shifted array holds padded right column j - d
    rp = rp[:, np.clip(np.arange(w + 2 * r) - int(d), 0, w + 2 * r - 1)]
    sl = _box_sum(lp, template, method)
    sr = _box_sum(rp, template, method)
    sll = _box_sum(lp * lp, template, method)
    srr = _box_sum(rp * rp, template, method)
    slr = _box_sum(lp * rp, template, method)
    va = sll - sl * sl / n
    vb = srr - sr * sr / n
    num = slr - sl * sr / n
    ok = (va > VAR_EPS) & (vb > VAR_EPS)
    out = np.zeros((h, w))
    np.divide(num, np.sqrt(np.abs(va * vb)), out=out, where=ok)
    xs = np.arange(w)[None, :]
    inside = (xs - d >= 0) & (xs - d <= w - 1)
    out = np.where(inside, out, 0.0)
    return np.clip(out, 0.0, 1.0)


@njit(parallel=True, cache=True)
def _sparse_ncc_nb(lp, rp, lo, size, w, r, out):
    n = lo.shape[0]
    t = 2 * r + 1
    m = t * t
    for i in prange(n):
        y = i // w
        x = i - y * w
        amean = 0.0
        for u in range(t):
            for v in range(t):
                amean += lp[y + u, x + v]
        amean /= m
        va = 0.0
        for u in range(t):
            for v in range(t):
                q = lp[y + u, x + v] - amean
                va += q * q
        for l in range(size[i]):
            out[i, l] = 0.0
            xr = x - (lo[i] + l)
            if xr < 0 or xr > w - 1 or va <= 1e-12:
                continue
            bmean = 0.0
            for u in range(t):
                for v in range(t):
                    bmean += rp[y + u, xr + v]
            bmean /= m
            vb = 0.0
            num = 0.0
            for u in range(t):
                for v in range(t):
                    q = rp[y + u, xr + v] - bmean
                    vb += q * q
                    num += (lp[y + u, x + v] - amean) * q
            if vb <= 1e-12:
                continue
            s = num / math.sqrt(va * vb)
            out[i, l] = s if s > 0.0 else 0.0


def _sparse_ncc_np(lp, rp, lo, size, w, r, out):
    t = 2 * r + 1
    h = lp.shape[0] - 2 * r
    n = lo.shape[0]
    a = sliding_window_view(lp, (t, t)).reshape(h * w, t * t)
    bwin = sliding_window_view(rp, (t, t))
    bwin = bwin.reshape(bwin.shape[0], bwin.shape[1], t * t)
    ys = np.arange(n) // w
    xs = np.arange(n) % w
    for l in range(out.shape[1]):
        xr = xs - (lo + l)
        valid = (l < size) & (xr >= 0) & (xr <= w - 1)
        col = np.zeros(n)
        if valid.any():
            idx = np.nonzero(valid)[0]
            s = _zncc(a[idx], bwin[ys[idx], xr[idx]])
            col[idx] = np.maximum(s, 0.0)
        out[:, l] = col


def sparse_ncc(left, right, lo, size, template=3):
    """Clamped ZNCC scores over each pixel's label support, shape (n, max(size))."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    h, w = left.shape
    r = template // 2
    lp = np.pad(left, r, mode="edge")
    rp = np.pad(right, r, mode="edge")
    lo = np.ascontiguousarray(lo, dtype=np.int64)
    size = np.ascontiguousarray(size, dtype=np.int64)
    out = np.zeros((h * w, max(int(size.max()), 1)))
    if _accel.use_numba():
        _sparse_ncc_nb(lp, rp, lo, size, w, r, out)
    else:
        _sparse_ncc_np(lp, rp, lo, size, w, r, out)
    return out


def build_cost_volume(left, right, seg, stats, template=3, d_range=None):
    """Sparse volume whose per-pixel support is the pixel's zonal range."""
    left = np.asarray(left, dtype=np.float64)
    if np.shape(right) != left.shape or seg.labels.shape != left.shape:
        raise ValueError("left, right and segmentation must share dimensions")
    labels = seg.labels.ravel()
    lo = stats.lo[labels].astype(np.int64)
    size = (stats.hi[labels] - stats.lo[labels] + 1).astype(np.int64)
    scores = sparse_ncc(left, right, lo, size, template)
    if d_range is None:
        d_range = (int(stats.lo.min()), int(stats.hi.max()))
    return SparseCostVolume(left.shape, lo, size, scores, int(d_range[0]), int(d_range[1]))


# ----------------------------------------------------------------- prior

def prior_from_cost(vol, i):
    """Normalised scores of one pixel; uniform when every score is zero."""
    c = np.asarray(vol.vector(i), dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return np.full(c.size, 1.0 / c.size)
    return c / total


def prior_field(vol):
    """:func:`prior_from_cost` for every pixel at once."""
    mask = np.arange(vol.values.shape[1])[None, :] < vol.size[:, None]
    c = np.where(mask, vol.values, 0.0)
    total = c.sum(axis=1, keepdims=True)
    uniform = mask / vol.size[:, None]
    probs = np.where(total > 0, c / np.where(total > 0, total, 1.0), uniform)
    return LabelField(vol.shape, vol.lo.copy(), vol.size.copy(), probs)


def initial_disparity(field):
    """Per-pixel argmax of a label field (ties to the smaller label) as a float32 map."""
    mask = np.arange(field.values.shape[1])[None, :] < field.size[:, None]
    v = np.where(mask, field.values, -np.inf)
    d = field.lo + np.argmax(v, axis=1)
    return d.reshape(field.shape).astype(np.float32)


# ------------------------------------------------------------------ dump

def save_volume(vol, path):
    """Binary dump: magic, int32 header (H, W, d_min, d_max), then per pixel
    int32 lo, int32 len and ``len`` float64 scores, all little-endian."""
    h, w = vol.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4i", h, w, vol.d_min, vol.d_max))
        for i in range(h * w):
            k = int(vol.size[i])
            fh.write(struct.pack("<2i", int(vol.lo[i]), k))
            fh.write(np.ascontiguousarray(vol.values[i, :k], dtype="<f8").tobytes())


def load_volume(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a cost-volume dump")
    pos = len(MAGIC)
    h, w, d_min, d_max = struct.unpack_from("<4i", buf, pos)
    pos += 16
    n = h * w
    lo = np.empty(n, dtype=np.int64)
    size = np.empty(n, dtype=np.int64)
    rows = []
    for i in range(n):
        lo[i], size[i] = struct.unpack_from("<2i", buf, pos)
        pos += 8
        rows.append(np.frombuffer(buf, dtype="<f8", count=int(size[i]), offset=pos))
        pos += 8 * int(size[i])
    values = np.zeros((n, max(int(size.max()), 1)))
    for i, row in enumerate(rows):
        values[i, : row.size] = row
    return SparseCostVolume((h, w), lo, size, values, d_min, d_max)
