"""Occlusion handling: left-right consistency, scanline fill, weighted median."""
import numpy as np

from . import _accel
from ._accel import njit, prange
from .image_io import INVALID


def _round(d):
    return np.floor(d + 0.5)


def lrc_mask(disp_left, disp_right, tol=1.0):
    """True where the left map disagrees with the right-reference map.

    ``disp_right`` is indexed by right-image pixels with the same sign
    convention, so left (x, y) is checked against right (x - d, y).
    """
    dl = np.asarray(disp_left, dtype=np.float64)
    dr = np.asarray(disp_right, dtype=np.float64)
    if dl.shape != dr.shape:
        raise ValueError("left and right maps must share dimensions")
    h, w = dl.shape
    valid = np.isfinite(dl)
    xs = np.arange(w)[None, :] - np.where(valid, _round(dl), 0).astype(np.int64)
    inside = valid & (xs >= 0) & (xs < w)
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    other = dr[rows, np.clip(xs, 0, w - 1)]
    with np.errstate(invalid="ignore"):
        agree = inside & np.isfinite(other) & (np.abs(dl - other) <= tol)
    return ~agree


def _nearest_fill(values, ok):
    """Fill positions of a 1-D array from the nearest ``ok`` entry; ties take the smaller value."""
    idx = np.nonzero(ok)[0]
    pos = np.arange(values.size)
    k = np.searchsorted(idx, pos)
    left = idx[np.clip(k - 1, 0, idx.size - 1)]
    right = idx[np.clip(k, 0, idx.size - 1)]
    has_left = k > 0
    has_right = k < idx.size
    dl = np.where(has_left, pos - left, np.iinfo(np.int64).max)
    dr = np.where(has_right, right - pos, np.iinfo(np.int64).max)
    vl, vr = values[left], values[right]
    pick = np.where(dl < dr, vl, np.where(dr < dl, vr, np.minimum(vl, vr)))
    return np.where(ok, values, pick)


def fill_occlusions(disp, mask):
    """Give each occluded pixel the disparity of its nearest non-occluded row neighbour.

    Ties between the left and right neighbour go to the smaller disparity.
    In a row with no usable pixel the nearest one in the same column is used;
    a column with none at all copies the nearest filled row.
    """
    disp = np.asarray(disp)
    mask = np.asarray(mask, dtype=bool)
    ok = ~mask & np.isfinite(disp)
    out = disp.copy()
    row_ok = ok.any(axis=1)
    if not row_ok.any():
        return out
    for y in np.nonzero(row_ok)[0]:
        out[y] = _nearest_fill(disp[y], ok[y])
    for x in range(disp.shape[1]):
        col_ok = ok[:, x]
        if col_ok.any():
            out[~row_ok, x] = _nearest_fill(disp[:, x], col_ok)[~row_ok]
        else:
            out[:, x] = _nearest_fill(out[:, x], row_ok)
    return out


@njit(parallel=True, cache=True)
def _wmedian_nb(disp, guide, radius, sigma_s, sigma_r, select, out):
    h, w = disp.shape
    side = 2 * radius + 1
    for i in prange(h * w):
        y = i // w
        x = i - y * w
        if not select[y, x]:
            out[y, x] = disp[y, x]
            continue
        vals = np.empty(side * side)
        wts = np.empty(side * side)
        m = 0
        for v in range(max(0, y - radius), min(h, y + radius + 1)):
            for u in range(max(0, x - radius), min(w, x + radius + 1)):
                if not np.isfinite(disp[v, u]):
                    continue
                diff = guide[y, x] - guide[v, u]
                vals[m] = disp[v, u]
                wts[m] = np.exp(-((u - x) ** 2 + (v - y) ** 2) / (2.0 * sigma_s * sigma_s)
                                - diff * diff / (2.0 * sigma_r * sigma_r))
                m += 1
        if m == 0:
            out[y, x] = disp[y, x]
            continue
        order = np.argsort(vals[:m], kind="mergesort")
        total = 0.0
        for j in range(m):
            total += wts[j]
        acc = 0.0
        res = vals[order[m - 1]]
        for j in range(m):
            acc += wts[order[j]]
            if acc >= 0.5 * total:
                res = vals[order[j]]
                break
        out[y, x] = res


def _wmedian_np(disp, guide, radius, sigma_s, sigma_r, select, out):
    h, w = disp.shape
    side = 2 * radius + 1
    pd = np.pad(disp, radius, mode="constant", constant_values=np.inf)
    pg = np.pad(guide, radius, mode="constant", constant_values=0.0)
    vals = np.lib.stride_tricks.sliding_window_view(pd, (side, side)).reshape(h * w, -1)
    gw = np.lib.stride_tricks.sliding_window_view(pg, (side, side)).reshape(h * w, -1)
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    spatial = ((dx ** 2 + dy ** 2) / (2.0 * sigma_s ** 2)).ravel()
    diff = guide.reshape(-1, 1) - gw
    wts = np.exp(-spatial[None, :] - diff * diff / (2.0 * sigma_r ** 2))
    finite = np.isfinite(vals)
    wts = np.where(finite, wts, 0.0)
    order = np.argsort(np.where(finite, vals, np.inf), axis=1, kind="stable")
    sv = np.take_along_axis(vals, order, axis=1)
    cw = np.cumsum(np.take_along_axis(wts, order, axis=1), axis=1)
    total = cw[:, -1:]
    k = np.argmax(cw >= 0.5 * total, axis=1)
    res = sv[np.arange(h * w), k].reshape(h, w)
    res = np.where(total.reshape(h, w) > 0, res, disp)
    out[...] = np.where(select, res, disp)


def weighted_median(disp, guide, window=7, sigma_s=3.0, sigma_r=0.1, mask=None):
    """Bilateral-weighted median of each window (smallest value reaching half the weight).

    Only pixels where ``mask`` is true are replaced (all pixels when ``mask``
    is None).  Invalid entries carry no weight.
    """
    if window % 2 == 0:
        raise ValueError("window must be odd")
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    guide = np.ascontiguousarray(guide, dtype=np.float64)
    select = np.ones(disp.shape, dtype=bool) if mask is None else np.ascontiguousarray(mask, dtype=bool)
    out = np.empty_like(disp)
    args = (disp, guide, window // 2, float(sigma_s), float(sigma_r), select, out)
    if _accel.use_numba():
        _wmedian_nb(*args)
    else:
        _wmedian_np(*args)
    return out.astype(np.float32)


def postprocess(disp_left, disp_right, guide, tol=1.0, window=7, sigma_s=3.0, sigma_r=0.1,
                median_scope="occluded"):
    """LRC mask, scanline fill, then weighted median over ``median_scope``.

    Returns ``(final_map, occlusion_mask)``.
    """
    mask = lrc_mask(disp_left, disp_right, tol)
    filled = fill_occlusions(disp_left, mask)
    if median_scope == "none":
        final = filled
    else:
        final = weighted_median(filled, guide, window, sigma_s, sigma_r,
                                mask=mask if median_scope == "occluded" else None)
    final = np.asarray(final, dtype=np.float32)
    final[~np.isfinite(final)] = INVALID
    return final, mask
