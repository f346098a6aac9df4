"""Variable nodes attached to each dependency factor.

Every pixel owns one dependency factor.  Its members are the pixel itself plus
the window positions whose edge-preserving kernel coefficient reaches the
``alpha``-th percentile of that window's coefficients.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit, prange

# coefficients this close (relative to the window maximum) to the cutoff count as ties
TIE_RTOL = 1e-12


@dataclass
class KernelPatch:
    center: tuple
    offsets: np.ndarray  # (k, 2) integer (dx, dy)
    coefficients: np.ndarray


@dataclass(frozen=True)
class NeighborConfig:
    mode: str = "bilateral"
    size: int = 7
    sigma_s: float = 3.0
    sigma_r: float = 0.1
    omega: int = 3
    eps: float = 1e-4
    alpha: float = 97.0

    def __post_init__(self):
        if self.mode not in ("bilateral", "guided"):
            raise ValueError(f"unknown neighborhood mode {self.mode!r}")
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError("bilateral size must be odd")
        if self.sigma_s <= 0 or self.sigma_r <= 0 or self.eps <= 0 or self.omega < 0:
            raise ValueError("kernel parameters must be positive")
        if not 0 < self.alpha < 100:
            raise ValueError("alpha must lie in (0, 100)")


@dataclass
class NeighborStructure:
    """CSR member lists: factor k owns ``members[ptr[k]:ptr[k + 1]]``, own pixel first."""

    shape: tuple
    ptr: np.ndarray
    members: np.ndarray

    @property
    def n(self):
        return self.shape[0] * self.shape[1]

    def members_of(self, k):
        return self.members[self.ptr[k]:self.ptr[k + 1]]

    def degrees(self):
        return np.diff(self.ptr)


def _window(shape, center, radius):
    h, w = shape
    x, y = center
    xs = np.arange(max(0, x - radius), min(w, x + radius + 1))
    ys = np.arange(max(0, y - radius), min(h, y + radius + 1))
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return xx.ravel(), yy.ravel()


def bilateral_kernel(img, center, size=7, sigma_s=3.0, sigma_r=0.1):
    """Bilateral weights over the ``size`` x ``size`` window, clipped to the image."""
    img = np.asarray(img, dtype=np.float64)
    x, y = center
    xx, yy = _window(img.shape, center, size // 2)
    spatial = ((xx - x) ** 2 + (yy - y) ** 2) / (2.0 * sigma_s ** 2)
    rng = (img[y, x] - img[yy, xx]) ** 2 / (2.0 * sigma_r ** 2)
    return KernelPatch((x, y), np.stack([xx - x, yy - y], axis=1), np.exp(-spatial - rng))


def guided_kernel(img, center, omega=3, eps=1e-4):
    """Guided-filter weights over the window of radius ``omega`` centred at ``center``.

    W(m, n) = |w|^-2 * sum_k [1 + (I(m, n) - mu)(I(k) - mu) / (var + eps)], with
    the sum, mean and (population) variance all taken over that one window.
    """
    img = np.asarray(img, dtype=np.float64)
    x, y = center
    xx, yy = _window(img.shape, center, omega)
    vals = img[yy, xx]
    m = vals.size
    mu = vals.mean()
    var = ((vals - mu) ** 2).mean()
    dev_sum = (vals - mu).sum()
    coef = (m + (vals - mu) * dev_sum / (var + eps)) / (m * m)
    return KernelPatch((x, y), np.stack([xx - x, yy - y], axis=1), coef)


def _lerp(a, b, t):
    # numpy's percentile interpolation, including its t >= 0.5 branch
    if t >= 0.5:
        return b - (b - a) * (1.0 - t)
    return a + (b - a) * t


def percentile_cutoff(coefficients, alpha):
    """Linear-interpolation percentile (numpy's default method)."""
    s = np.sort(np.asarray(coefficients, dtype=np.float64))
    pos = (s.size - 1) * (alpha / 100.0)
    k = int(np.floor(pos))
    if k + 1 >= s.size:
        return float(s[-1])
    return float(_lerp(s[k], s[k + 1], pos - k))


def select_neighbors(kernel, alpha=97.0):
    """Absolute (x, y) positions whose coefficient reaches the percentile; centre first.

    Ties at the cutoff are kept.
    """
    if not 0 < alpha < 100:
        raise ValueError("alpha must lie in (0, 100)")
    coef = np.asarray(kernel.coefficients, dtype=np.float64)
    cut = percentile_cutoff(coef, alpha)
    keep = coef >= cut - TIE_RTOL * np.abs(coef).max()
    cx, cy = kernel.center
    out = [(cx, cy)]
    for (dx, dy), k in zip(kernel.offsets, keep):
        if k and (dx or dy):
            out.append((cx + int(dx), cy + int(dy)))
    return out


# ------------------------------------------------------------ hot kernels

@njit(cache=True)
def _select_row(coef, m, alpha, keep, top):
    # the interpolated percentile needs only order statistics k and k + 1,
    # i.e. the r = m - k largest values, kept in descending order in ``top``
    pos = (m - 1) * (alpha / 100.0)
    k = int(np.floor(pos))
    r = m - k
    n = 0
    lo = coef[0]
    hi = coef[0]
    for j in range(m):
        c = coef[j]
        lo = min(lo, c)
        hi = max(hi, c)
        if n < r:
            n += 1
        elif c <= top[r - 1]:
            continue
        q = n - 1
        while q > 0 and top[q - 1] < c:
            top[q] = top[q - 1]
            q -= 1
        top[q] = c
    if r == 1:
        cut = top[0]
    else:
        a = top[r - 1]
        b = top[r - 2]
        t = pos - k
        if t >= 0.5:
            cut = b - (b - a) * (1.0 - t)
        else:
            cut = a + (b - a) * t
    tol = 1e-12 * max(abs(lo), abs(hi))
    for j in range(m):
        keep[j] = coef[j] >= cut - tol


@njit(parallel=True, cache=True)
def _membership_nb(img, mode, radius, sigma_s, sigma_r, eps, alpha, mask):
    h, w = img.shape
    side = 2 * radius + 1
    for y in prange(h):
        # scratch buffers are reused across a row
        coef = np.empty(side * side)
        slot = np.empty(side * side, dtype=np.int64)
        keep = np.zeros(side * side, dtype=np.bool_)
        scratch = np.empty(side * side)
        for x in range(w):
            i = y * w + x
            m = 0
            mu = 0.0
            for v in range(max(0, y - radius), min(h, y + radius + 1)):
                for u in range(max(0, x - radius), min(w, x + radius + 1)):
                    slot[m] = (v - y + radius) * side + (u - x + radius)
                    if mode == 0:
                        dist = ((u - x) ** 2 + (v - y) ** 2) / (2.0 * sigma_s * sigma_s)
                        diff = img[y, x] - img[v, u]
                        coef[m] = np.exp(-dist - diff * diff / (2.0 * sigma_r * sigma_r))
                    else:
                        coef[m] = img[v, u]
                        mu += img[v, u]
                    m += 1
            if mode == 1:
                mu /= m
                var = 0.0
                dev = 0.0
                for j in range(m):
                    var += (coef[j] - mu) ** 2
                    dev += coef[j] - mu
                var /= m
                for j in range(m):
                    coef[j] = (m + (coef[j] - mu) * dev / (var + eps)) / (m * m)
            _select_row(coef, m, alpha, keep, scratch)
            for j in range(m):
                if keep[j]:
                    mask[i, slot[j]] = True


def _membership_np(img, mode, radius, sigma_s, sigma_r, eps, alpha, mask):
    h, w = img.shape
    side = 2 * radius + 1
    pad = np.pad(img, radius, mode="constant", constant_values=np.nan)
    win = np.lib.stride_tricks.sliding_window_view(pad, (side, side)).reshape(h * w, side * side)
    inside = np.isfinite(win)
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    if mode == 0:
        spatial = ((dx ** 2 + dy ** 2) / (2.0 * sigma_s ** 2)).ravel()
        diff = img.reshape(-1, 1) - win
        coef = np.exp(-spatial[None, :] - diff * diff / (2.0 * sigma_r ** 2))
    else:
        m = inside.sum(axis=1, keepdims=True)
        vals = np.where(inside, win, 0.0)
        mu = vals.sum(axis=1, keepdims=True) / m
        dev = np.where(inside, win - mu, 0.0)
        var = (dev * dev).sum(axis=1, keepdims=True) / m
        coef = (m + dev * dev.sum(axis=1, keepdims=True) / (var + eps)) / (m * m)
    coef = np.where(inside, coef, np.nan)
    s = np.sort(coef, axis=1)  # NaN sorts last
    m = inside.sum(axis=1)
    pos = (m - 1) * (alpha / 100.0)
    k = np.floor(pos).astype(np.int64)
    k1 = np.minimum(k + 1, m - 1)
    rows = np.arange(h * w)
    a, b, t = s[rows, k], s[rows, k1], pos - k
    cut = np.where(t >= 0.5, b - (b - a) * (1.0 - t), a + (b - a) * t)
    tol = TIE_RTOL * np.nanmax(np.abs(coef), axis=1)
    with np.errstate(invalid="ignore"):
        mask |= inside & (coef >= (cut - tol)[:, None])


def membership_mask(img, cfg):
    """Boolean (n, side*side) selection over each pixel's window offsets."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    mode = 0 if cfg.mode == "bilateral" else 1
    radius = cfg.size // 2 if mode == 0 else cfg.omega
    side = 2 * radius + 1
    mask = np.zeros((img.size, side * side), dtype=bool)
    args = (img, mode, radius, float(cfg.sigma_s), float(cfg.sigma_r), float(cfg.eps), float(cfg.alpha), mask)
    if _accel.use_numba():
        _membership_nb(*args)
    else:
        _membership_np(*args)
    return mask, radius


def build_dependency_structure(img, cfg=NeighborConfig()):
    """One dependency factor per pixel; members are the pixel then its selected neighbours."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    mask, radius = membership_mask(img, cfg)
    side = 2 * radius + 1
    centre = side * side // 2
    mask[:, centre] = True
    # column order: centre first, then the remaining offsets in raster order
    order = np.r_[centre, np.delete(np.arange(side * side), centre)]
    mask = mask[:, order]
    rows, cols = np.nonzero(mask)
    off = order[cols]
    dy = off // side - radius
    dx = off % side - radius
    members = rows + dy * w + dx
    ptr = np.zeros(h * w + 1, dtype=np.int64)
    np.cumsum(mask.sum(axis=1), out=ptr[1:])
    return NeighborStructure((h, w), ptr, members.astype(np.int64))


def write_adjacency(nbrs, path):
    """Text dump, one line per factor: ``factor: member member ...``."""
    with open(path, "w", encoding="ascii") as fh:
        for k in range(nbrs.n):
            fh.write(f"{k}: {' '.join(str(int(m)) for m in nbrs.members_of(k))}\n")
