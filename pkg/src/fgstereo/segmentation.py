"""Unsupervised texture segmentation with a Gabor bank and k-means."""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import ndimage, signal

# 2 * sqrt(2) ~= 2.83: the finest wavelength; coarser ones double from here
START_WAVELENGTH = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class GaborBankConfig:
    orientations: tuple = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
    wavelengths: tuple = ()  # empty: start * 2**k below the image hypotenuse
    start_wavelength: float = START_WAVELENGTH
    bandwidth: float = 1.0
    aspect: float = 0.5

    def __post_init__(self):
        if not self.orientations:
            raise ValueError("at least one orientation is required")
        wl = tuple(self.wavelengths)
        if wl and (wl[0] < 2 or any(b <= a for a, b in zip(wl, wl[1:]))):
            raise ValueError("wavelengths must be strictly increasing and >= 2")
        if self.start_wavelength < 2:
            raise ValueError("start_wavelength must be >= 2")


@dataclass
class GaborKernel:
    wavelength: float
    orientation: float
    sigma: float
    kernel: np.ndarray = field(repr=False)


@dataclass
class SegmentationMap:
    labels: np.ndarray
    K: int


def default_wavelengths(shape, start=START_WAVELENGTH):
    """``start * 2**k`` for every k with the result below the image hypotenuse."""
    hyp = math.hypot(*shape)
    out = []
    wl = start
    while wl < hyp:
        out.append(wl)
        wl *= 2.0
    return out


def gabor_sigma(wavelength, bandwidth):
    """Gaussian envelope width for a given wavelength and octave bandwidth."""
    b = 2.0 ** bandwidth
    return wavelength / math.pi * math.sqrt(math.log(2.0) / 2.0) * (b + 1.0) / (b - 1.0)


def gabor_kernel(wavelength, orientation_deg, bandwidth=1.0, aspect=0.5, max_half=None):
    sigma = gabor_sigma(wavelength, bandwidth)
    half = int(math.ceil(3.0 * sigma / min(aspect, 1.0)))
    if max_half is not None:
        half = min(half, max_half)
    half = max(half, 1)
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    theta = math.radians(orientation_deg)
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    env = np.exp(-(xr ** 2 + (aspect * yr) ** 2) / (2.0 * sigma ** 2))
    g = env * np.exp(1j * 2.0 * math.pi * xr / wavelength)
    # remove the DC component of the real part so flat regions respond with zero
    g = g - env * (g.real.sum() / env.sum())
    return GaborKernel(wavelength, orientation_deg, sigma, g)


def gabor_bank(cfg, image_dims):
    """One complex kernel per (orientation, wavelength) pair."""
    h, w = image_dims
    if h <= 0 or w <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_dims}")
    wavelengths = list(cfg.wavelengths) or default_wavelengths((h, w), cfg.start_wavelength)
    max_half = max(h, w)
    return [gabor_kernel(wl, th, cfg.bandwidth, cfg.aspect, max_half)
            for wl in wavelengths for th in cfg.orientations]


def gabor_features(img, bank):
    """Gaussian-smoothed Gabor magnitude responses, shape (H, W, len(bank))."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    feats = np.empty((h, w, len(bank)))
    for n, gk in enumerate(bank):
        half = gk.kernel.shape[0] // 2
        padded = np.pad(img, half, mode="symmetric")
        resp = signal.fftconvolve(padded, gk.kernel, mode="valid")
        mag = np.abs(resp)
        feats[..., n] = ndimage.gaussian_filter(mag, 0.5 * gk.wavelength, mode="reflect")
    return feats


def _zscore(feats, tol=1e-9):
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    scale = np.abs(mean) + 1e-12
    keep = std > tol * np.maximum(scale, np.abs(feats).max(axis=0))
    return (feats[:, keep] - mean[keep]) / std[keep]


def segment_texture(img, bank, K=15, replicates=5, max_iter=500, seed=0, coord_weight=1.0):
    """Cluster pixels on texture features; labels ordered by descending segment size.

    Features are z-scored per dimension.  Normalised pixel coordinates (scaled
    by ``coord_weight``) are appended only when some texture feature varies; a
    textureless image is a single segment.
    """
    from sklearn.cluster import KMeans
    from threadpoolctl import threadpool_limits

    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    n = h * w
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"K={K} exceeds the pixel count {n}")
    if K == 1 or np.ptp(img) == 0.0:
        return SegmentationMap(np.zeros((h, w), dtype=np.int32), 1)
    texture = _zscore(gabor_features(img, bank).reshape(n, -1))
    if texture.shape[1] == 0:
        return SegmentationMap(np.zeros((h, w), dtype=np.int32), 1)
    yy, xx = np.mgrid[0:h, 0:w]
    coords = _zscore(np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64))
    feats = np.hstack([texture, coord_weight * coords])
    # single-threaded BLAS/OpenMP keeps the clustering independent of the worker count
    with threadpool_limits(limits=1):
        km = KMeans(n_clusters=K, init="k-means++", n_init=replicates, max_iter=max_iter,
                    random_state=seed, algorithm="lloyd")
        raw = km.fit_predict(feats)
    return SegmentationMap(*relabel_by_size(raw.reshape(h, w)))


def relabel_by_size(labels):
    """Renumber labels 0..K-1 by descending size (ties by old id); drops empty ids."""
    ids, counts = np.unique(labels, return_counts=True)
    order = np.lexsort((ids, -counts))
    lut = np.empty(int(ids.max()) + 1, dtype=np.int32)
    lut[ids[order]] = np.arange(len(ids), dtype=np.int32)
    return lut[labels], len(ids)
