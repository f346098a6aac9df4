"""Synthetic stereo scenes with known disparity."""
import numpy as np
from scipy import ndimage


def noise_texture(shape, seed, sigma=0.0):
    rng = np.random.default_rng(seed)
    t = rng.random(shape)
    if sigma > 0:
        t = ndimage.gaussian_filter(t, sigma)
        t = (t - t.min()) / (t.max() - t.min())
    return t


def constant_shift(n=64, shift=5, seed=0, sigma=0.0):
    """Left/right pair with right(x - shift) = left(x)."""
    base = noise_texture((n, n + shift), seed, sigma)
    return base[:, :n], base[:, shift:shift + n]


def two_level(n=64, seed=0, d_bg=5, d_fg=10, box=(22, 44, 16, 48), fg_sigma=1.0):
    """Fronto-parallel foreground rectangle over a background plane.

    The background is white noise, the foreground a smoother noise so the
    two layers differ in texture.  Returns (left, right, gt).
    """
    x0, x1, y0, y1 = box
    rng = np.random.default_rng(seed)
    bg = rng.random((n, n + 2 * d_fg))
    fg = ndimage.gaussian_filter(rng.random((n, n + 2 * d_fg)), fg_sigma)
    fg = (fg - fg.min()) / (fg.max() - fg.min())
    xs = np.arange(n)
    rows = ((np.arange(n) >= y0) & (np.arange(n) < y1))[:, None]
    in_left = ((xs >= x0) & (xs < x1))[None, :]
    in_right = ((xs + d_fg >= x0) & (xs + d_fg < x1))[None, :]
    left = np.where(rows & in_left, fg[:, xs], bg[:, xs])
    right = np.where(rows & in_right, fg[:, xs + d_fg], bg[:, xs + d_bg])
    gt = np.where(rows & in_left, d_fg, d_bg).astype(np.float32)
    return left, right, gt


def discontinuity_band(gt, width=2):
    """Pixels within ``width`` px of a disparity jump (both sides)."""
    jump = np.zeros(gt.shape, dtype=bool)
    dx = gt[:, 1:] != gt[:, :-1]
    dy = gt[1:, :] != gt[:-1, :]
    jump[:, 1:] |= dx
    jump[:, :-1] |= dx
    jump[1:, :] |= dy
    jump[:-1, :] |= dy
    if width > 1:
        jump = ndimage.binary_dilation(jump, iterations=width - 1)
    return jump


def write_scene(directory, left, right, ndisp, gt=None):
    """Middlebury v3 style scene directory (im0.pgm, im1.pgm, calib.txt, disp0GT.pfm)."""
    from fgstereo.image_io import write_pfm, write_pgm

    directory.mkdir(parents=True, exist_ok=True)
    write_pgm(left, directory / "im0.pgm")
    write_pgm(right, directory / "im1.pgm")
    h, w = left.shape
    (directory / "calib.txt").write_text(f"ndisp={ndisp}\nwidth={w}\nheight={h}\n")
    if gt is not None:
        write_pfm(gt, directory / "disp0GT.pfm")
    return directory
