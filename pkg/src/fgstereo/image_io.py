"""Image and disparity I/O in Middlebury-compatible formats.

Gray images are float64 arrays of shape (H, W) with values in [0, 1].
Disparity maps are float32 arrays of shape (H, W); invalid pixels hold
:data:`INVALID` (+inf), which is also how PFM files store them.
"""
from dataclasses import dataclass
import os
import re

import numpy as np

INVALID = np.float32(np.inf)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class FormatError(ValueError):
    """Malformed or unsupported file content."""


@dataclass(frozen=True)
class CalibInfo:
    ndisp: int
    width: int = 0
    height: int = 0
    names: tuple = ()

    @property
    def d_min(self):
        return 0

    @property
    def d_max(self):
        return self.ndisp - 1


def is_invalid(disp):
    return ~np.isfinite(disp)


def to_gray(rgb, weights=LUMA_WEIGHTS):
    """Weighted channel sum of an (H, W, 3) array (ITU-R 601 luma by default)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * weights[0] + rgb[..., 1] * weights[1] + rgb[..., 2] * weights[2]


# --------------------------------------------------------------------- PNM

def _pnm_tokens(buf, count, pos):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(buf[start:pos])
    return tokens, pos


def _read_pnm(buf, weights=LUMA_WEIGHTS):
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    try:
        tokens, pos = _pnm_tokens(buf, 3, 2)
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"bad PNM header: {exc}") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"bad PNM dimensions/maxval {width}x{height}/{maxval}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = buf[pos:pos + count * dtype.itemsize]
        if len(payload) < count * dtype.itemsize:
            raise OSError("truncated PNM payload")
        values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        text = buf[pos:].split()
        if len(text) < count:
            raise OSError("truncated PNM payload")
        try:
            values = np.array([int(v) for v in text[:count]], dtype=np.float64)
        except ValueError:
            raise FormatError("non-integer sample in ASCII PNM") from None
    values = np.clip(values / maxval, 0.0, 1.0)
    if channels == 3:
        return to_gray(values.reshape(height, width, 3), weights)
    return values.reshape(height, width)


def read_image(path, weights=LUMA_WEIGHTS):
    """Read a PGM/PPM (P2/P3/P5/P6) as a gray image in [0, 1].

    Other formats (PNG, ...) are delegated to Pillow with the same luma and
    maxval scaling.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:1] == b"P" and buf[1:2] in (b"1", b"2", b"3", b"4", b"5", b"6"):
        return _read_pnm(buf, weights)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
        mode = im.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        scale = 65535.0
    else:
        scale = 255.0
    arr = arr.astype(np.float64) / scale
    if arr.ndim == 3:
        arr = to_gray(arr[..., :3], weights)
    return np.clip(arr, 0.0, 1.0)


def write_pgm(img, path):
    """Write a gray image in [0, 1] as 8-bit binary PGM."""
    img = np.asarray(img, dtype=np.float64)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(data.tobytes())


def write_ppm(rgb, path):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (rgb.shape[1], rgb.shape[0]))
        fh.write(rgb.tobytes())


# --------------------------------------------------------------------- PFM

def _pfm_line(fh):
    line = fh.readline()
    while line.startswith(b"#"):
        line = fh.readline()
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path):
    """Read a single-channel PFM; rows are returned top-to-bottom."""
    with open(path, "rb") as fh:
        header = _pfm_line(fh)
        if header == "PF":
            raise FormatError("multi-channel PFM ('PF') is not supported")
        if header != "Pf":
            raise FormatError(f"not a PFM file (header {header!r})")
        try:
            width, height = (int(t) for t in _pfm_line(fh).split())
            scale = float(_pfm_line(fh))
        except ValueError:
            raise FormatError("bad PFM dimension or scale line") from None
        if width <= 0 or height <= 0 or scale == 0.0 or not np.isfinite(scale):
            raise FormatError(f"bad PFM header {width}x{height} scale={scale}")
        dtype = np.dtype("<f4" if scale < 0 else ">f4")
        nbytes = width * height * 4
        payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise OSError(f"truncated PFM payload in {path}")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    data = np.flipud(data).astype(np.float32)
    data[~np.isfinite(data)] = INVALID
    return data


def write_pfm(disp, path, little_endian=True):
    """Write a disparity map as PFM; invalid pixels are stored as +inf."""
    disp = np.asarray(disp)
    if disp.ndim != 2 or disp.size == 0:
        raise ValueError(f"expected a non-empty 2-D map, got shape {disp.shape}")
    height, width = disp.shape
    data = np.asarray(disp, dtype=np.float32).copy()
    data[~np.isfinite(data)] = np.inf
    dtype = "<f4" if little_endian else ">f4"
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n%s\n" % (width, height, b"-1.0" if little_endian else b"1.0"))
        fh.write(np.flipud(data).astype(dtype).tobytes())


def read_disparity(path, scale=1.0):
    """Read a ground-truth or estimated disparity map.

    PFM is read as-is.  Integer images (Middlebury 2001-2006 ``disp*.png``)
    are divided by ``scale``; zero marks unknown disparity.
    """
    if os.path.splitext(str(path))[1].lower() == ".pfm":
        return read_pfm(path)
    from PIL import Image

    with Image.open(path) as im:
        raw = np.asarray(im).astype(np.float64)
    if raw.ndim == 3:
        raw = raw[..., 0]
    disp = (raw / scale).astype(np.float32)
    disp[raw == 0] = INVALID
    return disp


# ------------------------------------------------------------------- calib

_CALIB_LINE = re.compile(r"^\s*([A-Za-z_][\w]*)\s*=\s*(.*?)\s*$")


def parse_calib(path):
    """Parse a Middlebury ``calib.txt`` (``key=value`` per line)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            m = _CALIB_LINE.match(line)
            if m:
                values[m.group(1)] = m.group(2)
    if "ndisp" not in values:
        raise FormatError(f"{path}: calib file has no ndisp entry")
    try:
        ndisp = int(float(values["ndisp"]))
        width = int(float(values.get("width", 0)))
        height = int(float(values.get("height", 0)))
    except ValueError:
        raise FormatError(f"{path}: non-numeric ndisp/width/height") from None
    if ndisp < 1 or width < 0 or height < 0:
        raise FormatError(f"{path}: ndisp must be >= 1 and dimensions positive")
    names = tuple(values[k] for k in ("im0", "im1") if k in values)
    return CalibInfo(ndisp=ndisp, width=width, height=height, names=names)


# -------------------------------------------------------------- rendering

def render_colormap(disp, d_range, cmap="jet"):
    """Map disparities linearly into ``cmap``; invalid pixels are black.

    Returns an (H, W, 3) uint8 array.
    """
    import matplotlib

    d_min, d_max = float(d_range[0]), float(d_range[1])
    if not d_max >= d_min:
        raise ValueError(f"empty disparity range {d_range}")
    disp = np.asarray(disp, dtype=np.float64)
    valid = np.isfinite(disp)
    span = d_max - d_min
    t = np.zeros_like(disp)
    if span > 0:
        t[valid] = np.clip((disp[valid] - d_min) / span, 0.0, 1.0)
    rgba = matplotlib.colormaps[cmap](t)
    rgb = np.rint(rgba[..., :3] * 255.0).astype(np.uint8)
    rgb[~valid] = 0
    return rgb


def render_labels(labels):
    """Colour a segmentation label map for debugging."""
    import matplotlib

    labels = np.asarray(labels)
    k = max(int(labels.max()) + 1, 1)
    rgba = matplotlib.colormaps["tab20"](labels % 20 / 19.0 if k > 1 else np.zeros(labels.shape))
    return np.rint(rgba[..., :3] * 255.0).astype(np.uint8)


def write_png(rgb, path):
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path)
