"""Pipeline configuration and its ``key = value`` text format.

Unknown keys are rejected; omitted keys keep their defaults.  Tuples are
written comma-separated and floats with ``repr`` so a written file parses back
to an identical config.
"""
from dataclasses import dataclass, fields, replace
import typing

from .factor_graph import LbpConfig
from .neighborhood import NeighborConfig
from .preprocess import HomomorphicConfig
from .segmentation import START_WAVELENGTH, GaborBankConfig


@dataclass(frozen=True)
class PipelineConfig:
    # input
    quarter: bool = False
    gray_weights: tuple = (0.299, 0.587, 0.114)
    # illumination correction
    homomorphic: bool = True
    homomorphic_kernel: int = 21
    epsilon_log: float = 1e-6
    # texture segmentation
    gabor_orientations: tuple = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
    gabor_start_wavelength: float = START_WAVELENGTH
    gabor_bandwidth: float = 1.0
    gabor_aspect: float = 0.5
    segments: int = 15
    kmeans_replicates: int = 5
    kmeans_max_iter: int = 500
    coord_weight: float = 1.0
    # feature matches and zonal ranges
    corner_quality: float = 0.01
    corner_min_distance: float = 5.0
    match_window: int = 9
    match_min_score: float = 0.8
    match_min_margin: float = 0.05
    zone_min_width: int = 3
    # cost volume
    template: int = 3
    # dependency neighbourhoods
    neighborhood: str = "bilateral"
    bf_size: int = 7
    bf_sigma_s: float = 3.0
    bf_sigma_r: float = 0.1
    gif_omega: int = 3
    gif_eps: float = 1e-4
    alpha: float = 97.0
    # loopy belief propagation
    lbp_tau: float = 0.5
    lbp_max_iter: int = 60
    lbp_damping: float = 0.0
    lbp_floor: float = 1e-12
    # post-processing
    lrc: bool = True
    lrc_tol: float = 1.0
    median_window: int = 7
    median_scope: str = "occluded"
    # evaluation
    bad_threshold: float = 2.0
    seed: int = 0

    def __post_init__(self):
        self.homomorphic_config()
        self.gabor_config()
        self.neighbor_config()
        self.lbp_config()
        if self.segments < 1 or self.kmeans_replicates < 1 or self.kmeans_max_iter < 1:
            raise ValueError("segments, kmeans_replicates and kmeans_max_iter must be >= 1")
        if self.template < 1 or self.template % 2 == 0:
            raise ValueError("template must be odd")
        if self.match_window < 1 or self.match_window % 2 == 0:
            raise ValueError("match_window must be odd")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError("median_window must be odd")
        if not 0 < self.corner_quality <= 1:
            raise ValueError("corner_quality must lie in (0, 1]")
        if self.median_scope not in ("occluded", "all", "none"):
            raise ValueError("median_scope must be occluded, all or none")
        if self.lrc_tol < 0 or self.bad_threshold < 0 or self.zone_min_width < 1:
            raise ValueError("lrc_tol and bad_threshold must be >= 0, zone_min_width >= 1")
        if len(self.gray_weights) != 3:
            raise ValueError("gray_weights needs three values")

    def homomorphic_config(self):
        return HomomorphicConfig(self.homomorphic_kernel, self.epsilon_log)

    def gabor_config(self):
        return GaborBankConfig(tuple(self.gabor_orientations), (), self.gabor_start_wavelength,
                               self.gabor_bandwidth, self.gabor_aspect)

    def neighbor_config(self):
        return NeighborConfig(self.neighborhood, self.bf_size, self.bf_sigma_s, self.bf_sigma_r,
                              self.gif_omega, self.gif_eps, self.alpha)

    def lbp_config(self):
        return LbpConfig(self.lbp_tau, self.lbp_max_iter, self.lbp_damping, self.lbp_floor)

    def with_overrides(self, **kw):
        return replace(self, **kw)


_HINTS = typing.get_type_hints(PipelineConfig)


def _parse_value(name, text):
    kind = _HINTS[name]
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        return tuple(float(t) for t in text.split(",") if t.strip())
    return text


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_overrides(pairs):
    """``["key=value", ...]`` to a dict of typed values."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in _HINTS:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def loads(text, base=None):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, value)
    return replace(base or PipelineConfig(), **values)


def dumps(cfg):
    lines = ["# fgstereo pipeline configuration (key = value)"]
    for f in fields(cfg):
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def load(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read(), base)


def save(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
