"""Stereo disparity estimation with a factor-graph model and loopy belief propagation."""
from .config import PipelineConfig
from .factor_graph import LbpConfig, build_graph, run_lbp
from .metrics import avg_err, bad_percent, psnr, weighted_average
from .pipeline import estimate, run_dataset, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "LbpConfig", "build_graph", "run_lbp", "avg_err", "bad_percent", "psnr",
    "weighted_average", "estimate", "run_dataset", "run_pipeline",
]
