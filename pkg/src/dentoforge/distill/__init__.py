"""Score distillation and the compositional scene/instance optimizer."""
from .learned import ConvDenoiser, train_conv_denoiser
from .optimizer import OptimizationError, OptimizeResult, OptimState, optimize, relative_variation, scene_extent
from .providers import Conditioning, LearnedScore, PerfectScore, ReferenceScore, ScoreProvider, sample_eta
from .sds import SDSResult, sds_grad_instance, sds_grad_scene, total_loss

__all__ = [
    "Conditioning", "ConvDenoiser", "LearnedScore", "OptimState", "OptimizationError", "OptimizeResult",
    "PerfectScore", "ReferenceScore", "SDSResult", "ScoreProvider", "optimize", "relative_variation",
    "sample_eta", "scene_extent", "sds_grad_instance", "sds_grad_scene", "total_loss", "train_conv_denoiser",
]
