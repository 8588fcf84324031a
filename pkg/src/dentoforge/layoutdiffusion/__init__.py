"""Graph diffusion over missing-tooth layouts."""
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .denoiser import PAPER_PROFILE, TOY_PROFILE, DenoiserConfig, GraphDenoiser
from .diffusion import (
    LayoutModel,
    LayoutNorm,
    NumericError,
    TrainState,
    diffusion_loss,
    forward_noise,
    graph_batch,
    make_model,
    sample_layout,
    train_layout,
    train_step,
    vlb_terms,
)
from .schedule import NoiseSchedule, make_schedule, sampling_timesteps
from .text import TEXT_DIM, TextEmbedding, embed_text, jaw_prompt, tooth_prompt

__all__ = [
    "CheckpointFormatError", "DenoiserConfig", "GraphDenoiser", "LayoutModel", "LayoutNorm", "NoiseSchedule",
    "NumericError", "PAPER_PROFILE", "TEXT_DIM", "TOY_PROFILE", "TextEmbedding", "TrainState", "diffusion_loss",
    "embed_text", "forward_noise", "graph_batch", "jaw_prompt", "load_checkpoint", "make_model",
    "make_schedule", "sample_layout", "sampling_timesteps", "save_checkpoint", "tooth_prompt",
    "train_layout", "train_step", "vlb_terms",
]
