from .diffusion import (
    CosineSchedule,
    Normalizer,
    PolicyConfig,
    PolicyOutput,
    PolicyWeights,
    TrainingDiverged,
    build_windows,
    infer,
    inference_timesteps,
    load_weights,
    save_weights,
    tap_class_weights,
    train,
)
from .network import MLP, Adam, timestep_embedding

__all__ = [
    "Adam", "CosineSchedule", "MLP", "Normalizer", "PolicyConfig", "PolicyOutput",
    "PolicyWeights", "TrainingDiverged", "build_windows", "infer",
    "inference_timesteps", "load_weights", "save_weights", "tap_class_weights",
    "timestep_embedding", "train",
]
