"""Neural flow fields trained from CT images (ImageFlow) or sinograms (SinoFlow)."""
from .losses import (
    RayBatch,
    SinoflowRenderer,
    build_ray_batch,
    loss_imageflow_data,
    loss_physics,
    loss_sinoflow_data,
    sinoflow_render,
)
from .network import DomainError, FieldNetwork, evaluate_fields
from .residuals import physics_residuals
from .sampling import DomainSampler, ImageDataSampler, RaySampler
from .train import (
    TrainConfig,
    TrainingAborted,
    TrainingProblem,
    TrainResult,
    load_checkpoint,
    make_network,
    read_history_csv,
    save_checkpoint,
    train,
    write_history_csv,
)

__all__ = [
    "DomainError", "DomainSampler", "FieldNetwork", "ImageDataSampler", "RayBatch", "RaySampler",
    "SinoflowRenderer", "TrainConfig", "TrainResult", "TrainingAborted", "TrainingProblem", "build_ray_batch",
    "evaluate_fields", "load_checkpoint", "loss_imageflow_data", "loss_physics", "loss_sinoflow_data",
    "make_network", "physics_residuals", "read_history_csv", "save_checkpoint", "sinoflow_render", "train",
    "write_history_csv",
]
