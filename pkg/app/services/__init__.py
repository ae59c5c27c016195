# Servicios de MCR
from .image_service import ImageService
from .mask_service import MaskService
from .corpus_service import CorpusService
from .diffusion_service import DiffusionService
from .denoiser_service import DenoiserService
from .train_service import TrainService
from .metrics_service import MetricsService
from .ablation_service import AblationService

__all__ = [
    "ImageService",
    "MaskService",
    "CorpusService",
    "DiffusionService",
    "DenoiserService",
    "TrainService",
    "MetricsService",
    "AblationService",
]
