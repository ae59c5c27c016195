"""
Modelos de configuración y reporte del entrenamiento MCR
"""
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.denoiser import DenoiserConfig
from app.models.mask import PerturbConfig

TrainMode = Literal["mcr", "dilate_only", "reshape_only", "baseline"]

# Campos que solo cambian la duración o el registro de la corrida
DIGEST_EXCLUDED = ("steps", "checkpoint_every", "log_wall_time")


class TrainConfig(BaseModel):
    """Configuración completa de una corrida de entrenamiento"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=5e-5, gt=0.0, description="Tasa de aprendizaje de Adam")
    batch_size: int = Field(default=2, ge=1, description="Tripletas por paso")
    lambda_cons: float = Field(default=2.0, ge=0.0, description="Peso del término de consistencia")
    mode: TrainMode = Field(default="mcr", description="Brazo de ablación")
    steps: int = Field(default=2000, ge=0, description="Pasos de optimización")
    seed: int = Field(default=0, ge=0, lt=2**64, description="Semilla de 64 bits")
    stop_gradient_original: bool = Field(
        default=False, description="Trata la salida de la rama original como constante en la consistencia"
    )
    checkpoint_every: int = Field(default=500, ge=0, description="Pasos entre checkpoints (0 = solo el final)")
    log_wall_time: bool = Field(default=True, description="Escribe segundos reales en el log de pérdidas")
    schedule_T: int = Field(default=200, ge=2, description="Pasos del proceso de difusión")
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(default=0.02, gt=0.0, lt=1.0)
    perturb: PerturbConfig = Field(default_factory=PerturbConfig)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)

    @model_validator(mode="after")
    def check_schedule(self) -> "TrainConfig":
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start debe ser <= beta_end")
        return self

    @property
    def uses_dilation(self) -> bool:
        return self.mode in ("mcr", "dilate_only")

    @property
    def uses_reshape(self) -> bool:
        return self.mode in ("mcr", "reshape_only")


class LossReport(BaseModel):
    """Pérdidas de un paso de entrenamiento"""

    step: int
    rec: float
    cons: float
    total: float
