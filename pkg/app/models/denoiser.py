"""
Modelos del denoiser convolucional
"""
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DenoiserConfig(BaseModel):
    """Arquitectura fija de 3 capas conv 3x3; forma parte del contrato del checkpoint"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    image_channels: int = Field(default=1, description="Canales C de la imagen (1 o 3)")
    hidden_width: int = Field(default=32, ge=4, description="Canales ocultos")
    n_layers: int = Field(default=3, description="Número de capas (fijo en 3)")
    kernel: int = Field(default=3, description="Lado del kernel (fijo en 3)")
    time_embed_dim: int = Field(default=16, ge=2, description="Dimensión del embedding sinusoidal")

    @model_validator(mode="after")
    def check_architecture(self) -> "DenoiserConfig":
        if self.image_channels not in (1, 3):
            raise ValueError("image_channels debe ser 1 o 3")
        if self.n_layers != 3:
            raise ValueError("n_layers está fijo en 3")
        if self.kernel != 3:
            raise ValueError("kernel está fijo en 3")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim debe ser par (mitad seno, mitad coseno)")
        return self

    @property
    def in_channels(self) -> int:
        # x_t (C) + condicionamiento (C + 1)
        return 2 * self.image_channels + 1

    def layer_channels(self) -> List[Tuple[int, int]]:
        """(entrada, salida) por capa"""
        return [
            (self.in_channels, self.hidden_width),
            (self.hidden_width, self.hidden_width),
            (self.hidden_width, self.image_channels),
        ]

    def layer_shapes(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]]:
        """Formas (kernel, bias, proyección temporal) en el orden de serialización"""
        return [
            ((c_out, c_in, self.kernel, self.kernel), (c_out,), (c_out, self.time_embed_dim))
            for c_in, c_out in self.layer_channels()
        ]

    def parameter_count(self) -> int:
        total = 0
        for shapes in self.layer_shapes():
            for shape in shapes:
                n = 1
                for d in shape:
                    n *= d
                total += n
        return total


class GradCheckReport(BaseModel):
    """Resultado de la comparación gradiente analítico vs diferencias centrales"""

    max_relative_error: float
    tolerance: float
    n_coordinates: int
    passed: bool
