"""
Modelos de imágenes y del corpus procedural de eliminación de objetos
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import ShapeMismatch
from app.models.mask import BinaryMask

# ImageTensor: np.ndarray float64 de forma (C, H, W), C en {1, 3}
ImageTensor = np.ndarray

BackgroundKind = Literal["gradient", "stripes", "smooth-noise"]
ShapeKind = Literal["disc", "rectangle", "polygon"]


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """
    Verifica que el arreglo sea un ImageTensor válido (C, H, W) con valores finitos en [0, 1]

    Returns:
        np.ndarray: El mismo arreglo como float64
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ShapeMismatch(f"{name}: se esperaba forma (C, H, W) con C en {{1, 3}}, recibido {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name}: contiene valores no finitos")
    return arr


def spatial_shape(img: np.ndarray) -> Tuple[int, int]:
    return int(img.shape[-2]), int(img.shape[-1])


def check_mask_matches(img: np.ndarray, mask: BinaryMask) -> None:
    if spatial_shape(img) != mask.shape:
        raise ShapeMismatch(f"imagen {spatial_shape(img)} y máscara {mask.shape} no coinciden")


@dataclass(frozen=True)
class RemovalTriplet:
    """Escena con objeto, escena sin objeto y silueta exacta del objeto"""

    composite: np.ndarray
    ground_truth: np.ndarray
    mask: BinaryMask

    @property
    def channels(self) -> int:
        return int(self.composite.shape[0])


class CorpusConfig(BaseModel):
    """Configuración del generador procedural de tripletas"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    count: int = Field(default=200, ge=1, description="Número de tripletas")
    width: int = Field(default=64, ge=16, description="Ancho en píxeles")
    height: int = Field(default=64, ge=16, description="Alto en píxeles")
    channels: int = Field(default=1, description="Canales de la imagen (1 o 3)")
    background_kinds: Tuple[BackgroundKind, ...] = ("gradient", "stripes", "smooth-noise")
    shape_kinds: Tuple[ShapeKind, ...] = ("disc", "rectangle", "polygon")
    shape_area_fraction_range: Tuple[float, float] = (0.03, 0.15)
    seed: int = Field(default=0, ge=0, lt=2**64, description="Semilla de 64 bits")

    @field_validator("background_kinds", "shape_kinds", "shape_area_fraction_range", mode="before")
    @classmethod
    def split_lists(cls, value):
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value

    @model_validator(mode="after")
    def check_config(self) -> "CorpusConfig":
        if self.channels not in (1, 3):
            raise ValueError("channels debe ser 1 o 3")
        lo, hi = self.shape_area_fraction_range
        if not (0.0 < lo <= hi <= 0.5):
            raise ValueError("shape_area_fraction_range debe estar contenido en (0, 0.5]")
        if not self.background_kinds or not self.shape_kinds:
            raise ValueError("se requiere al menos un tipo de fondo y de figura")
        return self


class ManifestEntry(BaseModel):
    """Fila del manifiesto: índice y rutas relativas de la tripleta"""

    index: int
    composite_path: str
    truth_path: str
    mask_path: str


class CorpusManifest(BaseModel):
    """Manifiesto del corpus: semilla generadora, configuración y filas"""

    seed: int
    directory: Path
    config: dict = Field(default_factory=dict)
    entries: List[ManifestEntry] = Field(default_factory=list)

    def resolve(self, relative: str) -> Path:
        return self.directory / relative
