"""
Modelos de máscaras binarias y de configuración de perturbaciones
"""
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import InvalidRange


class BinaryMask:
    """
    Máscara binaria M en {0,1}^(H x W), almacenada como uint8 fila-mayor.

    La instancia es inmutable: el arreglo interno se marca como solo lectura.
    """

    __slots__ = ("_values",)

    def __init__(self, values: np.ndarray):
        arr = np.asarray(values)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidRange(f"La máscara debe ser 2-D y no vacía, forma recibida {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        elif not np.all((arr == 0) | (arr == 1)):
            raise InvalidRange("La máscara solo admite valores 0 y 1")
        arr = np.ascontiguousarray(arr, dtype=np.uint8).copy()
        arr.flags.writeable = False
        self._values = arr

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def from_array(cls, values: np.ndarray) -> "BinaryMask":
        """Construye la máscara desde cualquier arreglo 2-D de ceros y unos (o booleano)"""
        return cls(values)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def width(self) -> int:
        return int(self._values.shape[1])

    @property
    def height(self) -> int:
        return int(self._values.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        return int(self._values.sum())

    @property
    def coverage(self) -> float:
        return self.area / float(self._values.size)

    def is_empty(self) -> bool:
        return not self._values.any()

    def as_bool(self) -> np.ndarray:
        return self._values.astype(bool)

    def contains(self, other: "BinaryMask") -> bool:
        """True si esta máscara es superconjunto de `other`"""
        if self.shape != other.shape:
            return False
        return bool(np.all(self._values >= other._values))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._values, other._values))

    def __hash__(self) -> int:
        return hash((self.shape, self._values.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"


IntRange = Tuple[int, int]
FloatRange = Tuple[float, float]


def _split_range(value):
    # "1, 4" en archivos de configuración
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return value


class RandomMaskParams(BaseModel):
    """Parámetros del generador de máscaras libres (trazos + rectángulos)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    num_strokes_range: IntRange = Field(default=(1, 4), description="Cantidad de trazos")
    stroke_width_range: IntRange = Field(default=(4, 16), description="Grosor del trazo en píxeles")
    stroke_vertices_range: IntRange = Field(default=(2, 6), description="Vértices por polilínea")
    stroke_length_fraction_range: FloatRange = Field(
        default=(0.1, 0.4), description="Longitud de cada segmento como fracción del lado"
    )
    num_rects_range: IntRange = Field(default=(0, 2), description="Cantidad de rectángulos")
    rect_size_fraction_range: FloatRange = Field(
        default=(0.10, 0.35), description="Lado del rectángulo como fracción del lado de la imagen"
    )
    target_coverage_cap: float = Field(default=0.5, gt=0.0, le=1.0, description="Cobertura máxima")

    @field_validator(
        "num_strokes_range", "stroke_width_range", "stroke_vertices_range",
        "stroke_length_fraction_range", "num_rects_range", "rect_size_fraction_range",
        mode="before",
    )
    @classmethod
    def split_ranges(cls, value):
        return _split_range(value)

    @model_validator(mode="after")
    def check_ranges(self) -> "RandomMaskParams":
        for name in ("num_strokes_range", "stroke_vertices_range", "num_rects_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ValueError(f"{name} debe cumplir 0 <= lo <= hi")
        lo, hi = self.stroke_width_range
        if lo < 1 or lo > hi:
            raise ValueError("stroke_width_range debe cumplir 1 <= lo <= hi")
        if self.stroke_vertices_range[0] < 2:
            raise ValueError("una polilínea necesita al menos 2 vértices")
        for name in ("stroke_length_fraction_range", "rect_size_fraction_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi < 1.0):
                raise ValueError(f"{name} debe estar contenido en (0, 1)")
        return self

    @classmethod
    def empty(cls) -> "RandomMaskParams":
        """Parámetros que no dibujan nada (máscara aleatoria vacía)"""
        return cls(num_strokes_range=(0, 0), num_rects_range=(0, 0))


class PerturbConfig(BaseModel):
    """Configuración de las perturbaciones de máscara (dilatación + reshape)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dilation_radius_k: Optional[int] = Field(
        default=None, ge=0,
        description="Radio k fijo; None lo escala como round(8 * ancho / 256)"
    )
    dilation_radius_range: Optional[IntRange] = Field(
        default=None, description="Si se define, k se sortea uniforme en [lo, hi] en cada llamada"
    )
    rect_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    random_mask: RandomMaskParams = Field(default_factory=RandomMaskParams)

    @field_validator("dilation_radius_range", mode="before")
    @classmethod
    def split_radius_range(cls, value):
        return _split_range(value)

    @model_validator(mode="after")
    def check_radius_range(self) -> "PerturbConfig":
        if self.dilation_radius_range is not None:
            lo, hi = self.dilation_radius_range
            if lo < 0 or lo > hi:
                raise ValueError("dilation_radius_range debe cumplir 0 <= lo <= hi")
        return self

    @classmethod
    def degenerate(cls) -> "PerturbConfig":
        """Perturbaciones identidad: k = 0, siempre rama aleatoria y máscara aleatoria vacía"""
        return cls(dilation_radius_k=0, rect_probability=0.0, random_mask=RandomMaskParams.empty())

    def radius_for(self, width: int, rng: Optional[np.random.Generator] = None) -> int:
        """
        Resuelve el radio de dilatación para una imagen de ancho `width`

        Args:
            width: Ancho de la imagen en píxeles
            rng: Generador; solo se usa en el modo de radio aleatorio

        Returns:
            int: Radio k en píxeles
        """
        if self.dilation_radius_range is not None:
            if rng is None:
                raise InvalidRange("el modo de radio aleatorio requiere un generador")
            lo, hi = self.dilation_radius_range
            return int(rng.integers(lo, hi + 1))
        if self.dilation_radius_k is not None:
            return self.dilation_radius_k
        return max(1, int(round(8 * width / 256)))
