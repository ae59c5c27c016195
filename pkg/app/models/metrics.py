"""
Modelos de reportes de evaluación y ablación
"""
from typing import List, Optional

from pydantic import BaseModel, Field


class ImageMetrics(BaseModel):
    """Métricas de una imagen contra su verdad de terreno"""

    index: int
    psnr: float
    ssim: float
    mse: float
    psnr_masked: float
    ssim_masked: float
    gap: Optional[float] = None


class MetricsReport(BaseModel):
    """Filas por imagen y medias; los PSNR infinitos se excluyen de la media y se cuentan"""

    rows: List[ImageMetrics] = Field(default_factory=list)
    count: int = 0
    psnr: float = 0.0
    ssim: float = 0.0
    mse: float = 0.0
    psnr_masked: float = 0.0
    ssim_masked: float = 0.0
    psnr_inf_count: int = 0
    psnr_masked_inf_count: int = 0
    consistency_gap: Optional[float] = None
    digest: str = ""


class AblationRow(BaseModel):
    """Una fila de la tabla de ablación: medias por brazo sobre las semillas"""

    arm: str
    psnr: float
    ssim: float
    mse: float
    psnr_masked: float
    gap: float
    cons: float
