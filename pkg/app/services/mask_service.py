"""
Servicio de Perturbación de Máscaras
Dilatación morfológica, rectángulo envolvente, máscaras libres aleatorias y su muestreo
"""
import logging
from typing import Tuple

import numpy as np
from PIL import Image, ImageDraw
from skimage.morphology import binary_dilation

from app.core.exceptions import DimensionMismatch, EmptyMask, InvalidRange
from app.models.mask import BinaryMask, PerturbConfig, RandomMaskParams

logger = logging.getLogger(__name__)

BRANCH_RECT = "rect"
BRANCH_RANDOM = "random"


def _draw_stroke(width: int, height: int, params: RandomMaskParams, rng: np.random.Generator) -> np.ndarray:
    n_vertices = int(rng.integers(params.stroke_vertices_range[0], params.stroke_vertices_range[1] + 1))
    grosor = int(rng.integers(params.stroke_width_range[0], params.stroke_width_range[1] + 1))
    lado = min(width, height)
    x = float(rng.uniform(0, width - 1))
    y = float(rng.uniform(0, height - 1))
    puntos = [(x, y)]
    for _ in range(n_vertices - 1):
        angulo = float(rng.uniform(0.0, 2.0 * np.pi))
        largo = float(rng.uniform(*params.stroke_length_fraction_range)) * lado
        x = float(np.clip(x + largo * np.cos(angulo), 0, width - 1))
        y = float(np.clip(y + largo * np.sin(angulo), 0, height - 1))
        puntos.append((x, y))

    lienzo = Image.new("L", (width, height), 0)
    dibujo = ImageDraw.Draw(lienzo)
    dibujo.line(puntos, fill=1, width=grosor, joint="curve")
    # extremos redondeados
    radio = grosor / 2.0
    for px, py in (puntos[0], puntos[-1]):
        dibujo.ellipse((px - radio, py - radio, px + radio, py + radio), fill=1)
    return np.asarray(lienzo, dtype=np.uint8)


def _draw_rect(width: int, height: int, params: RandomMaskParams, rng: np.random.Generator) -> np.ndarray:
    ancho = max(1, int(round(float(rng.uniform(*params.rect_size_fraction_range)) * width)))
    alto = max(1, int(round(float(rng.uniform(*params.rect_size_fraction_range)) * height)))
    arriba = int(rng.integers(0, height - alto + 1))
    izquierda = int(rng.integers(0, width - ancho + 1))
    lienzo = np.zeros((height, width), dtype=np.uint8)
    lienzo[arriba:arriba + alto, izquierda:izquierda + ancho] = 1
    return lienzo


class MaskService:
    """
    Servicio para perturbar máscaras de eliminación de objetos
    """

    @staticmethod
    def dilate(mask: BinaryMask, k: int) -> BinaryMask:
        """
        Dilata la máscara con un elemento estructurante cuadrado (2k+1)x(2k+1)

        El vecindario se recorta en los bordes de la imagen (fuera de la imagen cuenta como 0).

        Args:
            mask: Máscara de entrada
            k: Radio en píxeles (k = 0 es la identidad)

        Returns:
            BinaryMask: Máscara dilatada con las mismas dimensiones
        """
        if k < 0:
            raise InvalidRange(f"el radio de dilatación debe ser >= 0, recibido {k}")
        if k == 0 or mask.is_empty():
            return BinaryMask(mask.values)
        elemento = np.ones((2 * k + 1, 2 * k + 1), dtype=bool)
        return BinaryMask(binary_dilation(mask.as_bool(), elemento))

    @staticmethod
    def bounding_rect(mask: BinaryMask) -> BinaryMask:
        """
        Reemplaza la máscara por su rectángulo envolvente mínimo alineado a los ejes

        Args:
            mask: Máscara no vacía

        Returns:
            BinaryMask: Rectángulo relleno [i_min, i_max] x [j_min, j_max]
        """
        filas = np.flatnonzero(mask.values.any(axis=1))
        columnas = np.flatnonzero(mask.values.any(axis=0))
        if filas.size == 0:
            raise EmptyMask("el rectángulo envolvente no está definido para una máscara vacía")
        rectangulo = np.zeros(mask.shape, dtype=np.uint8)
        rectangulo[filas[0]:filas[-1] + 1, columnas[0]:columnas[-1] + 1] = 1
        return BinaryMask(rectangulo)

    @staticmethod
    def union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
        """OR elemento a elemento de dos máscaras de igual tamaño"""
        if a.shape != b.shape:
            raise DimensionMismatch(f"dimensiones distintas: {a.shape} vs {b.shape}")
        return BinaryMask(np.maximum(a.values, b.values))

    @staticmethod
    def random_mask(width: int, height: int, params: RandomMaskParams, rng: np.random.Generator) -> BinaryMask:
        """
        Genera una máscara libre M_0: unión de polilíneas gruesas y rectángulos aleatorios

        Cada elemento se dibuja de forma tentativa y se descarta si la cobertura superaría
        `target_coverage_cap`, por lo que la cobertura final nunca excede el tope.

        Args:
            width: Ancho en píxeles (>= 8)
            height: Alto en píxeles (>= 8)
            params: Parámetros del generador
            rng: Generador con semilla

        Returns:
            BinaryMask: Máscara aleatoria, determinista dada la semilla
        """
        if width < 8 or height < 8:
            raise InvalidRange(f"random_mask requiere al menos 8x8, recibido {width}x{height}")

        n_trazos = int(rng.integers(params.num_strokes_range[0], params.num_strokes_range[1] + 1))
        n_rects = int(rng.integers(params.num_rects_range[0], params.num_rects_range[1] + 1))
        limite = params.target_coverage_cap * width * height

        lienzo = np.zeros((height, width), dtype=np.uint8)
        for _ in range(n_trazos):
            tentativo = np.maximum(lienzo, _draw_stroke(width, height, params, rng))
            if tentativo.sum() <= limite:
                lienzo = tentativo
        for _ in range(n_rects):
            tentativo = np.maximum(lienzo, _draw_rect(width, height, params, rng))
            if tentativo.sum() <= limite:
                lienzo = tentativo
        return BinaryMask(lienzo)

    @staticmethod
    def reshape_perturb_with_branch(
        mask: BinaryMask, cfg: PerturbConfig, rng: np.random.Generator
    ) -> Tuple[BinaryMask, str]:
        """
        Reshape de la máscara devolviendo además la rama elegida

        Un único sorteo u en [0, 1): u < rect_probability elige el rectángulo envolvente;
        en otro caso se une la máscara con una máscara libre aleatoria.

        Returns:
            Tuple[BinaryMask, str]: (máscara perturbada, "rect" | "random")
        """
        if mask.is_empty():
            raise EmptyMask("reshape_perturb requiere una máscara no vacía")
        u = float(rng.random())
        if u < cfg.rect_probability:
            return MaskService.bounding_rect(mask), BRANCH_RECT
        libre = MaskService.random_mask(mask.width, mask.height, cfg.random_mask, rng)
        return MaskService.union(mask, libre), BRANCH_RANDOM

    @staticmethod
    def reshape_perturb(mask: BinaryMask, cfg: PerturbConfig, rng: np.random.Generator) -> BinaryMask:
        """Reshape estocástico (rectangular o aleatorio); el resultado siempre contiene a `mask`"""
        return MaskService.reshape_perturb_with_branch(mask, cfg, rng)[0]

    @staticmethod
    def sample_perturbations(
        mask: BinaryMask, cfg: PerturbConfig, rng: np.random.Generator
    ) -> Tuple[BinaryMask, BinaryMask]:
        """
        Produce las dos ramas perturbadas de MCR: (M_dil^(k), M_reshape)

        Args:
            mask: Máscara original no vacía
            cfg: Configuración de perturbación
            rng: Generador con semilla

        Returns:
            Tuple[BinaryMask, BinaryMask]: máscara dilatada y máscara reformada
        """
        if mask.is_empty():
            raise EmptyMask("sample_perturbations requiere una máscara no vacía")
        k = cfg.radius_for(mask.width, rng)
        dilatada = MaskService.dilate(mask, k)
        reformada = MaskService.reshape_perturb(mask, cfg, rng)
        logger.debug(f"Perturbaciones: k={k}, área {mask.area} -> {dilatada.area} / {reformada.area}")
        return dilatada, reformada
