"""
Servicio de Difusión
Proceso directo, calendario de ruido y muestreador determinista con saltos para la inferencia
"""
import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from app.core.exceptions import EmptyMask, InvalidRange, ShapeMismatch, StepCountInvalid, TimestepOutOfRange
from app.models.image import check_mask_matches, validate_image
from app.models.mask import BinaryMask

logger = logging.getLogger(__name__)


class NoisePredictor(Protocol):
    """Cualquier modelo eps_theta(x_t, t, cond) -> eps_hat con la forma de x_t"""

    def __call__(self, x_t: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class NoiseSchedule:
    """Secuencias beta, alpha = 1 - beta y alpha_bar = prod(alpha) del proceso directo"""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def from_betas(cls, beta: np.ndarray) -> "NoiseSchedule":
        """
        Construye y valida un calendario a partir de betas arbitrarios

        Raises:
            InvalidRange: Si algún beta no está en (0, 1) o hay menos de 2 pasos
        """
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2:
            raise InvalidRange("el calendario necesita al menos 2 pasos")
        if not np.all((beta > 0.0) & (beta < 1.0)):
            raise InvalidRange("cada beta debe estar en (0, 1)")
        alpha = 1.0 - beta
        return cls(T=int(beta.size), beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def _check_timestep(t: int, sched: NoiseSchedule) -> None:
    if not (0 <= int(t) < sched.T):
        raise TimestepOutOfRange(f"t={t} fuera de [0, {sched.T})")


class DiffusionService:
    """
    Servicio para el proceso de difusión y el muestreo de inpainting
    """

    @staticmethod
    def linear_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
        """
        Calendario lineal: beta interpola beta_start -> beta_end en t = 0..T-1

        Args:
            T: Número de pasos (>= 2)
            beta_start: Primer beta
            beta_end: Último beta

        Returns:
            NoiseSchedule: Calendario validado
        """
        if T < 2 or not (0.0 < beta_start <= beta_end < 1.0):
            raise InvalidRange(
                f"se requiere T >= 2 y 0 < beta_start <= beta_end < 1 (T={T}, {beta_start}, {beta_end})"
            )
        return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T, dtype=np.float64))

    @staticmethod
    def to_model_domain(img: np.ndarray) -> np.ndarray:
        """[0, 1] -> [-1, 1]"""
        return 2.0 * img - 1.0

    @staticmethod
    def from_model_domain(x: np.ndarray) -> np.ndarray:
        """[-1, 1] -> [0, 1], recortado"""
        return np.clip((x + 1.0) / 2.0, 0.0, 1.0)

    @staticmethod
    def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
        """
        x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps

        Args:
            x0: Imagen en el dominio del modelo [-1, 1]
            t: Índice temporal
            eps: Ruido normal estándar con la forma de x0
            sched: Calendario

        Returns:
            np.ndarray: Muestra ruidosa x_t
        """
        if np.shape(x0) != np.shape(eps):
            raise ShapeMismatch(f"x0 {np.shape(x0)} y eps {np.shape(eps)} no coinciden")
        _check_timestep(t, sched)
        ab = sched.alpha_bar[int(t)]
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

    @staticmethod
    def strided_timesteps(T: int, n_steps: int) -> np.ndarray:
        """Índices descendentes T-1 ... 0 espaciados uniformemente, n_steps en total"""
        if n_steps < 1 or n_steps > T:
            raise StepCountInvalid(f"n_steps debe estar en [1, {T}], recibido {n_steps}")
        if n_steps == 1:
            return np.array([T - 1], dtype=np.int64)
        return np.round(np.linspace(T - 1, 0, n_steps)).astype(np.int64)

    @staticmethod
    def strided_deterministic_sample(
        model: NoisePredictor,
        cond: np.ndarray,
        sched: NoiseSchedule,
        n_steps: int = 20,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """
        Muestreador determinista (eta = 0) con saltos

        Parte de x_T ~ N(0, I); en cada paso predice x0_hat, lo recorta a [-1, 1] y salta a t'
        reutilizando eps_hat. Devuelve el último x0_hat reescalado a [0, 1].

        Args:
            model: Predictor de ruido
            cond: Condicionamiento de C+1 canales (ver TrainService.cond_encode)
            sched: Calendario
            n_steps: Pasos de inferencia
            rng: Generador para el ruido inicial

        Returns:
            np.ndarray: Imagen generada (C, H, W) en [0, 1]
        """
        pasos = DiffusionService.strided_timesteps(sched.T, n_steps)
        rng = rng if rng is not None else np.random.default_rng(0)
        canales = cond.shape[0] - 1
        x = rng.standard_normal((canales,) + tuple(cond.shape[1:]))
        x0_hat = x
        for i, t in enumerate(pasos):
            ab = sched.alpha_bar[t]
            eps_hat = np.asarray(model(x, int(t), cond), dtype=np.float64)
            if eps_hat.shape != x.shape:
                raise ShapeMismatch(f"el modelo devolvió {eps_hat.shape}, se esperaba {x.shape}")
            x0_hat = np.clip((x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab), -1.0, 1.0)
            if i + 1 < len(pasos):
                ab_siguiente = sched.alpha_bar[pasos[i + 1]]
                x = np.sqrt(ab_siguiente) * x0_hat + np.sqrt(1.0 - ab_siguiente) * eps_hat
        return DiffusionService.from_model_domain(x0_hat)

    @staticmethod
    def inpaint(
        model: NoisePredictor,
        x0: np.ndarray,
        mask: BinaryMask,
        sched: NoiseSchedule,
        n_steps: int = 20,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """
        Elimina el objeto bajo la máscara: genera y compone mask * x_gen + (1 - mask) * x0

        Args:
            model: Predictor de ruido
            x0: Imagen de entrada (C, H, W) en [0, 1]
            mask: Región a rellenar (no vacía)
            sched: Calendario
            n_steps: Pasos de inferencia
            rng: Generador para el ruido inicial

        Returns:
            np.ndarray: Imagen compuesta; los píxeles fuera de la máscara se copian exactos
        """
        from app.services.train_service import TrainService

        x0 = validate_image(x0, "x0")
        check_mask_matches(x0, mask)
        if mask.is_empty():
            raise EmptyMask("inpaint requiere una máscara no vacía")
        cond = TrainService.cond_encode(DiffusionService.to_model_domain(x0), mask)
        generada = DiffusionService.strided_deterministic_sample(model, cond, sched, n_steps=n_steps, rng=rng)
        seleccion = mask.as_bool()[None, :, :]
        return np.where(seleccion, generada, x0)
