"""
Servicio de Entrenamiento
Objetivo MCR de tres ramas (reconstrucción + consistencia), Adam y checkpoints reanudables
"""
import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ConfigError, CorruptCheckpoint, EmptyBatch, InvalidRange, ShapeMismatch
from app.models.denoiser import DenoiserConfig, GradCheckReport
from app.models.image import CorpusManifest, RemovalTriplet, check_mask_matches, validate_image
from app.models.mask import BinaryMask, PerturbConfig
from app.models.training import DIGEST_EXCLUDED, LossReport, TrainConfig, TrainMode
from app.services.corpus_service import CorpusService
from app.services.denoiser_service import PARAM_DTYPE, DenoiserParams, DenoiserService, ForwardCache
from app.services.diffusion_service import DiffusionService, NoiseSchedule
from app.services.mask_service import MaskService
from app.utils.config_file import dump_config
from app.utils.seeding import generator_for, generator_from_state_bytes, generator_state_bytes

logger = logging.getLogger(__name__)

LOSS_LOG_NAME = "loss_log.tsv"
LOSS_LOG_HEADER = "step\trec\tcons\ttotal\tseconds"
CHECKPOINT_NAME = "checkpoint.mcr"
TAIL = struct.Struct("<QI")
DIGEST_SIZE = 32

# Sub-flujos derivados de la semilla de entrenamiento
STREAM_DRAWS = 0
STREAM_SHUFFLE = 1
STREAM_INIT = 2


class AdamOptimizer:
    """Adam sobre el vector plano de parámetros, con estado explícito serializable"""

    def __init__(
        self,
        size: int,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = np.zeros(size, dtype=np.float64)
        self.v = np.zeros(size, dtype=np.float64)
        self.step = 0

    def update(self, flat: np.ndarray, grad: np.ndarray) -> None:
        """Aplica un paso sobre `flat` en su lugar"""
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step)
        v_hat = self.v / (1.0 - self.beta2 ** self.step)
        flat -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


@dataclass
class TrainState:
    """Parámetros, optimizador y generador de sorteos de una corrida"""

    params: DenoiserParams
    optimizer: AdamOptimizer
    rng: np.random.Generator

    @property
    def step(self) -> int:
        return self.optimizer.step


@dataclass
class BranchDraws:
    """
    Sorteos de un paso: el mismo (x_t, t, eps) alimenta las tres ramas

    Los arreglos llevan eje de lote: (B, C, H, W) y (B, C + 1, H, W) para los condicionamientos.
    """

    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    x_t: np.ndarray
    cond_original: np.ndarray
    cond_dilated: np.ndarray
    cond_reshaped: np.ndarray


@dataclass
class ObjectiveResult:
    rec: float
    cons: float
    total: float
    grads: DenoiserParams
    eps_hat: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    params: DenoiserParams
    m: np.ndarray
    v: np.ndarray
    step: int
    rng_state: bytes
    digest: bytes

    @property
    def config(self) -> DenoiserConfig:
        return self.params.config


class BatchSchedule:
    """
    Orden de lotes como función pura de (semilla, época)

    La muestra j del paso s ocupa la posición s * B + j de la secuencia concatenada de
    permutaciones por época, de modo que reanudar no necesita estado adicional.
    """

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if n_items < 1:
            raise EmptyBatch("el corpus no tiene tripletas")
        self.n_items = n_items
        self.batch_size = batch_size
        self.seed = seed
        self._perms: Dict[int, np.ndarray] = {}

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: generator_for(self.seed, STREAM_SHUFFLE, epoch).permutation(self.n_items)}
        return self._perms[epoch]

    def indices(self, step: int) -> List[int]:
        """Índices del lote para el paso `step` (base 0)"""
        indices = []
        for j in range(self.batch_size):
            posicion = step * self.batch_size + j
            indices.append(int(self._permutation(posicion // self.n_items)[posicion % self.n_items]))
        return indices


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Path
    loss_log_path: Path
    reports: List[LossReport]


def _check_same_shape(*arrays: np.ndarray) -> None:
    formas = {np.shape(a) for a in arrays}
    if len(formas) != 1:
        raise ShapeMismatch(f"formas distintas: {sorted(formas)}")


def _format_row(report: LossReport, seconds: Optional[float]) -> str:
    segundos = "0.000" if seconds is None else f"{seconds:.3f}"
    return f"{report.step}\t{report.rec:.17g}\t{report.cons:.17g}\t{report.total:.17g}\t{segundos}"


def _prepare_loss_log(path: Path, keep_until: int) -> None:
    # conserva las filas previas al checkpoint de reanudación y descarta el resto
    filas = [LOSS_LOG_HEADER]
    if keep_until > 0 and path.exists():
        for linea in path.read_text(encoding="utf-8").splitlines()[1:]:
            campos = linea.split("\t")
            if campos and campos[0].isdigit() and int(campos[0]) <= keep_until:
                filas.append(linea)
    path.write_text("\n".join(filas) + "\n", encoding="utf-8")


def _load_training_triplets(manifest: Union[str, Path, CorpusManifest]) -> List[RemovalTriplet]:
    if not isinstance(manifest, CorpusManifest):
        manifest = CorpusService.read_manifest(manifest)
    return [CorpusService.load_triplet(manifest, fila) for fila in manifest.entries]


class TrainService:
    """
    Servicio para entrenar el denoiser con regularización de consistencia de máscara
    """

    @staticmethod
    def cond_encode(x0: np.ndarray, mask: BinaryMask) -> np.ndarray:
        """
        Condicionamiento z(x0, M): [x0 * (1 - M), M] en C + 1 canales

        Args:
            x0: Imagen (C, H, W) en el dominio del modelo
            mask: Máscara de la región a eliminar

        Returns:
            np.ndarray: Tensor (C + 1, H, W)
        """
        x0 = validate_image(x0, "x0")
        check_mask_matches(x0, mask)
        m = mask.values.astype(np.float64)
        return np.concatenate([x0 * (1.0 - m)[None, :, :], m[None, :, :]], axis=0)

    @staticmethod
    def rec_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
        """mean((eps - eps_hat)^2) sobre todos los elementos"""
        _check_same_shape(eps, eps_hat)
        return float(np.mean((np.asarray(eps) - np.asarray(eps_hat)) ** 2))

    @staticmethod
    def cons_loss(eps_o: np.ndarray, eps_d: np.ndarray, eps_r: np.ndarray, mode: TrainMode = "mcr") -> float:
        """
        mean((eps_O - eps_D)^2) + mean((eps_O - eps_R)^2)

        dilate_only descarta el segundo término, reshape_only el primero y baseline ambos.
        """
        _check_same_shape(eps_o, eps_d, eps_r)
        total = 0.0
        if mode in ("mcr", "dilate_only"):
            total += float(np.mean((np.asarray(eps_o) - np.asarray(eps_d)) ** 2))
        if mode in ("mcr", "reshape_only"):
            total += float(np.mean((np.asarray(eps_o) - np.asarray(eps_r)) ** 2))
        return total

    @staticmethod
    def total_loss(rec: float, cons: float, lambda_cons: float) -> float:
        if lambda_cons < 0:
            raise InvalidRange(f"lambda_cons debe ser >= 0, recibido {lambda_cons}")
        return rec + lambda_cons * cons

    @staticmethod
    def draw_branches(
        batch: Sequence[RemovalTriplet],
        perturb: PerturbConfig,
        sched: NoiseSchedule,
        rng: np.random.Generator,
    ) -> BranchDraws:
        """
        Sortea t, eps y las perturbaciones de máscara para cada muestra del lote

        Orden de consumo del generador por muestra: t, eps, perturbaciones.
        El objetivo x0 es la verdad de terreno en el dominio del modelo.
        """
        if not batch:
            raise EmptyBatch("train_step requiere un lote no vacío")
        x0s, ts, epss, xts, conds_o, conds_d, conds_r = [], [], [], [], [], [], []
        for tripleta in batch:
            x0 = DiffusionService.to_model_domain(validate_image(tripleta.ground_truth, "ground_truth"))
            t = int(rng.integers(0, sched.T))
            eps = rng.standard_normal(x0.shape)
            dilatada, reformada = MaskService.sample_perturbations(tripleta.mask, perturb, rng)
            x0s.append(x0)
            ts.append(t)
            epss.append(eps)
            xts.append(DiffusionService.forward_sample(x0, t, eps, sched))
            conds_o.append(TrainService.cond_encode(x0, tripleta.mask))
            conds_d.append(TrainService.cond_encode(x0, dilatada))
            conds_r.append(TrainService.cond_encode(x0, reformada))
        try:
            return BranchDraws(
                x0=np.stack(x0s), t=np.asarray(ts, dtype=np.int64), eps=np.stack(epss), x_t=np.stack(xts),
                cond_original=np.stack(conds_o), cond_dilated=np.stack(conds_d), cond_reshaped=np.stack(conds_r),
            )
        except ValueError as e:
            raise ShapeMismatch(f"el lote mezcla tamaños de imagen: {e}") from e

    @staticmethod
    def objective_gradients(
        params: DenoiserParams,
        draws: BranchDraws,
        mode: TrainMode = "mcr",
        lambda_cons: float = 2.0,
        stop_gradient_original: bool = False,
    ) -> ObjectiveResult:
        """
        Pérdida total y su gradiente exacto para sorteos fijos

        La reconstrucción usa solo la rama original; las ramas perturbadas entran solo por
        la consistencia. Los gradientes se acumulan en el orden O, D, R.

        Args:
            params: Parámetros del denoiser
            draws: Sorteos del paso
            mode: Brazo de ablación
            lambda_cons: Peso de la consistencia
            stop_gradient_original: Trata eps_O como constante dentro de la consistencia

        Returns:
            ObjectiveResult: rec, cons, total, gradientes y salidas por rama
        """
        usar_d = mode in ("mcr", "dilate_only")
        usar_r = mode in ("mcr", "reshape_only")
        n = draws.eps.size

        eps_o, cache_o = DenoiserService.forward(params, draws.x_t, draws.t, draws.cond_original)
        salidas = {"original": eps_o}
        pendientes: List[Tuple[ForwardCache, np.ndarray]] = []

        grad_o = 2.0 * (eps_o - draws.eps) / n
        rec = TrainService.rec_loss(draws.eps, eps_o)
        cons = 0.0
        propagar = lambda_cons > 0 and mode != "baseline"

        for usar, nombre, cond in (
            (usar_d, "dilated", draws.cond_dilated),
            (usar_r, "reshaped", draws.cond_reshaped),
        ):
            if not usar:
                continue
            eps_p, cache_p = DenoiserService.forward(params, draws.x_t, draws.t, cond)
            salidas[nombre] = eps_p
            diferencia = eps_o - eps_p
            cons += float(np.mean(diferencia ** 2))
            if propagar:
                g = lambda_cons * 2.0 * diferencia / n
                if not stop_gradient_original:
                    grad_o = grad_o + g
                pendientes.append((cache_p, -g))

        gradientes = DenoiserService.backward(params, cache_o, grad_o)
        for cache_p, grad_p in pendientes:
            gradientes.flat += DenoiserService.backward(params, cache_p, grad_p).flat
        return ObjectiveResult(
            rec=rec, cons=cons, total=TrainService.total_loss(rec, cons, lambda_cons), grads=gradientes, eps_hat=salidas
        )

    @staticmethod
    def train_step(
        state: TrainState,
        batch: Sequence[RemovalTriplet],
        cfg: TrainConfig,
        sched: NoiseSchedule,
        on_draws: Optional[Callable[[BranchDraws], None]] = None,
    ) -> Tuple[TrainState, LossReport]:
        """
        Un paso de optimización MCR sobre un lote

        Las perturbaciones se sortean en todos los modos para que el flujo del generador
        sea idéntico entre brazos. El estado se actualiza en su lugar.

        Args:
            state: Estado de la corrida
            batch: Tripletas del lote
            cfg: Configuración de entrenamiento
            sched: Calendario de ruido
            on_draws: Gancho opcional que recibe los sorteos del paso

        Returns:
            Tuple[TrainState, LossReport]: Estado actualizado y pérdidas del paso
        """
        sorteos = TrainService.draw_branches(batch, cfg.perturb, sched, state.rng)
        if on_draws is not None:
            on_draws(sorteos)
        resultado = TrainService.objective_gradients(
            state.params, sorteos, mode=cfg.mode, lambda_cons=cfg.lambda_cons,
            stop_gradient_original=cfg.stop_gradient_original,
        )
        state.optimizer.update(state.params.flat, resultado.grads.flat)
        reporte = LossReport(step=state.step, rec=resultado.rec, cons=resultado.cons, total=resultado.total)
        return state, reporte

    @staticmethod
    def new_state(cfg: TrainConfig) -> TrainState:
        params = DenoiserService.init_params(cfg.denoiser, generator_for(cfg.seed, STREAM_INIT))
        return TrainState(
            params=params,
            optimizer=AdamOptimizer(len(params), cfg.learning_rate),
            rng=generator_for(cfg.seed, STREAM_DRAWS),
        )

    @staticmethod
    def config_digest(cfg: TrainConfig) -> bytes:
        """SHA-256 de la configuración serializada, sin los campos de duración de la corrida"""
        return hashlib.sha256(dump_config(cfg, exclude=DIGEST_EXCLUDED).encode("utf-8")).digest()

    @staticmethod
    def checkpoint_from_state(state: TrainState, cfg: TrainConfig) -> Checkpoint:
        return Checkpoint(
            params=state.params.copy(),
            m=state.optimizer.m.copy(),
            v=state.optimizer.v.copy(),
            step=state.step,
            rng_state=generator_state_bytes(state.rng),
            digest=TrainService.config_digest(cfg),
        )

    @staticmethod
    def state_from_checkpoint(ckpt: Checkpoint, cfg: TrainConfig) -> TrainState:
        optimizador = AdamOptimizer(len(ckpt.params), cfg.learning_rate)
        optimizador.m = ckpt.m.copy()
        optimizador.v = ckpt.v.copy()
        optimizador.step = ckpt.step
        return TrainState(
            params=ckpt.params.copy(), optimizer=optimizador, rng=generator_from_state_bytes(ckpt.rng_state)
        )

    @staticmethod
    def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
        """Bloque de parámetros, momentos m y v, paso, estado del generador y digest"""
        if len(ckpt.digest) != DIGEST_SIZE:
            raise CorruptCheckpoint(f"el digest debe tener {DIGEST_SIZE} bytes")
        return b"".join([
            DenoiserService.params_to_bytes(ckpt.params),
            ckpt.m.astype(PARAM_DTYPE).tobytes(),
            ckpt.v.astype(PARAM_DTYPE).tobytes(),
            TAIL.pack(ckpt.step, len(ckpt.rng_state)),
            ckpt.rng_state,
            ckpt.digest,
        ])

    @staticmethod
    def checkpoint_from_bytes(raw: bytes) -> Checkpoint:
        params, desplazamiento = DenoiserService.params_from_bytes(raw)
        n = len(params)
        n_bytes = n * PARAM_DTYPE.itemsize
        if len(raw) - desplazamiento < 2 * n_bytes + TAIL.size:
            raise CorruptCheckpoint("checkpoint truncado (momentos del optimizador)")
        m = np.frombuffer(raw, dtype=PARAM_DTYPE, count=n, offset=desplazamiento).astype(np.float64)
        v = np.frombuffer(raw, dtype=PARAM_DTYPE, count=n, offset=desplazamiento + n_bytes).astype(np.float64)
        desplazamiento += 2 * n_bytes
        paso, largo_estado = TAIL.unpack_from(raw, desplazamiento)
        desplazamiento += TAIL.size
        restantes = len(raw) - desplazamiento
        if restantes != largo_estado + DIGEST_SIZE:
            raise CorruptCheckpoint(
                f"longitud inesperada: quedan {restantes} bytes, se esperaban {largo_estado + DIGEST_SIZE}"
            )
        estado_rng = raw[desplazamiento:desplazamiento + largo_estado]
        try:
            generator_from_state_bytes(estado_rng)
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            raise CorruptCheckpoint(f"estado del generador ilegible: {e}") from e
        return Checkpoint(
            params=params, m=m, v=v, step=int(paso), rng_state=estado_rng,
            digest=raw[desplazamiento + largo_estado:],
        )

    @staticmethod
    def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
        ruta = Path(path)
        ruta.parent.mkdir(parents=True, exist_ok=True)
        ruta.write_bytes(TrainService.checkpoint_to_bytes(ckpt))
        logger.info(f"💾 Checkpoint guardado: {ruta} (paso {ckpt.step})")
        return ruta

    @staticmethod
    def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
        return TrainService.checkpoint_from_bytes(Path(path).read_bytes())

    @staticmethod
    def train(
        cfg: TrainConfig,
        manifest: Union[str, Path, CorpusManifest],
        out_dir: Union[str, Path],
        resume_from: Optional[Union[str, Path]] = None,
    ) -> TrainResult:
        """
        Entrena el denoiser con el objetivo MCR sobre el corpus

        Args:
            cfg: Configuración de entrenamiento
            manifest: Manifiesto o directorio del corpus
            out_dir: Directorio para el log de pérdidas y los checkpoints
            resume_from: Checkpoint desde el cual continuar

        Returns:
            TrainResult: Checkpoint final, rutas escritas y reportes de esta corrida
        """
        salida = Path(out_dir)
        salida.mkdir(parents=True, exist_ok=True)
        tripletas = _load_training_triplets(manifest)
        if not tripletas:
            raise EmptyBatch("el corpus no tiene tripletas")
        if tripletas[0].channels != cfg.denoiser.image_channels:
            raise ConfigError(
                f"denoiser.image_channels={cfg.denoiser.image_channels} "
                f"pero el corpus tiene {tripletas[0].channels} canales"
            )
        sched = DiffusionService.linear_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)

        if resume_from is not None:
            ckpt = TrainService.load_checkpoint(resume_from)
            if ckpt.digest != TrainService.config_digest(cfg):
                raise ConfigError(f"{resume_from} fue generado con otra configuración de entrenamiento")
            if ckpt.config != cfg.denoiser:
                raise ConfigError(f"{resume_from}: la arquitectura no coincide con denoiser.*")
            estado = TrainService.state_from_checkpoint(ckpt, cfg)
            logger.info(f"🚀 Reanudando desde el paso {estado.step}: {resume_from}")
        else:
            estado = TrainService.new_state(cfg)
            logger.info(f"🚀 Entrenamiento {cfg.mode}: {cfg.steps} pasos, {len(tripletas)} tripletas")

        ruta_log = salida / LOSS_LOG_NAME
        _prepare_loss_log(ruta_log, estado.step)
        lotes = BatchSchedule(len(tripletas), cfg.batch_size, cfg.seed)
        reportes: List[LossReport] = []
        inicio = time.perf_counter()

        with open(ruta_log, "a", encoding="utf-8") as registro:
            while estado.step < cfg.steps:
                lote = [tripletas[i] for i in lotes.indices(estado.step)]
                estado, reporte = TrainService.train_step(estado, lote, cfg, sched)
                reportes.append(reporte)
                segundos = time.perf_counter() - inicio if cfg.log_wall_time else None
                registro.write(_format_row(reporte, segundos) + "\n")
                if cfg.checkpoint_every and estado.step % cfg.checkpoint_every == 0 and estado.step < cfg.steps:
                    registro.flush()
                    TrainService.save_checkpoint(
                        TrainService.checkpoint_from_state(estado, cfg), salida / f"checkpoint_{estado.step:06d}.mcr"
                    )
                if estado.step % 100 == 0:
                    logger.info(f"📊 Paso {estado.step}: rec={reporte.rec:.5f} cons={reporte.cons:.5f}")

        final = TrainService.checkpoint_from_state(estado, cfg)
        ruta = TrainService.save_checkpoint(final, salida / CHECKPOINT_NAME)
        logger.info(f"✅ Entrenamiento terminado en el paso {estado.step}")
        return TrainResult(checkpoint=final, checkpoint_path=ruta, loss_log_path=ruta_log, reports=reportes)

    @staticmethod
    def objective_grad_check(
        seed: int,
        cfg: Optional[DenoiserConfig] = None,
        mode: TrainMode = "mcr",
        lambda_cons: float = 2.0,
        size: int = 16,
        n_coords: int = 100,
        step: float = 1e-4,
        tolerance: float = 1e-4,
    ) -> GradCheckReport:
        """
        Diferencias centrales sobre la pérdida total de tres ramas en una instancia de size x size

        Returns:
            GradCheckReport: Error relativo máximo y veredicto
        """
        cfg = cfg or DenoiserConfig()
        rng = np.random.default_rng(seed)
        params = DenoiserService.init_params(cfg, rng)
        for capa in params.layers:
            capa.bias[...] = rng.normal(0.0, 0.1, size=capa.bias.shape)
            capa.time_proj[...] = rng.normal(0.0, 0.1, size=capa.time_proj.shape)

        lote = []
        for _ in range(2):
            verdad = rng.uniform(0.0, 1.0, size=(cfg.image_channels, size, size))
            mascara = np.zeros((size, size), dtype=np.uint8)
            arriba, izquierda = rng.integers(2, size // 2, size=2)
            mascara[arriba:arriba + size // 4, izquierda:izquierda + size // 4] = 1
            lote.append(RemovalTriplet(composite=verdad, ground_truth=verdad, mask=BinaryMask(mascara)))
        perturbacion = PerturbConfig(dilation_radius_k=1)
        sorteos = TrainService.draw_branches(lote, perturbacion, DiffusionService.linear_schedule(), rng)

        def objetivo(p: DenoiserParams) -> float:
            return TrainService.objective_gradients(p, sorteos, mode, lambda_cons).total

        analitico = TrainService.objective_gradients(params, sorteos, mode, lambda_cons).grads.flat
        coordenadas = rng.choice(len(params), size=min(n_coords, len(params)), replace=False)
        max_rel = float(DenoiserService.relative_errors(params, objetivo, analitico, coordenadas, step).max())
        reporte = GradCheckReport(
            max_relative_error=max_rel, tolerance=tolerance, n_coordinates=int(coordenadas.size),
            passed=bool(max_rel < tolerance),
        )
        logger.info(f"📊 Grad-check objetivo ({mode}, lambda={lambda_cons}): error relativo máx {max_rel:.3e}")
        return reporte
