"""
Servicio del Denoiser
Red convolucional condicional eps_theta de 3 capas con retropropagación exacta
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import ValidationError
from scipy.special import expit

from app.core.exceptions import CacheMismatch, CorruptCheckpoint, ShapeMismatch
from app.models.denoiser import DenoiserConfig, GradCheckReport

logger = logging.getLogger(__name__)

MAGIC = b"MCR1"
HEADER = struct.Struct("<4s6i")
PARAM_DTYPE = np.dtype("<f8")
TIME_MAX_PERIOD = 1e4


class LayerParams(NamedTuple):
    kernel: np.ndarray
    bias: np.ndarray
    time_proj: np.ndarray


class DenoiserParams:
    """
    Todos los pesos de la red en un vector plano float64

    Orden: kernel capa 0, bias capa 0, proyección temporal capa 0, kernel capa 1, ...
    Los arreglos por capa son vistas del vector plano.
    """

    def __init__(self, config: DenoiserConfig, flat: Optional[np.ndarray] = None):
        self.config = config
        tamano = config.parameter_count()
        if flat is None:
            flat = np.zeros(tamano, dtype=np.float64)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (tamano,):
            raise ShapeMismatch(f"se esperaban {tamano} parámetros, recibidos {flat.shape}")
        self.flat = flat

    @property
    def layers(self) -> List[LayerParams]:
        capas = []
        desplazamiento = 0
        for formas in self.config.layer_shapes():
            vistas = []
            for forma in formas:
                n = int(np.prod(forma))
                vistas.append(self.flat[desplazamiento:desplazamiento + n].reshape(forma))
                desplazamiento += n
            capas.append(LayerParams(*vistas))
        return capas

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, self.flat.copy())

    def zeros_like(self) -> "DenoiserParams":
        return DenoiserParams(self.config)

    def __len__(self) -> int:
        return int(self.flat.size)


@dataclass
class ForwardCache:
    """Activaciones guardadas por forward para backward"""

    config: DenoiserConfig
    batched: bool
    spatial: Tuple[int, int, int]
    emb: np.ndarray
    out_shape: Tuple[int, ...]
    layers: List[Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]] = field(default_factory=list)


BackwardFn = Callable[[DenoiserParams, ForwardCache, np.ndarray], DenoiserParams]


def _im2col(h: np.ndarray) -> np.ndarray:
    # h: (N, H, W, C) -> (N*H*W, C*9), padding "same" con ceros
    n, alto, ancho, c = h.shape
    relleno = np.pad(h, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ventanas = sliding_window_view(relleno, (3, 3), axis=(1, 2))
    return ventanas.reshape(n * alto * ancho, c * 9)


def _col2im(dcols: np.ndarray, n: int, alto: int, ancho: int, c: int) -> np.ndarray:
    d = dcols.reshape(n, alto, ancho, c, 3, 3)
    drelleno = np.zeros((n, alto + 2, ancho + 2, c))
    for a in range(3):
        for b in range(3):
            drelleno[:, a:a + alto, b:b + ancho, :] += d[..., a, b]
    return drelleno[:, 1:alto + 1, 1:ancho + 1, :]


def _as_batch(x: np.ndarray, channels: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeMismatch(f"{name}: se esperaban {channels} canales, forma {x.shape}")
    return x


class DenoiserService:
    """
    Servicio para el denoiser convolucional: inicialización, forward, backward y serialización
    """

    @staticmethod
    def init_params(cfg: DenoiserConfig, rng: np.random.Generator) -> DenoiserParams:
        """
        Inicialización He: kernels ~ N(0, sqrt(2 / fan_in)); bias y proyecciones temporales en cero

        Args:
            cfg: Configuración de la red
            rng: Generador con semilla

        Returns:
            DenoiserParams: Parámetros iniciales
        """
        params = DenoiserParams(cfg)
        for capa in params.layers:
            c_out, c_in, kh, kw = capa.kernel.shape
            fan_in = c_in * kh * kw
            capa.kernel[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=capa.kernel.shape)
        return params

    @staticmethod
    def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
        """Embedding sinusoidal [sin(t w), cos(t w)]; w geométrico de 1 a 1e-4 (periodos 1 .. 1e4)"""
        mitad = dim // 2
        if mitad == 1:
            frecuencias = np.ones(1)
        else:
            frecuencias = np.power(TIME_MAX_PERIOD, -np.arange(mitad, dtype=np.float64) / (mitad - 1))
        argumentos = np.asarray(t, dtype=np.float64).reshape(-1, 1) * frecuencias[None, :]
        return np.concatenate([np.sin(argumentos), np.cos(argumentos)], axis=1)

    @staticmethod
    def forward(
        params: DenoiserParams, x_t: np.ndarray, t: Union[int, np.ndarray], cond: np.ndarray
    ) -> Tuple[np.ndarray, ForwardCache]:
        """
        eps_hat = eps_theta(x_t, t, cond)

        Concatena [x_t, cond] en canales; cada capa es conv 3x3 "same" + bias + proyección
        del embedding temporal, seguida de SiLU salvo en la última capa.

        Args:
            params: Parámetros de la red
            x_t: Muestra ruidosa (C, H, W) o (N, C, H, W)
            t: Paso temporal (escalar o uno por muestra)
            cond: Condicionamiento (C+1, H, W) o (N, C+1, H, W)

        Returns:
            Tuple[np.ndarray, ForwardCache]: eps_hat con la forma de x_t y la caché
        """
        cfg = params.config
        en_lote = np.ndim(x_t) == 4
        x = _as_batch(x_t, cfg.image_channels, "x_t")
        z_cond = _as_batch(cond, cfg.image_channels + 1, "cond")
        if x.shape[0] != z_cond.shape[0] or x.shape[2:] != z_cond.shape[2:]:
            raise ShapeMismatch(f"x_t {x.shape} y cond {z_cond.shape} no coinciden")
        n, _, alto, ancho = x.shape
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n,))
        emb = DenoiserService.time_embedding(tt, cfg.time_embed_dim)

        h = np.transpose(np.concatenate([x, z_cond], axis=1), (0, 2, 3, 1))
        cache = ForwardCache(config=cfg, batched=en_lote, spatial=(n, alto, ancho), emb=emb, out_shape=np.shape(x_t))
        capas = params.layers
        for i, capa in enumerate(capas):
            c_out = capa.kernel.shape[0]
            columnas = _im2col(h)
            z = columnas @ capa.kernel.reshape(c_out, -1).T
            z = z.reshape(n, alto, ancho, c_out) + capa.bias + (emb @ capa.time_proj.T)[:, None, None, :]
            if i + 1 < len(capas):
                s = expit(z)
                cache.layers.append((columnas, z, s))
                h = z * s
            else:
                cache.layers.append((columnas, z, None))
                h = z
        salida = np.transpose(h, (0, 3, 1, 2))
        return (salida if en_lote else salida[0]), cache

    @staticmethod
    def backward(params: DenoiserParams, cache: ForwardCache, grad_out: np.ndarray) -> DenoiserParams:
        """
        Gradientes exactos de <grad_out, eps_hat> respecto de cada parámetro

        Args:
            params: Los mismos parámetros usados en forward
            cache: Caché devuelta por forward
            grad_out: Gradiente con la forma de eps_hat

        Returns:
            DenoiserParams: Gradientes con el mismo layout que los parámetros
        """
        if params.config != cache.config:
            raise CacheMismatch("la configuración de los parámetros no coincide con la caché")
        if np.shape(grad_out) != cache.out_shape:
            raise CacheMismatch(f"grad_out {np.shape(grad_out)} no coincide con eps_hat {cache.out_shape}")
        n, alto, ancho = cache.spatial
        g = np.asarray(grad_out, dtype=np.float64)
        if not cache.batched:
            g = g[None]
        g = np.transpose(g, (0, 2, 3, 1))

        grads = params.zeros_like()
        capas = params.layers
        dcapas = grads.layers
        for i in reversed(range(len(capas))):
            columnas, z, s = cache.layers[i]
            capa, dcapa = capas[i], dcapas[i]
            c_out = capa.kernel.shape[0]
            if s is not None:
                g = g * (s * (1.0 + z * (1.0 - s)))
            g2 = g.reshape(-1, c_out)
            dcapa.kernel[...] = (g2.T @ columnas).reshape(capa.kernel.shape)
            dcapa.bias[...] = g2.sum(axis=0)
            dcapa.time_proj[...] = g.sum(axis=(1, 2)).T @ cache.emb
            if i > 0:
                c_in = capa.kernel.shape[1]
                dcolumnas = g2 @ capa.kernel.reshape(c_out, -1)
                g = _col2im(dcolumnas, n, alto, ancho, c_in)
        return grads

    @staticmethod
    def grad_check(
        cfg: DenoiserConfig,
        seed: int,
        backward_fn: Optional[BackwardFn] = None,
        n_coords: int = 100,
        size: int = 8,
        step: float = 1e-4,
        tolerance: float = 1e-4,
    ) -> GradCheckReport:
        """
        Compara backward contra diferencias centrales en una instancia aleatoria pequeña

        Args:
            cfg: Configuración de la red
            seed: Semilla de la instancia
            backward_fn: Implementación a verificar (por defecto DenoiserService.backward)
            n_coords: Coordenadas de parámetros a comparar
            size: Lado de la imagen
            step: Paso de las diferencias centrales
            tolerance: Error relativo máximo aceptado

        Returns:
            GradCheckReport: Error relativo máximo y veredicto
        """
        backward_fn = backward_fn or DenoiserService.backward
        rng = np.random.default_rng(seed)
        params = DenoiserService.init_params(cfg, rng)
        for capa in params.layers:
            capa.bias[...] = rng.normal(0.0, 0.1, size=capa.bias.shape)
            capa.time_proj[...] = rng.normal(0.0, 0.1, size=capa.time_proj.shape)
        c = cfg.image_channels
        x_t = rng.standard_normal((2, c, size, size))
        cond = rng.standard_normal((2, c + 1, size, size))
        t = rng.integers(0, 200, size=2)
        g = rng.standard_normal((2, c, size, size))

        def objetivo(p: DenoiserParams) -> float:
            return float(np.sum(g * DenoiserService.forward(p, x_t, t, cond)[0]))

        _, cache = DenoiserService.forward(params, x_t, t, cond)
        analitico = backward_fn(params, cache, g).flat
        coordenadas = rng.choice(len(params), size=min(n_coords, len(params)), replace=False)
        max_rel = DenoiserService.relative_errors(params, objetivo, analitico, coordenadas, step).max()
        reporte = GradCheckReport(
            max_relative_error=float(max_rel), tolerance=tolerance,
            n_coordinates=int(coordenadas.size), passed=bool(max_rel < tolerance),
        )
        logger.info(f"📊 Grad-check denoiser: error relativo máx {reporte.max_relative_error:.3e}")
        return reporte

    @staticmethod
    def relative_errors(
        params: DenoiserParams,
        objetivo: Callable[[DenoiserParams], float],
        analitico: np.ndarray,
        coords: np.ndarray,
        step: float,
    ) -> np.ndarray:
        """Error relativo |a - n| / max(|a|, |n|, 1e-6) por coordenada, con n por diferencias centrales"""
        errores = np.empty(coords.size)
        for k, idx in enumerate(coords):
            mas, menos = params.copy(), params.copy()
            mas.flat[idx] += step
            menos.flat[idx] -= step
            numerico = (objetivo(mas) - objetivo(menos)) / (2.0 * step)
            a = analitico[idx]
            errores[k] = abs(a - numerico) / max(abs(a), abs(numerico), 1e-6)
        return errores

    @staticmethod
    def params_to_bytes(params: DenoiserParams) -> bytes:
        """Bloque de parámetros: magic, DenoiserConfig en int32 LE y floats64 LE en orden fijo"""
        cfg = params.config
        encabezado = HEADER.pack(
            MAGIC, cfg.image_channels, cfg.in_channels, cfg.hidden_width,
            cfg.n_layers, cfg.kernel, cfg.time_embed_dim,
        )
        return encabezado + params.flat.astype(PARAM_DTYPE).tobytes()

    @staticmethod
    def params_from_bytes(raw: bytes, offset: int = 0) -> Tuple[DenoiserParams, int]:
        """
        Lee un bloque de parámetros desde `offset`

        Returns:
            Tuple[DenoiserParams, int]: Parámetros y el offset tras el bloque
        """
        if len(raw) - offset < HEADER.size:
            raise CorruptCheckpoint("bloque de parámetros truncado (encabezado)")
        magic, c, c_in, ocultos, n_capas, kernel, dim_emb = HEADER.unpack_from(raw, offset)
        if magic != MAGIC:
            raise CorruptCheckpoint(f"magic inválido {magic!r}")
        try:
            cfg = DenoiserConfig(
                image_channels=c, hidden_width=ocultos, n_layers=n_capas, kernel=kernel, time_embed_dim=dim_emb
            )
        except ValidationError as e:
            raise CorruptCheckpoint(f"configuración inválida en el encabezado: {e}") from e
        if cfg.in_channels != c_in:
            raise CorruptCheckpoint("in_channels del encabezado no es 2C + 1")
        offset += HEADER.size
        n_bytes = cfg.parameter_count() * PARAM_DTYPE.itemsize
        if len(raw) - offset < n_bytes:
            raise CorruptCheckpoint("bloque de parámetros truncado")
        plano = np.frombuffer(raw, dtype=PARAM_DTYPE, count=cfg.parameter_count(), offset=offset).astype(np.float64)
        return DenoiserParams(cfg, plano), offset + n_bytes

    @staticmethod
    def save_params(params: DenoiserParams, path: Union[str, Path]) -> Path:
        ruta = Path(path)
        ruta.parent.mkdir(parents=True, exist_ok=True)
        ruta.write_bytes(DenoiserService.params_to_bytes(params))
        return ruta

    @staticmethod
    def load_params(path: Union[str, Path]) -> DenoiserParams:
        crudo = Path(path).read_bytes()
        params, offset = DenoiserService.params_from_bytes(crudo)
        if offset != len(crudo):
            raise CorruptCheckpoint(f"{path}: {len(crudo) - offset} bytes sobrantes")
        return params


class DenoiserModel:
    """Adapta DenoiserParams al protocolo NoisePredictor del muestreador"""

    def __init__(self, params: DenoiserParams):
        self.params = params

    def __call__(self, x_t: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        return DenoiserService.forward(self.params, x_t, t, cond)[0]
