"""
Servicio de Corpus Procedural
Genera tripletas (compuesta, verdad de terreno, máscara) con verdad exacta tras la eliminación
"""
import logging
import math
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from app.core.exceptions import CorpusIoError, GenerationFailed, MalformedFile
from app.models.image import CorpusConfig, CorpusManifest, ManifestEntry, RemovalTriplet
from app.models.mask import BinaryMask
from app.services.image_service import ImageService
from app.utils.config_file import dump_config, parse_config_lines
from app.utils.seeding import generator_for

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
MAX_ATTEMPTS = 100
MIN_CONTRAST = 0.2
BACKGROUND_RANGE = (0.15, 0.85)


def _coordinate_ramp(width: int, height: int, angle: float) -> np.ndarray:
    # proyección normalizada a [0, 1] sobre la dirección `angle`
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    proyeccion = xx * math.cos(angle) + yy * math.sin(angle)
    extension = proyeccion.max() - proyeccion.min()
    if extension <= 0:
        return np.zeros_like(proyeccion)
    return (proyeccion - proyeccion.min()) / extension


def _background_channel(kind: str, width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = BACKGROUND_RANGE
    if kind == "gradient":
        a, b = rng.uniform(lo, hi, size=2)
        rampa = _coordinate_ramp(width, height, float(rng.uniform(0.0, 2.0 * math.pi)))
        return a + (b - a) * rampa
    if kind == "stripes":
        frecuencia = int(rng.integers(1, 4))
        amplitud = float(rng.uniform(0.1, 0.25))
        centro = float(rng.uniform(0.4, 0.6))
        fase = float(rng.uniform(0.0, 2.0 * math.pi))
        rampa = _coordinate_ramp(width, height, float(rng.uniform(0.0, math.pi)))
        return centro + amplitud * np.sin(2.0 * math.pi * frecuencia * rampa + fase)
    if kind == "smooth-noise":
        rejilla = rng.uniform(lo, hi, size=(4, 4)).astype(np.float32)
        suave = Image.fromarray(rejilla).resize((width, height), Image.Resampling.BICUBIC)
        return np.clip(np.asarray(suave, dtype=np.float64), lo, hi)
    raise ValueError(f"tipo de fondo desconocido: {kind}")


def _background(cfg: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    tipo = cfg.background_kinds[int(rng.integers(len(cfg.background_kinds)))]
    canales = [_background_channel(tipo, cfg.width, cfg.height, rng) for _ in range(cfg.channels)]
    return ImageService.quantize(np.stack(canales, axis=0))


def _silhouette(cfg: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    tipo = cfg.shape_kinds[int(rng.integers(len(cfg.shape_kinds)))]
    w, h = cfg.width, cfg.height
    area = float(rng.uniform(*cfg.shape_area_fraction_range)) * w * h
    lienzo = Image.new("L", (w, h), 0)
    dibujo = ImageDraw.Draw(lienzo)

    if tipo == "disc":
        r = math.sqrt(area / math.pi)
        cx = float(rng.uniform(r + 1, max(r + 1, w - r - 2)))
        cy = float(rng.uniform(r + 1, max(r + 1, h - r - 2)))
        dibujo.ellipse((cx - r, cy - r, cx + r, cy + r), fill=1)
    elif tipo == "rectangle":
        aspecto = float(rng.uniform(0.5, 2.0))
        ancho = max(1, min(w - 2, int(round(math.sqrt(area * aspecto)))))
        alto = max(1, min(h - 2, int(round(area / ancho))))
        izquierda = int(rng.integers(1, w - ancho))
        arriba = int(rng.integers(1, h - alto))
        dibujo.rectangle((izquierda, arriba, izquierda + ancho - 1, arriba + alto - 1), fill=1)
    else:
        n = int(rng.integers(5, 9))
        r = math.sqrt(area / math.pi) * 1.15
        cx = float(rng.uniform(r + 1, max(r + 1, w - r - 2)))
        cy = float(rng.uniform(r + 1, max(r + 1, h - r - 2)))
        angulos = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=n))
        radios = r * rng.uniform(0.6, 1.0, size=n)
        vertices = [(cx + float(rr * math.cos(a)), cy + float(rr * math.sin(a))) for a, rr in zip(angulos, radios)]
        dibujo.polygon(vertices, fill=1)
    return np.asarray(lienzo, dtype=np.uint8)


def _foreground_value(pixels: np.ndarray, rng: np.random.Generator):
    # intensidad constante que contrasta >= MIN_CONTRAST con cada píxel del fondo bajo la figura
    lo, hi = float(pixels.min()), float(pixels.max())
    arriba = hi + MIN_CONTRAST <= 1.0
    abajo = lo - MIN_CONTRAST >= 0.0
    if arriba and abajo:
        arriba = bool(rng.random() < 0.5)
    elif not (arriba or abajo):
        return None
    if arriba:
        u = float(rng.uniform(hi + MIN_CONTRAST, min(1.0, hi + 0.5)))
        return math.ceil(u * 255.0) / 255.0
    u = float(rng.uniform(max(0.0, lo - 0.5), lo - MIN_CONTRAST))
    return math.floor(u * 255.0) / 255.0


def _file_names(index: int, channels: int) -> Tuple[str, str, str]:
    ext = ImageService.extension_for(channels)
    return f"{index:04d}_composite{ext}", f"{index:04d}_truth{ext}", f"{index:04d}_mask.pgm"


class CorpusService:
    """
    Servicio para generar y leer el corpus procedural de tripletas
    """

    @staticmethod
    def synth_triplet(cfg: CorpusConfig, rng: np.random.Generator) -> RemovalTriplet:
        """
        Genera una tripleta de eliminación de objetos

        El fondo es la verdad de terreno; la compuesta es el fondo con una figura opaca
        pegada; la máscara es la silueta exacta de la figura.

        Args:
            cfg: Configuración del corpus
            rng: Generador con semilla

        Returns:
            RemovalTriplet: Tripleta cuantizada a 8 bits

        Raises:
            GenerationFailed: Si tras 100 intentos no se cumplen área y contraste
        """
        lo, hi = cfg.shape_area_fraction_range
        total = cfg.width * cfg.height
        for intento in range(MAX_ATTEMPTS):
            verdad = _background(cfg, rng)
            silueta = _silhouette(cfg, rng)
            fraccion = silueta.sum() / total
            if silueta.sum() == 0 or not (lo <= fraccion <= hi):
                continue
            seleccion = silueta.astype(bool)
            colores = [_foreground_value(verdad[c][seleccion], rng) for c in range(cfg.channels)]
            if any(color is None for color in colores):
                continue
            compuesta = verdad.copy()
            for c, color in enumerate(colores):
                compuesta[c][seleccion] = color
            if intento:
                logger.debug(f"Tripleta aceptada tras {intento + 1} intentos")
            return RemovalTriplet(composite=compuesta, ground_truth=verdad, mask=BinaryMask(silueta))
        raise GenerationFailed(f"no se generó una tripleta válida en {MAX_ATTEMPTS} intentos")

    @staticmethod
    def write_manifest(manifest: CorpusManifest, cfg: CorpusConfig) -> Path:
        """Escribe manifest.txt: `seed=<u64>`, la configuración como comentarios y una fila por tripleta"""
        ruta = manifest.directory / MANIFEST_NAME
        lineas = [f"seed={manifest.seed}", dump_config(cfg, prefijo_linea="# ").rstrip("\n")]
        for fila in manifest.entries:
            lineas.append(f"{fila.index}\t{fila.composite_path}\t{fila.truth_path}\t{fila.mask_path}")
        with open(ruta, "w", encoding="utf-8") as f:
            f.write("\n".join(lineas) + "\n")
        return ruta

    @staticmethod
    def make_corpus(cfg: CorpusConfig, out_dir: Union[str, Path]) -> CorpusManifest:
        """
        Genera el corpus completo en disco

        Cada tripleta i usa su propio generador derivado de (seed, i).

        Args:
            cfg: Configuración del corpus
            out_dir: Directorio destino

        Returns:
            CorpusManifest: Manifiesto escrito en out_dir/manifest.txt
        """
        directorio = Path(out_dir)
        logger.info(f"🚀 Generando corpus de {cfg.count} tripletas en {directorio}")
        manifest = CorpusManifest(seed=cfg.seed, directory=directorio, config=dict(cfg.model_dump()))
        try:
            directorio.mkdir(parents=True, exist_ok=True)
            for i in range(cfg.count):
                tripleta = CorpusService.synth_triplet(cfg, generator_for(cfg.seed, i))
                compuesta, verdad, mascara = _file_names(i, cfg.channels)
                ImageService.save_image(tripleta.composite, directorio / compuesta)
                ImageService.save_image(tripleta.ground_truth, directorio / verdad)
                ImageService.save_mask(tripleta.mask, directorio / mascara)
                manifest.entries.append(
                    ManifestEntry(index=i, composite_path=compuesta, truth_path=verdad, mask_path=mascara)
                )
            CorpusService.write_manifest(manifest, cfg)
        except OSError as e:
            raise CorpusIoError(f"no se pudo escribir el corpus en {directorio}: {e}") from e
        logger.info(f"✅ Corpus generado: {directorio / MANIFEST_NAME}")
        return manifest

    @staticmethod
    def read_manifest(path: Union[str, Path]) -> CorpusManifest:
        """
        Lee un manifiesto; `path` puede ser el archivo o el directorio del corpus

        Returns:
            CorpusManifest: Semilla, configuración eco y filas en orden
        """
        ruta = Path(path)
        if ruta.is_dir():
            ruta = ruta / MANIFEST_NAME
        try:
            with open(ruta, "r", encoding="utf-8") as f:
                lineas = [linea.rstrip("\n") for linea in f if linea.strip()]
        except OSError as e:
            raise CorpusIoError(f"no se pudo leer el manifiesto {ruta}: {e}") from e
        if not lineas or not lineas[0].startswith("seed="):
            raise MalformedFile(f"{ruta}: la primera línea debe ser 'seed=<u64>'")
        try:
            semilla = int(lineas[0][len("seed="):])
        except ValueError as e:
            raise MalformedFile(f"{ruta}: semilla inválida") from e

        comentarios = [linea.lstrip("#") for linea in lineas[1:] if linea.startswith("#")]
        filas: List[ManifestEntry] = []
        for linea in lineas[1:]:
            if linea.startswith("#"):
                continue
            campos = linea.split("\t")
            if len(campos) != 4:
                raise MalformedFile(f"{ruta}: fila con {len(campos)} campos: {linea!r}")
            filas.append(ManifestEntry(
                index=int(campos[0]), composite_path=campos[1], truth_path=campos[2], mask_path=campos[3]
            ))
        return CorpusManifest(
            seed=semilla, directory=ruta.parent, config=parse_config_lines(comentarios, str(ruta)), entries=filas
        )

    @staticmethod
    def load_triplet(manifest: CorpusManifest, entry: ManifestEntry) -> RemovalTriplet:
        return RemovalTriplet(
            composite=ImageService.load_image(manifest.resolve(entry.composite_path)),
            ground_truth=ImageService.load_image(manifest.resolve(entry.truth_path)),
            mask=ImageService.load_mask(manifest.resolve(entry.mask_path)),
        )

    @staticmethod
    def load_corpus(path: Union[str, Path]) -> List[RemovalTriplet]:
        """Carga todas las tripletas del corpus en el orden del manifiesto"""
        manifest = CorpusService.read_manifest(path)
        tripletas = [CorpusService.load_triplet(manifest, fila) for fila in manifest.entries]
        logger.info(f"📂 Corpus cargado: {len(tripletas)} tripletas desde {manifest.directory}")
        return tripletas
