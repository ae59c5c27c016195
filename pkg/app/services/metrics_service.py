"""
Servicio de Métricas
PSNR, SSIM, variantes restringidas a la máscara y la brecha de consistencia entre máscaras
"""
import hashlib
import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from skimage.metrics import structural_similarity

from app.core.exceptions import ConfigError, EmptyBatch, EmptyMask, InvalidRange, ShapeMismatch, TooSmall
from app.models.image import CorpusManifest, RemovalTriplet
from app.models.mask import BinaryMask, PerturbConfig
from app.models.metrics import ImageMetrics, MetricsReport
from app.services.corpus_service import CorpusService
from app.services.diffusion_service import DiffusionService, NoisePredictor, NoiseSchedule
from app.services.image_service import ImageService
from app.services.mask_service import MaskService
from app.utils.seeding import generator_for

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
REPORT_NAME = "metrics.txt"
TABLE_NAME = "metrics.tsv"
TABLE_HEADER = "index\tpsnr\tssim\tmse\tpsnr_masked\tssim_masked\tgap"

# (tripleta, máscara, generador) -> imagen rellenada en [0, 1]
Inpainter = Callable[[RemovalTriplet, BinaryMask, np.random.Generator], np.ndarray]


def _pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"formas distintas: {a.shape} vs {b.shape}")
    return a, b


def _psnr_from_mse(error: float, max_value: float) -> float:
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / error)


def _luminance(img: np.ndarray) -> np.ndarray:
    # (C, H, W) -> promedio de canales; 2-D se usa tal cual
    return img.mean(axis=0) if img.ndim == 3 else img


def _ssim_map(a: np.ndarray, b: np.ndarray):
    a, b = _pair(a, b)
    luz_a, luz_b = _luminance(a), _luminance(b)
    if min(luz_a.shape) < SSIM_WINDOW:
        raise TooSmall(f"SSIM requiere H, W >= {SSIM_WINDOW}, recibido {luz_a.shape}")
    return structural_similarity(
        luz_a, luz_b, data_range=1.0, gaussian_weights=True, sigma=SSIM_SIGMA,
        use_sample_covariance=False, full=True,
    )


def _mean_finite(valores: List[float]) -> Tuple[float, int]:
    finitos = [v for v in valores if math.isfinite(v)]
    media = float(np.mean(finitos)) if finitos else math.inf
    return media, len(valores) - len(finitos)


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "-"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.10g}"


def _table_rows(rows: Sequence[ImageMetrics]) -> List[str]:
    return [
        "\t".join([str(r.index), _fmt(r.psnr), _fmt(r.ssim), _fmt(r.mse),
                   _fmt(r.psnr_masked), _fmt(r.ssim_masked), _fmt(r.gap)])
        for r in rows
    ]


class MetricsService:
    """
    Servicio para medir la calidad de la eliminación y la consistencia entre máscaras
    """

    @staticmethod
    def mse(a: np.ndarray, b: np.ndarray) -> float:
        a, b = _pair(a, b)
        return float(np.mean((a - b) ** 2))

    @staticmethod
    def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
        """
        10 log10(max_value^2 / MSE); devuelve +inf si las imágenes son idénticas

        Args:
            a: Imagen de referencia
            b: Imagen comparada
            max_value: Rango dinámico

        Returns:
            float: PSNR en dB
        """
        if max_value <= 0:
            raise InvalidRange("max_value debe ser > 0")
        return _psnr_from_mse(MetricsService.mse(a, b), max_value)

    @staticmethod
    def ssim(a: np.ndarray, b: np.ndarray) -> float:
        """SSIM medio con ventana gaussiana 11x11 (sigma 1.5), L = 1; 3 canales se promedian antes"""
        return float(_ssim_map(a, b)[0])

    @staticmethod
    def masked_psnr(a: np.ndarray, b: np.ndarray, mask: BinaryMask, max_value: float = 1.0) -> float:
        """PSNR sobre los píxeles de la máscara en todos los canales"""
        a, b = _pair(a, b)
        if mask.is_empty():
            raise EmptyMask("la métrica enmascarada requiere una máscara no vacía")
        diferencia = (a - b)[..., mask.as_bool()]
        return _psnr_from_mse(float(np.mean(diferencia ** 2)), max_value)

    @staticmethod
    def masked_ssim(a: np.ndarray, b: np.ndarray, mask: BinaryMask) -> float:
        """Media del mapa SSIM local sobre los píxeles de la máscara"""
        if mask.is_empty():
            raise EmptyMask("la métrica enmascarada requiere una máscara no vacía")
        _, mapa = _ssim_map(a, b)
        return float(mapa[mask.as_bool()].mean())

    @staticmethod
    def image_metrics(index: int, prediction: np.ndarray, truth: np.ndarray, mask: BinaryMask) -> ImageMetrics:
        return ImageMetrics(
            index=index,
            psnr=MetricsService.psnr(prediction, truth),
            ssim=MetricsService.ssim(prediction, truth),
            mse=MetricsService.mse(prediction, truth),
            psnr_masked=MetricsService.masked_psnr(prediction, truth, mask),
            ssim_masked=MetricsService.masked_ssim(prediction, truth, mask),
        )

    @staticmethod
    def model_inpainter(model: NoisePredictor, sched: NoiseSchedule, n_steps: int) -> Inpainter:
        """Inpainter que rellena la compuesta con el muestreador determinista"""

        def rellenar(triplet: RemovalTriplet, mask: BinaryMask, rng: np.random.Generator) -> np.ndarray:
            return DiffusionService.inpaint(model, triplet.composite, mask, sched, n_steps=n_steps, rng=rng)

        return rellenar

    @staticmethod
    def triplet_gap(
        inpainter: Inpainter, triplet: RemovalTriplet, perturb: PerturbConfig, rng: np.random.Generator
    ) -> float:
        """
        Brecha de una tripleta: media sobre (dilatada, reformada) del error cuadrático medio
        entre salidas, restringido a la máscara original

        Las tres salidas usan la misma semilla de muestreo.
        """
        semilla_muestreo = int(rng.integers(0, 2**63))
        dilatada, reformada = MaskService.sample_perturbations(triplet.mask, perturb, rng)
        seleccion = triplet.mask.as_bool()
        base = inpainter(triplet, triplet.mask, np.random.default_rng(semilla_muestreo))[..., seleccion]
        brechas = []
        for perturbada in (dilatada, reformada):
            salida = inpainter(triplet, perturbada, np.random.default_rng(semilla_muestreo))[..., seleccion]
            brechas.append(float(np.mean((base - salida) ** 2)))
        return float(np.mean(brechas))

    @staticmethod
    def consistency_gap(
        model: Optional[NoisePredictor],
        triplets: Sequence[RemovalTriplet],
        perturb: PerturbConfig,
        sched: NoiseSchedule,
        n_steps: int,
        rng: np.random.Generator,
        inpainter: Optional[Inpainter] = None,
    ) -> float:
        """
        Divergencia media de las salidas bajo máscaras original y perturbadas

        Args:
            model: Predictor de ruido (ignorado si se pasa `inpainter`)
            triplets: Tripletas a evaluar
            perturb: Configuración de perturbación
            sched: Calendario
            n_steps: Pasos de inferencia
            rng: Generador para las perturbaciones y semillas de muestreo
            inpainter: Rellenador alternativo

        Returns:
            float: Brecha promediada sobre perturbaciones y tripletas
        """
        if not triplets:
            raise EmptyBatch("consistency_gap requiere al menos una tripleta")
        if inpainter is None:
            inpainter = MetricsService.model_inpainter(model, sched, n_steps)
        brechas = [MetricsService.triplet_gap(inpainter, tripleta, perturb, rng) for tripleta in triplets]
        return float(np.mean(brechas))

    @staticmethod
    def aggregate(rows: Sequence[ImageMetrics]) -> MetricsReport:
        """Pliega las filas en índice ascendente; medias aritméticas, PSNR infinitos contados aparte"""
        filas = sorted(rows, key=lambda r: r.index)
        media_psnr, psnr_infinitos = _mean_finite([r.psnr for r in filas])
        media_psnr_m, psnr_m_infinitos = _mean_finite([r.psnr_masked for r in filas])
        brechas = [r.gap for r in filas if r.gap is not None]
        return MetricsReport(
            rows=filas,
            count=len(filas),
            psnr=media_psnr,
            ssim=float(np.mean([r.ssim for r in filas])) if filas else 0.0,
            mse=float(np.mean([r.mse for r in filas])) if filas else 0.0,
            psnr_masked=media_psnr_m,
            ssim_masked=float(np.mean([r.ssim_masked for r in filas])) if filas else 0.0,
            psnr_inf_count=psnr_infinitos,
            psnr_masked_inf_count=psnr_m_infinitos,
            consistency_gap=float(np.mean(brechas)) if brechas else None,
            digest=hashlib.sha256("\n".join(_table_rows(filas)).encode("utf-8")).hexdigest(),
        )

    @staticmethod
    def evaluate(
        corpus: Union[str, Path, CorpusManifest],
        model: Optional[NoisePredictor] = None,
        predictions_dir: Optional[Union[str, Path]] = None,
        suffix: str = "inpainted",
        sched: Optional[NoiseSchedule] = None,
        n_steps: int = 20,
        seed: int = 0,
        perturb: Optional[PerturbConfig] = None,
        out_dir: Optional[Union[str, Path]] = None,
    ) -> MetricsReport:
        """
        Evalúa un modelo o un directorio de predicciones contra la verdad de terreno del corpus

        Con `model`, cada compuesta se rellena con una semilla derivada de (seed, índice) y,
        si se da `perturb`, se mide además la brecha de consistencia. Con `predictions_dir`,
        se leen los archivos `NNNN_<suffix>.pgm|ppm`.

        Args:
            corpus: Manifiesto o directorio del corpus
            model: Predictor de ruido
            predictions_dir: Directorio con predicciones ya generadas
            suffix: Sufijo de los archivos de predicción
            sched: Calendario (lineal por defecto)
            n_steps: Pasos de inferencia
            seed: Semilla de muestreo
            perturb: Perturbaciones para la brecha de consistencia
            out_dir: Si se da, se escriben las predicciones y el reporte

        Returns:
            MetricsReport: Filas por imagen y medias
        """
        if (model is None) == (predictions_dir is None):
            raise ConfigError("evaluate requiere exactamente uno de: model, predictions_dir")
        manifest = corpus if isinstance(corpus, CorpusManifest) else CorpusService.read_manifest(corpus)
        sched = sched or DiffusionService.linear_schedule()
        salida = Path(out_dir) if out_dir is not None else None
        if salida is not None:
            salida.mkdir(parents=True, exist_ok=True)
        rellenar = MetricsService.model_inpainter(model, sched, n_steps) if model is not None else None

        logger.info(f"🚀 Evaluando {len(manifest.entries)} tripletas de {manifest.directory}")
        filas: List[ImageMetrics] = []
        for entrada in manifest.entries:
            tripleta = CorpusService.load_triplet(manifest, entrada)
            nombre = f"{entrada.index:04d}_{suffix}{ImageService.extension_for(tripleta.channels)}"
            if rellenar is not None:
                prediccion = rellenar(tripleta, tripleta.mask, generator_for(seed, 0, entrada.index))
                if salida is not None:
                    ImageService.save_image(prediccion, salida / nombre)
            else:
                prediccion = ImageService.load_image(Path(predictions_dir) / nombre)
            fila = MetricsService.image_metrics(entrada.index, prediccion, tripleta.ground_truth, tripleta.mask)
            if rellenar is not None and perturb is not None:
                fila.gap = MetricsService.triplet_gap(
                    rellenar, tripleta, perturb, generator_for(seed, 1, entrada.index)
                )
            filas.append(fila)

        reporte = MetricsService.aggregate(filas)
        logger.info(f"📊 PSNR={_fmt(reporte.psnr)} SSIM={_fmt(reporte.ssim)} MSE={_fmt(reporte.mse)}")
        if salida is not None:
            MetricsService.write_report(reporte, salida)
        return reporte

    @staticmethod
    def write_report(report: MetricsReport, out_dir: Union[str, Path]) -> Path:
        """Escribe metrics.txt (`key = value`) y metrics.tsv (una fila por imagen)"""
        salida = Path(out_dir)
        salida.mkdir(parents=True, exist_ok=True)
        claves = [
            ("count", str(report.count)),
            ("psnr", _fmt(report.psnr)),
            ("ssim", _fmt(report.ssim)),
            ("mse", _fmt(report.mse)),
            ("psnr_masked", _fmt(report.psnr_masked)),
            ("ssim_masked", _fmt(report.ssim_masked)),
            ("psnr_inf_count", str(report.psnr_inf_count)),
            ("psnr_masked_inf_count", str(report.psnr_masked_inf_count)),
            ("consistency_gap", _fmt(report.consistency_gap)),
            ("digest", report.digest),
        ]
        (salida / REPORT_NAME).write_text("".join(f"{k} = {v}\n" for k, v in claves), encoding="utf-8")
        tabla = [TABLE_HEADER] + _table_rows(report.rows)
        (salida / TABLE_NAME).write_text("\n".join(tabla) + "\n", encoding="utf-8")
        logger.info(f"💾 Reporte escrito en {salida / REPORT_NAME}")
        return salida / REPORT_NAME
