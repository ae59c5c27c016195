"""
Servicio de Ablación
Entrena y evalúa los brazos mcr, dilate_only, reshape_only y baseline con el mismo presupuesto
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from app.core.exceptions import ConfigError
from app.models.image import CorpusManifest
from app.models.metrics import AblationRow
from app.models.training import TrainConfig
from app.services.corpus_service import CorpusService
from app.services.denoiser_service import DenoiserModel
from app.services.diffusion_service import DiffusionService
from app.services.metrics_service import MetricsService
from app.services.train_service import TrainService

logger = logging.getLogger(__name__)

ARMS = ("mcr", "dilate_only", "reshape_only", "baseline")
ABLATION_TABLE = "ablation.tsv"
ABLATION_HEADER = "arm\tpsnr\tssim\tmse\tpsnr_masked\tgap\tcons"
# Ventana final del log usada para la columna cons
CONS_WINDOW = 50


def _arm_row(arm: str, resultados: List[Dict[str, float]]) -> AblationRow:
    medias = {clave: float(np.mean([r[clave] for r in resultados])) for clave in resultados[0]}
    return AblationRow(arm=arm, **medias)


class AblationService:
    """
    Servicio para comparar los brazos de ablación del objetivo de consistencia
    """

    @staticmethod
    def run_ablation(
        base_cfg: TrainConfig,
        corpus: Union[str, Path, CorpusManifest],
        out_dir: Union[str, Path],
        seeds: Sequence[int],
        n_steps: int = 20,
        arms: Sequence[str] = ARMS,
    ) -> List[AblationRow]:
        """
        Corre cada brazo para cada semilla y escribe la tabla comparativa

        Cada brazo se entrena en out_dir/seed_<S>/<brazo>/ con la configuración base cambiando
        solo `mode` y `seed`; la brecha de consistencia usa siempre `base_cfg.perturb`.

        Args:
            base_cfg: Configuración común de entrenamiento
            corpus: Manifiesto o directorio del corpus
            out_dir: Directorio de salida
            seeds: Semillas a promediar
            n_steps: Pasos de inferencia en la evaluación
            arms: Brazos a correr

        Returns:
            List[AblationRow]: Una fila por brazo con medias sobre las semillas
        """
        if not seeds:
            raise ConfigError("ablate requiere al menos una semilla")
        manifest = corpus if isinstance(corpus, CorpusManifest) else CorpusService.read_manifest(corpus)
        salida = Path(out_dir)
        sched = DiffusionService.linear_schedule(base_cfg.schedule_T, base_cfg.beta_start, base_cfg.beta_end)
        resultados: Dict[str, List[Dict[str, float]]] = {brazo: [] for brazo in arms}

        for semilla in seeds:
            for brazo in arms:
                logger.info(f"🚀 Ablación: brazo {brazo}, semilla {semilla}")
                cfg = base_cfg.model_copy(update={"mode": brazo, "seed": int(semilla)})
                directorio = salida / f"seed_{semilla}" / brazo
                entrenado = TrainService.train(cfg, manifest, directorio)
                reporte = MetricsService.evaluate(
                    manifest, model=DenoiserModel(entrenado.checkpoint.params), sched=sched,
                    n_steps=n_steps, seed=int(semilla), perturb=base_cfg.perturb, out_dir=directorio,
                )
                cola = entrenado.reports[-CONS_WINDOW:]
                resultados[brazo].append({
                    "psnr": reporte.psnr,
                    "ssim": reporte.ssim,
                    "mse": reporte.mse,
                    "psnr_masked": reporte.psnr_masked,
                    "gap": reporte.consistency_gap if reporte.consistency_gap is not None else 0.0,
                    "cons": float(np.mean([r.cons for r in cola])) if cola else 0.0,
                })

        filas = [_arm_row(brazo, resultados[brazo]) for brazo in arms]
        AblationService.write_ablation_table(filas, salida)
        return filas

    @staticmethod
    def write_ablation_table(rows: Sequence[AblationRow], out_dir: Union[str, Path]) -> Path:
        ruta = Path(out_dir) / ABLATION_TABLE
        ruta.parent.mkdir(parents=True, exist_ok=True)
        lineas = [ABLATION_HEADER]
        for r in rows:
            valores = (r.psnr, r.ssim, r.mse, r.psnr_masked, r.gap, r.cons)
            lineas.append("\t".join([r.arm] + [f"{v:.10g}" for v in valores]))
        ruta.write_text("\n".join(lineas) + "\n", encoding="utf-8")
        logger.info(f"💾 Tabla de ablación escrita en {ruta}")
        return ruta
