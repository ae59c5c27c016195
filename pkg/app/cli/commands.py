"""
Subcomandos de la CLI MCR
synth, perturb, train, sample, eval, ablate y gradcheck sobre los servicios
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel

from app.core.config import get_settings
from app.core.exceptions import ConfigError, GradCheckFailed
from app.models.denoiser import DenoiserConfig
from app.models.image import CorpusConfig
from app.models.mask import PerturbConfig
from app.models.training import TrainConfig
from app.services import (
    AblationService,
    CorpusService,
    DenoiserService,
    DiffusionService,
    ImageService,
    MaskService,
    MetricsService,
    TrainService,
)
from app.services.ablation_service import ABLATION_HEADER, ARMS
from app.services.denoiser_service import DenoiserModel, DenoiserParams
from app.utils.config_file import build_model, dump_config, read_config_file
from app.utils.seeding import generator_for

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def _parse_assignments(items: Optional[List[str]]) -> Dict[str, str]:
    valores: Dict[str, str] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set espera 'clave=valor', recibido {item!r}")
        clave, valor = (parte.strip() for parte in item.split("=", 1))
        valores[clave] = valor
    return valores


def _parse_size(value: str) -> Dict[str, str]:
    partes = value.lower().split("x")
    if len(partes) != 2 or not all(p.strip().isdigit() for p in partes):
        raise ConfigError(f"--size espera ANCHOxALTO, recibido {value!r}")
    return {"width": partes[0].strip(), "height": partes[1].strip()}


def resolve_config(
    model_cls: Type[ModelT], config_path: Optional[str], overrides: Dict[str, Any], assignments: Optional[List[str]]
) -> ModelT:
    """
    Archivo de configuración, luego `--set clave=valor`, luego flags explícitos

    Returns:
        ModelT: Modelo validado (claves desconocidas son error)
    """
    flat: Dict[str, Any] = read_config_file(config_path) if config_path else {}
    flat.update(_parse_assignments(assignments))
    flat.update({k: v for k, v in overrides.items() if v is not None})
    return build_model(model_cls, flat)


def echo_config(model: BaseModel, **extras: Any) -> None:
    """Imprime la configuración resuelta en stdout en formato `key = value`"""
    for clave, valor in extras.items():
        if valor is not None:
            print(f"# {clave} = {valor}")
    print(dump_config(model), end="")


def load_denoiser(path: str) -> DenoiserParams:
    """Acepta un bloque de parámetros suelto o un checkpoint completo"""
    raw = Path(path).read_bytes()
    params, offset = DenoiserService.params_from_bytes(raw)
    if offset == len(raw):
        return params
    return TrainService.checkpoint_from_bytes(raw).params


# synth
def cmd_synth(args: argparse.Namespace) -> int:
    overrides: Dict[str, Any] = {"count": args.count, "seed": args.seed, "channels": args.channels}
    if args.size:
        overrides.update(_parse_size(args.size))
    cfg = resolve_config(CorpusConfig, args.config, overrides, args.set)
    echo_config(cfg, out=args.out)
    manifest = CorpusService.make_corpus(cfg, args.out)
    print(f"# triplets = {len(manifest.entries)}")
    return 0


# perturb
def cmd_perturb(args: argparse.Namespace) -> int:
    cfg = resolve_config(
        PerturbConfig, args.config,
        {"dilation_radius_k": args.k, "rect_probability": args.rect_probability}, args.set,
    )
    echo_config(cfg, mask=args.mask, mode=args.mode, seed=args.seed, out=args.out)
    mask = ImageService.load_mask(args.mask)
    rng = generator_for(args.seed)
    salida = Path(args.out)

    if args.mode == "dilate":
        ImageService.save_mask(MaskService.dilate(mask, cfg.radius_for(mask.width, rng)), salida)
    elif args.mode == "rect":
        ImageService.save_mask(MaskService.bounding_rect(mask), salida)
    elif args.mode == "random":
        libre = MaskService.random_mask(mask.width, mask.height, cfg.random_mask, rng)
        ImageService.save_mask(MaskService.union(mask, libre), salida)
    else:
        dilatada, reformada = MaskService.sample_perturbations(mask, cfg, rng)
        ImageService.save_mask(dilatada, salida.with_name(f"{salida.stem}_dilated{salida.suffix}"))
        ImageService.save_mask(reformada, salida.with_name(f"{salida.stem}_reshaped{salida.suffix}"))
    logger.info(f"✅ Máscara perturbada ({args.mode}) escrita en {salida}")
    return 0


def _train_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "steps": args.steps,
        "seed": args.seed,
        "mode": getattr(args, "mode", None),
        "lambda_cons": getattr(args, "lambda_cons", None),
        "learning_rate": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
    }


# train
def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(TrainConfig, args.config, _train_overrides(args), args.set)
    echo_config(cfg, corpus=args.corpus, out=args.out, resume=args.resume)
    resultado = TrainService.train(cfg, args.corpus, args.out, resume_from=args.resume)
    if resultado.reports:
        ultimo = resultado.reports[-1]
        print(f"# final_step = {ultimo.step}\n# final_rec = {ultimo.rec:.10g}\n# final_total = {ultimo.total:.10g}")
    print(f"# checkpoint = {resultado.checkpoint_path}")
    return 0


# sample
def cmd_sample(args: argparse.Namespace) -> int:
    cfg = resolve_config(TrainConfig, args.config, {}, args.set)
    echo_config(cfg, ckpt=args.ckpt, image=args.image, mask=args.mask, steps=args.steps, seed=args.seed, out=args.out)
    model = DenoiserModel(load_denoiser(args.ckpt))
    sched = DiffusionService.linear_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)
    resultado = DiffusionService.inpaint(
        model, ImageService.load_image(args.image), ImageService.load_mask(args.mask), sched,
        n_steps=args.steps, rng=generator_for(args.seed),
    )
    ImageService.save_image(resultado, args.out)
    logger.info(f"💾 Resultado escrito en {args.out}")
    return 0


# eval
def cmd_eval(args: argparse.Namespace) -> int:
    if (args.ckpt is None) == (args.predictions is None):
        raise ConfigError("eval requiere exactamente uno de --ckpt o --predictions")
    cfg = resolve_config(TrainConfig, args.config, {}, args.set)
    echo_config(cfg, ckpt=args.ckpt, predictions=args.predictions, corpus=args.corpus, out=args.out)
    model = DenoiserModel(load_denoiser(args.ckpt)) if args.ckpt else None
    reporte = MetricsService.evaluate(
        args.corpus,
        model=model,
        predictions_dir=args.predictions,
        suffix=args.suffix,
        sched=DiffusionService.linear_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end),
        n_steps=args.steps,
        seed=args.seed,
        perturb=None if args.no_gap else cfg.perturb,
        out_dir=args.out,
    )
    print(f"# psnr = {reporte.psnr:.10g}\n# ssim = {reporte.ssim:.10g}\n# mse = {reporte.mse:.10g}")
    return 0


# ablate
def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(TrainConfig, args.config, {"steps": args.steps}, args.set)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds espera enteros separados por coma: {args.seeds!r}") from e
    echo_config(cfg, corpus=args.corpus, out=args.out, seeds=args.seeds)
    filas = AblationService.run_ablation(cfg, args.corpus, args.out, seeds, n_steps=args.sample_steps)
    print(ABLATION_HEADER)
    for fila in filas:
        print(f"{fila.arm}\t{fila.psnr:.6g}\t{fila.ssim:.6g}\t{fila.mse:.6g}\t"
              f"{fila.psnr_masked:.6g}\t{fila.gap:.6g}\t{fila.cons:.6g}")
    return 0


# gradcheck
def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = resolve_config(
        DenoiserConfig, args.config, {"hidden_width": args.hidden_width, "image_channels": args.channels}, args.set
    )
    echo_config(cfg, seed=args.seed, target=args.target)
    reportes = []
    if args.target in ("denoiser", "both"):
        reportes.append(("denoiser", DenoiserService.grad_check(cfg, args.seed)))
    if args.target in ("objective", "both"):
        reportes.append(("objective", TrainService.objective_grad_check(args.seed, cfg)))
    for nombre, reporte in reportes:
        veredicto = "pass" if reporte.passed else "fail"
        print(f"{nombre}\t{reporte.max_relative_error:.3e}\t{reporte.n_coordinates}\t{veredicto}")
    if not all(reporte.passed for _, reporte in reportes):
        raise GradCheckFailed("el gradiente analítico no coincide con las diferencias finitas")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="Archivo `key = value` (default: ninguno)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="Sobrescribe una clave con puntos; repetible (default: ninguno)")


def register_commands(subparsers: argparse._SubParsersAction) -> None:
    """Registra cada subcomando con su handler en `func`"""
    settings = get_settings()
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = subparsers.add_parser("synth", help="Genera el corpus procedural", formatter_class=fmt)
    p.add_argument("--out", required=True, help="Directorio destino")
    p.add_argument("--count", type=int, default=None, help="Número de tripletas (default: 200)")
    p.add_argument("--size", default=None, help="ANCHOxALTO (default: 64x64)")
    p.add_argument("--channels", type=int, default=None, help="1 o 3 (default: 1)")
    p.add_argument("--seed", type=int, default=settings.DEFAULT_CORPUS_SEED, help="Semilla del corpus")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = subparsers.add_parser("perturb", help="Aplica una perturbación a una máscara", formatter_class=fmt)
    p.add_argument("--mask", required=True, help="Máscara PGM de entrada")
    p.add_argument("--mode", choices=["dilate", "rect", "random", "sample"], default="sample")
    p.add_argument("--k", type=int, default=None, help="Radio de dilatación (default: automático)")
    p.add_argument("--rect-probability", type=float, default=None, help="Probabilidad de la rama rectangular")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Máscara PGM de salida")
    _add_config_flags(p)
    p.set_defaults(func=cmd_perturb)

    p = subparsers.add_parser("train", help="Entrena el denoiser con MCR", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="Directorio o manifiesto del corpus")
    p.add_argument("--out", required=True, help="Directorio de checkpoints y log")
    p.add_argument("--steps", type=int, default=None, help="Pasos (default: 2000)")
    p.add_argument("--seed", type=int, default=None, help="Semilla (default: 0)")
    p.add_argument("--mode", choices=list(ARMS), default=None, help="Brazo (default: mcr)")
    p.add_argument("--lambda-cons", type=float, default=None, help="Peso de consistencia (default: 2.0)")
    p.add_argument("--lr", type=float, default=None, help="Tasa de aprendizaje (default: 5e-5)")
    p.add_argument("--batch-size", type=int, default=None, help="Tamaño de lote (default: 2)")
    p.add_argument("--resume", default=None, help="Checkpoint desde el cual continuar")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser("sample", help="Elimina el objeto de una imagen", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="Checkpoint o bloque de parámetros")
    p.add_argument("--image", required=True, help="Imagen PGM/PPM")
    p.add_argument("--mask", required=True, help="Máscara PGM")
    p.add_argument("--steps", type=int, default=settings.DEFAULT_SAMPLE_STEPS, help="Pasos de inferencia")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Imagen de salida")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sample)

    p = subparsers.add_parser("eval", help="Evalúa contra la verdad de terreno", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="Directorio o manifiesto del corpus")
    p.add_argument("--out", required=True, help="Directorio del reporte")
    p.add_argument("--ckpt", default=None, help="Checkpoint a evaluar")
    p.add_argument("--predictions", default=None, help="Directorio con predicciones NNNN_<suffix>")
    p.add_argument("--suffix", default="inpainted", help="Sufijo de las predicciones")
    p.add_argument("--steps", type=int, default=settings.DEFAULT_SAMPLE_STEPS, help="Pasos de inferencia")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-gap", action="store_true", help="Omite la brecha de consistencia")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = subparsers.add_parser("ablate", help="Compara los cuatro brazos de ablación", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="Directorio o manifiesto del corpus")
    p.add_argument("--out", required=True, help="Directorio de salida")
    p.add_argument("--seeds", default="0,1,2", help="Semillas separadas por coma")
    p.add_argument("--steps", type=int, default=None, help="Pasos por brazo (default: 2000)")
    p.add_argument("--sample-steps", type=int, default=settings.DEFAULT_SAMPLE_STEPS, help="Pasos de inferencia")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = subparsers.add_parser("gradcheck", help="Verifica los gradientes analíticos", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", choices=["denoiser", "objective", "both"], default="both")
    p.add_argument("--hidden-width", type=int, default=None, help="Canales ocultos (default: 32)")
    p.add_argument("--channels", type=int, default=None, help="Canales de imagen (default: 1)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gradcheck)
