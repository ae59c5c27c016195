"""
Aplicación principal - CLI MCR
Arma el parser, configura el logging y traduce excepciones a códigos de salida
"""
import argparse
import logging
import sys
from typing import Callable, List, Optional, Sequence, Tuple, Type

from pydantic import ValidationError

from app.cli.commands import register_commands
from app.core.config import get_settings
from app.core.exceptions import MCRError

logger = logging.getLogger(__name__)

# Obtener configuración
settings = get_settings()


def configure_logging(verbose: bool = False) -> None:
    """Logging a stderr; stdout queda para la configuración resuelta y las tablas"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format=settings.LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )


# Manejadores de excepciones: (tipo, código de salida, ¿traza completa?)
EXCEPTION_HANDLERS: List[Tuple[Type[BaseException], Callable[[BaseException], int], bool]] = [
    (MCRError, lambda exc: exc.exit_code, False),
    (ValidationError, lambda exc: 2, False),
    (OSError, lambda exc: 3, False),
    (Exception, lambda exc: 1, True),
]


def handle_exception(exc: BaseException) -> int:
    """Registra la excepción con ❌ y devuelve el código de salida que le corresponde"""
    for tipo, codigo, traza in EXCEPTION_HANDLERS:
        if isinstance(exc, tipo):
            if traza:
                logger.exception(f"❌ Error inesperado: {exc}")
            else:
                logger.error(f"❌ {type(exc).__name__}: {exc}")
            return codigo(exc)
    raise exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcr", description=settings.DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"{settings.APP_NAME} {settings.APP_VERSION}")
    parser.add_argument("--verbose", action="store_true", help="Logging en nivel DEBUG")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMANDO")
    register_commands(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Punto de entrada de la CLI

    Returns:
        int: 0 ok, 2 uso, 3 E/S, 4 dominio, 5 grad-check fallido
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    configure_logging(args.verbose)
    logger.debug(f"🚀 {settings.APP_NAME} {settings.APP_VERSION}: {args.command}")
    try:
        return args.func(args)
    except Exception as exc:
        return handle_exception(exc)
