"""
Excepciones de dominio de MCR
Cada familia lleva el código de salida que la CLI devuelve al shell
"""


class MCRError(Exception):
    """Error base de la aplicación"""

    exit_code: int = 1


# Uso (código 2)
class UsageError(MCRError):
    exit_code = 2


class ConfigError(UsageError):
    """Archivo de configuración o flags inválidos"""


# Entrada/salida (código 3)
class StorageError(MCRError):
    exit_code = 3


class MalformedFile(StorageError):
    """Archivo PGM/PPM o manifiesto con formato inválido"""


class CorruptCheckpoint(StorageError):
    """Checkpoint con magic o longitud inesperados"""


class CorpusIoError(StorageError):
    """No se pudo leer o escribir el corpus"""


# Dominio (código 4)
class DomainError(MCRError):
    exit_code = 4


class EmptyMask(DomainError):
    """La operación requiere al menos un píxel activo"""


class DimensionMismatch(DomainError):
    """Máscaras con dimensiones distintas"""


class ShapeMismatch(DomainError):
    """Tensores con formas incompatibles"""


class InvalidRange(DomainError):
    """Parámetros fuera de su rango válido"""


class TimestepOutOfRange(DomainError):
    """Paso temporal fuera de [0, T)"""


class StepCountInvalid(DomainError):
    """Número de pasos de muestreo inválido"""


class CacheMismatch(DomainError):
    """La caché no corresponde al forward actual"""


class EmptyBatch(DomainError):
    """Lote de entrenamiento vacío"""


class TooSmall(DomainError):
    """Imagen demasiado pequeña para la ventana de SSIM"""


class GenerationFailed(DomainError):
    """El generador procedural agotó sus intentos"""


# Verificación de gradientes (código 5)
class GradCheckFailed(MCRError):
    exit_code = 5
