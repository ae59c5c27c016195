"""
Servicio de Imágenes
Lectura y escritura bit-exacta de PGM (P5) / PPM (P6) con maxval 255
"""
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.core.exceptions import MalformedFile
from app.models.image import validate_image
from app.models.mask import BinaryMask

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC_GRAY = b"P5"
MAGIC_RGB = b"P6"
MAXVAL = 255
MASK_THRESHOLD = 128
_WHITESPACE = b" \t\r\n\x0b\x0c"


def _header_tokens(raw: bytes, path: Path) -> List[bytes]:
    # magic, ancho, alto y maxval; los comentarios `#` llegan hasta el fin de línea
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise MalformedFile(f"{path}: encabezado truncado")
        byte = raw[pos:pos + 1]
        if byte in _WHITESPACE:
            pos += 1
        elif byte == b"#":
            fin = raw.find(b"\n", pos)
            pos = len(raw) if fin < 0 else fin + 1
        else:
            inicio = pos
            while pos < len(raw) and raw[pos:pos + 1] not in _WHITESPACE and raw[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(raw[inicio:pos])
    return tokens


def _open_pnm(path: Path, expected_magic: tuple) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    magic = raw[:2]
    if magic not in expected_magic:
        raise MalformedFile(f"{path}: magic inválido {magic!r}")
    maxval = _header_tokens(raw, path)[3]
    if not maxval.isdigit() or int(maxval) != MAXVAL:
        raise MalformedFile(f"{path}: maxval {maxval.decode('ascii', 'replace')} no soportado (se requiere {MAXVAL})")
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("L", "RGB"):
                raise MalformedFile(f"{path}: modo no soportado {img.mode} (se requiere maxval 255)")
            return np.asarray(img, dtype=np.uint8).copy()
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise MalformedFile(f"{path}: encabezado o dimensiones inválidas ({e})") from e
    except OSError as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise MalformedFile(f"{path}: archivo truncado o ilegible ({e})") from e


class ImageService:
    """
    Servicio para leer y escribir imágenes y máscaras PNM
    """

    @staticmethod
    def quantize(img: np.ndarray) -> np.ndarray:
        """Proyecta los valores a la rejilla de 8 bits: round(v * 255) / 255 tras recortar a [0, 1]"""
        return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0

    @staticmethod
    def extension_for(channels: int) -> str:
        return ".pgm" if channels == 1 else ".ppm"

    @staticmethod
    def load_image(path: PathLike) -> np.ndarray:
        """
        Carga un PGM (1 canal) o PPM (3 canales) binario

        Args:
            path: Ruta del archivo

        Returns:
            np.ndarray: ImageTensor (C, H, W) en [0, 1]

        Raises:
            MalformedFile: Si el magic, el maxval o el cuerpo no son válidos
        """
        crudo = _open_pnm(Path(path), (MAGIC_GRAY, MAGIC_RGB))
        if crudo.ndim == 2:
            crudo = crudo[None, :, :]
        else:
            crudo = np.transpose(crudo, (2, 0, 1))
        return crudo.astype(np.float64) / 255.0

    @staticmethod
    def save_image(img: np.ndarray, path: PathLike) -> Path:
        """
        Guarda un ImageTensor como PGM/PPM binario, recortando a [0, 1] y cuantizando a 8 bits

        Args:
            img: ImageTensor (C, H, W)
            path: Ruta destino

        Returns:
            Path: Ruta del archivo guardado
        """
        arreglo = validate_image(img)
        datos = np.round(np.clip(arreglo, 0.0, 1.0) * 255.0).astype(np.uint8)
        ruta = Path(path)
        ruta.parent.mkdir(parents=True, exist_ok=True)
        if datos.shape[0] == 1:
            imagen = Image.fromarray(datos[0])
        else:
            imagen = Image.fromarray(np.ascontiguousarray(np.transpose(datos, (1, 2, 0))))
        imagen.save(ruta, format="PPM")
        logger.debug(f"💾 Imagen guardada: {ruta}")
        return ruta

    @staticmethod
    def load_mask(path: PathLike) -> BinaryMask:
        """Carga una máscara PGM (P5): píxel >= 128 => 1, en otro caso 0"""
        crudo = _open_pnm(Path(path), (MAGIC_GRAY,))
        return BinaryMask((crudo >= MASK_THRESHOLD).astype(np.uint8))

    @staticmethod
    def save_mask(mask: BinaryMask, path: PathLike) -> Path:
        """Guarda una máscara como PGM (P5) con valores 0 y 255"""
        ruta = Path(path)
        ruta.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray((mask.values * 255).astype(np.uint8)).save(ruta, format="PPM")
        logger.debug(f"💾 Máscara guardada: {ruta}")
        return ruta
