"""
Utilidades para archivos de configuración `key = value`
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from app.core.exceptions import ConfigError

ModelT = TypeVar("ModelT", bound=BaseModel)


def parse_config_lines(lines: Iterable[str], origen: str = "<config>") -> Dict[str, str]:
    """
    Parsea líneas `key = value`; ignora líneas vacías y comentarios `#`

    Args:
        lines: Líneas del archivo
        origen: Nombre usado en los mensajes de error

    Returns:
        Dict[str, str]: Claves (posiblemente con puntos) y valores como texto
    """
    valores: Dict[str, str] = {}
    for numero, linea in enumerate(lines, start=1):
        texto = linea.split("#", 1)[0].strip()
        if not texto:
            continue
        if "=" not in texto:
            raise ConfigError(f"{origen}:{numero}: se esperaba 'key = value'")
        clave, valor = (parte.strip() for parte in texto.split("=", 1))
        if not clave:
            raise ConfigError(f"{origen}:{numero}: clave vacía")
        if clave in valores:
            raise ConfigError(f"{origen}:{numero}: clave duplicada '{clave}'")
        valores[clave] = valor
    return valores


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Lee un archivo de configuración y devuelve sus pares clave/valor"""
    ruta = Path(path)
    try:
        with open(ruta, "r", encoding="utf-8") as f:
            lineas = f.readlines()
    except UnicodeDecodeError as e:
        raise ConfigError(f"{ruta}: el archivo de configuración no es UTF-8 válido ({e.reason})") from e
    return parse_config_lines(lineas, origen=str(ruta))


def nest_keys(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """Convierte claves con puntos (`perturb.rect_probability`) en diccionarios anidados"""
    anidado: Dict[str, Any] = {}
    for clave, valor in flat.items():
        partes = clave.split(".")
        destino = anidado
        for parte in partes[:-1]:
            siguiente = destino.setdefault(parte, {})
            if not isinstance(siguiente, dict):
                raise ConfigError(f"'{clave}' choca con una clave escalar")
            destino = siguiente
        if isinstance(destino.get(partes[-1]), dict):
            raise ConfigError(f"'{clave}' choca con una sección")
        destino[partes[-1]] = valor
    return anidado


def build_model(model_cls: Type[ModelT], flat: Mapping[str, Any]) -> ModelT:
    """
    Valida un modelo pydantic a partir de claves planas; claves desconocidas son error

    Raises:
        ConfigError: Si la validación falla
    """
    try:
        return model_cls.model_validate(nest_keys(flat))
    except ValidationError as e:
        detalles = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"configuración inválida para {model_cls.__name__}: {detalles}") from e


def _format_value(valor: Any) -> str:
    if isinstance(valor, (tuple, list)):
        return ", ".join(_format_value(v) for v in valor)
    if valor is None:
        return "none"
    if isinstance(valor, bool):
        return "true" if valor else "false"
    if isinstance(valor, float):
        return repr(valor)
    return str(valor)


def flatten_model(model: BaseModel, prefijo: str = "") -> List[tuple]:
    """Aplana un modelo pydantic en pares (clave con puntos, valor)"""
    pares: List[tuple] = []
    for nombre in type(model).model_fields:
        valor = getattr(model, nombre)
        clave = f"{prefijo}{nombre}"
        if isinstance(valor, BaseModel):
            pares.extend(flatten_model(valor, prefijo=f"{clave}."))
        else:
            pares.append((clave, valor))
    return pares


def dump_config(model: BaseModel, prefijo_linea: str = "", exclude: Iterable[str] = ()) -> str:
    """
    Serializa un modelo en líneas `key = value` que `read_config_file` vuelve a leer

    Los campos None se omiten para que el valor por defecto se restablezca al releer.
    """
    excluidas = set(exclude)
    lineas = [
        f"{prefijo_linea}{clave} = {_format_value(valor)}"
        for clave, valor in flatten_model(model)
        if valor is not None and clave not in excluidas
    ]
    return "\n".join(lineas) + "\n"
