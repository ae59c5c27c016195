"""
Utilidades de semillas y estado de generadores
"""
import json
from typing import Any, Dict

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """
    Deriva una semilla de 64 bits independiente para (seed, keys...)

    Args:
        seed: Semilla base
        keys: Índices adicionales (tripleta, época, brazo...)

    Returns:
        int: Semilla derivada
    """
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def generator_for(seed: int, *keys: int) -> np.random.Generator:
    """Generador PCG64 para la semilla derivada de (seed, keys...)"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def generator_state_bytes(rng: np.random.Generator) -> bytes:
    """Serializa el estado del generador como JSON canónico"""
    state: Dict[str, Any] = rng.bit_generator.state
    return json.dumps(state, sort_keys=True, separators=(",", ":")).encode("utf-8")


def generator_from_state_bytes(raw: bytes) -> np.random.Generator:
    """Reconstruye un generador a partir del estado serializado"""
    state = json.loads(raw.decode("utf-8"))
    bit_generator_cls = getattr(np.random, state["bit_generator"])
    bit_generator = bit_generator_cls()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def clone_generator(rng: np.random.Generator) -> np.random.Generator:
    """Copia independiente del generador en su estado actual"""
    return generator_from_state_bytes(generator_state_bytes(rng))
