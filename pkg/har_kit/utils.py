import hashlib
import json
import os
from fractions import Fraction
from typing import Any

import numpy as np
from pydantic import BaseModel

SEED_ENV_VAR = "HAR_SEED"
SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, index: int) -> int:
    """
    Per-sample / per-component stream seed: seed XOR index, kept within 64 bits.
    """
    return (int(seed) ^ int(index)) & SEED_MASK


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng([int(k) & SEED_MASK for k in keys])


def resolve_seed(explicit: int | None, default: int = 0) -> int:
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        return int(env)
    return default


def config_hash(config: BaseModel | dict[str, Any]) -> str:
    """
    First 16 hex chars of SHA-256 over the canonical JSON of a config.
    """
    payload = config
    if isinstance(config, BaseModel):
        payload = config.model_dump(mode="json")
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def parse_number(text: str) -> float:
    """
    Accepts decimals ("0.03137") and fraction literals ("8/255").
    """
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)
