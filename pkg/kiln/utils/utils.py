"""General utility functions for the project."""

import hashlib
import json
import random
from typing import Any

import numpy as np


def seed_everything(seed: int) -> None:
    """Seed every random number generator the pipeline touches.

    Parameters
    ----------
    seed: int
        Seed value to use

    """
    random.seed(seed)
    np.random.seed(seed)


def to_builtin(obj: Any) -> Any:
    """Convert numpy scalars, arrays and tuples into JSON-friendly builtins.

    Parameters
    ----------
    obj: Any
        Nested structure of dicts, sequences, numpy values and builtins.

    Returns
    -------
    Any
        The same structure made of dicts, lists, floats, ints, str and None.

    """
    if isinstance(obj, dict):
        return {str(key): to_builtin(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize a structure with sorted keys and a fixed layout."""
    return json.dumps(to_builtin(obj), sort_keys=True, indent=2) + "\n"


def digest(obj: Any) -> str:
    """Return the sha256 hex digest of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_sha256(path: str) -> str:
    """Return the sha256 hex digest of a file's bytes.

    Parameters
    ----------
    path: str
        File to hash.

    Returns
    -------
    str
        Hex digest.

    """
    sha = hashlib.sha256()
    with open(path, "rb") as file:
        for block in iter(lambda: file.read(1 << 20), b""):
            sha.update(block)
    return sha.hexdigest()
