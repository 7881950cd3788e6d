"""Deterministic JSON output.

Floats are written with 17 significant digits so that identical inputs give
byte-identical files and every double round-trips exactly.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from pathlib import Path

import numpy as np


def _scalar(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        if x == 0.0:
            return "0.0" if math.copysign(1.0, x) > 0 else "-0.0"
        text = format(x, ".17g")
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    if isinstance(x, enum.Enum):
        return _scalar(x.value)
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with sorted keys and fixed float formatting."""
    out = []

    def emit(o, depth):
        pad = " " * (indent * (depth + 1))
        end = " " * (indent * depth)
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, dict):
            if not o:
                out.append("{}")
                return
            out.append("{\n")
            items = sorted(o.items(), key=lambda kv: str(kv[0]))
            for i, (k, val) in enumerate(items):
                out.append(f"{pad}{json.dumps(str(k))}: ")
                emit(val, depth + 1)
                out.append(",\n" if i < len(items) - 1 else "\n")
            out.append(end + "}")
        elif isinstance(o, (list, tuple)):
            if not o:
                out.append("[]")
            elif all(not isinstance(e, (dict, list, tuple, np.ndarray)) for e in o):
                out.append("[" + ", ".join(_scalar(e) for e in o) + "]")
            else:
                out.append("[\n")
                for i, e in enumerate(o):
                    out.append(pad)
                    emit(e, depth + 1)
                    out.append(",\n" if i < len(o) - 1 else "\n")
                out.append(end + "]")
        else:
            out.append(_scalar(o))

    emit(obj, 0)
    return "".join(out) + "\n"


def write(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def load(path):
    with open(path) as fh:
        return json.load(fh)


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(dumps(config, indent=0).encode()).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
