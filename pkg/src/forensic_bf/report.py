"""Deterministic report serialization.

Reports are plain dictionaries rendered to JSON by a small emitter that
fixes key order (sorted) and prints every float with 17 significant
digits, so identical runs produce byte-identical files and golden-file
tests stay stable across platforms.
"""

from __future__ import annotations

import hashlib
import json
import math

from .types import InvalidParameterError

__all__ = ["format_float", "dumps_report", "file_sha256"]


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise InvalidParameterError(f"reports may not contain non-finite numbers: {x}")
    return format(float(x), ".17g")


def _emit(value, indent: int, out: list):
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(value.items())
        for i, (key, item) in enumerate(items):
            if not isinstance(key, str):
                raise InvalidParameterError(f"report keys must be strings, got {key!r}")
            out.append(f"{pad}  {json.dumps(key)}: ")
            _emit(item, indent + 1, out)
            out.append(",\n" if i + 1 < len(items) else "\n")
        out.append(pad + "}")
    elif isinstance(value, (list, tuple)):
        seq = list(value)
        if not seq:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(seq):
            out.append(pad + "  ")
            _emit(item, indent + 1, out)
            out.append(",\n" if i + 1 < len(seq) else "\n")
        out.append(pad + "]")
    elif isinstance(value, bool) or value is None:
        out.append(json.dumps(value))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_float(value))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    else:
        raise InvalidParameterError(f"cannot serialize {type(value).__name__} in report")


def dumps_report(report: dict) -> str:
    out: list = []
    _emit(report, 0, out)
    out.append("\n")
    return "".join(out)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
