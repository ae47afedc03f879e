"""Canonical JSON emission: insertion-ordered keys, floats at 17 significant digits.

``json.dumps`` cannot customise float formatting without losing number-ness,
so this tiny serializer renders floats with ``%.17g`` (which round-trips any
double exactly) and leaves everything else to standard escaping. Identical
inputs always produce identical bytes.
"""

from __future__ import annotations

import json
import math
from typing import Any


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite number cannot be serialised: {x!r}")
    return format(x, ".17g")


def dumps_canonical(obj: Any, indent: int | None = 2) -> str:
    """Serialise dicts/lists/scalars to deterministic JSON text."""
    pieces: list[str] = []
    _write(obj, pieces, indent, 0)
    return "".join(pieces)


def _write(obj: Any, out: list[str], indent: int | None, depth: int) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        _write_items(list(obj.items()), out, indent, depth, "{", "}", is_dict=True)
    elif isinstance(obj, (list, tuple)):
        _write_items(list(obj), out, indent, depth, "[", "]", is_dict=False)
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__} canonically")


def _write_items(items, out, indent, depth, open_ch, close_ch, is_dict) -> None:
    if not items:
        out.append(open_ch + close_ch)
        return
    item_pad = "" if indent is None else "\n" + " " * (indent * (depth + 1))
    close_pad = "" if indent is None else "\n" + " " * (indent * depth)
    colon = ":" if indent is None else ": "
    out.append(open_ch)
    for i, item in enumerate(items):
        if i:
            out.append(",")
        out.append(item_pad)
        if is_dict:
            key, value = item
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key).__name__}")
            out.append(json.dumps(key))
            out.append(colon)
            _write(value, out, indent, depth + 1)
        else:
            _write(item, out, indent, depth + 1)
    out.append(close_pad)
    out.append(close_ch)
