"""Canonical JSON text: sorted keys, 2-space indent, floats at 17 significant digits.

``json.dumps`` writes floats with ``repr`` and offers no hook for a fixed
format, so this module emits the text itself. Output of :func:`dumps` parsed
by :func:`json.loads` and dumped again is byte-identical.
"""
import json
import math
from pathlib import Path

import numpy as np


def format_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r} cannot be written as JSON")
    return format(x, ".17g")


def _is_scalar(v):
    return v is None or isinstance(v, (bool, int, float, str, np.number))


def _encode(obj, indent, level, compact_depth, in_list=False):
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()

    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    # numeric rows are written on one line to keep episode files readable
    inline = compact_depth is not None and level >= compact_depth
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [_encode(v, indent, level + 1, compact_depth, in_list=True) for v in obj]
        if inline or all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(items) + "]"
        return "[" + pad + ("," + pad).join(items) + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(obj, key=str)
        items = [json.dumps(str(k), ensure_ascii=False) + ": " + _encode(obj[k], indent, level + 1, compact_depth) for k in keys]
        if inline or (in_list and all(_is_scalar(v) for v in obj.values())):
            return "{" + ", ".join(items) + "}"
        return "{" + pad + ("," + pad).join(items) + end + "}"
    raise TypeError(f"cannot encode {type(obj).__name__} as JSON")


def dumps(obj, indent=2, compact_depth=None):
    """Serialize ``obj`` canonically. Containers at ``compact_depth`` or deeper go on one line."""
    return _encode(obj, indent, 0, compact_depth) + "\n"


def dump_file(obj, path, **kwargs):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, **kwargs), encoding="utf-8")


def load_file(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def dump_jsonl(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_encode(r, 0, 0, 0) for r in records]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out
