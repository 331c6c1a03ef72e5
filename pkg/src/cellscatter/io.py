"""CSV input with missing values, and JSON/CSV output at full precision."""

import csv
import json
import math

import numpy as np

from .errors import ConfigError, InputError

__all__ = ["read_csv", "format_number", "dumps_json", "write_text", "load_config"]


def format_number(v):
    """17 significant digits; integers stay integers, NaN/inf spelled out."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_csv(path, na_token="NA"):
    """Parse a comma-separated numeric matrix.

    Empty fields and ``na_token`` are missing (NaN).  A first line with a
    non-numeric, non-missing field is taken as a header.  Returns
    ``(matrix, header or None)``.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(t.strip() for t in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise InputError("input file is empty")
    header = None
    first = [t.strip() for t in rows[0]]
    if any(t not in ("", na_token) and not _is_number(t) for t in first):
        header = first
        rows = rows[1:]
    if not rows:
        raise InputError("input file has a header but no data")
    width = len(rows[0])
    if header is not None and len(header) != width:
        raise InputError(f"header has {len(header)} fields but row 1 has {width}")
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"row {i + 1}: expected {width} fields, got {len(row)}")
        for j, tok in enumerate(row):
            tok = tok.strip()
            if tok == "" or tok == na_token:
                out[i, j] = np.nan
                continue
            try:
                val = float(tok)
            except ValueError:
                raise InputError(f"row {i + 1}, column {j + 1}: non-numeric value {tok!r}") from None
            if not math.isfinite(val):
                raise InputError(f"row {i + 1}, column {j + 1}: non-finite value {tok!r}")
            out[i, j] = val
    return out, header


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        return format_number(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent=2):
    """JSON text with numbers at 17 significant digits (NaN as a bare token)."""
    return _encode(obj, indent, 0) + "\n"


def write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def load_config(path):
    """Read a YAML or JSON mapping."""
    import yaml

    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of field names to values")
    return data
