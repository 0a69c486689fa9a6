"""On-disk formats: SSM1 and CSV matrices, metric traces and diffable JSON.

SSM1 layout: the 4 bytes ``SSM1``, rows and cols as little-endian uint32,
then ``rows * cols`` little-endian float64 values in row-major order. The
file is exactly ``12 + 8 * rows * cols`` bytes long.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InvalidInputError
from .theoremlab import TRACE_COLUMNS, MetricTrace

MAGIC = b"SSM1"
HEADER = struct.Struct("<4sII")
PathLike = Union[str, Path]


def encode_ssm1(W) -> bytes:
    A = np.asarray(W, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidInputError(f"SSM1 holds 2-D matrices, got shape {A.shape}")
    rows, cols = A.shape
    if rows > 0xFFFFFFFF or cols > 0xFFFFFFFF:
        raise InvalidInputError(f"shape {A.shape} does not fit uint32")
    return HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(A, dtype="<f8").tobytes()


def decode_ssm1(data: bytes) -> np.ndarray:
    if len(data) < HEADER.size:
        raise InvalidInputError(f"SSM1 data too short ({len(data)} bytes)")
    magic, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidInputError(f"bad magic {magic!r}")
    expected = HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise InvalidInputError(f"SSM1 {rows}x{cols} needs {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(np.float64)


def is_ssm1(path: PathLike) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


def _parse_csv(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as exc:
            raise InvalidInputError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise InvalidInputError("empty CSV matrix")
    if len({len(r) for r in rows}) != 1:
        raise InvalidInputError("CSV rows have different lengths")
    return np.array(rows, dtype=np.float64)


def read_matrix(path: PathLike) -> tuple[np.ndarray, str]:
    """Load a matrix; returns ``(matrix, fmt)`` with fmt ``ssm1`` or ``csv``."""
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        return decode_ssm1(data), "ssm1"
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise InvalidInputError(f"{path}: neither SSM1 nor CSV") from exc
    return _parse_csv(text), "csv"


def format_csv_matrix(W) -> str:
    A = np.asarray(W, dtype=np.float64)
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in A)


def write_matrix(path: PathLike, W, fmt: str = "ssm1") -> None:
    if fmt == "ssm1":
        Path(path).write_bytes(encode_ssm1(W))
    elif fmt == "csv":
        Path(path).write_text(format_csv_matrix(W))
    else:
        raise InvalidInputError(f"unknown matrix format {fmt!r}")


def format_for(path: PathLike) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "ssm1"


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else "%.17g" % x


def format_trace(trace: MetricTrace) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for row in trace.rows:
        lines.append(",".join(_num(v) for v in row))
    return "\n".join(lines) + "\n"


def write_trace(path: PathLike, trace: MetricTrace) -> None:
    Path(path).write_text(format_trace(trace))


def read_trace(path: PathLike) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != ",".join(TRACE_COLUMNS):
        raise InvalidInputError(f"{path}: not a metric trace")
    out = []
    for line in lines[1:]:
        vals = line.split(",")
        row = {k: float(v) for k, v in zip(TRACE_COLUMNS, vals)}
        row["step"] = int(row["step"])
        row["pss_triggered"] = int(row["pss_triggered"])
        out.append(row)
    return out


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with insertion-ordered keys and ``%.17g`` floats; non-finite floats become null.

    >>> dumps({"a": 0.1, "b": [1, True]}, indent=0)
    '{"a": 0.10000000000000001, "b": [1, true]}'
    """
    pad = "\n" + " " * (indent * (_level + 1)) if indent else ""
    end = "\n" + " " * (indent * _level) if indent else ""
    sep = "," if indent else ", "
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return "%.17g" % x if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{dumps(str(k), indent)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")
