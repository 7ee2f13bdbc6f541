"""Headered text matrices for embedding parameters (DBENCH1 params files).

Layout::

    DBENCH1-PARAMS tensors=<k> [key=value ...]
    tensor name=<name> shape=<r>x<c>   (or shape=<n> for vectors)
    <comma-separated row>
    ...

Floats use shortest round-trip formatting, so files reload bit-exactly.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .diffcore import EmbeddingParams
from .errors import FormatError

MAGIC = "DBENCH1-PARAMS"


def dumps_params(params: EmbeddingParams, meta: dict | None = None) -> str:
    tensors = params.as_dict()
    head = [MAGIC, f"tensors={len(tensors)}"]
    for k, v in sorted((meta or {}).items()):
        head.append(f"{k}={v}")
    lines = [" ".join(head)]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"tensor name={name} shape={shape}")
        rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
        for row in rows:
            lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_params(params: EmbeddingParams, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_params(params, meta).encode("utf-8"))


def loads_params(text: str):
    """Return (EmbeddingParams, meta dict)."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty params file", line=1)
    head = lines[0].split(" ")
    if head[0] != MAGIC:
        raise FormatError(f"expected magic {MAGIC!r}", line=1, field="magic")
    meta = {}
    for tok in head[1:]:
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}", line=1)
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        n_tensors = int(meta.pop("tensors"))
    except (KeyError, ValueError):
        raise FormatError("missing or bad tensors count", line=1, field="tensors") from None

    tensors = {}
    pos = 1
    for _ in range(n_tensors):
        if pos >= len(lines):
            raise FormatError("truncated file: missing tensor header", line=pos + 1)
        parts = dict(tok.split("=", 1) for tok in lines[pos].split(" ")[1:] if "=" in tok)
        if not lines[pos].startswith("tensor ") or "name" not in parts or "shape" not in parts:
            raise FormatError("malformed tensor header", line=pos + 1)
        try:
            shape = tuple(int(s) for s in parts["shape"].split("x"))
        except ValueError:
            raise FormatError("bad shape", line=pos + 1, field="shape") from None
        n_rows = 1 if len(shape) == 1 else shape[0]
        n_cols = shape[-1]
        rows = []
        for r in range(n_rows):
            lineno = pos + 2 + r
            if lineno - 1 >= len(lines):
                raise FormatError("truncated tensor data", line=lineno)
            toks = lines[lineno - 1].split(",")
            if len(toks) != n_cols:
                raise FormatError(f"row has {len(toks)} values, expected {n_cols}", line=lineno, field=parts["name"])
            try:
                vals = [float(t) for t in toks]
            except ValueError:
                raise FormatError("unparseable value", line=lineno, field=parts["name"]) from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite value", line=lineno, field=parts["name"])
            rows.append(vals)
        tensors[parts["name"]] = np.array(rows).reshape(shape)
        pos += 1 + n_rows
    if pos != len(lines):
        raise FormatError("trailing content after last tensor", line=pos + 1)
    if "W" not in tensors:
        raise FormatError("params file has no W tensor")
    try:
        return EmbeddingParams.from_dict(tensors), meta
    except TypeError as exc:
        raise FormatError(f"unknown tensor name: {exc}") from None


def load_params(path):
    return loads_params(Path(path).read_text(encoding="utf-8"))
