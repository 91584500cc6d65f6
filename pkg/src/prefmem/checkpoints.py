"""Versioned plain-text checkpoint files.

Layout::

    <header line>                    e.g. "prefclf v1 l=64 h=32"
    tensor <name> <rows> <cols>
    <rows lines of cols space-separated floats>
    ...

Floats are written with 17 significant digits, which round-trips float64
exactly, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataFormatError


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_checkpoint(path, header: str, tensors: list[tuple[str, np.ndarray]]) -> None:
    lines = [header]
    for name, arr in tensors:
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise ValueError(f"tensor {name} must be 1-D or 2-D, got {a.ndim}-D")
        lines.append(f"tensor {name} {a.shape[0]} {a.shape[1]}")
        for row in a:
            lines.append(" ".join(format_float(x) for x in row))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty checkpoint file", path=path)
    header = lines[0]
    tensors: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise DataFormatError(f"expected tensor block, got {lines[i]!r}",
                                  line=i + 1, path=path)
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        if name in tensors:
            raise DataFormatError(f"duplicate tensor {name!r}", line=i + 1, path=path)
        block = []
        for r in range(rows):
            row_line = lines[i + 1 + r]
            vals = row_line.split()
            if len(vals) != cols:
                raise DataFormatError(
                    f"tensor {name!r} row has {len(vals)} values, expected {cols}",
                    line=i + 2 + r, path=path)
            try:
                block.append([float(v) for v in vals])
            except ValueError as exc:
                raise DataFormatError(f"bad float in tensor {name!r}: {exc}",
                                      line=i + 2 + r, path=path) from exc
        tensors[name] = np.array(block, dtype=np.float64)
        i += 1 + rows
    return header, tensors


def parse_header(header: str, expected_tag: str) -> dict[str, int]:
    """Parse 'tag v1 k=v ...' into the k=v pairs; checks tag and version."""
    parts = header.split()
    if len(parts) < 2 or parts[0] != expected_tag or parts[1] != "v1":
        raise DataFormatError(
            f"bad checkpoint header {header!r}, expected '{expected_tag} v1 ...'")
    fields = {}
    for item in parts[2:]:
        if "=" not in item:
            raise DataFormatError(f"bad header field {item!r} in {header!r}")
        k, v = item.split("=", 1)
        fields[k] = int(v)
    return fields
