"""Deterministic turn encoder: signed feature hashing over word n-grams.

A conversation turn (agent text + user text, joined by a separator token)
is mapped to a fixed-length float64 vector: every n-gram is hashed with
FNV-1a 64 keyed by the configured seed, the hash picks a bucket and a sign,
and the result is L2-normalized.  Identical inputs give bit-identical
vectors on every platform.

Precomputed vectors from an external sentence encoder can be substituted
via the sidecar file format (one ``id<TAB>v1,v2,...`` record per line).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError
from .numerics import MASK64

SEP_TOKEN = "[sep]"

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; apostrophes stay inside words ("don't")."""
    text = text.replace("’", "'").lower()
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    ngram_orders: tuple[int, ...] = (1, 2)
    hash_seed: int = 2024
    normalize: bool = True

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError(f"encoder dim must be >= 8, got {self.dim}")
        orders = tuple(sorted(set(int(n) for n in self.ngram_orders)))
        if not orders or any(n not in (1, 2, 3) for n in orders):
            raise ValueError(f"ngram orders must be a non-empty subset of "
                             f"{{1,2,3}}, got {self.ngram_orders}")
        object.__setattr__(self, "ngram_orders", orders)


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes, seed: int) -> int:
    h = _FNV_OFFSET
    for b in (seed & MASK64).to_bytes(8, "big") + data:
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


def encode(cfg: EncoderConfig, agent_text: str, user_text: str) -> np.ndarray:
    """Embed one turn. Empty turn (no tokens on either side) -> zero vector."""
    agent_tokens = tokenize(agent_text)
    user_tokens = tokenize(user_text)
    values = np.zeros(cfg.dim, dtype=np.float64)
    if not agent_tokens and not user_tokens:
        return values
    tokens = agent_tokens + [SEP_TOKEN] + user_tokens
    for n in cfg.ngram_orders:
        for i in range(len(tokens) - n + 1):
            gram = "\x1f".join(tokens[i:i + n]).encode("utf-8")
            h = _fnv1a(gram, cfg.hash_seed)
            bucket = (h >> 1) % cfg.dim
            values[bucket] += 1.0 if h & 1 else -1.0
    if cfg.normalize:
        norm = float(np.linalg.norm(values))
        if norm > 0.0:
            values /= norm
    return values


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def load_external_embeddings(path) -> dict[str, np.ndarray]:
    """Parse a sidecar embedding file into {turn-id: vector}.

    Raises DataFormatError (with the offending line number) on a malformed
    record, a dimension mismatch, or a duplicate id.  An empty file is a
    valid empty map.
    """
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataFormatError("expected 'id<TAB>v1,v2,...'",
                                      line=lineno, path=path)
            rec_id, payload = line.split("\t", 1)
            if not rec_id:
                raise DataFormatError("empty record id", line=lineno, path=path)
            if rec_id in out:
                raise DataFormatError(f"duplicate id {rec_id!r}",
                                      line=lineno, path=path)
            try:
                vec = np.array([float(x) for x in payload.split(",")],
                               dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"bad float in record {rec_id!r}: {exc}",
                                      line=lineno, path=path) from exc
            if not np.all(np.isfinite(vec)):
                raise DataFormatError(f"non-finite value in record {rec_id!r}",
                                      line=lineno, path=path)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DataFormatError(
                    f"record {rec_id!r} has dim {vec.shape[0]}, expected {dim}",
                    line=lineno, path=path)
            out[rec_id] = vec
    return out
