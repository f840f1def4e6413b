"""Class prompts, a frozen stand-in text encoder and learnable prompt contexts.

The encoder is a seeded token table followed by a fixed linear map; both are
frozen parameters, so prompt learning can only move the context vectors.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .numerics import Parameter, ShapeError, Tensor, concat, l2_normalize, matmul
from .numerics import mean as tmean

TEXT_MAGIC = b"T4PT"
DEFAULT_TEMPLATE = "point cloud of [cls]."
PROMPT_MODES = ("handcrafted", "learnable", "random_learnable")
_TOKEN = re.compile(r"[^\W_]+|[^\w\s]|_")


class LabelError(ValueError):
    pass


class TextFormatError(ValueError):
    pass


def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class LabelSet:
    names: tuple

    def __init__(self, names: Sequence[str]):
        names = tuple(str(n) for n in names)
        if not names or any(not n.strip() for n in names):
            raise LabelError("class names must be non-empty")
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise LabelError(f"duplicate class names: {', '.join(dupes)}")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class PromptTemplate:
    prefix: tuple = ()
    suffix: tuple = ()

    @classmethod
    def parse(cls, text: str = DEFAULT_TEMPLATE, slot: str = "[cls]") -> "PromptTemplate":
        if text.count(slot) != 1:
            raise ValueError(f"template must contain exactly one {slot}")
        before, after = text.split(slot)
        return cls(tuple(tokenize(before)), tuple(tokenize(after)))

    def fill(self, name: str) -> List[str]:
        return [*self.prefix, *tokenize(name), *self.suffix]


def build_prompts(labels: LabelSet, template: Optional[PromptTemplate] = None) -> List[List[str]]:
    template = PromptTemplate.parse() if template is None else template
    return [template.fill(name) for name in labels]


class MockTextEncoder:
    """Frozen hashed-token encoder: mean of token rows, linear map, L2 norm."""

    def __init__(self, out_dim: int = 32, token_dim: int = 32, table_size: int = 4096, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.table_size = table_size
        self.table = Parameter(rng.standard_normal((table_size, token_dim)), name="text.table", frozen=True)
        self.proj = Parameter(rng.standard_normal((token_dim, out_dim)) / np.sqrt(token_dim), name="text.proj",
                              frozen=True)

    @property
    def token_dim(self) -> int:
        return self.table.shape[1]

    @property
    def out_dim(self) -> int:
        return self.proj.shape[1]

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        salt = self.seed.to_bytes(8, "little", signed=False)
        return np.array([zlib.crc32(salt + t.encode("utf-8")) % self.table_size for t in tokens], dtype=np.int64)

    def token_rows(self, tokens: Sequence[str]) -> np.ndarray:
        # sorted ids make mean pooling bitwise order-independent
        return self.table.data[np.sort(self.token_ids(tokens))]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty token list")
        pooled = self.token_rows(tokens).mean(axis=0)
        out = pooled @ self.proj.data
        return out / np.linalg.norm(out)

    def encode_prompts(self, labels: LabelSet, template: Optional[PromptTemplate] = None) -> Tensor:
        rows = np.stack([self.encode(p) for p in build_prompts(labels, template)])
        return Tensor(rows)

    def check_distinct(self, labels: LabelSet) -> None:
        """Fail when two classes hash to the same token multiset."""
        seen: Dict[tuple, str] = {}
        for name in labels:
            key = tuple(sorted(self.token_ids(tokenize(name)).tolist()))
            if key in seen:
                raise LabelError(f"classes {seen[key]!r} and {name!r} collide in the token table")
            seen[key] = name


class ContextVectors:
    """``length`` learnable pseudo-token embeddings placed before the class tokens."""

    def __init__(self, length: int = 8, token_dim: int = 32, seed: int = 0, std: float = 0.02,
                 name: str = "prompt.contexts"):
        rng = np.random.default_rng(seed)
        self.param = Parameter(rng.normal(0.0, std, (length, token_dim)), name=name)

    @property
    def length(self) -> int:
        return self.param.shape[0]


def mock_encode(encoder: MockTextEncoder, tokens: Sequence[str]) -> np.ndarray:
    return encoder.encode(tokens)


def prompt_encode(contexts: ContextVectors, labels: LabelSet, encoder: MockTextEncoder) -> Tensor:
    """Differentiable class embeddings from ``[contexts ; class tokens]``."""
    rows = []
    for name in labels:
        class_rows = Tensor(encoder.token_rows(tokenize(name)))
        pooled = tmean(concat([contexts.param, class_rows], axis=0), axis=0, keepdims=True)
        rows.append(matmul(pooled, encoder.proj))
    return l2_normalize(concat(rows, axis=0), axis=1)


class TextBank:
    """Source of the K x d class-embedding matrix for one label set.

    ``mode`` is ``handcrafted`` (fixed template), ``learnable`` (prompt
    contexts) or ``random_learnable`` (free K x d parameters, no language).
    """

    def __init__(self, labels: LabelSet, encoder: MockTextEncoder, mode: str = "handcrafted",
                 template: Optional[PromptTemplate] = None, context_length: int = 8, seed: int = 0,
                 fixed: Optional[np.ndarray] = None):
        if mode not in PROMPT_MODES:
            raise ValueError(f"unknown prompt mode {mode!r}")
        self.labels = labels
        self.encoder = encoder
        self.mode = mode
        self.contexts: Optional[ContextVectors] = None
        self.free: Optional[Parameter] = None
        if fixed is not None:
            self._fixed = Tensor(_normalize_rows(np.asarray(fixed, dtype=np.float64)))
        else:
            self._fixed = encoder.encode_prompts(labels, template)
        if mode == "learnable":
            self.contexts = ContextVectors(context_length, encoder.token_dim, seed=seed)
        elif mode == "random_learnable":
            rng = np.random.default_rng(seed)
            self.free = Parameter(rng.standard_normal((len(labels), encoder.out_dim)), name="prompt.random")

    def parameters(self) -> List[Parameter]:
        if self.contexts is not None:
            return [self.contexts.param]
        if self.free is not None:
            return [self.free]
        return []

    def embeddings(self) -> Tensor:
        if self.mode == "learnable":
            return prompt_encode(self.contexts, self.labels, self.encoder)
        if self.mode == "random_learnable":
            return l2_normalize(self.free, axis=1)
        return self._fixed


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise TextFormatError("zero-norm embedding row")
    return rows / norms


def save_frozen_embeddings(path, labels: LabelSet, rows) -> None:
    rows = np.asarray(rows.data if isinstance(rows, Tensor) else rows, dtype=np.float64)
    k, d = rows.shape
    parts = [TEXT_MAGIC, struct.pack("<II", k, d)]
    for name, row in zip(labels, rows):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + row.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_frozen_embeddings(path, labels: LabelSet, dim: Optional[int] = None) -> Tensor:
    """Rows re-normalised and reordered to match ``labels``."""
    blob = Path(path).read_bytes()
    if blob[:4] != TEXT_MAGIC:
        raise TextFormatError(f"{path}: bad magic")
    try:
        k, d = struct.unpack_from("<II", blob, 4)
        offset, table = 12, {}
        for _ in range(k):
            (n,) = struct.unpack_from("<I", blob, offset)
            name = blob[offset + 4:offset + 4 + n].decode("utf-8")
            offset += 4 + n
            if offset + 4 * d > len(blob):
                raise TextFormatError(f"{path}: truncated")
            table[name] = np.frombuffer(blob, dtype="<f4", count=d, offset=offset).astype(np.float64)
            offset += 4 * d
    except struct.error as exc:
        raise TextFormatError(f"{path}: truncated") from exc
    if dim is not None and d != dim:
        raise ShapeError(f"{path}: embedding width {d} != expected {dim}")
    missing = [name for name in labels if name not in table]
    if missing:
        raise LabelError(f"{path}: no embedding for class(es) {', '.join(missing)}")
    return Tensor(_normalize_rows(np.stack([table[name] for name in labels])))
