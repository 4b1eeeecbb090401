"""LRCK checkpoint serialization.

Layout (little-endian):
    magic "LRCK" | version u32=1 | ranker_kind u32 | relevance_kind u32
    | d_model u32 | d_proj u32 | d_hidden u32 | block_count u32
    | n_tensors u32
    | per tensor: name_len u32, UTF-8 name, rank u32, dims u32*rank, f32 data
    | trailer_len u32, UTF-8 JSON {"config": ..., "dataset_fingerprint": ...}

Tensors are stored as float32; in-memory parameters are float64, so a
checkpoint is built by one down-cast and loading up-casts exactly —
``load(save(ckpt))`` reproduces scores bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rankers as rk
from .errors import CorruptionError, FormatError

MAGIC = b"LRCK"
VERSION = 1

RANKER_CODES = {rk.LISTWISE: 0, rk.POINTWISE: 1}
RANKER_NAMES = {v: k for k, v in RANKER_CODES.items()}
RELEVANCE_CODES = {rk.COSINE: 0, rk.LEARNABLE: 1}
RELEVANCE_NAMES = {v: k for k, v in RELEVANCE_CODES.items()}

_HEADER = struct.Struct("<4sIIIIIIII")
_U32 = struct.Struct("<I")

NORM_MEAN = "feature_norm.mean"
NORM_STD = "feature_norm.std"
_AUX_TENSORS = (NORM_MEAN, NORM_STD)


@dataclass
class Checkpoint:
    ranker_kind: str
    relevance_kind: str
    d_model: int
    d_proj: int
    d_hidden: int
    block_count: int
    tensors: dict[str, np.ndarray]  # float32, learnable + optional aux
    config: dict = field(default_factory=dict)
    dataset_fingerprint: str = ""

    @property
    def variant(self) -> str:
        return self.config.get("variant", rk.FULL)

    @property
    def feature_norm(self) -> tuple[np.ndarray, np.ndarray] | None:
        if NORM_MEAN in self.tensors:
            return self.tensors[NORM_MEAN], self.tensors[NORM_STD]
        return None

    def parameter_count(self) -> int:
        return int(sum(t.size for n, t in self.tensors.items() if n not in _AUX_TENSORS))

    def to_params(self) -> rk.RankerParams:
        """Rebuild ranker parameters (float64) from the stored tensors."""
        t = {n: v.astype(np.float64) for n, v in self.tensors.items() if n not in _AUX_TENSORS}
        relevance = rk.RelevanceParams(kind=self.relevance_kind)
        if self.relevance_kind == rk.LEARNABLE:
            relevance.weight = t["relevance.weight"]
            relevance.bias = t["relevance.bias"]
        if "relevance.scale" in t:
            relevance.scale = t["relevance.scale"]
        proj_w = t.get("proj.weight")
        proj_b = t.get("proj.bias")
        instr = t.get("instruction_embedding")
        if self.ranker_kind == rk.LISTWISE:
            blocks = []
            for i in range(self.block_count):
                blocks.append({name: t[f"block{i}.{name}"] for name in _block_names()})
            return rk.ListwiseParams(
                d_model=self.d_model,
                d_proj=self.d_proj,
                proj_weight=proj_w,
                proj_bias=proj_b,
                blocks=blocks,
                relevance=relevance,
                instruction_embedding=instr,
                variant=self.variant,
            )
        mlps = []
        if self.variant != rk.NO_MLP_BLOCK:
            for i in range(self.block_count):
                mlps.append({name: t[f"mlp{i}.{name}"] for name in ("w1", "b1", "w2", "b2")})
        return rk.PointwiseParams(
            d_model=self.d_model,
            d_proj=self.d_proj,
            d_hidden=self.d_hidden,
            proj_weight=proj_w,
            proj_bias=proj_b,
            mlps=mlps,
            relevance=relevance,
            instruction_embedding=instr,
            variant=self.variant,
        )

    @classmethod
    def from_params(
        cls,
        params: rk.RankerParams,
        config: dict | None = None,
        dataset_fingerprint: str = "",
        feature_norm: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> "Checkpoint":
        tensors = {name: np.asarray(t, dtype=np.float32) for name, t in params.named_tensors()}
        if feature_norm is not None:
            tensors[NORM_MEAN] = np.asarray(feature_norm[0], dtype=np.float32)
            tensors[NORM_STD] = np.asarray(feature_norm[1], dtype=np.float32)
        config = dict(config or {})
        config.setdefault("variant", params.variant)
        return cls(
            ranker_kind=params.kind,
            relevance_kind=params.relevance.kind,
            d_model=params.d_model,
            d_proj=params.d_proj,
            d_hidden=params.d_hidden if params.kind == rk.POINTWISE else 0,
            block_count=len(params.blocks if params.kind == rk.LISTWISE else params.mlps) or 1,
            tensors=tensors,
            config=config,
            dataset_fingerprint=dataset_fingerprint,
        )

    def describe(self) -> str:
        blocks = f"{self.block_count} block(s)"
        return (
            f"{self.ranker_kind}/{self.relevance_kind} d_model={self.d_model} "
            f"d_proj={self.d_proj} {blocks} variant={self.variant} "
            f"params={self.parameter_count():,}"
        )


def _block_names():
    from .autodiff import BLOCK_TENSOR_NAMES

    return BLOCK_TENSOR_NAMES


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write of the LRCK layout."""
    path = os.fspath(path)
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            RANKER_CODES[ckpt.ranker_kind],
            RELEVANCE_CODES[ckpt.relevance_kind],
            ckpt.d_model,
            ckpt.d_proj,
            ckpt.d_hidden,
            ckpt.block_count,
            len(ckpt.tensors),
        )
    ]
    for name, tensor in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    trailer = json.dumps(
        {"config": ckpt.config, "dataset_fingerprint": ckpt.dataset_fingerprint},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    parts.append(_U32.pack(len(trailer)))
    parts.append(trailer)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptionError("file shorter than the fixed header", len(blob))
    (magic, version, kind_code, rel_code, d_model, d_proj, d_hidden, block_count, n_tensors) = (
        _HEADER.unpack_from(blob, 0)
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    if kind_code not in RANKER_NAMES:
        raise FormatError(f"unknown ranker kind code {kind_code}")
    if rel_code not in RELEVANCE_NAMES:
        raise FormatError(f"unknown relevance kind code {rel_code}")

    offset = _HEADER.size
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        if offset + 4 > len(blob):
            raise CorruptionError("truncated tensor name length", offset)
        (name_len,) = _U32.unpack_from(blob, offset)
        offset += 4
        if offset + name_len > len(blob):
            raise CorruptionError("truncated tensor name", offset)
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 4 > len(blob):
            raise CorruptionError(f"truncated rank for tensor {name!r}", offset)
        (rank,) = _U32.unpack_from(blob, offset)
        offset += 4
        if offset + 4 * rank > len(blob):
            raise CorruptionError(f"truncated dims for tensor {name!r}", offset)
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        if offset + 4 * count > len(blob):
            raise CorruptionError(f"truncated data for tensor {name!r}", offset)
        tensors[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
        )
        offset += 4 * count
    if offset + 4 > len(blob):
        raise CorruptionError("truncated trailer length", offset)
    (trailer_len,) = _U32.unpack_from(blob, offset)
    offset += 4
    if offset + trailer_len > len(blob):
        raise CorruptionError("truncated trailer", offset)
    try:
        trailer = json.loads(blob[offset : offset + trailer_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed trailer JSON: {exc}") from exc
    offset += trailer_len
    if offset != len(blob):
        raise CorruptionError(f"{len(blob) - offset} trailing bytes after the trailer", offset)

    ckpt = Checkpoint(
        ranker_kind=RANKER_NAMES[kind_code],
        relevance_kind=RELEVANCE_NAMES[rel_code],
        d_model=d_model,
        d_proj=d_proj,
        d_hidden=d_hidden,
        block_count=block_count,
        tensors=tensors,
        config=trailer.get("config", {}),
        dataset_fingerprint=trailer.get("dataset_fingerprint", ""),
    )
    _validate_tensor_set(ckpt)
    return ckpt


def _validate_tensor_set(ckpt: Checkpoint) -> None:
    expected = set(
        rk.expected_tensor_names(
            ckpt.ranker_kind,
            ckpt.relevance_kind,
            ckpt.block_count,
            ckpt.variant,
            cosine_scale="relevance.scale" in ckpt.tensors,
        )
    )
    present = set(ckpt.tensors) - set(_AUX_TENSORS)
    missing = sorted(expected - present)
    if missing:
        raise FormatError(
            f"checkpoint kind {ckpt.ranker_kind}/{ckpt.relevance_kind} is missing tensors: {missing}"
        )
    extra = sorted(present - expected)
    if extra:
        raise FormatError(f"checkpoint carries unexpected tensors: {extra}")
