"""Standalone LRFD writer: the wire format shared with the ranker toolkit.

Layout (little-endian): magic "LRFD" | version u32=1 | d_model u32 |
flags u32 (bit 0: regression labels) | count u64; then per record:
query_id u64 | n u32 | instruction d_model*f32 | n x (label f32,
feature d_model*f32).  Metadata sidecar: UTF-8 JSON at <path>.meta.json.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"LRFD"
VERSION = 1
FLAG_REGRESSION = 0x1

_HEADER = struct.Struct("<4sIIIQ")
_RECORD_HEAD = struct.Struct("<QI")


@dataclass
class ExportRecord:
    query_id: int
    instruction: np.ndarray  # (d_model,) any float dtype; down-cast on write
    features: np.ndarray  # (n, d_model)
    labels: np.ndarray  # (n,)


@dataclass
class ExportMeta:
    d_model: int
    label_mode: str  # "classification" | "regression"
    layer_index: int
    layer_fraction: float
    source_model: str
    temperature: float
    max_new_tokens: int
    num_samples: int
    extra: dict = field(default_factory=dict)  # informational only

    def to_dict(self) -> dict:
        payload = {
            "d_model": self.d_model,
            "label_mode": self.label_mode,
            "layer_index": self.layer_index,
            "layer_fraction": self.layer_fraction,
            "source_model": self.source_model,
            "sampling": {
                "temperature": self.temperature,
                "max_new_tokens": self.max_new_tokens,
                "num_samples": self.num_samples,
            },
        }
        payload.update(self.extra)
        return payload


def write_lrfd(records: list[ExportRecord], meta: ExportMeta, path) -> None:
    """Atomic write of the dataset plus its metadata sidecar."""
    path = os.fspath(path)
    flags = FLAG_REGRESSION if meta.label_mode == "regression" else 0
    parts = [_HEADER.pack(MAGIC, VERSION, meta.d_model, flags, len(records))]
    for record in records:
        instruction = np.ascontiguousarray(record.instruction, dtype="<f4")
        features = np.ascontiguousarray(record.features, dtype="<f4")
        labels = np.ascontiguousarray(record.labels, dtype="<f4")
        n = features.shape[0]
        if instruction.shape != (meta.d_model,) or features.shape != (n, meta.d_model):
            raise ValueError(
                f"query {record.query_id}: feature shapes {instruction.shape}/{features.shape} "
                f"do not match d_model={meta.d_model}"
            )
        if not (np.isfinite(instruction).all() and np.isfinite(features).all()):
            raise ValueError(f"query {record.query_id}: non-finite feature values")
        parts.append(_RECORD_HEAD.pack(record.query_id, n))
        parts.append(instruction.tobytes())
        for i in range(n):
            parts.append(struct.pack("<f", float(labels[i])))
            parts.append(features[i].tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)

    meta_tmp = path + ".meta.json.tmp"
    with open(meta_tmp, "w", encoding="utf-8") as fh:
        json.dump(meta.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(meta_tmp, path + ".meta.json")
