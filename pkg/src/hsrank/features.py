"""Feature datasets: records, the LRFD binary layout, and group sampling.

A dataset is a list of :class:`FeatureRecord` (one per query) plus a
:class:`DatasetMeta` sidecar.  Records hold the final-token hidden state
of the instruction and of every sampled response, as 32-bit floats.

LRFD file layout (all integers little-endian):
    magic "LRFD" | version u32=1 | d_model u32 | flags u32 | count u64
    then ``count`` records, each:
    query_id u64 | n_responses u32 | instruction d_model*f32
    | n_responses x (label f32, feature d_model*f32)
Flag bit 0 set means regression labels.  Metadata travels in a UTF-8 JSON
sidecar at ``<path>.meta.json``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, CorruptionError, FormatError, ValidationError

MAGIC = b"LRFD"
VERSION = 1
FLAG_REGRESSION = 0x1

CLASSIFICATION = "classification"
REGRESSION = "regression"

_HEADER = struct.Struct("<4sIIIQ")
_RECORD_HEAD = struct.Struct("<QI")


@dataclass
class SamplingInfo:
    """How responses were sampled from the base model."""

    temperature: float = 1.5
    max_new_tokens: int = 1024
    num_samples: int = 100


@dataclass
class DatasetMeta:
    d_model: int
    label_mode: str = CLASSIFICATION
    layer_index: int = 0
    layer_fraction: float = 1.0
    source_model: str = "unknown"
    sampling: SamplingInfo = field(default_factory=SamplingInfo)

    def validate(self) -> None:
        if self.d_model < 1:
            raise ValidationError(f"d_model must be positive, got {self.d_model}")
        if self.label_mode not in (CLASSIFICATION, REGRESSION):
            raise ValidationError(f"unknown label_mode {self.label_mode!r}")
        if not (0.0 < self.layer_fraction <= 1.0):
            raise ValidationError(f"layer_fraction must lie in (0, 1], got {self.layer_fraction}")
        if self.sampling.num_samples < 1:
            raise ValidationError("sampling.num_samples must be >= 1")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "label_mode": self.label_mode,
            "layer_index": self.layer_index,
            "layer_fraction": self.layer_fraction,
            "source_model": self.source_model,
            "sampling": {
                "temperature": self.sampling.temperature,
                "max_new_tokens": self.sampling.max_new_tokens,
                "num_samples": self.sampling.num_samples,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetMeta":
        try:
            sampling = SamplingInfo(
                temperature=float(data["sampling"]["temperature"]),
                max_new_tokens=int(data["sampling"]["max_new_tokens"]),
                num_samples=int(data["sampling"]["num_samples"]),
            )
            meta = cls(
                d_model=int(data["d_model"]),
                label_mode=str(data["label_mode"]),
                layer_index=int(data["layer_index"]),
                layer_fraction=float(data["layer_fraction"]),
                source_model=str(data["source_model"]),
                sampling=sampling,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed dataset metadata: {exc}") from exc
        meta.validate()
        return meta


@dataclass
class FeatureRecord:
    """One query: its instruction feature and all sampled responses."""

    query_id: int
    instruction: np.ndarray  # (d_model,) float32
    response_features: np.ndarray  # (n, d_model) float32
    response_labels: np.ndarray  # (n,) float32

    @property
    def num_responses(self) -> int:
        return int(self.response_features.shape[0])


def make_record(query_id, instruction, response_features, response_labels) -> FeatureRecord:
    """Build a record, down-casting feature payloads to float32 once."""
    return FeatureRecord(
        query_id=int(query_id),
        instruction=np.asarray(instruction, dtype=np.float32).reshape(-1),
        response_features=np.asarray(response_features, dtype=np.float32).reshape(
            len(response_labels), -1
        ),
        response_labels=np.asarray(response_labels, dtype=np.float32).reshape(-1),
    )


def validate_record(record: FeatureRecord, d_model: int, label_mode: str) -> None:
    """Check a record's invariants; error messages name the query_id."""
    qid = record.query_id
    if not (0 <= qid < 2**64):
        raise ValidationError(f"query_id {qid} does not fit an unsigned 64-bit field")
    if record.instruction.shape != (d_model,):
        raise ValidationError(
            f"query {qid}: instruction has shape {record.instruction.shape}, expected ({d_model},)"
        )
    if record.response_features.ndim != 2 or record.response_features.shape[1] != d_model:
        raise ValidationError(
            f"query {qid}: response features have shape {record.response_features.shape}, "
            f"expected (n, {d_model})"
        )
    n = record.response_features.shape[0]
    if n == 0:
        raise ValidationError(f"query {qid}: responses list is empty")
    if record.response_labels.shape != (n,):
        raise ValidationError(f"query {qid}: {n} responses but {record.response_labels.shape} labels")
    if not np.isfinite(record.instruction).all():
        raise ValidationError(f"query {qid}: instruction feature contains non-finite values")
    if not np.isfinite(record.response_features).all():
        raise ValidationError(f"query {qid}: response features contain non-finite values")
    if not np.isfinite(record.response_labels).all():
        raise ValidationError(f"query {qid}: labels contain non-finite values")
    if label_mode == CLASSIFICATION:
        ok = np.isin(record.response_labels, (0.0, 1.0))
        if not ok.all():
            bad = record.response_labels[~ok][0]
            raise ValidationError(f"query {qid}: classification label {bad} is not 0.0 or 1.0")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _encode_record(record: FeatureRecord) -> bytes:
    parts = [_RECORD_HEAD.pack(record.query_id, record.num_responses)]
    parts.append(np.ascontiguousarray(record.instruction, dtype="<f4").tobytes())
    for feature, label in zip(record.response_features, record.response_labels):
        parts.append(struct.pack("<f", float(label)))
        parts.append(np.ascontiguousarray(feature, dtype="<f4").tobytes())
    return b"".join(parts)


def write_dataset(records: list[FeatureRecord], meta: DatasetMeta, path) -> None:
    """Write records and the metadata sidecar; atomic via temp + rename."""
    meta.validate()
    for record in records:
        validate_record(record, meta.d_model, meta.label_mode)
    flags = FLAG_REGRESSION if meta.label_mode == REGRESSION else 0
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, meta.d_model, flags, len(records)))
        for record in records:
            fh.write(_encode_record(record))
    os.replace(tmp, path)
    meta_tmp = path + ".meta.json.tmp"
    with open(meta_tmp, "w", encoding="utf-8") as fh:
        json.dump(meta.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(meta_tmp, path + ".meta.json")


def read_dataset(path) -> tuple[list[FeatureRecord], DatasetMeta]:
    """Read an LRFD file; round-trips ``write_dataset`` bit-exactly."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptionError("file shorter than the fixed header", len(blob))
    magic, version, d_model, flags, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    label_mode = REGRESSION if flags & FLAG_REGRESSION else CLASSIFICATION

    meta_path = path + ".meta.json"
    if not os.path.exists(meta_path):
        raise FormatError(f"missing metadata sidecar {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = DatasetMeta.from_dict(json.load(fh))
    if meta.d_model != d_model:
        raise FormatError(f"sidecar d_model {meta.d_model} != header d_model {d_model}")
    if meta.label_mode != label_mode:
        raise FormatError(f"sidecar label_mode {meta.label_mode!r} != header flags {flags:#x}")

    records: list[FeatureRecord] = []
    offset = _HEADER.size
    row = 4 * (1 + d_model)  # label + feature, in bytes
    for _ in range(count):
        if offset + _RECORD_HEAD.size > len(blob):
            raise CorruptionError("truncated record header", offset)
        query_id, n = _RECORD_HEAD.unpack_from(blob, offset)
        offset += _RECORD_HEAD.size
        need = 4 * d_model + n * row
        if offset + need > len(blob):
            raise CorruptionError(f"truncated payload for query {query_id}", offset)
        instruction = np.frombuffer(blob, dtype="<f4", count=d_model, offset=offset).copy()
        offset += 4 * d_model
        body = np.frombuffer(blob, dtype="<f4", count=n * (1 + d_model), offset=offset)
        body = body.reshape(n, 1 + d_model)
        offset += n * row
        records.append(
            FeatureRecord(
                query_id=query_id,
                instruction=instruction,
                response_features=body[:, 1:].copy(),
                response_labels=body[:, 0].copy(),
            )
        )
    if offset != len(blob):
        raise CorruptionError(f"{len(blob) - offset} trailing bytes after the last record", offset)
    for record in records:
        validate_record(record, d_model, label_mode)
    return records, meta


def dataset_fingerprint(records: list[FeatureRecord], meta: DatasetMeta) -> str:
    """Stable sha256 over the canonical encoding of a dataset."""
    h = hashlib.sha256()
    flags = FLAG_REGRESSION if meta.label_mode == REGRESSION else 0
    h.update(_HEADER.pack(MAGIC, VERSION, meta.d_model, flags, len(records)))
    for record in records:
        h.update(_encode_record(record))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# candidate groups
# ---------------------------------------------------------------------------


@dataclass
class CandidateGroup:
    """K candidates for one query; the unit of listwise work.

    Holds indices into the owning record's response pool instead of copied
    feature rows, so large pools are never duplicated.
    """

    query_id: int
    instruction: np.ndarray  # (d_model,) float32
    indices: np.ndarray  # (K,) int64 into the pool
    labels: np.ndarray  # (K,) float32
    response_pool: np.ndarray  # (n, d_model) float32, shared with the record

    @property
    def features(self) -> np.ndarray:
        return self.response_pool[self.indices]

    @property
    def group_size(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class SampleStats:
    """What the sampler had to skip or retry."""

    skipped_records: int = 0  # fewer responses than K
    short_queries: int = 0  # retry budget exhausted before N groups
    discarded_draws: int = 0  # draws lacking both label values

    def __str__(self) -> str:
        return (
            f"skipped_records={self.skipped_records} short_queries={self.short_queries} "
            f"discarded_draws={self.discarded_draws}"
        )


RETRY_FACTOR = 10  # attempts per query = RETRY_FACTOR * N


def sample_groups(
    records: list[FeatureRecord],
    group_size: int,
    groups_per_query: int,
    label_mode: str = CLASSIFICATION,
    seed: int = 0,
) -> tuple[list[CandidateGroup], SampleStats]:
    """Draw up to N groups of K distinct responses per query.

    In classification mode, draws lacking both a positive and a negative
    are discarded and redrawn, up to ``RETRY_FACTOR * N`` attempts per
    query.  Deterministic for a fixed ``(records, K, N, seed)``: each
    query uses its own generator seeded from ``[seed, query_id]``.
    """
    if group_size < 2:
        raise ContractViolation(f"group_size must be >= 2, got {group_size}")
    if groups_per_query < 1:
        raise ContractViolation(f"groups_per_query must be >= 1, got {groups_per_query}")
    groups: list[CandidateGroup] = []
    stats = SampleStats()
    for record in records:
        n = record.num_responses
        if n < group_size:
            stats.skipped_records += 1
            continue
        rng = np.random.default_rng([seed, record.query_id])
        kept = 0
        for _ in range(RETRY_FACTOR * groups_per_query):
            if kept == groups_per_query:
                break
            indices = rng.choice(n, size=group_size, replace=False)
            labels = record.response_labels[indices]
            if label_mode == CLASSIFICATION and not (labels.min() == 0.0 and labels.max() == 1.0):
                stats.discarded_draws += 1
                continue
            groups.append(
                CandidateGroup(
                    query_id=record.query_id,
                    instruction=record.instruction,
                    indices=indices.astype(np.int64),
                    labels=labels,
                    response_pool=record.response_features,
                )
            )
            kept += 1
        if kept < groups_per_query:
            stats.short_queries += 1
    return groups, stats


# ---------------------------------------------------------------------------
# optional per-dimension standardization (off by default everywhere)
# ---------------------------------------------------------------------------


def feature_moments(records: list[FeatureRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std over all instruction and response features."""
    stacked = np.concatenate(
        [r.response_features for r in records] + [r.instruction[None, :] for r in records]
    ).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-8)
    return mean.astype(np.float32), std.astype(np.float32)


def standardize_records(
    records: list[FeatureRecord], mean: np.ndarray, std: np.ndarray
) -> list[FeatureRecord]:
    out = []
    for r in records:
        out.append(
            FeatureRecord(
                query_id=r.query_id,
                instruction=((r.instruction - mean) / std).astype(np.float32),
                response_features=((r.response_features - mean) / std).astype(np.float32),
                response_labels=r.response_labels,
            )
        )
    return out
