"""Synthetic feature datasets with a planted linear rule.

Stand-ins for extractor output: every "response feature" is a noisy
vector whose label is decided by the sign (classification) or value
(regression) of its projection onto a hidden direction.  A linear probe
can separate the classes almost perfectly, which makes these datasets
the reference workload for end-to-end training checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (
    CLASSIFICATION,
    REGRESSION,
    DatasetMeta,
    FeatureRecord,
    SamplingInfo,
    make_record,
)


@dataclass
class PlantedRule:
    """The hidden direction labels were derived from."""

    direction: np.ndarray  # unit vector, (d_model,)

    def margin(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.direction


def _meta(d_model: int, label_mode: str, pool_size: int) -> DatasetMeta:
    return DatasetMeta(
        d_model=d_model,
        label_mode=label_mode,
        layer_index=0,
        layer_fraction=1.0,
        source_model="synthetic-planted-linear-rule",
        sampling=SamplingInfo(temperature=0.0, max_new_tokens=0, num_samples=pool_size),
    )


def linear_rule_dataset(
    num_queries: int = 500,
    d_model: int = 256,
    pool_size: int = 30,
    seed: int = 0,
    signal: float = 6.0,
    instruction_alignment: float = 8.0,
    noise: float = 0.75,
) -> tuple[list[FeatureRecord], DatasetMeta, PlantedRule]:
    """Classification features: label = 1 iff direction . feature > 0.

    Positives carry ``+margin`` along the hidden direction, negatives
    ``-margin`` (margins drawn in [signal/2, signal]); the rest of each
    vector is isotropic noise orthogonal to the direction.  Instructions
    lean along the same direction so relevance-style scoring has signal
    even before training.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=d_model)
    direction /= np.linalg.norm(direction)
    records = []
    for qid in range(num_queries):
        instruction = noise * rng.normal(size=d_model) + instruction_alignment * direction
        positive_rate = rng.uniform(0.35, 0.65)
        labels = (rng.random(pool_size) < positive_rate).astype(np.float64)
        base = noise * rng.normal(size=(pool_size, d_model))
        base -= np.outer(base @ direction, direction)  # orthogonalize
        margins = rng.uniform(0.5 * signal, signal, size=pool_size)
        signed = np.where(labels > 0, margins, -margins)
        features = base + np.outer(signed, direction)
        records.append(make_record(qid, instruction, features, labels))
    return records, _meta(d_model, CLASSIFICATION, pool_size), PlantedRule(direction)


def linear_score_dataset(
    num_queries: int = 200,
    d_model: int = 64,
    pool_size: int = 20,
    seed: int = 0,
    score_center: float = 2.5,
    score_spread: float = 1.5,
    noise: float = 1.0,
) -> tuple[list[FeatureRecord], DatasetMeta, PlantedRule]:
    """Regression features: label = center + spread * (direction . feature)."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=d_model)
    direction /= np.linalg.norm(direction)
    records = []
    for qid in range(num_queries):
        instruction = noise * rng.normal(size=d_model)
        features = noise * rng.normal(size=(pool_size, d_model))
        labels = score_center + score_spread * (features @ direction)
        records.append(make_record(qid, instruction, features, labels))
    return records, _meta(d_model, REGRESSION, pool_size), PlantedRule(direction)
