"""Best-of-K evaluation: selection accuracy, baselines, scaling curves.

Success for a group means the selected candidate's label is positive
(classification) or ties the group maximum within 1e-9 (regression).
Everything here is a pure function of (checkpoint, groups, seed).

Scaling-curve protocol: for every query and trial the response pool is
permuted once, and the K-candidate group for each requested K is the
first K entries of that permutation.  Nested prefixes make the oracle
curve non-decreasing in K by construction; the protocol is stamped into
every report.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rankers as rk
from .checkpoint import Checkpoint
from .errors import ContractViolation, EvaluationError
from .features import (
    CLASSIFICATION,
    REGRESSION,
    CandidateGroup,
    DatasetMeta,
    FeatureRecord,
    sample_groups,
    standardize_records,
)

REGRESSION_TIE_TOL = 1e-9

CURVE_PROTOCOL = (
    "per (query, trial): one pool permutation; the K-group is its first K entries "
    "(nested prefixes, without replacement)"
)


def _resolve(params_or_ckpt) -> tuple[rk.RankerParams, Checkpoint | None]:
    if isinstance(params_or_ckpt, Checkpoint):
        return params_or_ckpt.to_params(), params_or_ckpt
    return params_or_ckpt, None


def _apply_norm(ckpt: Checkpoint | None, records: list[FeatureRecord]) -> list[FeatureRecord]:
    if ckpt is not None and ckpt.feature_norm is not None:
        mean, std = ckpt.feature_norm
        return standardize_records(records, mean, std)
    return records


def group_success(labels: np.ndarray, index: int, label_mode: str) -> bool:
    if label_mode == REGRESSION:
        return bool(labels[index] >= labels.max() - REGRESSION_TIE_TOL)
    return bool(labels[index] == 1.0)


def _check_dimensions(params: rk.RankerParams, groups: list[CandidateGroup]) -> None:
    if groups and groups[0].response_pool.shape[1] != params.d_model:
        raise ContractViolation(
            f"dataset d_model {groups[0].response_pool.shape[1]} != "
            f"checkpoint d_model {params.d_model}"
        )


def selection_accuracy(
    params_or_ckpt, groups: list[CandidateGroup], label_mode: str = CLASSIFICATION,
    threads: int = 1,
) -> float:
    """Fraction of groups where the ranker's pick is a success."""
    params, _ = _resolve(params_or_ckpt)
    _check_dimensions(params, groups)
    if not groups:
        raise EvaluationError("no groups to evaluate")
    outcomes = _selection_outcomes(params, groups, label_mode, threads)
    return float(np.mean(outcomes))


def _selection_outcomes(params, groups, label_mode, threads: int = 1) -> list[bool]:
    def one(group: CandidateGroup) -> bool:
        trace = rk.score_group(params, group)
        return group_success(group.labels, rk.select_best(trace.scores), label_mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, groups))
    return [one(g) for g in groups]


def oracle_accuracy(groups: list[CandidateGroup], label_mode: str = CLASSIFICATION) -> float:
    """Fraction of groups containing at least one success (pass@K bound)."""
    if not groups:
        raise EvaluationError("no groups to evaluate")
    if label_mode == REGRESSION:
        return 1.0  # a maximum always exists; callers flag the caveat
    return float(np.mean([g.labels.max() == 1.0 for g in groups]))


def first_sample_accuracy(groups: list[CandidateGroup], label_mode: str = CLASSIFICATION) -> float:
    """Accuracy of always taking candidate index 0 (plain decoding)."""
    if not groups:
        raise EvaluationError("no groups to evaluate")
    return float(np.mean([group_success(g.labels, 0, label_mode) for g in groups]))


def random_accuracy(groups: list[CandidateGroup], label_mode: str = CLASSIFICATION) -> float:
    """Exact expectation of a uniformly random pick."""
    if not groups:
        raise EvaluationError("no groups to evaluate")
    rates = []
    for g in groups:
        wins = sum(group_success(g.labels, i, label_mode) for i in range(g.group_size))
        rates.append(wins / g.group_size)
    return float(np.mean(rates))


@dataclass
class EvalReport:
    dataset_id: str
    ranker_id: str
    group_size: int
    trials: int
    selection_accuracy: float
    oracle_accuracy: float
    first_sample_accuracy: float
    random_accuracy: float
    label_mode: str
    oracle_caveat: bool = False  # regression mode: the bound is trivially 1.0
    parameter_count: int | None = None
    per_query: dict[int, list[bool]] = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("selection_accuracy", "oracle_accuracy", "first_sample_accuracy", "random_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise EvaluationError(f"{name}={v} outside [0, 1]")
        if self.selection_accuracy > self.oracle_accuracy + 1e-12:
            raise EvaluationError("selection accuracy exceeded the oracle bound")
        if self.first_sample_accuracy > self.oracle_accuracy + 1e-12:
            raise EvaluationError("first-sample accuracy exceeded the oracle bound")

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "ranker_id": self.ranker_id,
            "group_size": self.group_size,
            "trials": self.trials,
            "selection_accuracy": self.selection_accuracy,
            "oracle_accuracy": self.oracle_accuracy,
            "first_sample_accuracy": self.first_sample_accuracy,
            "random_accuracy": self.random_accuracy,
            "label_mode": self.label_mode,
            "oracle_caveat": self.oracle_caveat,
            "parameter_count": self.parameter_count,
            "per_query": {str(k): v for k, v in self.per_query.items()},
            "protocol": self.protocol,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("dataset", self.dataset_id),
            ("ranker", self.ranker_id),
            ("group size K", str(self.group_size)),
            ("groups evaluated", str(self.trials)),
            ("selection accuracy", f"{self.selection_accuracy:.4f}"),
            ("oracle accuracy", f"{self.oracle_accuracy:.4f}" + (" (trivial: regression)" if self.oracle_caveat else "")),
            ("first-sample accuracy", f"{self.first_sample_accuracy:.4f}"),
            ("random-pick accuracy", f"{self.random_accuracy:.4f}"),
        ]
        if self.parameter_count is not None:
            rows.append(("parameters", f"{self.parameter_count:,}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def evaluate(
    params_or_ckpt,
    groups: list[CandidateGroup],
    label_mode: str = CLASSIFICATION,
    dataset_id: str = "",
    ranker_id: str = "",
    threads: int = 1,
    protocol: dict | None = None,
) -> EvalReport:
    """Full report over pre-built groups."""
    params, ckpt = _resolve(params_or_ckpt)
    _check_dimensions(params, groups)
    if not groups:
        raise EvaluationError("no groups to evaluate")
    outcomes = _selection_outcomes(params, groups, label_mode, threads)
    per_query: dict[int, list[bool]] = {}
    for group, outcome in zip(groups, outcomes):
        per_query.setdefault(group.query_id, []).append(bool(outcome))
    report = EvalReport(
        dataset_id=dataset_id,
        ranker_id=ranker_id or (ckpt.describe() if ckpt else params.kind),
        group_size=groups[0].group_size,
        trials=len(groups),
        selection_accuracy=float(np.mean(outcomes)),
        oracle_accuracy=oracle_accuracy(groups, label_mode),
        first_sample_accuracy=first_sample_accuracy(groups, label_mode),
        random_accuracy=random_accuracy(groups, label_mode),
        label_mode=label_mode,
        oracle_caveat=label_mode == REGRESSION,
        parameter_count=rk.parameter_count(params),
        per_query=per_query,
        protocol=protocol or {},
    )
    report.validate()
    return report


# ---------------------------------------------------------------------------
# scaling over the number of candidates
# ---------------------------------------------------------------------------


@dataclass
class CurvePoint:
    group_size: int
    mean_accuracy: float
    std_across_queries: float


@dataclass
class ScalingCurve:
    points: list[CurvePoint]
    skipped: list[int]  # requested K values beyond the smallest pool
    trials_per_k: int
    seed: int
    protocol: str = CURVE_PROTOCOL

    def to_csv(self) -> str:
        lines = ["K,mean,std"]
        for p in self.points:
            lines.append(f"{p.group_size},{p.mean_accuracy:.6f},{p.std_across_queries:.6f}")
        return "\n".join(lines) + "\n"


def scaling_curve(
    params_or_ckpt,
    records: list[FeatureRecord],
    k_values: list[int],
    trials_per_k: int = 8,
    seed: int = 0,
    label_mode: str = CLASSIFICATION,
    scorer=None,
) -> ScalingCurve:
    """Mean selection accuracy as K grows, resampled from stored pools.

    ``scorer(instruction, features) -> scores`` may replace the ranker
    (used for oracle/reference curves).
    """
    params = None
    if scorer is None:
        params, ckpt = _resolve(params_or_ckpt)
        records = _apply_norm(ckpt, records)
    pool_min = min(r.num_responses for r in records)
    usable = sorted(k for k in set(k_values) if 1 <= k <= pool_min)
    skipped = sorted(set(k_values) - set(usable))
    points = []
    for k in usable:
        per_query_means = []
        for record in records:
            wins = []
            for trial in range(trials_per_k):
                rng = np.random.default_rng([seed, record.query_id, trial])
                perm = rng.permutation(record.num_responses)[:k]
                labels = record.response_labels[perm]
                if k == 1:
                    pick = 0
                else:
                    group = CandidateGroup(
                        query_id=record.query_id,
                        instruction=record.instruction,
                        indices=perm.astype(np.int64),
                        labels=labels,
                        response_pool=record.response_features,
                    )
                    if scorer is not None:
                        scores = scorer(record.instruction, group.features)
                    else:
                        scores = rk.score_group(params, group).scores
                    pick = rk.select_best(scores)
                wins.append(group_success(labels, pick, label_mode))
            per_query_means.append(float(np.mean(wins)))
        points.append(
            CurvePoint(
                group_size=k,
                mean_accuracy=float(np.mean(per_query_means)),
                std_across_queries=float(np.std(per_query_means)),
            )
        )
    return ScalingCurve(points=points, skipped=skipped, trials_per_k=trials_per_k, seed=seed)


def oracle_curve(records, k_values, trials_per_k=8, seed=0, label_mode=CLASSIFICATION) -> ScalingCurve:
    """Upper-bound curve: the same resampling protocol, picking by label."""
    pool_min = min(r.num_responses for r in records)
    usable = sorted(k for k in set(k_values) if 1 <= k <= pool_min)
    points = []
    for k in usable:
        per_query = []
        for record in records:
            wins = []
            for trial in range(trials_per_k):
                rng = np.random.default_rng([seed, record.query_id, trial])
                perm = rng.permutation(record.num_responses)[:k]
                labels = record.response_labels[perm]
                wins.append(group_success(labels, int(np.argmax(labels)), label_mode))
            per_query.append(float(np.mean(wins)))
        points.append(CurvePoint(k, float(np.mean(per_query)), float(np.std(per_query))))
    return ScalingCurve(
        points=points,
        skipped=sorted(set(k_values) - set(usable)),
        trials_per_k=trials_per_k,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


def ablation_run(
    variant: str,
    config,
    records: list[FeatureRecord],
    meta: DatasetMeta,
    held_out_fraction: float = 0.1,
) -> EvalReport:
    """Train and evaluate an architecture variant; the report carries its
    parameter count so projection removal shows the size blow-up."""
    from .training import TrainConfig, split_by_query, train  # local: avoid a cycle

    if variant not in rk.VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}")
    config = TrainConfig.from_dict({**config.to_dict(), "variant": variant})
    if variant == rk.NO_MLP_BLOCK and config.ranker != rk.POINTWISE:
        raise ContractViolation("no_mlp_block applies to the pointwise ranker only")
    train_records, held_records = split_by_query(records, held_out_fraction, config.seed)
    ckpt, _ = train(config, train_records, meta)
    held_groups, _ = sample_groups(
        _apply_norm(ckpt, held_records),
        config.group_size,
        config.groups_per_query,
        meta.label_mode,
        config.seed,
    )
    params = ckpt.to_params()
    report = evaluate(
        params,
        held_groups,
        meta.label_mode,
        dataset_id=ckpt.dataset_fingerprint[:12],
        ranker_id=ckpt.describe(),
        threads=config.threads,
        protocol={"variant": variant, "held_out_fraction": held_out_fraction, "seed": config.seed},
    )
    return report
