"""The training recipe: config, epoch loop, grid search, splits.

One epoch over shuffled groups (listwise) or pairs (pointwise) in
batches; gradients accumulate per group in a fixed order, so a run is
fully determined by ``(config, dataset, seed)`` regardless of worker
count.  Batches with a non-finite gradient are skipped and flagged.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses as lo
from . import optim
from . import rankers as rk
from .autodiff import Tape
from .checkpoint import Checkpoint
from .errors import ContractViolation, TrainingError
from .features import (
    CLASSIFICATION,
    CandidateGroup,
    DatasetMeta,
    FeatureRecord,
    SampleStats,
    dataset_fingerprint,
    feature_moments,
    sample_groups,
    standardize_records,
)

DEFAULT_SEED = 1729


@dataclass
class TrainConfig:
    """Full training recipe; defaults follow the standard grid axes."""

    ranker: str = rk.LISTWISE
    relevance: str | None = None  # None: cls -> cosine, reg -> learnable
    loss: str = lo.CLS
    batch_size: int = 256
    epochs: int = 1
    optimizer: str = optim.ADAMW
    lr: float = 1e-4
    momentum: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    schedule: str = optim.CONSTANT
    d_proj: int = 64
    d_hidden: int = 128
    group_size: int = 10
    groups_per_query: int = 16
    blocks: int = 1
    variant: str = rk.FULL
    cosine_scale: bool = False
    standardize: bool = False
    seed: int = DEFAULT_SEED
    threads: int = 1

    def resolved_relevance(self) -> str:
        if self.relevance is not None:
            return self.relevance
        return rk.COSINE if self.loss == lo.CLS else rk.LEARNABLE

    def validate(self) -> None:
        if self.ranker not in rk.RANKER_KINDS:
            raise ContractViolation(f"unknown ranker {self.ranker!r}")
        if self.loss not in lo.LOSS_KINDS:
            raise ContractViolation(f"unknown loss {self.loss!r}")
        if self.optimizer not in optim.OPTIMIZERS:
            raise ContractViolation(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in optim.SCHEDULES:
            raise ContractViolation(f"unknown schedule {self.schedule!r}")
        if self.resolved_relevance() not in rk.RELEVANCE_KINDS:
            raise ContractViolation(f"unknown relevance {self.relevance!r}")
        if self.group_size < 2:
            raise ContractViolation("group_size must be >= 2")
        if self.batch_size < 1 or self.epochs < 1 or self.threads < 1:
            raise ContractViolation("batch_size, epochs and threads must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config fields: {sorted(unknown)}")
        merged = cls(**{k: v for k, v in data.items()})
        merged.betas = tuple(merged.betas)  # type: ignore[assignment]
        return merged


@dataclass
class TrainLog:
    batch_losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    aborted_steps: int = 0
    units: int = 0  # groups (listwise) or pairs (pointwise) per epoch
    unit_kind: str = "groups"
    sample_stats: SampleStats | None = None
    duration_seconds: float = 0.0

    @property
    def first_batch_loss(self) -> float:
        return self.batch_losses[0]

    @property
    def final_batch_loss(self) -> float:
        return self.batch_losses[-1]


def _make_optimizer(config: TrainConfig):
    if config.optimizer == optim.SGD:
        state = optim.SgdState()

        def step(tensors, grads, lr):
            return optim.sgd_step(
                tensors, grads, lr, momentum=config.momentum,
                weight_decay=config.weight_decay, state=state,
            )

    else:
        state = optim.AdamWState()

        def step(tensors, grads, lr):
            return optim.adamw_step(
                tensors, grads, lr, betas=config.betas,
                weight_decay=config.weight_decay, state=state,
            )

    return step


def _listwise_batch_grads(params, batch, loss_kind, batch_size, threads=1):
    """Per-group tapes, reduced in group order; returns (grads, mean loss)."""

    def one(group: CandidateGroup):
        tape = Tape()
        leaves = rk.make_leaves(tape, params, watch=True)
        trace = rk.score_listwise(params, group, tape=tape, leaves=leaves)
        node = lo.group_loss_node(tape, trace, group.labels, loss_kind)
        tape.backward(node, seed=1.0 / batch_size)
        return float(node.value[0, 0]), leaves

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, batch))
    else:
        results = [one(g) for g in batch]

    grads: dict[str, np.ndarray] = {}
    total = 0.0
    for value, leaves in results:  # fixed order: deterministic reduction
        total += value
        for name, leaf in leaves.items():
            if leaf.grad is None:
                continue
            if name in grads:
                grads[name] += leaf.grad
            else:
                grads[name] = leaf.grad
    return grads, total / len(batch)


def _pointwise_batch_grads(params, instructions, responses, labels, loss_kind):
    """One vectorized tape per batch of pairs; returns (grads, loss)."""
    tape = Tape()
    leaves = rk.make_leaves(tape, params, watch=True)
    _, _, scores = rk.pointwise_forward(tape, params, leaves, instructions, responses)
    if loss_kind == lo.CLS:
        report = lo.point_cls_loss(scores, labels, tape=tape)
    else:
        report = lo.point_reg_loss(scores, labels, tape=tape)
    tape.backward(report.node)
    grads = {name: leaf.grad for name, leaf in leaves.items() if leaf.grad is not None}
    return grads, report.loss


def _reshape_grads(tensors, grads):
    """Tape leaves are 2-D; fold gradients back onto the parameter shapes."""
    return {
        name: grads[name].reshape(tensors[name].shape) for name in grads if name in tensors
    }


def train(
    config: TrainConfig, records: list[FeatureRecord], meta: DatasetMeta
) -> tuple[Checkpoint, TrainLog]:
    """One (or more) epochs over the sampled groups; deterministic per seed."""
    config.validate()
    if config.loss == lo.CLS and meta.label_mode != CLASSIFICATION:
        raise ContractViolation(
            f"classification loss needs classification labels, dataset is {meta.label_mode}"
        )
    started = time.perf_counter()
    fingerprint = dataset_fingerprint(records, meta)

    feature_norm = None
    if config.standardize:
        mean, std = feature_moments(records)
        records = standardize_records(records, mean, std)
        feature_norm = (mean, std)

    groups, stats = sample_groups(
        records, config.group_size, config.groups_per_query, meta.label_mode, config.seed
    )
    if not groups:
        raise TrainingError(
            "no candidate groups survived sampling "
            f"(positive/negative filter in {meta.label_mode} mode; {stats})"
        )

    relevance = config.resolved_relevance()
    params = rk.init_ranker(
        config.ranker,
        meta.d_model,
        config.d_proj,
        config.d_hidden,
        relevance,
        seed=config.seed,
        blocks=config.blocks,
        variant=config.variant,
        cosine_scale=config.cosine_scale,
    )
    tensors = dict(params.named_tensors())
    step_fn = _make_optimizer(config)
    log = TrainLog(sample_stats=stats)

    listwise = config.ranker == rk.LISTWISE
    if listwise:
        units = list(groups)
        log.unit_kind = "groups"
    else:
        pairs = []
        for group in groups:
            features = group.features
            for i in range(group.group_size):
                pairs.append((group.instruction, features[i], group.labels[i]))
        units = pairs
        log.unit_kind = "pairs"
    log.units = len(units)

    batches_per_epoch = (len(units) + config.batch_size - 1) // config.batch_size
    total_steps = batches_per_epoch * config.epochs
    step_index = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(units))
        for start in range(0, len(order), config.batch_size):
            chosen = order[start : start + config.batch_size]
            lr = optim.lr_at(config.schedule, config.lr, step_index, total_steps)
            if listwise:
                batch = [units[i] for i in chosen]
                grads, loss_value = _listwise_batch_grads(
                    params, batch, config.loss, len(batch), config.threads
                )
            else:
                instructions = np.stack([units[i][0] for i in chosen]).astype(np.float64)
                responses = np.stack([units[i][1] for i in chosen]).astype(np.float64)
                labels = np.array([units[i][2] for i in chosen], dtype=np.float64)
                grads, loss_value = _pointwise_batch_grads(
                    params, instructions, responses, labels, config.loss
                )
            applied = step_fn(tensors, _reshape_grads(tensors, grads), lr)
            if not applied:
                log.aborted_steps += 1
            log.batch_losses.append(loss_value)
            log.learning_rates.append(lr)
            step_index += 1

    log.duration_seconds = time.perf_counter() - started
    ckpt = Checkpoint.from_params(
        params,
        config=config.to_dict(),
        dataset_fingerprint=fingerprint,
        feature_norm=feature_norm,
    )
    return ckpt, log


# ---------------------------------------------------------------------------
# splits and grid search
# ---------------------------------------------------------------------------


def split_by_query(
    records: list[FeatureRecord], held_out_fraction: float, seed: int = DEFAULT_SEED
) -> tuple[list[FeatureRecord], list[FeatureRecord]]:
    """Split whole queries (never groups) into train/held-out lists."""
    if not 0.0 < held_out_fraction < 1.0:
        raise ContractViolation(f"held_out_fraction must lie in (0, 1), got {held_out_fraction}")
    order = np.random.default_rng([seed, len(records)]).permutation(len(records))
    held = max(1, int(round(held_out_fraction * len(records))))
    held_idx = set(order[:held].tolist())
    train_records = [r for i, r in enumerate(records) if i not in held_idx]
    held_records = [r for i, r in enumerate(records) if i in held_idx]
    return train_records, held_records


def default_grid(base: TrainConfig | None = None) -> list[TrainConfig]:
    """The standard search grid: optimizer/lr/momentum x batch x schedule."""
    base = base or TrainConfig()
    axes = []
    for lr in (0.05, 0.1, 0.5, 1.0):
        for momentum in (0.0, 0.9):
            axes.append((optim.SGD, lr, momentum))
    for lr in (1e-5, 1e-4):
        axes.append((optim.ADAMW, lr, 0.0))
    grid = []
    for optimizer, lr, momentum in axes:
        for batch_size in (256, 1024):
            for schedule in (optim.CONSTANT, optim.COSINE_DECAY):
                cfg = TrainConfig.from_dict(base.to_dict())
                cfg.optimizer = optimizer
                cfg.lr = lr
                cfg.momentum = momentum
                cfg.batch_size = batch_size
                cfg.schedule = schedule
                grid.append(cfg)
    return grid


def grid_search(
    grid: list[TrainConfig],
    records: list[FeatureRecord],
    meta: DatasetMeta,
    held_out_fraction: float = 0.1,
    seed: int = DEFAULT_SEED,
) -> tuple[TrainConfig, list[dict]]:
    """Train each grid point, score on held-out groups, return the argmax.

    Failures are recorded per point and the search continues.  Results
    keep grid enumeration order; ties go to the earliest point.
    """
    from .evaluation import selection_accuracy  # local import: avoid a cycle

    if not grid:
        raise ContractViolation("grid must contain at least one configuration")
    train_records, held_records = split_by_query(records, held_out_fraction, seed)
    results: list[dict] = []
    best_index, best_accuracy = -1, -1.0
    for index, config in enumerate(grid):
        row = {"index": index, "config": config.to_dict()}
        try:
            ckpt, log = train(config, train_records, meta)
            held_groups, _ = sample_groups(
                held_records, config.group_size, config.groups_per_query,
                meta.label_mode, config.seed,
            )
            if not held_groups:
                raise TrainingError("no held-out groups survived the filter")
            accuracy = selection_accuracy(ckpt, held_groups, meta.label_mode)
            row.update(
                accuracy=accuracy,
                final_batch_loss=log.final_batch_loss,
                train_seconds=log.duration_seconds,
            )
            if accuracy > best_accuracy:
                best_index, best_accuracy = index, accuracy
        except Exception as exc:  # noqa: BLE001 - searches must survive point failures
            row["error"] = f"{type(exc).__name__}: {exc}"
        results.append(row)
    if best_index < 0:
        raise TrainingError("every grid point failed; see the results table")
    return grid[best_index], results
