"""Training objectives: listwise KL / MSE and pointwise BCE / MSE.

All four losses average over the batch (the 1/N prefactor); the listwise
MSE additionally averages over the K candidates of each group.  When the
inputs carry live tape nodes the returned report includes a scalar node
ready for ``Tape.backward``; otherwise only values are computed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ContractViolation
from .rankers import ScoringTrace

CLS = "cls"
REG = "reg"
LOSS_KINDS = (CLS, REG)


@dataclass
class LossReport:
    loss: float
    batch_size: int
    label_distributions: np.ndarray | None = None  # (N, K), listwise cls
    score_distributions: np.ndarray | None = None  # (N, K), listwise cls
    probabilities: np.ndarray | None = None  # (N,), pointwise cls
    node: Tensor | None = None  # scalar on the shared tape, if any


def _shared_tape(traces: Sequence[ScoringTrace]) -> Tape | None:
    tapes = {id(t.tape) for t in traces if t.tape is not None}
    if len(tapes) == 1 and all(t.score_node is not None for t in traces):
        return traces[0].tape
    return None


def _as_labels(labels, n: int) -> list[np.ndarray]:
    out = [np.asarray(row, dtype=np.float64).reshape(-1) for row in labels]
    if len(out) != n:
        raise ContractViolation(f"{n} traces but {len(out)} label rows")
    return out


def listwise_label_distribution(y: np.ndarray) -> np.ndarray:
    """Normalize binary labels to a distribution over the group."""
    total = y.sum()
    if total <= 0.0:
        raise ContractViolation(
            "group has no positive label; the sampler's filter should have removed it"
        )
    return y / total


def list_cls_loss(traces: Sequence[ScoringTrace], labels, tape: Tape | None = None) -> LossReport:
    """Mean KL(label distribution || softmax(scores)) over the groups."""
    label_rows = _as_labels(labels, len(traces))
    tape = tape if tape is not None else _shared_tape(traces)
    py, ps, kls, nodes = [], [], [], []
    for trace, y in zip(traces, label_rows):
        if not np.isin(y, (0.0, 1.0)).all():
            raise ContractViolation(f"labels must be binary, got {y}")
        target = listwise_label_distribution(y).reshape(1, -1)
        if tape is not None and trace.score_node is not None:
            probs = ad.softmax(tape, ad.transpose(tape, trace.score_node))
            node = ad.kl_divergence(tape, target, probs)
            nodes.append(node)
            q = probs.value
            kls.append(float(node.value[0, 0]))
        else:
            q = ad.softmax_rows(trace.scores.reshape(1, -1))
            support = target > 0
            kls.append(float(np.where(support, target * (np.log(np.where(support, target, 1.0)) - np.log(q)), 0.0).sum()))
        py.append(target.reshape(-1))
        ps.append(q.reshape(-1))
    total_node = ad.average(tape, nodes) if nodes else None
    loss = float(total_node.value[0, 0]) if total_node is not None else float(np.mean(kls))
    return LossReport(
        loss=loss,
        batch_size=len(traces),
        label_distributions=np.vstack(py),
        score_distributions=np.vstack(ps),
        node=total_node,
    )


def list_reg_loss(traces: Sequence[ScoringTrace], labels, tape: Tape | None = None) -> LossReport:
    """Mean over groups of the per-group mean squared score error."""
    label_rows = _as_labels(labels, len(traces))
    tape = tape if tape is not None else _shared_tape(traces)
    values, nodes = [], []
    for trace, y in zip(traces, label_rows):
        if tape is not None and trace.score_node is not None:
            node = ad.mse(tape, trace.score_node, y.reshape(-1, 1))
            nodes.append(node)
            values.append(float(node.value[0, 0]))
        else:
            values.append(float(np.mean((trace.scores - y) ** 2)))
    total_node = ad.average(tape, nodes) if nodes else None
    loss = float(total_node.value[0, 0]) if total_node is not None else float(np.mean(values))
    return LossReport(loss=loss, batch_size=len(traces), node=total_node)


def point_cls_loss(scores, labels, tape: Tape | None = None) -> LossReport:
    """Mean binary cross-entropy of sigmoid(score) against 0/1 labels.

    With cosine relevance, scores lie in [-1, 1], so the probabilities
    stay inside roughly [0.27, 0.73]; ranking only needs their order,
    and the optional learnable scale on cosine logits (off by default)
    exists for callers who want saturating probabilities.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ContractViolation(f"labels must be binary, got {y}")
    node = None
    if isinstance(scores, Tensor):
        if tape is None:
            raise ContractViolation("a tape is required to extend the graph")
        node = ad.sigmoid_bce(tape, scores, y)
        raw = scores.value.reshape(-1)
        loss = float(node.value[0, 0])
    else:
        raw = np.asarray(scores, dtype=np.float64).reshape(-1)
        s = raw
        per_item = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s))) - y * s
        loss = float(per_item.mean())
    return LossReport(
        loss=loss,
        batch_size=y.size,
        probabilities=ad.stable_sigmoid(raw),
        node=node,
    )


def point_reg_loss(scores, labels, tape: Tape | None = None) -> LossReport:
    """Mean squared error of raw scores against scalar labels."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    node = None
    if isinstance(scores, Tensor):
        if tape is None:
            raise ContractViolation("a tape is required to extend the graph")
        node = ad.mse(tape, scores, y.reshape(-1, 1))
        loss = float(node.value[0, 0])
    else:
        raw = np.asarray(scores, dtype=np.float64).reshape(-1)
        loss = float(np.mean((raw - y) ** 2))
    return LossReport(loss=loss, batch_size=y.size, node=node)


def group_loss_node(tape: Tape, trace: ScoringTrace, labels: np.ndarray, loss_kind: str) -> Tensor:
    """Scalar loss node for one listwise group (training inner loop)."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if loss_kind == CLS:
        target = listwise_label_distribution(y).reshape(1, -1)
        probs = ad.softmax(tape, ad.transpose(tape, trace.score_node))
        return ad.kl_divergence(tape, target, probs)
    if loss_kind == REG:
        return ad.mse(tape, trace.score_node, y.reshape(-1, 1))
    raise ContractViolation(f"unknown loss kind {loss_kind!r}")
