"""Minimal dense reverse-mode autodiff over 2-D float64 arrays.

This is the only math substrate the rankers use.  Every operation records
itself on an explicit :class:`Tape`; ``Tape.backward`` replays the records
in exact reverse order and accumulates gradients additively at fan-out.
All arithmetic runs in 64-bit floats so that finite-difference probes
measure derivation errors, not truncation noise.

Conventions:
  * every tensor is a 2-D row-major array; 1-D inputs are promoted to a
    single row, scalars to a 1x1 matrix;
  * scalar results (losses) are 1x1 tensors;
  * parameter vectors (biases, layer-norm gains/shifts) are single rows.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, GradCheckError

LAYER_NORM_EPS = 1e-5
COSINE_EPS = 1e-8

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def as_matrix(value) -> np.ndarray:
    """Coerce ``value`` to a C-contiguous 2-D float64 array."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ContractViolation(f"expected at most 2 dimensions, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Tensor:
    """A node in the computation graph: a 2-D value plus a gradient slot."""

    __slots__ = ("value", "grad", "needs_grad")

    def __init__(self, value: np.ndarray, needs_grad: bool):
        self.value = value
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.value.shape}, needs_grad={self.needs_grad})"


class Tape:
    """Ordered record of primitive ops with enough state to run backward.

    A tape is confined to one logical thread and supports a single
    ``backward`` call; gradients land on the ``grad`` attribute of every
    tensor with ``needs_grad`` set.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._used = False

    def leaf(self, value, watch: bool = False) -> Tensor:
        """Create an input tensor; ``watch=True`` requests its gradient."""
        return Tensor(as_matrix(value), needs_grad=watch)

    def constant(self, value) -> Tensor:
        return self.leaf(value, watch=False)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
        if out.needs_grad:
            self._records.append((out, backward))
        return out

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Accumulate d(seed * loss)/d(leaf) into every watched leaf."""
        if self._used:
            raise ContractViolation("tape already consumed by a previous backward pass")
        self._used = True
        if loss.value.shape != (1, 1):
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.value.shape}")
        _accumulate(loss, np.full((1, 1), float(seed)))
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)

    def __len__(self) -> int:
        return len(self._records)


def _accumulate(t: Tensor, contribution: np.ndarray) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        # Copy: contributions may alias an upstream gradient buffer.
        t.grad = np.array(contribution, dtype=np.float64)
    else:
        t.grad += contribution


def _mark(tape: Tape, value: np.ndarray, inputs: Iterable[Tensor]) -> Tensor:
    return Tensor(value, needs_grad=any(t.needs_grad for t in inputs))


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def linear(tape: Tape, x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + bias`` with gradients to all three inputs."""
    n, a = x.value.shape
    a2, b = w.value.shape
    if a != a2:
        raise ContractViolation(f"linear: x has {a} columns but w has {a2} rows")
    if bias is not None and bias.value.shape != (1, b):
        raise ContractViolation(f"linear: bias shape {bias.value.shape} != (1, {b})")
    value = x.value @ w.value
    if bias is not None:
        value = value + bias.value
    inputs = (x, w) if bias is None else (x, w, bias)
    out = _mark(tape, value, inputs)

    def backward(g: np.ndarray) -> None:
        if x.needs_grad:
            _accumulate(x, g @ w.value.T)
        if w.needs_grad:
            _accumulate(w, x.value.T @ g)
        if bias is not None and bias.needs_grad:
            _accumulate(bias, g.sum(axis=0, keepdims=True))

    return tape.record(out, backward)


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise ContractViolation(
            f"matmul: inner dimensions differ, {a.value.shape} vs {b.value.shape}"
        )
    out = _mark(tape, a.value @ b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        if a.needs_grad:
            _accumulate(a, g @ b.value.T)
        if b.needs_grad:
            _accumulate(b, a.value.T @ g)

    return tape.record(out, backward)


def transpose(tape: Tape, a: Tensor) -> Tensor:
    out = _mark(tape, np.ascontiguousarray(a.value.T), (a,))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.T)

    return tape.record(out, backward)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ContractViolation(f"add: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = _mark(tape, a.value + b.value, (a, b))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return tape.record(out, backward)


def scale(tape: Tape, a: Tensor, factor: float) -> Tensor:
    out = _mark(tape, a.value * factor, (a,))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * factor)

    return tape.record(out, backward)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(tape: Tape, x: Tensor) -> Tensor:
    """Row-wise softmax; each row sums to 1 and is shift-invariant."""
    if x.value.shape[1] < 1:
        raise ContractViolation("softmax: rows must have at least one entry")
    y = softmax_rows(x.value)
    out = _mark(tape, y, (x,))

    def backward(g: np.ndarray) -> None:
        # Jacobian-vector product: dx_i = y_i * (g_i - sum_j g_j y_j)
        dot = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, y * (g - dot))

    return tape.record(out, backward)


def layer_norm(tape: Tape, x: Tensor, gain: Tensor, shift: Tensor) -> Tensor:
    """Per-row normalization ``(x - mean) / sqrt(var + eps) * gain + shift``."""
    n, d = x.value.shape
    if d < 2:
        raise ContractViolation("layer_norm: rows need at least 2 entries")
    if gain.value.shape != (1, d) or shift.value.shape != (1, d):
        raise ContractViolation(
            f"layer_norm: gain/shift must be (1, {d}), got {gain.value.shape} and {shift.value.shape}"
        )
    mean = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv
    out = _mark(tape, xhat * gain.value + shift.value, (x, gain, shift))

    def backward(g: np.ndarray) -> None:
        if gain.needs_grad:
            _accumulate(gain, (g * xhat).sum(axis=0, keepdims=True))
        if shift.needs_grad:
            _accumulate(shift, g.sum(axis=0, keepdims=True))
        if x.needs_grad:
            gx = g * gain.value
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            _accumulate(x, inv * (gx - m1 - xhat * m2))

    return tape.record(out, backward)


def gelu_value(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GELU."""
    inner = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def gelu(tape: Tape, x: Tensor) -> Tensor:
    out = _mark(tape, gelu_value(x.value), (x,))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * gelu_grad(x.value))

    return tape.record(out, backward)


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity with norm floors, clamped to [-1, 1].

    Returns an (n, 1) column.
    """
    na = np.maximum(np.linalg.norm(a, axis=1, keepdims=True), COSINE_EPS)
    nb = np.maximum(np.linalg.norm(b, axis=1, keepdims=True), COSINE_EPS)
    dots = (a * b).sum(axis=1, keepdims=True)
    return np.clip(dots / (na * nb), -1.0, 1.0)


def rowwise_cosine(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of corresponding rows of ``a`` and ``b``."""
    if a.value.shape != b.value.shape:
        raise ContractViolation(
            f"rowwise_cosine: shapes differ, {a.value.shape} vs {b.value.shape}"
        )
    av, bv = a.value, b.value
    norm_a = np.linalg.norm(av, axis=1, keepdims=True)
    norm_b = np.linalg.norm(bv, axis=1, keepdims=True)
    na = np.maximum(norm_a, COSINE_EPS)
    nb = np.maximum(norm_b, COSINE_EPS)
    dots = (av * bv).sum(axis=1, keepdims=True)
    raw = dots / (na * nb)
    out = _mark(tape, np.clip(raw, -1.0, 1.0), (a, b))

    # The clamp only trims float noise beyond +-1 (Cauchy-Schwarz bounds the
    # exact value), so the gradient passes through the unclamped expression.
    def backward(g: np.ndarray) -> None:
        if a.needs_grad:
            da = bv / (na * nb) - np.where(norm_a > COSINE_EPS, dots * av / (na * na * na * nb), 0.0)
            _accumulate(a, g * da)
        if b.needs_grad:
            db = av / (na * nb) - np.where(norm_b > COSINE_EPS, dots * bv / (nb * nb * nb * na), 0.0)
            _accumulate(b, g * db)

    return tape.record(out, backward)


def concat_cols(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[0] != b.value.shape[0]:
        raise ContractViolation(
            f"concat_cols: row counts differ, {a.value.shape} vs {b.value.shape}"
        )
    p = a.value.shape[1]
    out = _mark(tape, np.concatenate([a.value, b.value], axis=1), (a, b))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g[:, :p])
        _accumulate(b, g[:, p:])

    return tape.record(out, backward)


def slice_rows(tape: Tape, x: Tensor, start: int, stop: int) -> Tensor:
    n = x.value.shape[0]
    if not (0 <= start < stop <= n):
        raise ContractViolation(f"slice_rows: [{start}:{stop}] out of range for {n} rows")
    out = _mark(tape, x.value[start:stop].copy(), (x,))

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.value)
        full[start:stop] = g
        _accumulate(x, full)

    return tape.record(out, backward)


def repeat_rows(tape: Tape, x: Tensor, count: int) -> Tensor:
    if x.value.shape[0] != 1:
        raise ContractViolation(f"repeat_rows: expected a single row, got {x.value.shape}")
    if count < 1:
        raise ContractViolation("repeat_rows: count must be >= 1")
    out = _mark(tape, np.repeat(x.value, count, axis=0), (x,))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.sum(axis=0, keepdims=True))

    return tape.record(out, backward)


def kl_divergence(tape: Tape, target: np.ndarray, q: Tensor) -> Tensor:
    """KL(target || q) for a single distribution row, with 0*log(0) := 0.

    ``target`` is a fixed probability row; ``q`` must be strictly positive
    wherever ``target`` is (softmax outputs always are).
    """
    t = as_matrix(target)
    if t.shape != q.value.shape or t.shape[0] != 1:
        raise ContractViolation(
            f"kl_divergence: need matching single rows, got {t.shape} and {q.value.shape}"
        )
    support = t > 0.0
    terms = np.where(support, t * (np.log(np.where(support, t, 1.0)) - np.log(np.where(support, q.value, 1.0))), 0.0)
    out = _mark(tape, terms.sum().reshape(1, 1), (q,))

    def backward(g: np.ndarray) -> None:
        _accumulate(q, g * np.where(support, -t / q.value, 0.0))

    return tape.record(out, backward)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function computed with a sign branch; never overflows."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bce(tape: Tape, scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(scores)`` against 0/1 labels.

    The backward pass is the closed form ``(sigmoid(s) - y) / n``.
    """
    y = as_matrix(labels).reshape(-1, 1)
    if scores.value.shape != y.shape:
        raise ContractViolation(
            f"sigmoid_bce: scores {scores.value.shape} vs labels {y.shape}"
        )
    s = scores.value
    # softplus(s) - y*s, with softplus(s) = max(s, 0) + log1p(exp(-|s|))
    per_item = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s))) - y * s
    n = s.shape[0]
    out = _mark(tape, per_item.mean().reshape(1, 1), (scores,))

    def backward(g: np.ndarray) -> None:
        _accumulate(scores, g * (stable_sigmoid(s) - y) / n)

    return tape.record(out, backward)


def mse(tape: Tape, pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over all entries of ``pred``."""
    t = as_matrix(target).reshape(pred.value.shape)
    diff = pred.value - t
    n = diff.size
    out = _mark(tape, (diff * diff).mean().reshape(1, 1), (pred,))

    def backward(g: np.ndarray) -> None:
        _accumulate(pred, g * (2.0 / n) * diff)

    return tape.record(out, backward)


def average(tape: Tape, items: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors; the batch-averaging reduction for losses."""
    if not items:
        raise ContractViolation("average: need at least one item")
    for item in items:
        if item.value.shape != (1, 1):
            raise ContractViolation(f"average: items must be scalars, got {item.value.shape}")
    n = len(items)
    total = np.zeros((1, 1))
    for item in items:
        total += item.value
    out = _mark(tape, total / n, items)

    def backward(g: np.ndarray) -> None:
        share = g / n
        for item in items:
            _accumulate(item, share)

    return tape.record(out, backward)


# ---------------------------------------------------------------------------
# the encoder block
# ---------------------------------------------------------------------------

BLOCK_TENSOR_NAMES = (
    "ln1.gain",
    "ln1.shift",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln2.gain",
    "ln2.shift",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
)


def attention_block(tape: Tape, x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """One pre-norm encoder block: x + Attn(LN1(x)), then + FFN(LN2(.)).

    Single attention head, 4x feed-forward expansion, GELU, and no
    positional encodings, so the rows form an unordered set: permuting
    input rows permutes output rows identically.
    """
    missing = [name for name in BLOCK_TENSOR_NAMES if name not in p]
    if missing:
        raise ContractViolation(f"attention_block: missing parameters {missing}")
    d = x.value.shape[1]
    if p["attn.wq"].value.shape != (d, d):
        raise ContractViolation(
            f"attention_block: input width {d} does not match wq {p['attn.wq'].value.shape}"
        )
    h = layer_norm(tape, x, p["ln1.gain"], p["ln1.shift"])
    q = linear(tape, h, p["attn.wq"], p["attn.bq"])
    k = linear(tape, h, p["attn.wk"], p["attn.bk"])
    v = linear(tape, h, p["attn.wv"], p["attn.bv"])
    logits = scale(tape, matmul(tape, q, transpose(tape, k)), 1.0 / math.sqrt(d))
    weights = softmax(tape, logits)
    context = matmul(tape, weights, v)
    attended = linear(tape, context, p["attn.wo"], p["attn.bo"])
    x1 = add(tape, x, attended)
    h2 = layer_norm(tape, x1, p["ln2.gain"], p["ln2.shift"])
    f = linear(tape, h2, p["ffn.w1"], p["ffn.b1"])
    f = gelu(tape, f)
    f = linear(tape, f, p["ffn.w2"], p["ffn.b2"])
    return add(tape, x1, f)


def init_block_tensors(width: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Xavier-uniform weights, unit gains, zero biases for one block."""
    hidden = 4 * width

    def xavier(fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return {
        "ln1.gain": np.ones(width),
        "ln1.shift": np.zeros(width),
        "attn.wq": xavier(width, width),
        "attn.bq": np.zeros(width),
        "attn.wk": xavier(width, width),
        "attn.bk": np.zeros(width),
        "attn.wv": xavier(width, width),
        "attn.bv": np.zeros(width),
        "attn.wo": xavier(width, width),
        "attn.bo": np.zeros(width),
        "ln2.gain": np.ones(width),
        "ln2.shift": np.zeros(width),
        "ffn.w1": xavier(width, hidden),
        "ffn.b1": np.zeros(hidden),
        "ffn.w2": xavier(hidden, width),
        "ffn.b2": np.zeros(width),
    }


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(
    build: Callable[[Tape, Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-4,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-6,
) -> float:
    """Compare the tape's gradient against central finite differences.

    ``build`` must construct a deterministic scalar loss from leaf tensors
    made out of ``params``.  Returns the worst error, normalized so that a
    return value below ``rel_tol`` means every coordinate agrees to
    ``rel_tol`` relative error with an ``abs_floor`` absolute floor.
    """
    if step <= 0.0:
        raise ContractViolation("grad_check: step must be positive")
    params = {name: as_matrix(value) for name, value in params.items()}

    def evaluate(current: Mapping[str, np.ndarray]) -> float:
        tape = Tape()
        leaves = {name: tape.leaf(v, watch=False) for name, v in current.items()}
        out = build(tape, leaves)
        val = float(out.value[0, 0])
        if not math.isfinite(val):
            raise GradCheckError(f"probe produced a non-finite value {val}")
        return val

    tape = Tape()
    leaves = {name: tape.leaf(v, watch=True) for name, v in params.items()}
    loss = build(tape, leaves)
    if not math.isfinite(float(loss.value[0, 0])):
        raise GradCheckError("loss is non-finite at the probe point")
    tape.backward(loss)

    floor = abs_floor / rel_tol
    worst = 0.0
    for name, base in params.items():
        leaf_grad = leaves[name].grad
        analytic = np.zeros_like(base) if leaf_grad is None else leaf_grad
        flat = base.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            up = evaluate(params)
            flat[idx] = original - step
            down = evaluate(params)
            flat[idx] = original
            numeric = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > worst:
                worst = err
    return worst
