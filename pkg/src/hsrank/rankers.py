"""The two ranker architectures and their relevance functions.

Listwise: stack [instruction; candidates] as rows, project to a low
dimension, mix once through a pre-norm encoder block (candidates are an
unordered set: no positional encodings), then score each candidate row
against the instruction row.  Pointwise: project instruction and response
independently through a shared MLP and score the pair; each candidate's
score never depends on the other candidates.

Scoring entry points build their math on a :class:`~hsrank.autodiff.Tape`
so losses can continue the graph.  Evaluation paths run each pointwise
pair as its own one-row program, which keeps scores bitwise independent
of batch size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ContractViolation
from .features import CandidateGroup

LISTWISE = "listwise"
POINTWISE = "pointwise"
RANKER_KINDS = (LISTWISE, POINTWISE)

COSINE = "cosine"
LEARNABLE = "learnable"
RELEVANCE_KINDS = (COSINE, LEARNABLE)

FULL = "full"
NO_PROJECTION = "no_projection"
NO_INSTRUCTION = "no_instruction"
NO_MLP_BLOCK = "no_mlp_block"
VARIANTS = (FULL, NO_PROJECTION, NO_INSTRUCTION, NO_MLP_BLOCK)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class RelevanceParams:
    kind: str
    weight: np.ndarray | None = None  # (2*width,) for the learnable map
    bias: np.ndarray | None = None  # (1,)
    scale: np.ndarray | None = None  # (1,) optional logit scale on cosine

    def named(self) -> Iterator[tuple[str, np.ndarray]]:
        if self.kind == LEARNABLE:
            yield "relevance.weight", self.weight
            yield "relevance.bias", self.bias
        if self.scale is not None:
            yield "relevance.scale", self.scale


@dataclass
class ListwiseParams:
    d_model: int
    d_proj: int  # width the block runs at (= d_model when projection removed)
    proj_weight: np.ndarray | None
    proj_bias: np.ndarray | None
    blocks: list[dict[str, np.ndarray]]
    relevance: RelevanceParams
    instruction_embedding: np.ndarray | None = None
    variant: str = FULL

    kind = LISTWISE

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        if self.proj_weight is not None:
            yield "proj.weight", self.proj_weight
            yield "proj.bias", self.proj_bias
        for i, block in enumerate(self.blocks):
            for name in ad.BLOCK_TENSOR_NAMES:
                yield f"block{i}.{name}", block[name]
        if self.instruction_embedding is not None:
            yield "instruction_embedding", self.instruction_embedding
        yield from self.relevance.named()


@dataclass
class PointwiseParams:
    d_model: int
    d_proj: int
    d_hidden: int
    proj_weight: np.ndarray | None
    proj_bias: np.ndarray | None
    mlps: list[dict[str, np.ndarray]]  # empty when the MLP block is removed
    relevance: RelevanceParams
    instruction_embedding: np.ndarray | None = None
    variant: str = FULL

    kind = POINTWISE

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        if self.proj_weight is not None:
            yield "proj.weight", self.proj_weight
            yield "proj.bias", self.proj_bias
        for i, mlp in enumerate(self.mlps):
            for name in ("w1", "b1", "w2", "b2"):
                yield f"mlp{i}.{name}", mlp[name]
        if self.instruction_embedding is not None:
            yield "instruction_embedding", self.instruction_embedding
        yield from self.relevance.named()


RankerParams = ListwiseParams | PointwiseParams


@dataclass
class ScoringTrace:
    """Intermediates of one forward pass, consumed by losses and checks."""

    projected_instruction: np.ndarray  # (width,) post-block/post-MLP
    projected_responses: np.ndarray  # (K, width)
    scores: np.ndarray  # (K,)
    probabilities: np.ndarray | None = None  # pointwise classification only
    score_node: Tensor | None = None  # (K, 1) column on `tape`
    tape: Tape | None = None


def init_ranker(
    kind: str,
    d_model: int,
    d_proj: int = 64,
    d_hidden: int = 128,
    relevance_kind: str = COSINE,
    seed: int = 0,
    blocks: int = 1,
    variant: str = FULL,
    cosine_scale: bool = False,
) -> RankerParams:
    """Xavier-uniform weights, zero biases/shifts, unit gains; seeded."""
    if kind not in RANKER_KINDS:
        raise ContractViolation(f"unknown ranker kind {kind!r}")
    if relevance_kind not in RELEVANCE_KINDS:
        raise ContractViolation(f"unknown relevance kind {relevance_kind!r}")
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}")
    if variant == NO_MLP_BLOCK and kind != POINTWISE:
        raise ContractViolation("no_mlp_block applies to the pointwise ranker only")
    if d_proj < 2:
        raise ContractViolation(f"d_proj must be >= 2, got {d_proj}")
    if d_model < d_proj:
        raise ContractViolation(f"d_model {d_model} must be >= d_proj {d_proj}")
    if blocks < 1:
        raise ContractViolation(f"block count must be >= 1, got {blocks}")

    rng = np.random.default_rng(seed)
    with_projection = variant != NO_PROJECTION
    width = d_proj if with_projection else d_model
    proj_w = _xavier(rng, d_model, d_proj) if with_projection else None
    proj_b = np.zeros(d_proj) if with_projection else None

    relevance = RelevanceParams(kind=relevance_kind)
    if cosine_scale and relevance_kind == COSINE:
        relevance.scale = np.ones(1)

    instruction_embedding = None
    if kind == LISTWISE:
        block_tensors = [ad.init_block_tensors(width, rng) for _ in range(blocks)]
        if relevance_kind == LEARNABLE:
            relevance.weight = rng.uniform(
                -math.sqrt(6.0 / (2 * width + 1)), math.sqrt(6.0 / (2 * width + 1)), size=2 * width
            )
            relevance.bias = np.zeros(1)
        if variant == NO_INSTRUCTION:
            instruction_embedding = rng.uniform(
                -1.0 / math.sqrt(width), 1.0 / math.sqrt(width), size=width
            )
        return ListwiseParams(
            d_model=d_model,
            d_proj=width,
            proj_weight=proj_w,
            proj_bias=proj_b,
            blocks=block_tensors,
            relevance=relevance,
            instruction_embedding=instruction_embedding,
            variant=variant,
        )

    hidden = d_hidden if with_projection else 4 * d_model
    mlps = []
    if variant != NO_MLP_BLOCK:
        for _ in range(blocks):
            mlps.append(
                {
                    "w1": _xavier(rng, width, hidden),
                    "b1": np.zeros(hidden),
                    "w2": _xavier(rng, hidden, width),
                    "b2": np.zeros(width),
                }
            )
    if relevance_kind == LEARNABLE:
        relevance.weight = rng.uniform(
            -math.sqrt(6.0 / (2 * width + 1)), math.sqrt(6.0 / (2 * width + 1)), size=2 * width
        )
        relevance.bias = np.zeros(1)
    if variant == NO_INSTRUCTION:
        instruction_embedding = rng.uniform(
            -1.0 / math.sqrt(width), 1.0 / math.sqrt(width), size=width
        )
    return PointwiseParams(
        d_model=d_model,
        d_proj=width,
        d_hidden=hidden if mlps else 0,
        proj_weight=proj_w,
        proj_bias=proj_b,
        mlps=mlps,
        relevance=relevance,
        instruction_embedding=instruction_embedding,
        variant=variant,
    )


def parameter_count(params: RankerParams) -> int:
    """Exact number of learnable scalars."""
    return int(sum(tensor.size for _, tensor in params.named_tensors()))


def expected_tensor_names(
    kind: str,
    relevance_kind: str,
    blocks: int,
    variant: str = FULL,
    cosine_scale: bool = False,
) -> list[str]:
    """The tensor set a checkpoint of this architecture must carry."""
    names: list[str] = []
    if variant != NO_PROJECTION:
        names += ["proj.weight", "proj.bias"]
    if kind == LISTWISE:
        for i in range(blocks):
            names += [f"block{i}.{n}" for n in ad.BLOCK_TENSOR_NAMES]
    elif variant != NO_MLP_BLOCK:
        for i in range(blocks):
            names += [f"mlp{i}.{n}" for n in ("w1", "b1", "w2", "b2")]
    if variant == NO_INSTRUCTION:
        names.append("instruction_embedding")
    if relevance_kind == LEARNABLE:
        names += ["relevance.weight", "relevance.bias"]
    if cosine_scale and relevance_kind == COSINE:
        names.append("relevance.scale")
    return names


# ---------------------------------------------------------------------------
# relevance functions
# ---------------------------------------------------------------------------


def cosine_relevance(a, b) -> float:
    """Cosine similarity with norm floors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(1, -1)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    if a.shape != b.shape:
        raise ContractViolation(f"cosine_relevance: shapes differ, {a.shape} vs {b.shape}")
    return float(ad.cosine_rows(a, b)[0, 0])


def learnable_relevance(a, b, weight, bias: float = 0.0) -> float:
    """Linear map of the concatenated pair: weight . [a, b] + bias."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    w = np.asarray(weight, dtype=np.float64).reshape(-1)
    if w.shape[0] != a.shape[0] + b.shape[0]:
        raise ContractViolation(
            f"learnable_relevance: weight has {w.shape[0]} entries, need {a.shape[0] + b.shape[0]}"
        )
    return float(w @ np.concatenate([a, b]) + float(bias))


def select_best(scores) -> int:
    """Index of the highest score; ties go to the smallest index."""
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ContractViolation("select_best: empty score list")
    if np.isnan(arr).any():
        raise ContractViolation("select_best: scores contain NaN")
    return int(np.argmax(arr))


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def make_leaves(tape: Tape, params: RankerParams, watch: bool = False) -> dict[str, Tensor]:
    """Wrap every named tensor as a tape leaf (watched for training)."""
    return {name: tape.leaf(tensor, watch=watch) for name, tensor in params.named_tensors()}


def _relevance_node(
    tape: Tape, params: RankerParams, leaves: Mapping[str, Tensor], instr: Tensor, resp: Tensor
) -> Tensor:
    """Scores (n, 1) for an instruction row repeated against response rows."""
    n = resp.value.shape[0]
    tiled = ad.repeat_rows(tape, instr, n) if instr.value.shape[0] == 1 and n > 1 else instr
    if params.relevance.kind == COSINE:
        scores = ad.rowwise_cosine(tape, tiled, resp)
        if "relevance.scale" in leaves:
            scores = ad.matmul(tape, scores, leaves["relevance.scale"])
        return scores
    return ad.linear(
        tape,
        ad.concat_cols(tape, tiled, resp),
        ad.transpose(tape, leaves["relevance.weight"]),
        leaves["relevance.bias"],
    )


def listwise_forward(
    tape: Tape, params: ListwiseParams, leaves: Mapping[str, Tensor], group: CandidateGroup
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (instruction_repr (1,w), response_reprs (K,w), scores (K,1))."""
    k = group.group_size
    features = np.asarray(group.features, dtype=np.float64)
    if features.shape[1] != params.d_model:
        raise ContractViolation(
            f"group d_model {features.shape[1]} != ranker d_model {params.d_model}"
        )
    if params.variant == NO_INSTRUCTION:
        x = tape.constant(features)
    else:
        x = tape.constant(np.vstack([np.asarray(group.instruction, dtype=np.float64), features]))
    h = x
    if params.proj_weight is not None:
        h = ad.linear(tape, h, leaves["proj.weight"], leaves["proj.bias"])
    for i in range(len(params.blocks)):
        block = {name: leaves[f"block{i}.{name}"] for name in ad.BLOCK_TENSOR_NAMES}
        h = ad.attention_block(tape, h, block)
    if params.variant == NO_INSTRUCTION:
        instr = leaves["instruction_embedding"]
        resp = h
    else:
        instr = ad.slice_rows(tape, h, 0, 1)
        resp = ad.slice_rows(tape, h, 1, k + 1)
    scores = _relevance_node(tape, params, leaves, instr, resp)
    return instr, resp, scores


def _pointwise_embed(
    tape: Tape, params: PointwiseParams, leaves: Mapping[str, Tensor], rows: Tensor
) -> Tensor:
    h = rows
    if params.proj_weight is not None:
        h = ad.linear(tape, h, leaves["proj.weight"], leaves["proj.bias"])
    for i in range(len(params.mlps)):
        h = ad.linear(tape, h, leaves[f"mlp{i}.w1"], leaves[f"mlp{i}.b1"])
        h = ad.gelu(tape, h)
        h = ad.linear(tape, h, leaves[f"mlp{i}.w2"], leaves[f"mlp{i}.b2"])
    return h


def pointwise_forward(
    tape: Tape,
    params: PointwiseParams,
    leaves: Mapping[str, Tensor],
    instructions: np.ndarray,
    responses: np.ndarray,
) -> tuple[Tensor, Tensor, Tensor]:
    """Vectorized pairs: rows of ``instructions`` paired with ``responses``.

    Returns (instruction_reprs, response_reprs, scores (n,1)).  Used by
    training batches; evaluation goes through the one-pair programs below.
    """
    instructions = np.asarray(instructions, dtype=np.float64)
    responses = np.asarray(responses, dtype=np.float64)
    if instructions.shape != responses.shape:
        raise ContractViolation(
            f"pairs must align, got {instructions.shape} vs {responses.shape}"
        )
    if instructions.shape[1] != params.d_model:
        raise ContractViolation(
            f"pair d_model {instructions.shape[1]} != ranker d_model {params.d_model}"
        )
    resp = _pointwise_embed(tape, params, leaves, tape.constant(responses))
    if params.variant == NO_INSTRUCTION:
        instr = leaves["instruction_embedding"]
        scores = _relevance_node(tape, params, leaves, instr, resp)
        return instr, resp, scores
    instr = _pointwise_embed(tape, params, leaves, tape.constant(instructions))
    if params.relevance.kind == COSINE:
        scores = ad.rowwise_cosine(tape, instr, resp)
        if "relevance.scale" in leaves:
            scores = ad.matmul(tape, scores, leaves["relevance.scale"])
    else:
        scores = ad.linear(
            tape,
            ad.concat_cols(tape, instr, resp),
            ad.transpose(tape, leaves["relevance.weight"]),
            leaves["relevance.bias"],
        )
    return instr, resp, scores


def score_listwise(params: ListwiseParams, group: CandidateGroup, tape: Tape | None = None,
                   leaves: Mapping[str, Tensor] | None = None) -> ScoringTrace:
    """Score all candidates of a group jointly."""
    if group.group_size < 1:
        raise ContractViolation("listwise scoring needs at least one candidate")
    if params.kind != LISTWISE:
        raise ContractViolation("score_listwise requires listwise parameters")
    tape = tape if tape is not None else Tape()
    if leaves is None:
        leaves = make_leaves(tape, params, watch=False)
    instr, resp, scores = listwise_forward(tape, params, leaves, group)
    return ScoringTrace(
        projected_instruction=instr.value.reshape(-1).copy(),
        projected_responses=resp.value.copy(),
        scores=scores.value.reshape(-1).copy(),
        score_node=scores,
        tape=tape,
    )


def score_pointwise(params: PointwiseParams, instruction, response) -> float:
    """Score one (instruction, response) pair, independent of any batch."""
    if params.kind != POINTWISE:
        raise ContractViolation("score_pointwise requires pointwise parameters")
    instruction = np.asarray(instruction, dtype=np.float64).reshape(1, -1)
    response = np.asarray(response, dtype=np.float64).reshape(1, -1)
    tape = Tape()
    leaves = make_leaves(tape, params, watch=False)
    _, _, scores = pointwise_forward(tape, params, leaves, instruction, response)
    return float(scores.value[0, 0])


def score_pointwise_group(params: PointwiseParams, group: CandidateGroup,
                          with_probabilities: bool = True) -> ScoringTrace:
    """Score a group candidate-by-candidate (one-row program per pair)."""
    features = group.features
    instr_repr = None
    reprs = []
    scores = np.empty(group.group_size)
    for i in range(group.group_size):
        tape = Tape()
        leaves = make_leaves(tape, params, watch=False)
        ir, rr, s = pointwise_forward(
            tape,
            params,
            leaves,
            np.asarray(group.instruction, dtype=np.float64).reshape(1, -1),
            np.asarray(features[i], dtype=np.float64).reshape(1, -1),
        )
        instr_repr = ir.value.reshape(-1)
        reprs.append(rr.value.reshape(-1))
        scores[i] = s.value[0, 0]
    return ScoringTrace(
        projected_instruction=instr_repr,
        projected_responses=np.vstack(reprs),
        scores=scores,
        probabilities=ad.stable_sigmoid(scores) if with_probabilities else None,
    )


def score_group(params: RankerParams, group: CandidateGroup, tape: Tape | None = None) -> ScoringTrace:
    """Architecture-dispatching group scorer used by evaluation."""
    if params.kind == LISTWISE:
        return score_listwise(params, group, tape=tape)
    return score_pointwise_group(params, group)
