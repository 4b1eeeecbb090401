"""Ranker architecture tests: counts, symmetries, scoring contracts."""

import itertools

import numpy as np
import pytest

from hsrank import autodiff as ad
from hsrank import rankers as rk
from hsrank.errors import ContractViolation
from hsrank.features import CandidateGroup


def make_group(rng, k=4, d_model=12, labels=None):
    if labels is None:
        labels = np.zeros(k, dtype=np.float32)
        labels[0] = 1.0
    pool = rng.normal(size=(k, d_model)).astype(np.float32)
    return CandidateGroup(
        query_id=0,
        instruction=rng.normal(size=d_model).astype(np.float32),
        indices=np.arange(k, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.float32),
        response_pool=pool,
    )


# -- parameter accounting ---------------------------------------------------


def test_pointwise_default_count_is_frozen():
    # 4096*64+64 + (64*128+128) + (128*64+64) = 278,784
    params = rk.init_ranker(rk.POINTWISE, 4096, 64, 128, rk.COSINE, seed=0)
    assert rk.parameter_count(params) == 278_784


def test_listwise_default_count_is_frozen():
    # projection 262,208 + block 49,984 = 312,192
    params = rk.init_ranker(rk.LISTWISE, 4096, 64, relevance_kind=rk.COSINE, seed=0)
    assert rk.parameter_count(params) == 312_192


def test_count_matches_bruteforce_enumeration():
    for kind, relevance in itertools.product(rk.RANKER_KINDS, rk.RELEVANCE_KINDS):
        params = rk.init_ranker(kind, 48, 8, 16, relevance, seed=1, blocks=2)
        brute = sum(t.size for _, t in params.named_tensors())
        assert rk.parameter_count(params) == brute


def test_every_default_configuration_under_half_million():
    for kind, relevance, d_model in itertools.product(
        rk.RANKER_KINDS, rk.RELEVANCE_KINDS, (3072, 4096)
    ):
        params = rk.init_ranker(kind, d_model, 64, 128, relevance, seed=0)
        assert rk.parameter_count(params) < 500_000


def test_remove_projection_blowup():
    listwise = rk.init_ranker(rk.LISTWISE, 4096, 64, variant=rk.NO_PROJECTION, seed=0)
    count = rk.parameter_count(listwise)
    assert abs(count - 192e6) / 192e6 < 0.10  # 12*d^2 + 13*d at d=4096
    pointwise = rk.init_ranker(rk.POINTWISE, 4096, 64, variant=rk.NO_PROJECTION, seed=0)
    assert abs(rk.parameter_count(pointwise) - 128e6) / 128e6 < 0.10


def test_remove_mlp_block_is_projection_only():
    params = rk.init_ranker(rk.POINTWISE, 4096, 64, variant=rk.NO_MLP_BLOCK, seed=0)
    assert rk.parameter_count(params) == 4096 * 64 + 64 == 262_208
    assert abs(rk.parameter_count(params) - 0.25e6) / 0.25e6 < 0.10


def test_init_is_deterministic_per_seed():
    a = rk.init_ranker(rk.LISTWISE, 20, 4, relevance_kind=rk.LEARNABLE, seed=7)
    b = rk.init_ranker(rk.LISTWISE, 20, 4, relevance_kind=rk.LEARNABLE, seed=7)
    for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert na == nb
        np.testing.assert_array_equal(ta, tb)
    c = rk.init_ranker(rk.LISTWISE, 20, 4, relevance_kind=rk.LEARNABLE, seed=8)
    assert any(
        not np.array_equal(ta, tc) for (_, ta), (_, tc) in zip(a.named_tensors(), c.named_tensors())
    )


def test_init_rejects_bad_dimensions():
    with pytest.raises(ContractViolation):
        rk.init_ranker(rk.LISTWISE, 4, 8)  # d_model < d_proj
    with pytest.raises(ContractViolation):
        rk.init_ranker(rk.POINTWISE, 16, 1)
    with pytest.raises(ContractViolation):
        rk.init_ranker(rk.LISTWISE, 16, 4, variant=rk.NO_MLP_BLOCK)


# -- relevance functions ------------------------------------------------------


def test_cosine_relevance_fixed_points():
    rng = np.random.default_rng(0)
    v = rng.normal(size=6)
    assert rk.cosine_relevance(v, v) == pytest.approx(1.0)
    assert rk.cosine_relevance(v, -v) == pytest.approx(-1.0)
    assert rk.cosine_relevance(v, 3.7 * v) == pytest.approx(1.0)
    assert -1.0 <= rk.cosine_relevance(v, rng.normal(size=6)) <= 1.0


def test_learnable_relevance_linear_map():
    w = np.zeros(8)
    assert rk.learnable_relevance(np.ones(4), np.ones(4), w) == 0.0
    w[0] = 1.0
    assert rk.learnable_relevance(np.array([3.0, 0, 0, 0]), np.zeros(4), w) == 3.0
    with pytest.raises(ContractViolation):
        rk.learnable_relevance(np.ones(3), np.ones(4), w)


def test_learnable_relevance_is_linear_in_first_argument():
    # s(a*x + b*x', y) = a*s(x, y) + b*s(x', y) holds for affine weights
    # (a + b = 1); general linearity additionally needs the s(0, y) offset.
    rng = np.random.default_rng(1)
    w, a, a2, b = rng.normal(size=8), rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)
    lhs = rk.learnable_relevance(0.3 * a + 0.7 * a2, b, w)
    rhs = 0.3 * rk.learnable_relevance(a, b, w) + 0.7 * rk.learnable_relevance(a2, b, w)
    assert lhs == pytest.approx(rhs)
    general = rk.learnable_relevance(2.0 * a + 0.5 * a2, b, w)
    offset = rk.learnable_relevance(np.zeros(4), b, w)
    assert general == pytest.approx(
        2.0 * rk.learnable_relevance(a, b, w) + 0.5 * rk.learnable_relevance(a2, b, w) - 1.5 * offset
    )


def test_select_best_contracts():
    assert rk.select_best([0.1, 0.9, 0.3]) == 1
    assert rk.select_best([0.5, 0.5]) == 0  # tie -> smallest index
    scores = np.array([0.2, -1.0, 0.7])
    assert rk.select_best(scores) == rk.select_best(scores + 123.0)
    with pytest.raises(ContractViolation):
        rk.select_best([])
    with pytest.raises(ContractViolation):
        rk.select_best([0.1, float("nan")])


# -- listwise scoring ---------------------------------------------------------


def test_listwise_identical_candidates_tie_exactly():
    rng = np.random.default_rng(2)
    params = rk.init_ranker(rk.LISTWISE, 10, 4, seed=3)
    group = make_group(rng, k=3, d_model=10)
    group.response_pool[1] = group.response_pool[2]
    trace = rk.score_listwise(params, group)
    assert trace.scores[1] == trace.scores[2]


@pytest.mark.parametrize("k", [3, 4])
def test_listwise_permutation_equivariance_exhaustive(k):
    rng = np.random.default_rng(4)
    params = rk.init_ranker(rk.LISTWISE, 8, 4, seed=5)
    group = make_group(rng, k=k, d_model=8)
    base = rk.score_listwise(params, group).scores
    best = rk.select_best(base)
    for perm in itertools.permutations(range(k)):
        perm = np.array(perm)
        shuffled = CandidateGroup(
            query_id=0,
            instruction=group.instruction,
            indices=group.indices[perm],
            labels=group.labels[perm],
            response_pool=group.response_pool,
        )
        scores = rk.score_listwise(params, shuffled).scores
        np.testing.assert_allclose(scores, base[perm], atol=1e-6)
        # tie-free scores: selection follows the permutation
        assert perm[rk.select_best(scores)] == best


def test_listwise_trace_shapes_and_cosine_range():
    rng = np.random.default_rng(6)
    params = rk.init_ranker(rk.LISTWISE, 12, 6, seed=7)
    group = make_group(rng, k=5, d_model=12)
    trace = rk.score_listwise(params, group)
    assert trace.projected_instruction.shape == (6,)
    assert trace.projected_responses.shape == (5, 6)
    assert trace.scores.shape == (5,)
    assert np.all(trace.scores >= -1.0) and np.all(trace.scores <= 1.0)


def test_listwise_rejects_wrong_dimension():
    rng = np.random.default_rng(8)
    params = rk.init_ranker(rk.LISTWISE, 16, 4, seed=0)
    with pytest.raises(ContractViolation, match="d_model"):
        rk.score_listwise(params, make_group(rng, k=3, d_model=8))


# -- pointwise scoring --------------------------------------------------------


def test_pointwise_score_is_batch_invariant_bitwise():
    rng = np.random.default_rng(9)
    params = rk.init_ranker(rk.POINTWISE, 10, 4, 8, seed=1)
    group = make_group(rng, k=100, d_model=10)
    trace = rk.score_pointwise_group(params, group)
    alone = rk.score_pointwise(params, group.instruction, group.features[37])
    assert alone == trace.scores[37]


def test_pointwise_cosine_self_similarity():
    # With the identity-ish trick: responses equal to the instruction embed
    # identically, so the cosine is exactly 1 (within float tolerance).
    rng = np.random.default_rng(10)
    params = rk.init_ranker(rk.POINTWISE, 10, 4, 8, seed=2)
    v = rng.normal(size=10)
    assert rk.score_pointwise(params, v, v) == pytest.approx(1.0, abs=1e-6)


def test_pointwise_probabilities_in_open_interval():
    rng = np.random.default_rng(11)
    params = rk.init_ranker(rk.POINTWISE, 10, 4, 8, seed=3)
    trace = rk.score_pointwise_group(params, make_group(rng, k=6, d_model=10))
    assert trace.probabilities is not None
    assert np.all(trace.probabilities > 0.0) and np.all(trace.probabilities < 1.0)


def test_ablation_variants_change_tensor_sets():
    base = set(n for n, _ in rk.init_ranker(rk.LISTWISE, 16, 4, seed=0).named_tensors())
    no_instr = set(
        n
        for n, _ in rk.init_ranker(rk.LISTWISE, 16, 4, seed=0, variant=rk.NO_INSTRUCTION).named_tensors()
    )
    assert no_instr - base == {"instruction_embedding"}
    assert base - no_instr == set()
    no_proj = set(
        n
        for n, _ in rk.init_ranker(rk.POINTWISE, 16, 4, 8, seed=0, variant=rk.NO_PROJECTION).named_tensors()
    )
    assert "proj.weight" not in no_proj


def test_expected_tensor_names_match_init():
    for kind, relevance, variant in itertools.product(
        rk.RANKER_KINDS, rk.RELEVANCE_KINDS, rk.VARIANTS
    ):
        if variant == rk.NO_MLP_BLOCK and kind != rk.POINTWISE:
            continue
        params = rk.init_ranker(kind, 24, 4, 8, relevance, seed=0, blocks=2, variant=variant)
        assert [n for n, _ in params.named_tensors()] == rk.expected_tensor_names(
            kind, relevance, 2, variant
        )


def test_multi_block_stacking_counts():
    one = rk.parameter_count(rk.init_ranker(rk.LISTWISE, 64, 8, seed=0, blocks=1))
    three = rk.parameter_count(rk.init_ranker(rk.LISTWISE, 64, 8, seed=0, blocks=3))
    block = 12 * 8 * 8 + 13 * 8
    assert three - one == 2 * block


# -- gradients through full compositions -------------------------------------


def _loss_for(kind, relevance, loss_kind, seed):
    rng = np.random.default_rng(seed)
    d_model, d_proj, k = 8, 4, 3
    params = rk.init_ranker(kind, d_model, d_proj, 6, relevance, seed=seed)
    group = make_group(rng, k=k, d_model=d_model)
    tensors = dict(params.named_tensors())
    y = np.array([1.0, 0.0, 1.0])

    def build(tape, leaves):
        if kind == rk.LISTWISE:
            _, _, scores = rk.listwise_forward(tape, params, leaves, group)
        else:
            instr = np.repeat(group.instruction[None, :], k, axis=0)
            _, _, scores = rk.pointwise_forward(tape, params, leaves, instr, group.features)
        if loss_kind == "cls":
            if kind == rk.LISTWISE:
                probs = ad.softmax(tape, ad.transpose(tape, scores))
                return ad.kl_divergence(tape, (y / y.sum()).reshape(1, -1), probs)
            return ad.sigmoid_bce(tape, scores, y)
        return ad.mse(tape, scores, y.reshape(-1, 1))

    return build, tensors


@pytest.mark.parametrize("kind", rk.RANKER_KINDS)
@pytest.mark.parametrize("relevance", rk.RELEVANCE_KINDS)
@pytest.mark.parametrize("loss_kind", ["cls", "reg"])
def test_gradient_oracle_full_compositions(kind, relevance, loss_kind):
    for seed in range(3):
        build, tensors = _loss_for(kind, relevance, loss_kind, seed)
        assert ad.grad_check(build, tensors) < 1e-4
