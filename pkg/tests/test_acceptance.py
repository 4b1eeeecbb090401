"""Acceptance suite: one test per exit criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines; each
test also asserts, so plain ``pytest`` enforces the same bar.
"""

import itertools
import math
import time

import numpy as np
import pytest

from hsrank import autodiff as ad
from hsrank import losses as lo
from hsrank import optim
from hsrank import rankers as rk
from hsrank.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from hsrank.evaluation import oracle_curve, scaling_curve, selection_accuracy
from hsrank.features import (
    CandidateGroup,
    DatasetMeta,
    make_record,
    read_dataset,
    sample_groups,
    write_dataset,
)
from hsrank.synthetic import linear_rule_dataset
from hsrank.training import TrainConfig, split_by_query, train


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def _random_group(rng, k, d_model, labels=None):
    if labels is None:
        labels = (rng.random(k) < 0.5).astype(np.float32)
    return CandidateGroup(
        query_id=int(rng.integers(1 << 20)),
        instruction=rng.normal(size=d_model).astype(np.float32),
        indices=np.arange(k, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.float32),
        response_pool=rng.normal(size=(k, d_model)).astype(np.float32),
    )


# -- criterion: parameter budgets ---------------------------------------------


def test_parameter_budgets():
    listwise = rk.parameter_count(rk.init_ranker(rk.LISTWISE, 4096, 64, relevance_kind=rk.COSINE))
    pointwise = rk.parameter_count(rk.init_ranker(rk.POINTWISE, 4096, 64, 128, rk.COSINE))
    ok = abs(listwise - 0.30e6) / 0.30e6 < 0.10 and abs(pointwise - 0.28e6) / 0.28e6 < 0.10

    under_half_m = True
    for kind, relevance, d_model in itertools.product(
        rk.RANKER_KINDS, rk.RELEVANCE_KINDS, (3072, 4096)
    ):
        count = rk.parameter_count(rk.init_ranker(kind, d_model, 64, 128, relevance))
        under_half_m = under_half_m and count < 500_000

    no_proj = rk.parameter_count(
        rk.init_ranker(rk.LISTWISE, 4096, 64, variant=rk.NO_PROJECTION)
    )
    no_mlp = rk.parameter_count(
        rk.init_ranker(rk.POINTWISE, 4096, 64, variant=rk.NO_MLP_BLOCK)
    )
    ok = (
        ok
        and under_half_m
        and abs(no_proj - 192e6) / 192e6 < 0.10
        and abs(no_mlp - 0.25e6) / 0.25e6 < 0.10
    )
    _report(
        "parameter budgets",
        ok,
        f"listwise={listwise:,} (0.30M±10%), pointwise={pointwise:,} (0.28M±10%), "
        f"all defaults <0.5M={under_half_m}, no_projection={no_proj:,} (192M±10%), "
        f"no_mlp_block={no_mlp:,} (0.25M±10%)",
    )


# -- criterion: gradient oracle ----------------------------------------------


def _composition_check(kind, relevance, loss_kind, seed):
    rng = np.random.default_rng(seed)
    d_model, d_proj, d_hidden, k = 7, 3, 5, 3
    params = rk.init_ranker(kind, d_model, d_proj, d_hidden, relevance, seed=seed)
    group = _random_group(rng, k, d_model, labels=[1.0, 0.0, 1.0])
    y = np.asarray(group.labels, dtype=np.float64)

    def build(tape, leaves):
        if kind == rk.LISTWISE:
            _, _, scores = rk.listwise_forward(tape, params, leaves, group)
        else:
            instructions = np.repeat(group.instruction[None, :], k, axis=0)
            _, _, scores = rk.pointwise_forward(tape, params, leaves, instructions, group.features)
        if loss_kind == "cls":
            if kind == rk.LISTWISE:
                probs = ad.softmax(tape, ad.transpose(tape, scores))
                return ad.kl_divergence(tape, (y / y.sum()).reshape(1, -1), probs)
            return ad.sigmoid_bce(tape, scores, y)
        return ad.mse(tape, scores, y.reshape(-1, 1))

    return ad.grad_check(build, dict(params.named_tensors()), step=2e-5)


def _primitive_check(seed):
    rng = np.random.default_rng(seed)
    params = {
        "x": rng.normal(size=(4, 5)),
        "w": rng.normal(size=(5, 4)),
        "b": rng.normal(size=4),
        "gain": rng.uniform(0.5, 1.5, size=4),
        "shift": 0.1 * rng.normal(size=4),
    }
    params.update({f"blk.{n}": v for n, v in ad.init_block_tensors(4, rng).items()})

    def build(tape, leaves):
        h = ad.linear(tape, leaves["x"], leaves["w"], leaves["b"])
        h = ad.gelu(tape, h)
        h = ad.layer_norm(tape, h, leaves["gain"], leaves["shift"])
        block = {n: leaves[f"blk.{n}"] for n in ad.BLOCK_TENSOR_NAMES}
        h = ad.attention_block(tape, h, block)
        top = ad.slice_rows(tape, h, 0, 1)
        rest = ad.slice_rows(tape, h, 1, 4)
        sims = ad.rowwise_cosine(tape, ad.repeat_rows(tape, top, 3), rest)
        probs = ad.softmax(tape, ad.transpose(tape, sims))
        kl = ad.kl_divergence(tape, np.array([[0.5, 0.25, 0.25]]), probs)
        bce = ad.sigmoid_bce(tape, sims, np.array([1.0, 0.0, 1.0]))
        err = ad.mse(tape, ad.concat_cols(tape, sims, sims), np.full((3, 2), 0.1))
        return ad.average(tape, [kl, bce, ad.scale(tape, err, 0.5)])

    return ad.grad_check(build, params, step=2e-5)


def test_gradient_oracle():
    started = time.perf_counter()
    worst = 0.0
    for kind, relevance, loss_kind in itertools.product(
        rk.RANKER_KINDS, rk.RELEVANCE_KINDS, ("cls", "reg")
    ):
        for seed in range(20):
            worst = max(worst, _composition_check(kind, relevance, loss_kind, seed))
    for seed in range(20):
        worst = max(worst, _primitive_check(seed))
    elapsed = time.perf_counter() - started
    _report(
        "gradient oracle",
        worst < 1e-4 and elapsed < 120.0,
        f"8 ranker/loss compositions + all primitives, 20 seeds each: "
        f"worst relative error {worst:.2e} (<1e-4, floor 1e-6), {elapsed:.0f}s (<120s)",
    )


# -- criterion: loss unit oracles --------------------------------------------


def _trace(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return rk.ScoringTrace(
        projected_instruction=np.zeros(2),
        projected_responses=np.zeros((scores.size, 2)),
        scores=scores,
    )


def test_loss_unit_oracles():
    matched = lo.list_cls_loss([_trace([0.42, 0.42])], [[1.0, 1.0]]).loss
    log2_case = lo.list_cls_loss([_trace([0.0, 0.0])], [[1.0, 0.0]]).loss
    bce_case = lo.point_cls_loss(np.zeros(1), np.ones(1)).loss

    rng = np.random.default_rng(7)
    traces, labels = [], []
    for _ in range(64):
        traces.append(_trace(rng.uniform(-0.005, 0.005, size=10)))
        row = np.zeros(10)
        row[rng.integers(10)] = 1.0
        labels.append(row)
    init_loss = lo.list_cls_loss(traces, labels).loss

    ok = (
        matched < 1e-8
        and abs(log2_case - math.log(2.0)) < 1e-6
        and abs(bce_case - math.log(2.0)) < 1e-9
        and abs(init_loss - math.log(10.0)) < 0.05
    )
    _report(
        "loss unit oracles",
        ok,
        f"KL(matched)={matched:.2e} (<1e-8), KL(y=[1,0],s=[0,0])={log2_case:.6f} (log2±1e-6), "
        f"BCE(s=0,y=1)={bce_case:.12f} (ln2±1e-9), one-positive K=10 init loss={init_loss:.4f} "
        f"(log10±0.05)",
    )


# -- criterion: structural invariants -----------------------------------------


def test_structural_invariants():
    rng = np.random.default_rng(11)
    checks = []

    # listwise permutation equivariance -> selection invariance, all 3!/4!
    params = rk.init_ranker(rk.LISTWISE, 8, 4, seed=13)
    for k in (3, 4):
        group = _random_group(rng, k, 8)
        base_scores = rk.score_listwise(params, group).scores
        base_pick = rk.select_best(base_scores)
        for perm in itertools.permutations(range(k)):
            perm = np.array(perm)
            shuffled = CandidateGroup(
                query_id=group.query_id,
                instruction=group.instruction,
                indices=group.indices[perm],
                labels=group.labels[perm],
                response_pool=group.response_pool,
            )
            scores = rk.score_listwise(params, shuffled).scores
            checks.append(np.allclose(scores, base_scores[perm], atol=1e-6))
            checks.append(int(perm[rk.select_best(scores)]) == base_pick)
    perm_ok = all(checks)

    # pointwise candidate-locality: scored alone == scored inside a batch
    pparams = rk.init_ranker(rk.POINTWISE, 8, 4, 6, seed=17)
    big = _random_group(rng, 100, 8)
    batch_scores = rk.score_pointwise_group(pparams, big).scores
    point_ok = all(
        rk.score_pointwise(pparams, big.instruction, big.features[i]) == batch_scores[i]
        for i in (0, 17, 63, 99)
    )

    # cosine positive-scale invariance
    v, w = rng.normal(size=6), rng.normal(size=6)
    cos_ok = (
        abs(rk.cosine_relevance(v, 7.3 * v) - 1.0) < 1e-12
        and abs(rk.cosine_relevance(v, w) - rk.cosine_relevance(v, 0.001 * w)) < 1e-12
    )

    # argmax shift invariance
    scores = rng.normal(size=10)
    shift_ok = rk.select_best(scores) == rk.select_best(scores + 1234.5)

    # optimizer closed-form recursions at 1e-12
    p = {"p": np.array([1.0])}
    for _ in range(3):
        optim.sgd_step(p, {"p": p["p"].copy()}, lr=0.1)
    sgd_ok = abs(p["p"][0] - 0.9**3) < 1e-12
    p = {"p": np.array([2.0])}
    state = optim.SgdState()
    optim.sgd_step(p, {"p": np.array([1.0])}, lr=0.5, momentum=0.9, state=state)
    optim.sgd_step(p, {"p": np.array([1.0])}, lr=0.5, momentum=0.9, state=state)
    momentum_ok = abs(p["p"][0] - 0.55) < 1e-12
    p = {"p": np.array([0.0])}
    optim.adamw_step(p, {"p": np.array([1.0])}, lr=1e-3, state=optim.AdamWState())
    adamw_ok = abs(p["p"][0] + 1e-3 / (1.0 + 1e-8)) < 1e-12

    ok = perm_ok and point_ok and cos_ok and shift_ok and sgd_ok and momentum_ok and adamw_ok
    _report(
        "structural invariants",
        ok,
        f"permutation equivariance (3!+4! exhaustive)={perm_ok}, pointwise batch "
        f"independence={point_ok}, cosine scale invariance={cos_ok}, argmax shift "
        f"invariance={shift_ok}, optimizer recursions@1e-12={sgd_ok and momentum_ok and adamw_ok}",
    )


# -- criterion: end-to-end synthetic separability ------------------------------


def test_end_to_end_synthetic_separability():
    started = time.perf_counter()
    records, meta, _ = linear_rule_dataset(num_queries=500, d_model=256, pool_size=30, seed=11)
    train_records, held_records = split_by_query(records, 0.1, seed=11)

    # independent oracle computed first: logistic regression on raw features
    from sklearn.linear_model import LogisticRegression

    x = np.concatenate([r.response_features for r in train_records])
    y = np.concatenate([r.response_labels for r in train_records])
    probe = LogisticRegression(max_iter=200).fit(x, y)
    held_groups, _ = sample_groups(held_records, 10, 16, meta.label_mode, seed=11)
    oracle_wins = []
    for group in held_groups:
        pick = int(np.argmax(probe.decision_function(group.features)))
        oracle_wins.append(group.labels[pick] == 1.0)
    oracle_acc = float(np.mean(oracle_wins))

    accs = {}
    listwise_ckpt = None
    for ranker in rk.RANKER_KINDS:
        config = TrainConfig(ranker=ranker, loss="cls", seed=11)
        assert config.optimizer == "adamw" and config.lr == 1e-4
        assert config.group_size == 10 and config.groups_per_query == 16
        ckpt, log = train(config, train_records, meta)
        assert log.final_batch_loss < log.first_batch_loss
        accs[ranker] = selection_accuracy(ckpt, held_groups, meta.label_mode)
        if ranker == rk.LISTWISE:
            listwise_ckpt = ckpt

    curve = scaling_curve(
        listwise_ckpt, held_records, [2, 10], trials_per_k=8, seed=11, label_mode=meta.label_mode
    )
    by_k = {p.group_size: p.mean_accuracy for p in curve.points}
    upper = oracle_curve(held_records, [1, 2, 4, 8, 10], trials_per_k=8, seed=11)
    upper_means = [p.mean_accuracy for p in upper.points]
    monotone = all(b >= a for a, b in zip(upper_means, upper_means[1:]))

    elapsed = time.perf_counter() - started
    ok = (
        oracle_acc >= 0.99
        and accs[rk.LISTWISE] >= 0.95
        and accs[rk.POINTWISE] >= 0.95
        and by_k[10] >= by_k[2]
        and monotone
        and elapsed < 180.0
    )
    _report(
        "end-to-end synthetic separability",
        ok,
        f"logistic oracle={oracle_acc:.3f} (>=0.99), listwise={accs[rk.LISTWISE]:.3f}, "
        f"pointwise={accs[rk.POINTWISE]:.3f} (both >=0.95), curve acc(K=10)={by_k[10]:.3f} >= "
        f"acc(K=2)={by_k[2]:.3f}, oracle curve non-decreasing={monotone}, {elapsed:.0f}s (<180s)",
    )


# -- criterion: CPU-speed claim + serialization --------------------------------


def test_cpu_speed_scaled():
    records, meta, _ = linear_rule_dataset(num_queries=374, d_model=4096, pool_size=12, seed=33)
    timings = {}
    for ranker in rk.RANKER_KINDS:
        config = TrainConfig(ranker=ranker, loss="cls", seed=3)
        started = time.perf_counter()
        ckpt, log = train(config, records, meta)
        timings[ranker] = time.perf_counter() - started
        assert log.units > 0 and ckpt.d_model == 4096
    ok = all(t < 300.0 for t in timings.values())
    _report(
        "CPU-speed claim (scaled)",
        ok,
        f"374 queries x 16 groups, K=10, d_model=4096, single CPU: "
        f"listwise={timings[rk.LISTWISE]:.0f}s, pointwise={timings[rk.POINTWISE]:.0f}s (<300s each)",
    )


def test_serialization_bit_exact_on_1000_instances(tmp_path):
    rng = np.random.default_rng(99)

    # 1,000 random records across 20 datasets of varying width
    record_count = 0
    for file_index in range(20):
        d_model = int(rng.integers(1, 12))
        mode = "classification" if file_index % 2 == 0 else "regression"
        records = []
        for _ in range(50):
            n = int(rng.integers(1, 6))
            labels = (
                (rng.random(n) < 0.5).astype(np.float32)
                if mode == "classification"
                else rng.normal(size=n).astype(np.float32)
            )
            records.append(
                make_record(record_count, rng.normal(size=d_model), rng.normal(size=(n, d_model)), labels)
            )
            record_count += 1
        meta = DatasetMeta(d_model=d_model, label_mode=mode)
        path = tmp_path / f"ds{file_index}.lrfd"
        write_dataset(records, meta, path)
        loaded, _ = read_dataset(path)
        for a, b in zip(records, loaded):
            assert a.query_id == b.query_id
            np.testing.assert_array_equal(a.instruction, b.instruction)
            np.testing.assert_array_equal(a.response_features, b.response_features)
            np.testing.assert_array_equal(a.response_labels, b.response_labels)

    # 1,000 random checkpoints: save -> load -> save is byte-stable
    variants = [rk.FULL, rk.NO_INSTRUCTION, rk.NO_PROJECTION, rk.NO_MLP_BLOCK]
    for i in range(1000):
        kind = rk.RANKER_KINDS[i % 2]
        relevance = rk.RELEVANCE_KINDS[(i // 2) % 2]
        variant = variants[(i // 4) % 4]
        if variant == rk.NO_MLP_BLOCK and kind != rk.POINTWISE:
            variant = rk.FULL
        params = rk.init_ranker(
            kind, 8, 3, 5, relevance, seed=i, blocks=1 + i % 2, variant=variant
        )
        ckpt = Checkpoint.from_params(params, config={"seed": i}, dataset_fingerprint=f"fp{i}")
        p1 = tmp_path / "c1.lrck"
        p2 = tmp_path / "c2.lrck"
        save_checkpoint(ckpt, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        for name, tensor in ckpt.tensors.items():
            np.testing.assert_array_equal(tensor, loaded.tensors[name])

    _report(
        "serialization round-trips",
        record_count == 1000,
        f"{record_count} records over 20 datasets and 1000 checkpoints round-trip bit-exactly",
    )
