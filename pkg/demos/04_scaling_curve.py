"""Selection accuracy grows with the number of candidates K.

For each query and trial the response pool is permuted once and the
K-candidate group is the first K entries, so the oracle (pass@K) curve
is non-decreasing by construction and the ranker curve shows how much of
that headroom the trained model captures.  Output doubles as CSV.
"""

from hsrank.evaluation import oracle_curve, scaling_curve
from hsrank.synthetic import linear_rule_dataset
from hsrank.training import TrainConfig, split_by_query, train

records, meta, _ = linear_rule_dataset(num_queries=120, d_model=96, pool_size=24, seed=9,
                                       signal=3.0, instruction_alignment=3.0, noise=1.0)
train_records, held_records = split_by_query(records, held_out_fraction=0.25, seed=9)

config = TrainConfig(ranker="listwise", d_proj=24, group_size=10, groups_per_query=8,
                     batch_size=128, optimizer="sgd", lr=0.5, seed=9)
ckpt, _ = train(config, train_records, meta)

k_values = [1, 2, 4, 8, 12, 16, 24]
ranker = scaling_curve(ckpt, held_records, k_values, trials_per_k=8, seed=9)
oracle = oracle_curve(held_records, k_values, trials_per_k=8, seed=9)

print(f"protocol: {ranker.protocol}\n")
print(f"{'K':>4}  {'ranker':>8}  {'oracle':>8}")
for rp, op in zip(ranker.points, oracle.points):
    print(f"{rp.group_size:>4}  {rp.mean_accuracy:>8.3f}  {op.mean_accuracy:>8.3f}")

print("\nranker curve as CSV:")
print(ranker.to_csv(), end="")
