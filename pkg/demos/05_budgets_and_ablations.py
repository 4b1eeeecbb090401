"""Parameter accounting and architecture ablations.

The projection layer is what keeps the rankers tiny: removing it blows
the listwise ranker up by three orders of magnitude.  Ablations also
swap the instruction feature for a learned vector and drop the pointwise
MLP entirely (cosine on raw projections).
"""

from hsrank import init_ranker, parameter_count
from hsrank.evaluation import ablation_run
from hsrank.synthetic import linear_rule_dataset
from hsrank.training import TrainConfig

print("parameter budgets at d_model=4096, d_proj=64, d_hidden=128 (cosine relevance):")
rows = [
    ("listwise", dict(kind="listwise")),
    ("listwise, no projection", dict(kind="listwise", variant="no_projection")),
    ("listwise, no instruction", dict(kind="listwise", variant="no_instruction")),
    ("pointwise", dict(kind="pointwise")),
    ("pointwise, no projection", dict(kind="pointwise", variant="no_projection")),
    ("pointwise, no MLP block", dict(kind="pointwise", variant="no_mlp_block")),
]
for name, spec in rows:
    kind = spec.pop("kind")
    params = init_ranker(kind, 4096, 64, 128, "cosine", seed=0, **spec)
    print(f"  {name:<26} {parameter_count(params):>13,}")

print("\ntraining each variant on a small planted-rule dataset:")
records, meta, _ = linear_rule_dataset(num_queries=60, d_model=48, pool_size=12, seed=2)
config = TrainConfig(ranker="pointwise", d_proj=8, d_hidden=16, group_size=5,
                     groups_per_query=6, batch_size=128, optimizer="sgd", lr=0.5, seed=2)
for variant in ("full", "no_instruction", "no_mlp_block"):
    report = ablation_run(variant, config, records, meta, held_out_fraction=0.2)
    print(f"  {variant:<16} accuracy={report.selection_accuracy:.3f} "
          f"params={report.parameter_count:,}")
