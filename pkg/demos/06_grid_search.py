"""Hyperparameter robustness: sweep the optimizer grid on one dataset.

The full default grid is 40 points (SGD lr x momentum, AdamW lr, batch
size, schedule).  Here a trimmed copy runs on a small dataset; the
accuracy spread across points is the robustness signal to look at.
"""

from hsrank.synthetic import linear_rule_dataset
from hsrank.training import TrainConfig, default_grid, grid_search

records, meta, _ = linear_rule_dataset(num_queries=60, d_model=48, pool_size=12, seed=6,
                                       signal=3.0, instruction_alignment=2.5, noise=1.0)

base = TrainConfig(ranker="listwise", d_proj=8, group_size=5, groups_per_query=6,
                   batch_size=128, seed=6)
grid = [cfg for cfg in default_grid(base) if cfg.batch_size == 256][:10]
for cfg in grid:
    cfg.batch_size = 128  # small dataset: keep several batches per epoch

best, results = grid_search(grid, records, meta, held_out_fraction=0.2, seed=6)

print(f"{'#':>3} {'optimizer':>9} {'lr':>8} {'mom':>4} {'schedule':>9} {'accuracy':>9}")
for row in results:
    cfg = row["config"]
    acc = f"{row['accuracy']:.3f}" if "accuracy" in row else f"FAILED: {row['error'][:30]}"
    print(f"{row['index']:>3} {cfg['optimizer']:>9} {cfg['lr']:>8g} {cfg['momentum']:>4g} "
          f"{cfg['schedule']:>9} {acc:>9}")

accs = [r["accuracy"] for r in results if "accuracy" in r]
print(f"\naccuracy spread across {len(accs)} points: {max(accs) - min(accs):.4f} "
      f"(best {max(accs):.3f}, worst {min(accs):.3f})")
print("best config:", {k: best.to_dict()[k] for k in ("optimizer", "lr", "momentum", "schedule")})
