"""
Training the behaviour evaluator
================================

Split by subject, window the trajectories and fit the recurrent classifier
with the reference configuration.  Takes about half a minute on one core.
"""

from pathlib import Path

from neme.classifier import TrainConfig, evaluate, save_checkpoint, train
from neme.core import split_dataset, window_all
from neme.synthgen import GenConfig, generate_dataset

out = Path("demo_out")
out.mkdir(exist_ok=True)

trajs = generate_dataset(GenConfig(seed=0))
split = split_dataset(trajs, (0.6, 0.2), seed=0)
parts = {k: split.select(trajs, k) for k in ("train", "val", "test")}
print({k: len(v) for k, v in parts.items()}, "trajectories")

# dense training windows, sparser evaluation windows
cfg = TrainConfig(L=32, h=64, layers=1, lr=1e-3, noise_sigma=1e-2, max_epochs=30, patience=5)
tr = window_all(parts["train"], cfg.L, 4)
va = window_all(parts["val"], cfg.L, 16)
te = window_all(parts["test"], cfg.L, 16)
print(f"{len(tr)} train / {len(va)} val / {len(te)} test windows")

res = train(tr, va, cfg)
for r in res.history:
    mark = " *" if r.epoch == res.best_epoch else ""
    print(f"epoch {r.epoch:2d}  train {r.train_loss:.4f}  val {r.val_loss:.4f}  acc {r.val_acc:.3f}{mark}")
print(f"stopped early: {res.stopped_early}, {res.seconds:.1f}s")

print()
print(evaluate(res.best_model, te).summary())
save_checkpoint(out / "evaluator.json", res.best_model)
print("saved", out / "evaluator.json")
