"""
Meta-evaluating simulated checkpoints
=====================================

Build a family of simulated policies whose quality falls epoch by epoch,
score each with the evaluator and check that the ranking follows quality.
Uses demo_out/evaluator.json from the training demo when present.
"""

from pathlib import Path

import numpy as np

from neme.classifier import TrainConfig, load_checkpoint, train
from neme.core import split_dataset, window_all
from neme.metaeval import compare_policies, meta_evaluate, spearman
from neme.policysim import make_epoch_family
from neme.synthgen import GenConfig, generate_dataset

trajs = generate_dataset(GenConfig(seed=0))
split = split_dataset(trajs, (0.6, 0.2), seed=0)
test = split.select(trajs, "test")

ckpt = Path("demo_out/evaluator.json")
if ckpt.exists():
    model = load_checkpoint(ckpt)
else:
    # quick stand-in evaluator
    cfg = TrainConfig(L=32, h=32, lr=3e-3, max_epochs=8)
    res = train(window_all(split.select(trajs, "train"), 32, 4), window_all(split.select(trajs, "val"), 32, 16), cfg)
    model = res.best_model

curve = np.linspace(1.0, 0.1, 8)
fam = make_epoch_family(test, curve, seed=0)
reports = []
for pol, preds in zip(fam.policies, fam.predictions):
    rep = meta_evaluate(model, preds, stride=16, name=pol.name, references=test)
    reports.append(rep)
    print(f"{pol.name}  quality {pol.quality:.3f}  mA {rep.mA:.3f}  mF1 {rep.macro_mF1:.3f}  DTW {rep.mean_dtw:.3f}")

rho = spearman([p.quality for p in fam.policies], [r.macro_mF1 for r in reports])
print(f"\nSpearman(quality, macro mF1) = {rho:.3f}")
print("ranked first:", compare_policies(reports)[0].policy_name)
