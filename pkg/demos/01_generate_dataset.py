"""
Synthetic behaviour recordings
==============================

Generate the default 700-episode dataset, look at one episode and print the
per-class statistics table.
"""

from pathlib import Path

import numpy as np

from neme.core import dataset_stats, segment_chunks, write_dataset
from neme.synthgen import GenConfig, generate_dataset

out = Path("demo_out")
out.mkdir(exist_ok=True)

# every episode is a still lead-in, one behaviour and a still return
cfg = GenConfig(seed=0)
trajs = generate_dataset(cfg)
ep = trajs[0]
print(f"{len(trajs)} episodes, {ep.dim} channels at {ep.rate_hz:g} Hz")
for ch in segment_chunks(ep):
    print(f"  {ch.label.value:<10} frames {ch.start_index:3d}-{ch.end_index:3d}")

# the active channels of the behaviour move, everything else sits near rest
moving = np.abs(ep.joints - cfg.rest_pose).max(axis=0) > 0.05
print("channels that move in", ep.id, ":", np.flatnonzero(moving).tolist())

stats = dataset_stats(trajs)
print()
print(stats.to_csv())

write_dataset(out / "dataset.jsonl", trajs)
print("wrote", out / "dataset.jsonl")
