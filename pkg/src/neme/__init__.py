"""Offline evaluation of imitation-learning policies with a learned behaviour
classifier, DTW and criterion-based checkpoint selection."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    LABELS,
    ActionChunk,
    BehaviorLabel,
    DatasetSplit,
    DatasetStats,
    JointTrajectory,
    LabeledWindow,
    dataset_stats,
    load_dataset,
    segment_chunks,
    split_dataset,
    window,
    write_dataset,
)
