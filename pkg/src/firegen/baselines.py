"""Non-learned reference generators: row shuffling with replacement and
independent per-column marginal resampling."""

from __future__ import annotations

import numpy as np

from .data_model import CANONICAL_COLUMNS, InterventionRecord


def shuffle_sample(dataset: list[InterventionRecord], n: int,
                   seed: int) -> list[InterventionRecord]:
    """Draw n rows uniformly with replacement from the dataset."""
    if not dataset:
        raise ValueError("dataset is empty")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(dataset), size=n)
    return [dataset[i] for i in idx]


def independent_sample(dataset: list[InterventionRecord], n: int, seed: int,
                       joint_rows: bool = False) -> list[InterventionRecord]:
    """Resample each column independently from its empirical marginal.

    Marginals are preserved in distribution while cross-column dependence
    is destroyed.  `joint_rows=True` falls back to plain uniform row
    re-draws (which coincides with shuffle_sample's distribution).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if joint_rows:
        return shuffle_sample(dataset, n, seed)
    rng = np.random.default_rng(seed)
    m = len(dataset)
    picks = {name: rng.integers(0, m, size=n) for name in CANONICAL_COLUMNS}
    return [InterventionRecord(
        **{name: getattr(dataset[picks[name][i]], name)
           for name in CANONICAL_COLUMNS})
        for i in range(n)]
