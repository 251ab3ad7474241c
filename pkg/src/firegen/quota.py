"""Quota-constrained rejection sampling: draw from a generator until each
spatial area's target count is met within tolerance, or the draw budget
runs out."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import (InterventionRecord, ZonePartition, assign_area,
                         assign_areas)

DEFAULT_TOLERANCE = 0.02
DEFAULT_BUDGET_MULTIPLIER = 3
DEFAULT_BATCH_SIZE = 4096


@dataclass(frozen=True)
class QuotaSpec:
    targets: dict[int, int]          # area id -> target count
    tolerance: float = DEFAULT_TOLERANCE
    budget_multiplier: int = DEFAULT_BUDGET_MULTIPLIER

    def __post_init__(self):
        if not 0 <= self.tolerance < 1:
            raise ValueError("tolerance must be in [0, 1)")
        if self.budget_multiplier < 1:
            raise ValueError("budget multiplier must be >= 1")
        if any(t < 0 for t in self.targets.values()):
            raise ValueError("targets must be nonnegative")

    @property
    def total(self) -> int:
        return sum(self.targets.values())

    @property
    def budget(self) -> int:
        return self.budget_multiplier * self.total

    def floor(self, area: int) -> int:
        """Per-area success floor: ceil((1 - tolerance) * target)."""
        return math.ceil((1.0 - self.tolerance) * self.targets[area])


@dataclass
class QuotaResult:
    accepted: list[InterventionRecord]
    draws: int
    accepted_per_area: dict[int, int]
    status: str  # "success" | "budget-exhausted"
    discarded: int = 0

    def summary(self) -> str:
        lines = [f"status: {self.status}",
                 f"draws: {self.draws}",
                 f"accepted: {len(self.accepted)}",
                 f"discarded: {self.discarded}"]
        for area in sorted(self.accepted_per_area):
            lines.append(f"area {area}: {self.accepted_per_area[area]}")
        return "\n".join(lines)


def build_quota(dataset: list[InterventionRecord], zones: ZonePartition,
                tolerance: float = DEFAULT_TOLERANCE,
                budget_multiplier: int = DEFAULT_BUDGET_MULTIPLIER,
                uniform: bool = False) -> QuotaSpec:
    """Targets from the real per-area counts (default), or the global mean
    count per area when `uniform` (the alternative reading of the rule)."""
    if not dataset:
        raise ValueError("dataset is empty")
    ids = assign_areas(dataset, zones)
    counts = np.bincount(ids, minlength=zones.count)
    if uniform:
        mean = int(round(len(dataset) / zones.count))
        targets = {a: mean for a in range(zones.count)}
    else:
        targets = {a: int(counts[a]) for a in range(zones.count)}
    return QuotaSpec(targets, tolerance, budget_multiplier)


def load_quota_file(path, tolerance: float = DEFAULT_TOLERANCE,
                    budget_multiplier: int = DEFAULT_BUDGET_MULTIPLIER
                    ) -> QuotaSpec:
    """Explicit per-area targets from a CSV `zone,target`."""
    targets = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("zone", "target"):
            if name not in (reader.fieldnames or []):
                raise ValueError(f"quota file missing column {name!r}")
        for row in reader:
            targets[int(row["zone"])] = int(row["target"])
    return QuotaSpec(targets, tolerance, budget_multiplier)


def oversample(generator, quota: QuotaSpec, zones: ZonePartition,
               batch_size: int = DEFAULT_BATCH_SIZE,
               seed: int = 0) -> QuotaResult:
    """Accept/reject loop over generator batches.

    `generator` is any callable (n, seed) -> records.  A drawn record is
    accepted while its area's count is below target, otherwise discarded;
    the loop stops at success (every area at or above its floor) or when
    draws reach the budget.  Per-batch seeds are spawned from `seed`, so
    the result is deterministic.
    """
    accepted: list[InterventionRecord] = []
    counts = {a: 0 for a in quota.targets}
    unmet = {a for a in quota.targets if counts[a] < quota.floor(a)}
    draws = 0
    seeds = np.random.SeedSequence(seed).spawn(
        math.ceil(quota.budget / batch_size) + 1)
    batch_index = 0
    while unmet and draws < quota.budget:
        request = min(batch_size, quota.budget - draws)
        batch_seed = int(seeds[batch_index].generate_state(1)[0])
        batch_index += 1
        try:
            batch = generator(request, batch_seed)
        except Exception as exc:
            raise RuntimeError(
                f"generator failed after {draws} draws") from exc
        for rec in batch:
            draws += 1
            area = rec.area
            if area is None:
                area = assign_area(rec.x, rec.y, zones)
                rec = InterventionRecord(rec.x, rec.y, rec.month, rec.day,
                                         rec.hour, rec.duration,
                                         rec.incident, area)
            if area in counts and counts[area] < quota.targets[area]:
                counts[area] += 1
                accepted.append(rec)
                if area in unmet and counts[area] >= quota.floor(area):
                    unmet.discard(area)
                    if not unmet:
                        break
            if draws >= quota.budget:
                break
    status = "success" if not unmet else "budget-exhausted"
    return QuotaResult(accepted, draws, counts, status,
                       discarded=draws - len(accepted))
