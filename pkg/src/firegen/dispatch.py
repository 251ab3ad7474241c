"""Discrete-event replay of an intervention dataset against a station /
fleet / dispatch-rules configuration.

Each intervention starts at day*1440 + hour*60 plus a seeded sub-hour
minute; vehicles are drawn from the nearest station (Euclidean) holding
an available unit of each required type and return after the
intervention's duration (plus an optional straight-line travel
allowance).
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import InterventionRecord


class ResourceError(ValueError):
    pass


@dataclass
class Station:
    id: str
    x: float
    y: float
    fleet: dict[str, int] = field(default_factory=dict)
    crew: dict[str, int] = field(default_factory=dict)  # reporting only


@dataclass
class DispatchRules:
    required: dict[int, list[str]]  # incident code -> vehicle-type multiset

    def for_incident(self, incident: int) -> list[str]:
        return self.required.get(incident, [])


def load_stations(path) -> list[Station]:
    """Stations CSV: station_id,x,y,vehicle_type,count[,crew]."""
    stations: dict[str, Station] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("station_id", "x", "y", "vehicle_type", "count"):
            if name not in (reader.fieldnames or []):
                raise ResourceError(f"stations file missing column {name!r}")
        for row in reader:
            sid = row["station_id"].strip()
            x, y = float(row["x"]), float(row["y"])
            vtype = row["vehicle_type"].strip()
            count = int(row["count"])
            if count < 0:
                raise ResourceError(f"station {sid}: negative count")
            st = stations.get(sid)
            if st is None:
                st = stations[sid] = Station(sid, x, y)
            elif (st.x, st.y) != (x, y):
                raise ResourceError(
                    f"duplicate station id {sid!r} with conflicting "
                    f"coordinates")
            if vtype in st.fleet:
                raise ResourceError(
                    f"duplicate fleet row for station {sid!r} type {vtype!r}")
            st.fleet[vtype] = count
            if row.get("crew"):
                st.crew[vtype] = int(row["crew"])
    if not stations:
        raise ResourceError("stations file is empty")
    return list(stations.values())


def load_rules(path) -> DispatchRules:
    """Rules CSV: incident,vehicle_type,quantity."""
    required: dict[int, list[str]] = defaultdict(list)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("incident", "vehicle_type", "quantity"):
            if name not in (reader.fieldnames or []):
                raise ResourceError(f"rules file missing column {name!r}")
        for row in reader:
            qty = int(row["quantity"])
            if qty < 1:
                raise ResourceError("rule quantity must be >= 1")
            required[int(row["incident"])].extend(
                [row["vehicle_type"].strip()] * qty)
    return DispatchRules(dict(required))


def load_resources(stations_path, rules_path
                   ) -> tuple[list[Station], DispatchRules]:
    """Load and cross-validate both files: every vehicle type referenced
    by a rule must exist in at least one station's fleet."""
    stations = load_stations(stations_path)
    rules = load_rules(rules_path)
    known = {t for st in stations for t in st.fleet}
    for incident, types in rules.required.items():
        for t in types:
            if t not in known:
                raise ResourceError(
                    f"rule for incident {incident} references vehicle type "
                    f"{t!r} absent from every fleet")
    return stations, rules


def fleet_size(stations: list[Station]) -> int:
    return sum(sum(st.fleet.values()) for st in stations)


@dataclass
class SimReport:
    concurrency: list[int]       # busy count observed at each start
    concurrency_mean: float
    concurrency_std: float
    totals: dict[str, int]       # per-vehicle-type dispatch totals
    unmet: list[tuple[int, str]]  # (intervention index, missing type)
    fleet_size: int
    month_day_warnings: int = 0

    def summary(self) -> str:
        lines = [f"interventions: {len(self.concurrency)}",
                 f"concurrency mean: {self.concurrency_mean:.4f}",
                 f"concurrency std: {self.concurrency_std:.4f}",
                 f"fleet size: {self.fleet_size}",
                 f"unmet demands: {len(self.unmet)}",
                 f"month/day warnings: {self.month_day_warnings}"]
        for t in sorted(self.totals):
            lines.append(f"dispatched {t}: {self.totals[t]}")
        return "\n".join(lines)


def _start_minute(record: InterventionRecord, seed: int) -> float:
    """Seeded sub-hour jitter derived from the record contents, so equal
    records get equal timestamps regardless of input order."""
    payload = struct.pack(
        "<qddqqqqq", seed, record.x, record.y, record.month, record.day,
        record.hour, record.duration, record.incident)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2**64 * 60.0


def simulate(records: list[InterventionRecord], stations: list[Station],
             rules: DispatchRules, travel_speed: float | None = None,
             seed: int = 0) -> SimReport:
    """Replay the dataset; see the module docstring for the event rules.

    Ties at equal event times process returns before starts, and starts
    by lower intervention index.  `travel_speed` is meters/minute; when
    set, a one-way straight-line travel allowance extends the busy
    window.
    """
    if not records:
        raise ValueError("records are empty")

    starts = []
    warnings = 0
    for i, r in enumerate(records):
        t = r.day * 1440.0 + r.hour * 60.0 + _start_minute(r, seed)
        starts.append((t, i, r))
        month_est = min(12, r.day // 30 + 1)
        if abs(r.month - month_est) > 1 and not (
                r.month == 12 and month_est == 1):
            warnings += 1
    starts.sort(key=lambda s: (s[0], s[1]))

    avail = {st.id: dict(st.fleet) for st in stations}
    coords = {st.id: (st.x, st.y) for st in stations}
    order = sorted(coords)  # deterministic station tie-break

    returns: list[tuple[float, int, str, str]] = []  # (time, seq, sid, type)
    seq = 0
    busy = 0
    totals: dict[str, int] = defaultdict(int)
    unmet: list[tuple[int, str]] = []
    concurrency: list[int] = []

    for t, idx, rec in starts:
        while returns and returns[0][0] <= t:
            _, _, sid, vtype = heapq.heappop(returns)
            avail[sid][vtype] += 1
            busy -= 1
        concurrency.append(busy)
        for vtype in rules.for_incident(rec.incident):
            best = None
            for sid in order:
                if avail[sid].get(vtype, 0) > 0:
                    dx = coords[sid][0] - rec.x
                    dy = coords[sid][1] - rec.y
                    d2 = dx * dx + dy * dy
                    if best is None or d2 < best[0]:
                        best = (d2, sid)
            if best is None:
                unmet.append((idx, vtype))
                continue
            d2, sid = best
            avail[sid][vtype] -= 1
            busy += 1
            totals[vtype] += 1
            allowance = np.sqrt(d2) / travel_speed if travel_speed else 0.0
            heapq.heappush(returns,
                           (t + rec.duration + allowance, seq, sid, vtype))
            seq += 1

    series = np.asarray(concurrency, dtype=np.float64)
    return SimReport(concurrency, float(series.mean()), float(series.std()),
                     dict(totals), unmet, fleet_size(stations), warnings)


@dataclass
class ReportComparison:
    rows: list[tuple[str, int, int, int, float]]  # type, a, b, |delta|, rel%
    concurrency_mean_delta: float
    concurrency_std_delta: float

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["vehicle_type", "total_a", "total_b",
                             "abs_delta", "rel_delta_pct"])
            for row in self.rows:
                writer.writerow(row)


def compare_reports(a: SimReport, b: SimReport) -> ReportComparison:
    """Per-type dispatch deltas plus concurrency statistic deltas."""
    types_a, types_b = set(a.totals), set(b.totals)
    if (types_a or types_b) and not (types_a & types_b):
        raise ValueError("reports have disjoint vehicle-type sets")
    rows = []
    for vtype in sorted(types_a | types_b):
        ta = a.totals.get(vtype, 0)
        tb = b.totals.get(vtype, 0)
        rel = abs(tb - ta) / ta * 100.0 if ta else float("inf")
        rows.append((vtype, ta, tb, abs(tb - ta), rel))
    return ReportComparison(rows,
                            b.concurrency_mean - a.concurrency_mean,
                            b.concurrency_std - a.concurrency_std)
