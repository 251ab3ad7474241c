"""Dataset schema, CSV ingestion, mixed-type encoding and spatial zones.

The canonical record has 7 variables: projected coordinates (x, y),
three temporal integers (month, day-of-year, hour), a positive integer
duration in minutes, and a categorical incident code.  An optional
derived zone id ("area") can be attached from a centroid partition.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

CANONICAL_COLUMNS = ("x", "y", "month", "day", "hour", "duration", "incident")

# Inclusive bounds for the temporal integers.
TEMPORAL_BOUNDS = {"month": (1, 12), "day": (0, 364), "hour": (0, 23)}

# Columns stored as integers but normalized through the continuous path.
INTEGER_COLUMNS = ("month", "day", "hour", "duration")


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class InterventionRecord:
    x: float
    y: float
    month: int
    day: int
    hour: int
    duration: int
    incident: int
    area: int | None = None

    def as_row(self, include_area: bool = False) -> list:
        row = [self.x, self.y, self.month, self.day, self.hour,
               self.duration, self.incident]
        if include_area:
            row.append(self.area)
        return row


@dataclass(frozen=True)
class ColumnSpec:
    """Descriptor for one column of the canonical table.

    Continuous columns carry the sorted reference values used by the
    quantile transform plus the observed min/max; categorical columns
    carry the sorted tuple of valid codes.
    """

    name: str
    kind: str  # "continuous" | "categorical"
    categories: tuple[int, ...] | None = None
    ref: np.ndarray | None = None
    vmin: float | None = None
    vmax: float | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise SchemaError(f"unknown column kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise SchemaError(f"column {self.name}: empty category set")
        else:
            if self.ref is None or len(self.ref) == 0:
                raise SchemaError(f"column {self.name}: empty reference values")

    @property
    def cardinality(self) -> int:
        return len(self.categories) if self.categories else 0

    @property
    def width(self) -> int:
        return self.cardinality if self.kind == "categorical" else 1


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[ColumnSpec, ...]
    normalization: str = "quantile"  # "quantile" | "minmax"

    def __post_init__(self):
        if self.normalization not in ("quantile", "minmax"):
            raise SchemaError(f"unknown normalization {self.normalization!r}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    @property
    def continuous_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "continuous"]

    @property
    def categorical_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "categorical"]

    def layout(self) -> list[tuple[str, int, int]]:
        """(name, start, width) blocks: continuous first, then one one-hot
        block per categorical column, in schema order within each group."""
        blocks, offset = [], 0
        for c in self.columns:
            if c.kind == "continuous":
                blocks.append((c.name, offset, 1))
                offset += 1
        for c in self.columns:
            if c.kind == "categorical":
                blocks.append((c.name, offset, c.cardinality))
                offset += c.cardinality
        return blocks

    @property
    def encoded_width(self) -> int:
        return sum(c.width for c in self.columns)

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind}
            if c.kind == "categorical":
                d["categories"] = list(c.categories)
            else:
                d["ref"] = [float(v) for v in c.ref]
                d["vmin"] = float(c.vmin)
                d["vmax"] = float(c.vmax)
            cols.append(d)
        return {"columns": cols, "normalization": self.normalization}

    @classmethod
    def from_json(cls, data: dict) -> "DatasetSchema":
        cols = []
        for d in data["columns"]:
            if d["kind"] == "categorical":
                cols.append(ColumnSpec(d["name"], "categorical",
                                       categories=tuple(d["categories"])))
            else:
                ref = np.asarray(d["ref"], dtype=np.float64)
                cols.append(ColumnSpec(d["name"], "continuous", ref=ref,
                                       vmin=d["vmin"], vmax=d["vmax"]))
        return cls(tuple(cols), data.get("normalization", "quantile"))

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _column_values(records: list[InterventionRecord], name: str) -> np.ndarray:
    return np.asarray([getattr(r, name) for r in records], dtype=np.float64)


def fit_schema(records: list[InterventionRecord],
               normalization: str = "quantile") -> DatasetSchema:
    """Fit per-column normalization parameters and category sets."""
    if not records:
        raise SchemaError("cannot fit a schema on an empty record set")
    cols = []
    for name in CANONICAL_COLUMNS:
        vals = _column_values(records, name)
        if name == "incident":
            codes = tuple(sorted({int(v) for v in vals}))
            cols.append(ColumnSpec(name, "categorical", categories=codes))
        else:
            ref = np.sort(vals)
            cols.append(ColumnSpec(name, "continuous", ref=ref,
                                   vmin=float(ref[0]), vmax=float(ref[-1])))
    return DatasetSchema(tuple(cols), normalization)


def validate_records(records: list[InterventionRecord],
                     schema: DatasetSchema | None = None) -> None:
    incident_codes = None
    if schema is not None:
        incident_codes = set(schema.column("incident").categories)
    for i, r in enumerate(records):
        for name, (lo, hi) in TEMPORAL_BOUNDS.items():
            v = getattr(r, name)
            if not lo <= v <= hi:
                raise ValidationError(
                    f"row {i}: {name}={v} outside [{lo}, {hi}]")
        if r.duration < 1:
            raise ValidationError(f"row {i}: duration={r.duration} < 1")
        if not (math.isfinite(r.x) and math.isfinite(r.y)):
            raise ValidationError(f"row {i}: non-finite coordinates")
        if incident_codes is not None and r.incident not in incident_codes:
            raise ValidationError(
                f"row {i}: incident code {r.incident} not in schema")


def load_csv(path, schema: DatasetSchema | None = None
             ) -> tuple[list[InterventionRecord], DatasetSchema]:
    """Read the canonical CSV; fit a schema from the data when none given."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in CANONICAL_COLUMNS:
            if name not in header:
                raise SchemaError(f"missing column {name!r} in {path}")
        has_area = "area" in header
        records = []
        for i, row in enumerate(reader):
            records.append(_parse_row(row, i, has_area))
    if schema is None:
        schema = fit_schema(records)
    validate_records(records, schema)
    return records, schema


def _parse_row(row: dict, index: int, has_area: bool) -> InterventionRecord:
    vals = {}
    names = CANONICAL_COLUMNS + (("area",) if has_area else ())
    for name in names:
        cell = (row.get(name) or "").strip()
        if name == "area" and cell == "":
            vals["area"] = None
            continue
        try:
            v = float(cell)
        except ValueError:
            raise ParseError(f"row {index}: non-numeric {name}={cell!r}")
        if name in ("x", "y"):
            vals[name] = v
        else:
            if v != int(v):
                raise ParseError(f"row {index}: non-integer {name}={cell!r}")
            vals[name] = int(v)
    return InterventionRecord(**vals)


def write_csv(records: list[InterventionRecord], path,
              include_area: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(CANONICAL_COLUMNS) + (["area"] if include_area else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = r.as_row(include_area)
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if v != int(v) else str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# Encoding: quantile-normalized continuous block + one-hot categorical blocks


def encode(records: list[InterventionRecord],
           schema: DatasetSchema) -> np.ndarray:
    """Map records to the numeric training matrix (float64)."""
    n = len(records)
    out = np.zeros((n, schema.encoded_width), dtype=np.float64)
    for name, start, width in schema.layout():
        col = schema.column(name)
        vals = _column_values(records, name)
        if col.kind == "continuous":
            out[:, start] = _encode_continuous(vals, col, schema.normalization)
        else:
            idx = _category_indices(vals, col)
            out[np.arange(n), start + idx] = 1.0
    return out


def _category_indices(vals: np.ndarray, col: ColumnSpec) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(col.categories)}
    idx = np.empty(len(vals), dtype=np.intp)
    for i, v in enumerate(vals):
        code = int(v)
        if code not in lookup:
            raise EncodingError(
                f"column {col.name}: unseen category code {code}")
        idx[i] = lookup[code]
    return idx


def _encode_continuous(vals: np.ndarray, col: ColumnSpec,
                       normalization: str) -> np.ndarray:
    if col.vmin == col.vmax:
        return np.zeros_like(vals)
    if normalization == "minmax":
        return 2.0 * (vals - col.vmin) / (col.vmax - col.vmin) - 1.0
    ref = col.ref
    n = len(ref)
    left = np.searchsorted(ref, vals, side="left")
    right = np.searchsorted(ref, vals, side="right")
    p = (left + right) / (2.0 * n)
    p = np.clip(p, 0.5 / n, 1.0 - 0.5 / n)
    return ndtri(p)


def _decode_continuous(z: np.ndarray, col: ColumnSpec,
                       normalization: str) -> np.ndarray:
    if col.vmin == col.vmax:
        return np.full_like(z, col.vmin)
    if normalization == "minmax":
        v = col.vmin + (z + 1.0) / 2.0 * (col.vmax - col.vmin)
        return np.clip(v, col.vmin, col.vmax)
    ref = col.ref
    n = len(ref)
    pos = (np.arange(n) + 0.5) / n
    return np.interp(ndtr(z), pos, ref)  # interp clips to [vmin, vmax]


def decode(matrix: np.ndarray, schema: DatasetSchema,
           areas: np.ndarray | None = None) -> list[InterventionRecord]:
    """Invert `encode`; integer columns are rounded to the nearest valid
    value and continuous columns clipped to the observed range."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != schema.encoded_width:
        raise DecodeError(
            f"matrix width {matrix.shape} does not match schema "
            f"width {schema.encoded_width}")
    bad = ~np.isfinite(matrix)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DecodeError(f"non-finite value at row {r}, column {c}")
    n = matrix.shape[0]
    fields: dict[str, np.ndarray] = {}
    for name, start, width in schema.layout():
        col = schema.column(name)
        if col.kind == "continuous":
            v = _decode_continuous(matrix[:, start], col, schema.normalization)
            if name in INTEGER_COLUMNS:
                v = np.rint(v)
                if name in TEMPORAL_BOUNDS:
                    lo, hi = TEMPORAL_BOUNDS[name]
                else:
                    lo, hi = max(1, int(round(col.vmin))), int(round(col.vmax))
                v = np.clip(v, lo, hi)
            fields[name] = v
        else:
            idx = np.argmax(matrix[:, start:start + width], axis=1)
            codes = np.asarray(col.categories)
            fields[name] = codes[idx]
    records = []
    for i in range(n):
        records.append(InterventionRecord(
            x=float(fields["x"][i]), y=float(fields["y"][i]),
            month=int(fields["month"][i]), day=int(fields["day"][i]),
            hour=int(fields["hour"][i]), duration=int(fields["duration"][i]),
            incident=int(fields["incident"][i]),
            area=None if areas is None else int(areas[i])))
    return records


# ---------------------------------------------------------------------------
# Spatial zones


@dataclass(frozen=True)
class ZonePartition:
    centroids: np.ndarray  # (K, 2), row index == zone id

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2 or len(c) == 0:
            raise SchemaError("centroids must be a nonempty (K, 2) array")
        if not np.isfinite(c).all():
            raise SchemaError("non-finite centroid")
        object.__setattr__(self, "centroids", c)

    @property
    def count(self) -> int:
        return len(self.centroids)


def assign_area(x: float, y: float, zones: ZonePartition) -> int:
    """Nearest centroid by Euclidean distance; ties go to the lowest id."""
    d2 = (zones.centroids[:, 0] - x) ** 2 + (zones.centroids[:, 1] - y) ** 2
    return int(np.argmin(d2))  # argmin returns the first (lowest id) minimum


def assign_areas(records: list[InterventionRecord],
                 zones: ZonePartition) -> np.ndarray:
    xs = _column_values(records, "x")
    ys = _column_values(records, "y")
    d2 = ((xs[:, None] - zones.centroids[None, :, 0]) ** 2
          + (ys[:, None] - zones.centroids[None, :, 1]) ** 2)
    return np.argmin(d2, axis=1)


def with_areas(records: list[InterventionRecord],
               zones: ZonePartition) -> list[InterventionRecord]:
    ids = assign_areas(records, zones)
    return [replace(r, area=int(a)) for r, a in zip(records, ids)]


def fit_zones(records: list[InterventionRecord], k: int = 45,
              iters: int = 30, seed: int = 0) -> ZonePartition:
    """Lloyd's iterations on (x, y); fallback when no zone file is given."""
    pts = np.stack([_column_values(records, "x"),
                    _column_values(records, "y")], axis=1)
    k = min(k, len(np.unique(pts, axis=0)))
    rng = np.random.default_rng(seed)
    centroids = pts[rng.choice(len(pts), size=k, replace=False)].copy()
    # de-duplicate initial picks so no two zones collapse
    centroids = np.unique(centroids, axis=0)
    while len(centroids) < k:
        extra = pts[rng.choice(len(pts))] + rng.normal(0, 1e-3, size=2)
        centroids = np.vstack([centroids, extra])
    for _ in range(iters):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = pts[mask].mean(axis=0)
    order = np.lexsort((centroids[:, 1], centroids[:, 0]))
    return ZonePartition(centroids[order])


def load_zones(path) -> ZonePartition:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("zone", "cx", "cy"):
            if name not in (reader.fieldnames or []):
                raise SchemaError(f"zone file missing column {name!r}")
        for row in reader:
            rows.append((int(row["zone"]), float(row["cx"]), float(row["cy"])))
    rows.sort()
    ids = [r[0] for r in rows]
    if ids != list(range(len(rows))):
        raise SchemaError("zone ids must be 0..K-1 and unique")
    return ZonePartition(np.asarray([(cx, cy) for _, cx, cy in rows]))


def save_zones(zones: ZonePartition, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["zone", "cx", "cy"])
        for i, (cx, cy) in enumerate(zones.centroids):
            writer.writerow([i, repr(float(cx)), repr(float(cy))])


# ---------------------------------------------------------------------------
# Surrogate dataset for desk-scale testing

SURROGATE_INCIDENT_COUNT = 12
WINTER_INCIDENT = 1
WINTER_MONTHS = (11, 12, 1, 2)
WINTER_SHARE = 0.8

# Uneven incident frequencies; code 1 is the winter-linked category,
# code 2 is summer-linked and code 3 autumn-linked (the real data couples
# several incident types to seasons, e.g. chimney fires vs wildfires).
_INCIDENT_WEIGHTS = np.asarray(
    [25, 30, 14, 10, 8, 7, 6, 5, 4, 3, 3, 2], dtype=np.float64)
SUMMER_INCIDENT = 2
SUMMER_MONTHS = (6, 7, 8)
SUMMER_SHARE = 0.7
AUTUMN_INCIDENT = 3
AUTUMN_MONTHS = (9, 10)
AUTUMN_SHARE = 0.6

_METRO_CENTER = (570_000.0, 6_275_000.0)
_METRO_STD = (6_000.0, 5_000.0)
_BBOX = (492_000.0, 624_000.0, 6_183_000.0, 6_313_000.0)


def surrogate_dataset(seed: int, n: int) -> list[InterventionRecord]:
    """Deterministic synthetic dataset with the qualitative traits of the
    real one: one dominant metropolitan cluster over a diffuse background,
    heavy-tailed durations, and one winter-concentrated incident category."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)

    probs = _INCIDENT_WEIGHTS / _INCIDENT_WEIGHTS.sum()
    incident = rng.choice(np.arange(1, SURROGATE_INCIDENT_COUNT + 1),
                          size=n, p=probs)

    month = rng.integers(1, 13, size=n)
    seasonal = ((WINTER_INCIDENT, WINTER_MONTHS, WINTER_SHARE),
                (SUMMER_INCIDENT, SUMMER_MONTHS, SUMMER_SHARE),
                (AUTUMN_INCIDENT, AUTUMN_MONTHS, AUTUMN_SHARE))
    for code, months, share in seasonal:
        mask = incident == code
        k = int(mask.sum())
        if not k:
            continue
        in_season = rng.random(k) < share
        season_pick = rng.choice(np.asarray(months), size=k)
        other_pick = rng.choice(
            np.asarray([m for m in range(1, 13) if m not in months]), size=k)
        month[mask] = np.where(in_season, season_pick, other_pick)

    day = np.minimum((month - 1) * 30 + rng.integers(0, 30, size=n), 364)

    peak = np.where(rng.random(n) < 0.5, 10.0, 18.0)
    hour = np.clip(np.rint(rng.normal(peak, 3.0)), 0, 23).astype(int)

    tail = rng.random(n) < 0.15
    mu = np.where(tail, np.log(200.0), np.log(60.0))
    sigma = np.where(tail, 0.7, 0.5)
    duration = np.maximum(11, np.rint(np.exp(rng.normal(mu, sigma)))).astype(int)

    metro = rng.random(n) < 0.7
    x = np.where(metro,
                 rng.normal(_METRO_CENTER[0], _METRO_STD[0], size=n),
                 rng.uniform(_BBOX[0], _BBOX[1], size=n))
    y = np.where(metro,
                 rng.normal(_METRO_CENTER[1], _METRO_STD[1], size=n),
                 rng.uniform(_BBOX[2], _BBOX[3], size=n))
    x = np.clip(x, _BBOX[0], _BBOX[1])
    y = np.clip(y, _BBOX[2], _BBOX[3])

    return [InterventionRecord(float(x[i]), float(y[i]), int(month[i]),
                               int(day[i]), int(hour[i]), int(duration[i]),
                               int(incident[i]))
            for i in range(n)]
