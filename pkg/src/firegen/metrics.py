"""Distributional fidelity metrics between a real and a synthetic dataset.

Covers 1-D and aggregate Wasserstein, RBF-kernel MMD (unbiased), the
kNN-sphere precision/recall/density/coverage family, Jensen-Shannon
divergence on a x100 scale, per-bin min/max variation percentages,
per-feature marginal statistics and categorical co-occurrence matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .data_model import (CANONICAL_COLUMNS, DatasetSchema,
                         InterventionRecord, encode)

DEFAULT_PRDC_K = 5
DEFAULT_MMD_CAP = 5000
DEFAULT_PRDC_CAP = 10_000
DEFAULT_DURATION_BIN = 10  # minutes


def _values(records, name):
    return np.asarray([getattr(r, name) for r in records], dtype=np.float64)


# ---------------------------------------------------------------------------
# Wasserstein


def wasserstein_1d(a, b) -> float:
    """Exact 1-D W1 between empirical samples."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample")
    if len(a) == len(b):
        return float(np.abs(a - b).mean())
    # quantile-function integral via CDF differences over merged breakpoints
    vals = np.sort(np.concatenate([a, b]))
    deltas = np.diff(vals)
    fa = np.searchsorted(a, vals[:-1], side="right") / len(a)
    fb = np.searchsorted(b, vals[:-1], side="right") / len(b)
    return float(np.sum(np.abs(fa - fb) * deltas))


AGGREGATE_FEATURES = ("x", "y", "month", "day", "hour", "duration")


def wasserstein_aggregate(real: list[InterventionRecord],
                          fake: list[InterventionRecord],
                          include_categorical: bool = False
                          ) -> tuple[float, dict[str, float]]:
    """Mean of per-feature W1 over min-max-normalized features.

    Normalization uses the pooled range of both datasets; zero-range
    features contribute 0.  Categorical codes are excluded unless
    `include_categorical` (no natural metric on codes).
    """
    features = list(AGGREGATE_FEATURES)
    if include_categorical:
        features.append("incident")
    per_feature = {}
    for name in features:
        va, vb = _values(real, name), _values(fake, name)
        lo = min(va.min(), vb.min())
        hi = max(va.max(), vb.max())
        if hi == lo:
            per_feature[name] = 0.0
        else:
            per_feature[name] = wasserstein_1d((va - lo) / (hi - lo),
                                               (vb - lo) / (hi - lo))
    mean = float(np.mean(list(per_feature.values())))
    return mean, per_feature


# ---------------------------------------------------------------------------
# MMD


def _subsample(x: np.ndarray, cap: int, rng) -> np.ndarray:
    if cap and len(x) > cap:
        return x[rng.choice(len(x), size=cap, replace=False)]
    return x


def median_bandwidth(pool: np.ndarray, cap: int = 2048,
                     seed: int = 0) -> float:
    """Median pairwise Euclidean distance over (a subsample of) the pool."""
    rng = np.random.default_rng(seed)
    pool = _subsample(np.asarray(pool, dtype=np.float64), cap, rng)
    d = cdist(pool, pool)
    med = float(np.median(d[np.triu_indices(len(pool), k=1)]))
    return med if med > 0 else 1.0


def mmd_rbf(x: np.ndarray, y: np.ndarray, bandwidth: float | None = None,
            cap: int = DEFAULT_MMD_CAP, seed: int = 0) -> float:
    """Unbiased squared-MMD estimate with an RBF kernel.

    Bandwidth defaults to the median pairwise distance of the pooled
    (subsampled) rows.  May be slightly negative by construction.
    """
    rng = np.random.default_rng(seed)
    x = _subsample(np.asarray(x, dtype=np.float64), cap, rng)
    y = _subsample(np.asarray(y, dtype=np.float64), cap, rng)
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least 2 rows per side")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([x, y]), seed=seed)
    g = 0.5 / bandwidth**2
    kxx = np.exp(-g * cdist(x, x, "sqeuclidean"))
    a = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    del kxx
    kyy = np.exp(-g * cdist(y, y, "sqeuclidean"))
    b = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    del kyy
    kxy = np.exp(-g * cdist(x, y, "sqeuclidean"))
    c = kxy.mean()
    return float(a + b - 2.0 * c)


def mmd_permutation_null(x: np.ndarray, y: np.ndarray,
                         bandwidth: float | None = None, n_perm: int = 200,
                         cap: int = 500, seed: int = 0) -> np.ndarray:
    """Permutation-null samples of the unbiased MMD estimator (labels of
    the pooled rows reshuffled)."""
    rng = np.random.default_rng(seed)
    x = _subsample(np.asarray(x, dtype=np.float64), cap, rng)
    y = _subsample(np.asarray(y, dtype=np.float64), cap, rng)
    pool = np.vstack([x, y])
    if bandwidth is None:
        bandwidth = median_bandwidth(pool, seed=seed)
    g = 0.5 / bandwidth**2
    k = np.exp(-g * cdist(pool, pool, "sqeuclidean"))
    m = len(x)
    total = len(pool)
    out = np.empty(n_perm)
    for i in range(n_perm):
        perm = rng.permutation(total)
        ix, iy = perm[:m], perm[m:]
        kxx = k[np.ix_(ix, ix)]
        kyy = k[np.ix_(iy, iy)]
        kxy = k[np.ix_(ix, iy)]
        a = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        b = (kyy.sum() - np.trace(kyy)) / (len(iy) * (len(iy) - 1))
        out[i] = a + b - 2.0 * kxy.mean()
    return out


# ---------------------------------------------------------------------------
# Precision / recall / density / coverage


def prdc(real: np.ndarray, fake: np.ndarray, k: int = DEFAULT_PRDC_K,
         cap: int = DEFAULT_PRDC_CAP, seed: int = 0
         ) -> tuple[float, float, float, float]:
    """kNN-sphere fidelity/diversity metrics in encoded space.

    Sphere radius is each point's k-th nearest-neighbor distance within
    its own set.
    """
    rng = np.random.default_rng(seed)
    real = _subsample(np.asarray(real, dtype=np.float64), cap, rng)
    fake = _subsample(np.asarray(fake, dtype=np.float64), cap, rng)
    if k < 1 or k >= len(real) or k >= len(fake):
        raise ValueError(f"k={k} must satisfy 0 < k < rows on both sides")

    def knn_radii(pts):
        d = cdist(pts, pts)
        return np.sort(d, axis=1)[:, k]  # column 0 is the self-distance

    radii_real = knn_radii(real)
    radii_fake = knn_radii(fake)
    d_rf = cdist(real, fake)

    inside_real = d_rf < radii_real[:, None]
    precision = float(inside_real.any(axis=0).mean())
    recall = float((d_rf < radii_fake[None, :]).any(axis=1).mean())
    density = float(inside_real.sum(axis=0).mean() / k)
    coverage = float((d_rf.min(axis=1) < radii_real).mean())
    return precision, recall, density, coverage


# ---------------------------------------------------------------------------
# Histogram metrics


def jsd_percent(real_counts, fake_counts) -> float:
    """Jensen-Shannon divergence in bits between normalized histograms,
    on a x100 scale."""
    p = np.asarray(real_counts, dtype=np.float64)
    q = np.asarray(fake_counts, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histogram bin sets differ")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("empty histogram")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 100.0 * 0.5 * (kl(p, m) + kl(q, m))


def variation_percent(real_counts, fake_counts) -> tuple[float, float]:
    """Min and max per-bin variation 100*|fake-real|/real over bins with
    nonzero real count."""
    p = np.asarray(real_counts, dtype=np.float64)
    q = np.asarray(fake_counts, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histogram bin sets differ")
    mask = p > 0
    if not mask.any():
        raise ValueError("all real bins are zero")
    v = 100.0 * np.abs(q[mask] - p[mask]) / p[mask]
    return float(v.min()), float(v.max())


def marginal_stats(records: list[InterventionRecord],
                   schema: DatasetSchema | None = None
                   ) -> dict[str, tuple[float, float, float, float]]:
    """Per-feature population (mean, std, min, max); categorical codes are
    treated as integers."""
    if not records:
        raise ValueError("empty record set")
    out = {}
    for name in CANONICAL_COLUMNS:
        v = _values(records, name)
        out[name] = (float(v.mean()), float(v.std()),
                     float(v.min()), float(v.max()))
    return out


def cooccurrence(records: list[InterventionRecord], row_feature: str,
                 col_feature: str,
                 row_values: list[int] | None = None,
                 col_values: list[int] | None = None
                 ) -> tuple[np.ndarray, list[int], list[int]]:
    """Joint count matrix of two integer-coded features."""
    rv = _values(records, row_feature).astype(int)
    cv = _values(records, col_feature).astype(int)
    if row_values is None:
        row_values = sorted(set(rv))
    if col_values is None:
        col_values = sorted(set(cv))
    ri = {v: i for i, v in enumerate(row_values)}
    ci = {v: i for i, v in enumerate(col_values)}
    mat = np.zeros((len(row_values), len(col_values)), dtype=np.int64)
    for r, c in zip(rv, cv):
        if r in ri and c in ci:
            mat[ri[r], ci[c]] += 1
    return mat, list(row_values), list(col_values)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


HISTOGRAM_FEATURES = ("month", "day", "hour", "duration", "incident")


def histogram_pair(real: list[InterventionRecord],
                   fake: list[InterventionRecord], feature: str,
                   duration_bin: int = DEFAULT_DURATION_BIN,
                   n_zones: int | None = None
                   ) -> tuple[np.ndarray, np.ndarray, list]:
    """Aligned (real, fake) count histograms for one feature.

    month/day/hour use their natural integer bins, duration uses
    fixed-width bins, incident uses the union of codes, area uses zone
    ids 0..n_zones-1.
    """
    vr, vf = _values(real, feature), _values(fake, feature)
    if feature == "month":
        bins = list(range(1, 13))
    elif feature == "day":
        bins = list(range(0, 365))
    elif feature == "hour":
        bins = list(range(0, 24))
    elif feature == "incident":
        bins = sorted(set(vr.astype(int)) | set(vf.astype(int)))
    elif feature == "area":
        if n_zones is None:
            n_zones = int(max(vr.max(), vf.max())) + 1
        bins = list(range(n_zones))
    elif feature == "duration":
        top = int(max(vr.max(), vf.max()) // duration_bin)
        bins = [b * duration_bin for b in range(top + 1)]
        vr = (vr // duration_bin) * duration_bin
        vf = (vf // duration_bin) * duration_bin
    else:
        raise ValueError(f"no histogram rule for feature {feature!r}")
    idx = {v: i for i, v in enumerate(bins)}
    hr = np.zeros(len(bins), dtype=np.int64)
    hf = np.zeros(len(bins), dtype=np.int64)
    for v in vr.astype(int):
        hr[idx[v]] += 1
    for v in vf.astype(int):
        hf[idx[v]] += 1
    return hr, hf, bins


# ---------------------------------------------------------------------------
# Full report


@dataclass
class FidelityReport:
    wasserstein_mean: float
    wasserstein_per_feature: dict[str, float]
    mmd: float
    precision: float
    recall: float
    density: float
    coverage: float
    jsd: dict[str, float]
    variation: dict[str, tuple[float, float]]
    marginal_stats_real: dict[str, tuple[float, float, float, float]]
    marginal_stats_fake: dict[str, tuple[float, float, float, float]]
    cooccurrence_real: np.ndarray
    cooccurrence_fake: np.ndarray
    cooccurrence_rows: list[int] = field(default_factory=list)
    cooccurrence_cols: list[int] = field(default_factory=list)
    area_counts_real: list[int] = field(default_factory=list)
    area_counts_fake: list[int] = field(default_factory=list)
    # feature -> {"bins": [...], "real": [...], "fake": [...]}
    histograms: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "wasserstein_mean": self.wasserstein_mean,
            "wasserstein_per_feature": self.wasserstein_per_feature,
            "mmd": self.mmd,
            "precision": self.precision,
            "recall": self.recall,
            "density": self.density,
            "coverage": self.coverage,
            "jsd": self.jsd,
            "variation": {k: list(v) for k, v in self.variation.items()},
            "marginal_stats_real": {k: list(v) for k, v
                                    in self.marginal_stats_real.items()},
            "marginal_stats_fake": {k: list(v) for k, v
                                    in self.marginal_stats_fake.items()},
            "cooccurrence_real": self.cooccurrence_real.tolist(),
            "cooccurrence_fake": self.cooccurrence_fake.tolist(),
            "cooccurrence_rows": self.cooccurrence_rows,
            "cooccurrence_cols": self.cooccurrence_cols,
            "area_counts_real": list(self.area_counts_real),
            "area_counts_fake": list(self.area_counts_fake),
            "histograms": self.histograms,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "FidelityReport":
        d = json.loads(Path(path).read_text())
        return cls(
            wasserstein_mean=d["wasserstein_mean"],
            wasserstein_per_feature=d["wasserstein_per_feature"],
            mmd=d["mmd"], precision=d["precision"], recall=d["recall"],
            density=d["density"], coverage=d["coverage"], jsd=d["jsd"],
            variation={k: tuple(v) for k, v in d["variation"].items()},
            marginal_stats_real={k: tuple(v) for k, v
                                 in d["marginal_stats_real"].items()},
            marginal_stats_fake={k: tuple(v) for k, v
                                 in d["marginal_stats_fake"].items()},
            cooccurrence_real=np.asarray(d["cooccurrence_real"]),
            cooccurrence_fake=np.asarray(d["cooccurrence_fake"]),
            cooccurrence_rows=d["cooccurrence_rows"],
            cooccurrence_cols=d["cooccurrence_cols"],
            area_counts_real=d["area_counts_real"],
            area_counts_fake=d["area_counts_fake"],
            histograms=d.get("histograms", {}))


def compute_report(real: list[InterventionRecord],
                   fake: list[InterventionRecord], schema: DatasetSchema,
                   k: int = DEFAULT_PRDC_K, mmd_cap: int = DEFAULT_MMD_CAP,
                   prdc_cap: int = DEFAULT_PRDC_CAP,
                   duration_bin: int = DEFAULT_DURATION_BIN,
                   n_zones: int | None = None,
                   seed: int = 0) -> FidelityReport:
    if not real or not fake:
        raise ValueError("both datasets must be nonempty")
    w_mean, w_feat = wasserstein_aggregate(real, fake)
    enc_real = encode(real, schema)
    enc_fake = encode(fake, schema)
    mmd = mmd_rbf(enc_real, enc_fake, cap=mmd_cap, seed=seed)
    p, r, d, c = prdc(enc_real, enc_fake, k=k, cap=prdc_cap, seed=seed)

    features = list(HISTOGRAM_FEATURES)
    has_area = all(rec.area is not None for rec in real) \
        and all(rec.area is not None for rec in fake)
    if has_area:
        features.append("area")
    jsd = {}
    variation = {}
    histograms: dict[str, dict] = {}
    area_real: list[int] = []
    area_fake: list[int] = []
    for feat in features:
        hr, hf, bins = histogram_pair(real, fake, feat,
                                      duration_bin=duration_bin,
                                      n_zones=n_zones)
        jsd[feat] = jsd_percent(hr, hf)
        variation[feat] = variation_percent(hr, hf)
        histograms[feat] = {"bins": [int(b) for b in bins],
                            "real": hr.tolist(), "fake": hf.tolist()}
        if feat == "area":
            area_real = hr.tolist()
            area_fake = hf.tolist()

    months = list(range(1, 13))
    codes = sorted({rec.incident for rec in real}
                   | {rec.incident for rec in fake})
    co_real, _, _ = cooccurrence(real, "incident", "month", codes, months)
    co_fake, _, _ = cooccurrence(fake, "incident", "month", codes, months)

    return FidelityReport(
        wasserstein_mean=w_mean, wasserstein_per_feature=w_feat, mmd=mmd,
        precision=p, recall=r, density=d, coverage=c,
        jsd=jsd, variation=variation,
        marginal_stats_real=marginal_stats(real),
        marginal_stats_fake=marginal_stats(fake),
        cooccurrence_real=co_real, cooccurrence_fake=co_fake,
        cooccurrence_rows=codes, cooccurrence_cols=months,
        area_counts_real=area_real, area_counts_fake=area_fake,
        histograms=histograms)
