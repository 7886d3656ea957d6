"""Cluster-number estimation from density outliers of a binned embedding.

The embedding lives in the unit cube, so a fixed grid of ``B`` bins per axis
covers every dataset the same way. Bins holding far more points than the bulk
of the grid (Tukey's upper fence over all bin counts, zeros included) are
taken as dense regions; the weakest of those are then discarded so a region
straddling several bins is not counted repeatedly.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BINS = 10
IQR_FACTOR = 1.5


class EmbeddingRangeError(ValueError):
    """An embedded coordinate fell outside [0, 1]."""


@dataclass
class DensityHistogram:
    bins: int
    dims: int
    counts: np.ndarray  # shape (bins,) * dims

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.bins,) * self.dims:
            raise ValueError(f"counts must have shape {(self.bins,) * self.dims}")
        if np.any(self.counts < 0):
            raise ValueError("bin counts must be non-negative")

    @property
    def n_points(self):
        return int(self.counts.sum())

    @property
    def flat(self):
        return self.counts.ravel()

    def to_csv(self, path):
        """Write one row per bin: axis indices then ``count``."""
        axes = "ijklmnop"[: self.dims]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(axes) + ["count"])
            for idx in np.ndindex(*self.counts.shape):
                writer.writerow(list(idx) + [int(self.counts[idx])])


def bin_index(z, bins=DEFAULT_BINS):
    """Grid cell of each point; 1.0 falls in the last bin.

    ``z`` may be a single point or an (N, d) array.
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(~np.isfinite(z)) or np.any(z < 0.0) or np.any(z > 1.0):
        raise EmbeddingRangeError("embedding coordinates must lie in [0, 1]")
    idx = np.minimum(np.floor(z * bins).astype(np.int64), bins - 1)
    # z * bins can round across an edge; settle against the edges c / bins themselves
    idx -= z < idx / bins
    idx += (idx < bins - 1) & (z >= (idx + 1) / bins)
    if idx.ndim == 1:
        return tuple(int(i) for i in idx)
    return idx


def histogram(z, bins=DEFAULT_BINS):
    """Count embedded points per grid cell."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("embedding must be an (N, d) array")
    dims = z.shape[1]
    if z.shape[0] == 0:
        return DensityHistogram(bins, dims, np.zeros((bins,) * dims, dtype=np.int64))
    idx = bin_index(z, bins)
    flat = np.ravel_multi_index(tuple(idx.T), (bins,) * dims)
    counts = np.bincount(flat, minlength=bins ** dims)
    return DensityHistogram(bins, dims, counts.reshape((bins,) * dims))


@dataclass
class KEstimate:
    k: int | None
    outlier_bins: list  # [(bin index tuple, count)] retained after the floor
    quartiles: tuple
    threshold: float
    homogeneous: bool
    floor_value: float = float("nan")
    candidate_bins: list = field(default_factory=list)  # all fence exceedances

    def to_dict(self):
        return {
            "k": self.k,
            "homogeneous": self.homogeneous,
            "threshold": self.threshold,
            "quartiles": list(self.quartiles),
            "floor_value": None if np.isnan(self.floor_value) else self.floor_value,
            "outlier_bins": [{"bin": list(b), "count": c} for b, c in self.outlier_bins],
            "n_candidates": len(self.candidate_bins),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def estimate_k(hist, percentile_floor=20.0):
    """Estimate the number of clusters from a density histogram.

    1. Q1 and Q3 of all bin counts, empty bins included (linear interpolation).
    2. Bins with ``count > Q3 + 1.5 * (Q3 - Q1)`` are dense-region candidates.
    3. Candidates whose count is below the ``percentile_floor``-th percentile
       of the candidates' own counts are dropped.
    4. ``k`` is the number of surviving bins.

    If no bin clears the fence the embedding is flagged homogeneous and ``k``
    is None.
    """
    counts = hist.flat
    q1, q3 = np.quantile(counts, [0.25, 0.75])
    threshold = float(q3 + IQR_FACTOR * (q3 - q1))
    shape = hist.counts.shape

    cand = np.flatnonzero(counts > threshold)
    candidates = [(tuple(int(i) for i in np.unravel_index(b, shape)), int(counts[b])) for b in cand]
    if cand.size == 0:
        return KEstimate(None, [], (float(q1), float(q3)), threshold, True)

    cand_counts = counts[cand]
    floor_value = float(np.percentile(cand_counts, percentile_floor))
    keep = cand[cand_counts >= floor_value]
    # strongest first, ties by bin order
    keep = keep[np.lexsort((keep, -counts[keep]))]
    retained = [(tuple(int(i) for i in np.unravel_index(b, shape)), int(counts[b])) for b in keep]
    return KEstimate(
        len(retained), retained, (float(q1), float(q3)), threshold, False,
        floor_value, candidates,
    )


@dataclass
class DensityDiagnostics:
    empty_fraction: float
    max_count: int
    median_count: float
    max_over_median: float
    skewness: float

    def to_dict(self):
        return {
            "empty_fraction": self.empty_fraction,
            "max_count": self.max_count,
            "median_count": self.median_count,
            "max_over_median": self.max_over_median,
            "skewness": self.skewness,
        }


def dense_region_check(hist):
    """Summaries that show whether the bin counts look like a sparse grid
    with a few dense cells (many empty bins, strong right skew)."""
    c = hist.flat.astype(np.float64)
    med = float(np.median(c))
    mx = float(c.max())
    if med > 0:
        ratio = mx / med
    else:
        ratio = float("inf") if mx > 0 else float("nan")
    sd = c.std()
    skew = float(np.mean((c - c.mean()) ** 3) / sd ** 3) if sd > 0 else 0.0
    return DensityDiagnostics(
        empty_fraction=float(np.mean(c == 0)),
        max_count=int(mx),
        median_count=med,
        max_over_median=ratio,
        skewness=skew,
    )
