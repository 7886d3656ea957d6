"""k-means on the embedding, silhouette summaries, and the SSD-elbow baseline."""
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    total_ssd: float
    iterations: int
    seed: int
    ssd_trace: list = field(default_factory=list, repr=False)

    @property
    def k(self):
        return self.centroids.shape[0]


def _sq_dists(z, c):
    # ||z||^2 - 2 z.c + ||c||^2, floored at zero against cancellation
    d = (z * z).sum(1)[:, None] - 2.0 * z @ c.T + (c * c).sum(1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _kmeans_pp(z, k, rng):
    n = z.shape[0]
    centers = np.empty((k, z.shape[1]))
    centers[0] = z[rng.integers(n)]
    closest = ((z - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centre
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total), side="right"))
            idx = min(idx, n - 1)
        centers[j] = z[idx]
        np.minimum(closest, ((z - centers[j]) ** 2).sum(1), out=closest)
    return centers


def _assign(z, centers):
    d = _sq_dists(z, centers)
    labels = d.argmin(1)
    return labels, d[np.arange(z.shape[0]), labels]


def _update(z, labels, k, point_d):
    """Centroid means; an empty cluster takes the point farthest from its centre."""
    counts = np.bincount(labels, minlength=k)
    labels = labels.copy()
    point_d = point_d.copy()
    for j in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        far = np.flatnonzero(donors)[np.argmax(point_d[donors])]
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        point_d[far] = 0.0
    centers = np.zeros((k, z.shape[1]))
    np.add.at(centers, labels, z)
    centers /= counts[:, None]
    return centers, labels


def _ssd(z, labels, centers):
    return float(((z - centers[labels]) ** 2).sum())


def _lloyd(z, k, rng, max_iters):
    centers = _kmeans_pp(z, k, rng)
    labels, point_d = _assign(z, centers)
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        centers, labels = _update(z, labels, k, point_d)
        trace.append(_ssd(z, labels, centers))
        new_labels, new_d = _assign(z, centers)
        if np.array_equal(new_labels, labels):
            break
        if it < max_iters:
            labels, point_d = new_labels, new_d
    return labels, centers, trace, it


def kmeans(z, k, max_iters=300, restarts=5, seed=0):
    """k-means++ seeded Lloyd iterations; the best of ``restarts`` runs by SSD.

    Restart ``r`` draws from ``default_rng([seed, r])`` so each run is
    reproducible on its own. Ties in SSD go to the lowest restart index.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if k > n:
        raise ClusteringError(f"k = {k} exceeds the number of points ({n})")

    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, centers, trace, it = _lloyd(z, k, rng, max_iters)
        ssd = _ssd(z, labels, centers)
        if best is None or ssd < best.total_ssd:
            best = ClusterResult(labels, centers, ssd, it, seed, trace)
    return best


# -- silhouette -----------------------------------------------------------------


@dataclass
class SilhouetteStats:
    median: float
    mad: float
    mean: float
    stderr: float
    sample_size: int

    def to_dict(self):
        return {
            "median": self.median,
            "mad": self.mad,
            "mean": self.mean,
            "stderr": self.stderr,
            "sample_size": self.sample_size,
        }


def silhouette_samples(z, labels, chunk=1024):
    """Per-point silhouette with Euclidean distances.

    A point alone in its cluster gets ``a = 0`` and therefore ``s = 1``.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    uniq, lab = np.unique(labels, return_inverse=True)
    k = uniq.size
    if k < 2:
        raise ClusteringError("silhouette needs at least two clusters")
    n = z.shape[0]
    counts = np.bincount(lab, minlength=k).astype(np.float64)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0

    s = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = np.sqrt(_sq_dists(z[start:stop], z))
        sums = d @ onehot  # distance totals per cluster
        own = lab[start:stop]
        rows = np.arange(stop - start)
        own_n = counts[own]
        a = np.where(own_n > 1, sums[rows, own] / np.maximum(own_n - 1, 1), 0.0)
        other = sums / counts
        other[rows, own] = np.inf
        b = other.min(1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            s_chunk = np.where(denom > 0, (b - a) / denom, 0.0)
        s_chunk[own_n == 1] = 1.0
        s[start:stop] = s_chunk
    return s


def silhouette(z, labels, subsample_size=10000, seed=0, max_tries=20):
    """Median +/- MAD and mean +/- standard error of the silhouette on a subsample.

    Every cluster must be represented in the subsample; it is redrawn (up to
    ``max_tries`` times) until that holds.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    k = np.unique(labels).size
    if k < 2:
        raise ClusteringError("silhouette is undefined for fewer than two clusters")
    n = z.shape[0]
    m = min(subsample_size, n)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        idx = np.sort(rng.choice(n, m, replace=False)) if m < n else np.arange(n)
        if np.unique(labels[idx]).size == k:
            break
    else:
        raise ClusteringError(
            f"no subsample of {m} points covered all {k} clusters in {max_tries} draws"
        )
    s = silhouette_samples(z[idx], labels[idx])
    med = float(np.median(s))
    return SilhouetteStats(
        median=med,
        mad=float(np.median(np.abs(s - med))),
        mean=float(s.mean()),
        stderr=float(s.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0,
        sample_size=m,
    )


# -- SSD elbow baseline ---------------------------------------------------------------


@dataclass
class SsdCurve:
    ks: np.ndarray
    ssd: np.ndarray  # unscaled totals
    subsample_size: int
    seed: int

    @property
    def scaled(self):
        top = self.ssd.max()
        return self.ssd / top if top > 0 else np.zeros_like(self.ssd)

    def increases(self, tol=1e-9):
        """k values where the scaled curve rose by more than ``tol``."""
        s = self.scaled
        return [int(self.ks[i + 1]) for i in np.flatnonzero(np.diff(s) > tol)]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("k,ssd,s\n")
            for k, raw, s in zip(self.ks, self.ssd, self.scaled):
                fh.write(f"{int(k)},{raw!r},{s!r}\n")


def ssd_sweep(z, k_max=30, subsample_size=50000, seed=0, restarts=5, max_iters=300):
    """Total within-cluster SSD of k-means for k = 1..k_max on one fixed subsample."""
    z = np.asarray(z, dtype=np.float64)
    if k_max < 3:
        raise ClusteringError("k_max must be >= 3")
    n = z.shape[0]
    m = min(subsample_size, n)
    rng = np.random.default_rng(seed)
    sub = z[np.sort(rng.choice(n, m, replace=False))] if m < n else z
    ks = np.arange(1, k_max + 1)
    ssd = np.array([
        kmeans(sub, int(k), max_iters=max_iters, restarts=restarts, seed=seed).total_ssd
        for k in ks
    ])
    curve = SsdCurve(ks, ssd, m, seed)
    bumps = curve.increases()
    if bumps:
        log.info("SSD curve rises at k = %s (k-means local optima)", bumps)
    return curve


def inflection_k(curve, tolerance=0.005, mode="tolerance"):
    """Elbow of the scaled SSD curve from its discrete second difference.

    ``mode="exact"`` returns the smallest k where the second difference is zero
    or changes sign between consecutive k; ``mode="tolerance"`` the smallest k
    where its magnitude is at most ``tolerance``. Returns None if nothing
    qualifies.
    """
    s = curve.scaled if isinstance(curve, SsdCurve) else np.asarray(curve, dtype=np.float64)
    ks = curve.ks if isinstance(curve, SsdCurve) else np.arange(1, s.size + 1)
    if s.size < 4:
        raise ClusteringError("need at least four points on the SSD curve")
    d2 = s[2:] - 2.0 * s[1:-1] + s[:-2]  # d2[i] belongs to ks[i + 1]
    if mode == "tolerance":
        hit = np.flatnonzero(np.abs(d2) <= tolerance)
        return int(ks[hit[0] + 1]) if hit.size else None
    if mode == "exact":
        for i in range(d2.size):
            if d2[i] == 0.0:
                return int(ks[i + 1])
            if i + 1 < d2.size and np.sign(d2[i]) != np.sign(d2[i + 1]) and d2[i + 1] != 0.0:
                return int(ks[i + 1])
        return None
    raise ValueError(f"unknown mode {mode!r}")
