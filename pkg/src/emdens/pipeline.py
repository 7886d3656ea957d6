"""End-to-end runs: train once, then embed, estimate k, cluster and report per dataset."""
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .clustering import inflection_k, kmeans, silhouette, ssd_sweep
from .data_io import MultiplexImage, ensure_dir, normalize, save_matrix, write_ppm
from .density import dense_region_check, estimate_k, histogram
from .evaluation import (
    build_report, correlate_maps, pseudo_rgb, write_cluster_map,
    write_correlation_csv, write_report,
)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    layer_sizes: tuple = (15, 10, 3)
    alpha: float = 1e-4
    beta: float = 100.0
    gamma: float = 0.5
    max_epochs: int = 10000
    train_subsample: int | None = None
    bins: int = 10
    percentile_floor: float = 20.0
    k_max: int = 30
    tolerance: float = 0.005
    silhouette_subsample: int = 10000
    ssd_subsample: int = 50000
    kmeans_restarts: int = 5
    kmeans_max_iters: int = 300
    binarize_threshold: float = 0.0
    seed: int = 0

    @property
    def hyper(self):
        return ae.SparseAeHyper(self.alpha, self.beta, self.gamma, self.max_epochs)


def train_model(img, config):
    """Fit normalisation on ``img`` and train the stacked autoencoder on it.

    With ``config.train_subsample`` set, a seeded random subset of pixels is
    used for training; the normalisation always uses every pixel.
    """
    scaled, spec = normalize(img)
    x = scaled.data
    if config.train_subsample and config.train_subsample < x.shape[0]:
        rng = np.random.default_rng(config.seed)
        x = x[np.sort(rng.choice(x.shape[0], config.train_subsample, replace=False))]
    return ae.train_stacked(x, config.layer_sizes, config.hyper, config.seed, spec)


def embed(model, img):
    """Scale ``img`` with the model's stored ranges and encode it."""
    if model.normalization is not None:
        x = model.normalization.apply(img.data)
    else:
        x = img.data
    return ae.encode(model, x)


@dataclass
class PipelineResult:
    z: np.ndarray
    k_estimate: object
    diagnostics: object
    clusters: object = None
    silhouette: object = None
    ssd_curve: object = None
    k_inflection: int | None = None
    runtimes: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.k_estimate.k


def estimate(model, img, config):
    """Embedding plus density estimate of k, timed per stage."""
    t0 = time.perf_counter()
    z = embed(model, img)
    t1 = time.perf_counter()
    hist = histogram(z, config.bins)
    t2 = time.perf_counter()
    est = estimate_k(hist, config.percentile_floor)
    t3 = time.perf_counter()
    runtimes = {
        "embedding": t1 - t0,
        "density_estimation": t2 - t1,
        "outlier_detection": t3 - t2,
        "total": t3 - t0,
    }
    return z, hist, est, runtimes


def run_pipeline(model, img, config, with_ssd=False):
    z, hist, est, runtimes = estimate(model, img, config)
    res = PipelineResult(z, est, dense_region_check(hist), runtimes=runtimes)
    if est.homogeneous:
        log.warning("embedding looks homogeneous; clustering skipped")
    elif est.k > z.shape[0]:
        log.warning("estimated k = %d exceeds the pixel count; clustering skipped", est.k)
    else:
        t0 = time.perf_counter()
        res.clusters = kmeans(
            z, est.k, config.kmeans_max_iters, config.kmeans_restarts, config.seed
        )
        runtimes["clustering"] = time.perf_counter() - t0
        if est.k >= 2:
            res.silhouette = silhouette(
                z, res.clusters.labels, config.silhouette_subsample, config.seed
            )
    if with_ssd:
        t0 = time.perf_counter()
        res.ssd_curve = ssd_sweep(
            z, config.k_max, config.ssd_subsample, config.seed,
            config.kmeans_restarts, config.kmeans_max_iters,
        )
        res.k_inflection = inflection_k(res.ssd_curve, config.tolerance)
        runtimes["ssd_inflection"] = time.perf_counter() - t0
    return res


def artifacts_of(res, img, dataset=None):
    out = {
        "dataset": dataset,
        "n_pixels": img.n_pixels,
        "n_channels": img.channels,
        "k_estimate": res.k_estimate.to_dict(),
        "diagnostics": res.diagnostics.to_dict(),
        "runtimes": dict(res.runtimes),
    }
    if res.silhouette is not None:
        out["silhouette"] = res.silhouette.to_dict()
    if res.ssd_curve is not None:
        out["ssd_curve"] = {
            "k": [int(k) for k in res.ssd_curve.ks],
            "s": [float(s) for s in res.ssd_curve.scaled],
            "subsample_size": res.ssd_curve.subsample_size,
        }
        out["k_inflection"] = res.k_inflection
    return out


def write_outputs(res, img, outdir, dataset="dataset"):
    """Write every per-dataset artifact into ``outdir`` and return the report."""
    outdir = ensure_dir(outdir)
    write_ppm(pseudo_rgb(res.z, img.height, img.width), outdir / "embedding.ppm")
    save_matrix(MultiplexImage(img.height, img.width, res.z), outdir / "embedding.csv")
    if res.clusters is not None:
        k = res.clusters.k
        write_cluster_map(
            res.clusters.labels, img.height, img.width,
            outdir / "clusters.ppm", outdir / "clusters.pgm", k,
        )
        write_correlation_csv(
            correlate_maps(res.clusters.labels, k, img), outdir / "correlation.csv",
            img.channel_names,
        )
    if res.ssd_curve is not None:
        res.ssd_curve.to_csv(outdir / "ssd_curve.csv")
    res.k_estimate.to_json(outdir / "k_estimate.json")
    report = build_report(artifacts_of(res, img, dataset))
    write_report(report, outdir)
    return report


def worker_count(n_jobs):
    cap = os.environ.get("EMDENS_THREADS")
    try:
        cap = int(cap) if cap else os.cpu_count() or 1
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def run_batch(model, inputs, loader, config, outdir, with_ssd=False):
    """Run the pipeline on every input with one shared model.

    Each dataset writes into ``outdir/<input stem>``. Results come back in
    input order regardless of completion order.
    """
    outdir = Path(outdir)

    def one(path):
        img = loader(path)
        res = run_pipeline(model, img, config, with_ssd)
        return write_outputs(res, img, outdir / Path(path).stem, Path(path).stem)

    with ThreadPoolExecutor(max_workers=worker_count(len(inputs))) as pool:
        return list(pool.map(one, inputs))


def benchmark(model, img, config, training_time=None, n_datasets=1):
    """Time the density path against the SSD sweep + elbow on the same data."""
    z, _, est, runtimes = estimate(model, img, config)
    t0 = time.perf_counter()
    curve = ssd_sweep(
        z, config.k_max, config.ssd_subsample, config.seed,
        config.kmeans_restarts, config.kmeans_max_iters,
    )
    k_infl = inflection_k(curve, config.tolerance)
    t_ssd = time.perf_counter() - t0
    out = {
        "n_pixels": img.n_pixels,
        "k_max": config.k_max,
        "density": runtimes,
        "ssd_inflection": t_ssd,
        "speedup": t_ssd / runtimes["total"] if runtimes["total"] > 0 else float("inf"),
        "k_density": est.k,
        "k_inflection": k_infl,
    }
    if training_time is not None:
        out["training"] = training_time
        out["training_amortized"] = training_time / max(n_datasets, 1)
        out["total_inc_training"] = runtimes["total"] + out["training_amortized"]
    return out
