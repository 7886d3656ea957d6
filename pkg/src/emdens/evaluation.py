"""Images and tables derived from an embedding and its clustering."""
import colorsys
import csv
import json
import math
from pathlib import Path

import numpy as np

from .data_io import MultiplexImage, write_pgm, write_ppm


def _to_byte(v):
    # round half up; v already in [0, 1]
    return np.floor(np.asarray(v, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def pseudo_rgb(z, height, width):
    """Render a 3-D embedding as an H x W x 3 byte image, one latent axis per channel."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 3:
        raise ValueError("pseudo-RGB needs an (N, 3) embedding")
    if z.shape[0] != height * width:
        raise ValueError(f"{z.shape[0]} rows cannot fill a {height}x{width} image")
    if np.any(z < 0) or np.any(z > 1):
        raise ValueError("embedding values must lie in [0, 1]")
    return _to_byte(z).reshape(height, width, 3)


def palette(k):
    """``k`` colours with evenly spaced hues at full saturation and value."""
    cols = [colorsys.hsv_to_rgb(i / k, 1.0, 1.0) for i in range(k)]
    return _to_byte(np.array(cols).reshape(k, 3))


def cluster_map(labels, height, width, k=None):
    """Colour image and raw-label image for a clustering.

    Returns
    -------
    rgb : ndarray, (H, W, 3) uint8
    label_img : ndarray, (H, W) uint8
        Raw label ids; only representable for ``k <= 255``.
    """
    labels = np.asarray(labels)
    if labels.size != height * width:
        raise ValueError(f"{labels.size} labels cannot fill a {height}x{width} image")
    if k is None:
        k = int(labels.max()) + 1 if labels.size else 1
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError("labels must lie in [0, k)")
    if k > 255:
        raise ValueError(f"k = {k} does not fit an 8-bit label image")
    rgb = palette(k)[labels].reshape(height, width, 3)
    return rgb, labels.astype(np.uint8).reshape(height, width)


def write_cluster_map(labels, height, width, rgb_path, pgm_path, k=None):
    rgb, lab = cluster_map(labels, height, width, k)
    write_ppm(rgb, rgb_path)
    write_pgm(lab, pgm_path)


def phi_coefficient(a, b):
    """Pearson correlation of two boolean vectors; NaN if either is constant."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    n = a.size
    n11 = np.count_nonzero(a & b)
    n1_, n_1 = np.count_nonzero(a), np.count_nonzero(b)
    denom = float(n1_) * (n - n1_) * n_1 * (n - n_1)
    if denom == 0:
        return float("nan")
    return (n * n11 - n1_ * n_1) / math.sqrt(denom)


def correlate_maps(labels, k, img, threshold=0.0):
    """Phi correlation of every cluster mask with every binarised channel.

    A channel pixel counts as present when its value exceeds ``threshold``.
    Undefined entries (constant mask or channel) are NaN.

    Returns
    -------
    ndarray, shape (k, D)
    """
    labels = np.asarray(labels)
    data = img.data if isinstance(img, MultiplexImage) else np.asarray(img, dtype=np.float64)
    if labels.size != data.shape[0]:
        raise ValueError("labels and image differ in pixel count")
    present = data > threshold
    out = np.full((k, data.shape[1]), np.nan)
    for c in range(k):
        mask = labels == c
        for j in range(data.shape[1]):
            out[c, j] = phi_coefficient(mask, present[:, j])
    return out


def write_correlation_csv(corr, path, channel_names=None):
    k, d = corr.shape
    names = channel_names or [f"ch{j}" for j in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster"] + list(names))
        for c in range(k):
            w.writerow([c] + ["" if np.isnan(v) else repr(float(v)) for v in corr[c]])


# -- reports -----------------------------------------------------------------------

RUNTIME_STAGES = ("embedding", "density_estimation", "outlier_detection", "total")
REPORT_KEYS = (
    "dataset", "n_pixels", "n_channels", "k", "homogeneous", "k_estimate",
    "diagnostics", "silhouette", "ssd_curve", "k_inflection", "runtimes",
)


class ReportError(ValueError):
    pass


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def build_report(artifacts):
    """Assemble the per-dataset summary from pipeline artifacts.

    ``artifacts`` must hold at least ``n_pixels``, ``n_channels``,
    ``k_estimate`` (dict), ``diagnostics`` (dict) and ``runtimes`` with every
    stage in :data:`RUNTIME_STAGES`.
    """
    if not artifacts:
        raise ReportError("nothing to report: the pipeline produced no artifacts")
    missing = [k for k in ("n_pixels", "n_channels", "k_estimate", "diagnostics", "runtimes")
               if k not in artifacts]
    if missing:
        raise ReportError(f"pipeline artifacts lack {', '.join(missing)}")
    lacking = [s for s in RUNTIME_STAGES if s not in artifacts["runtimes"]]
    if lacking:
        raise ReportError(f"runtimes lack stages {', '.join(lacking)}")
    est = artifacts["k_estimate"]
    report = {
        "dataset": artifacts.get("dataset"),
        "n_pixels": artifacts["n_pixels"],
        "n_channels": artifacts["n_channels"],
        "k": est.get("k"),
        "homogeneous": est.get("homogeneous"),
        "k_estimate": est,
        "diagnostics": artifacts["diagnostics"],
        "silhouette": artifacts.get("silhouette"),
        "ssd_curve": artifacts.get("ssd_curve"),
        "k_inflection": artifacts.get("k_inflection"),
        "runtimes": artifacts["runtimes"],
    }
    return _clean(report)


def write_report(report, outdir, stem="report"):
    """Write ``<stem>.json`` and a flat ``<stem>.csv`` with fixed key order."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ordered = {k: report.get(k) for k in REPORT_KEYS}
    json_path = outdir / f"{stem}.json"
    text = json.dumps(ordered, indent=1) + "\n"
    json_path.write_text(text)

    rows = []
    for key in ("dataset", "n_pixels", "n_channels", "k", "homogeneous", "k_inflection"):
        rows.append((key, ordered[key]))
    for sect in ("diagnostics", "silhouette", "runtimes"):
        for key, val in (ordered[sect] or {}).items():
            rows.append((f"{sect}.{key}", val))
    with open(outdir / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field", "value"])
        for key, val in rows:
            w.writerow([key, "" if val is None else (repr(val) if isinstance(val, float) else val)])
    return json_path


def read_report(path):
    with open(path) as fh:
        return json.load(fh)
