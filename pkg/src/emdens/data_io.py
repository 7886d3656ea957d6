"""Reading, scaling and writing multiplex image data.

A multiplex image is stored as an N x D matrix (one row per pixel, row-major
over the H x W grid) together with a small JSON ``.meta`` header giving
``height``, ``width``, ``channels`` and optionally ``channel_names``. The
matrix itself is either a headerless CSV or raw little-endian float32.
"""
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class MultiplexImage:
    height: int
    width: int
    data: np.ndarray
    channel_names: list = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError("data must be a 2-D matrix")
        if self.data.shape[0] != self.height * self.width:
            raise DataError(
                f"dimension mismatch: {self.data.shape[0]} rows but "
                f"height*width = {self.height}*{self.width} = {self.height * self.width}"
            )
        bad = np.argwhere(~np.isfinite(self.data))
        if bad.size:
            row, col = bad[0]
            raise DataError(f"non-finite value at row {row}, column {col}")
        if self.channel_names is not None and len(self.channel_names) != self.channels:
            raise DataError("channel_names length differs from channel count")

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def n_pixels(self):
        return self.data.shape[0]

    def meta(self):
        out = {"height": self.height, "width": self.width, "channels": self.channels}
        if self.channel_names is not None:
            out["channel_names"] = list(self.channel_names)
        return out


@dataclass
class NormalizationSpec:
    """Per-channel min-max scaling learned from training data."""

    mins: np.ndarray
    maxs: np.ndarray
    method: str = "min-max"
    constant: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise ValueError("mins and maxs must be 1-D arrays of equal length")
        if np.any(self.mins > self.maxs):
            raise ValueError("min exceeds max for some channel")
        self.constant = self.mins == self.maxs

    @property
    def n_channels(self):
        return self.mins.size

    def apply(self, data):
        """Scale ``data`` into [0, 1]; values outside the stored range are clamped."""
        data = np.asarray(data, dtype=np.float64)
        if data.shape[-1] != self.n_channels:
            raise DataError(
                f"expected {self.n_channels} channels, got {data.shape[-1]}"
            )
        span = np.where(self.constant, 1.0, self.maxs - self.mins)
        out = (data - self.mins) / span
        out[..., self.constant] = 0.0
        return np.clip(out, 0.0, 1.0)

    def invert(self, scaled):
        scaled = np.asarray(scaled, dtype=np.float64)
        return self.mins + scaled * (self.maxs - self.mins)


def fit_normalization(data):
    data = np.asarray(data, dtype=np.float64)
    return NormalizationSpec(data.min(axis=0), data.max(axis=0))


def normalize(img, spec=None):
    """Min-max scale every channel of ``img`` to [0, 1].

    With ``spec=None`` the ranges are taken from ``img`` itself; pass a stored
    spec to scale unseen data exactly as the training data was.

    Returns
    -------
    (MultiplexImage, NormalizationSpec)
    """
    if spec is None:
        spec = fit_normalization(img.data)
    scaled = MultiplexImage(img.height, img.width, spec.apply(img.data), img.channel_names)
    return scaled, spec


# -- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class BlobSpec:
    n_clusters: int
    points_per_cluster: int
    channels: int
    mean_separation: float = 6.0
    noise_sigma: float = 1.0
    seed: int = 0
    max_tries: int = 1000

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.points_per_cluster < 1 or self.channels < 1:
            raise ValueError("points_per_cluster and channels must be >= 1")
        if self.mean_separation <= 0 or self.noise_sigma <= 0:
            raise ValueError("mean_separation and noise_sigma must be positive")


def _place_means(spec, rng):
    min_dist = spec.mean_separation * spec.noise_sigma
    # box wide enough that rejection sampling succeeds quickly in low dimension
    side = 2.0 * min_dist * max(1.0, spec.n_clusters ** (1.0 / spec.channels))
    offset = 4.0 * spec.noise_sigma
    means = []
    tries = 0
    while len(means) < spec.n_clusters:
        tries += 1
        if tries > spec.max_tries * spec.n_clusters:
            raise DataError(
                f"could not place {spec.n_clusters} means {min_dist:g} apart "
                f"after {tries - 1} draws"
            )
        cand = offset + rng.uniform(0.0, side, size=spec.channels)
        if all(np.linalg.norm(cand - m) >= min_dist for m in means):
            means.append(cand)
    return np.array(means)


def synth_blobs(spec):
    """Isotropic Gaussian clusters laid out as a square-ish image.

    Pixels are grouped by cluster in row-major order, so the cluster map of
    the generated image is a set of horizontal bands. Values are clipped at
    zero to keep intensities non-negative.

    Returns
    -------
    img : MultiplexImage
    labels : ndarray of int, shape (N,)
    """
    rng = np.random.default_rng(spec.seed)
    means = _place_means(spec, rng)
    n = spec.n_clusters * spec.points_per_cluster
    labels = np.repeat(np.arange(spec.n_clusters), spec.points_per_cluster)
    data = means[labels] + rng.normal(0.0, spec.noise_sigma, size=(n, spec.channels))
    np.clip(data, 0.0, None, out=data)
    height, width = _grid_shape(n)
    return MultiplexImage(height, width, data), labels


def _grid_shape(n):
    h = int(np.floor(np.sqrt(n)))
    while n % h:
        h -= 1
    return h, n // h


# -- matrix files --------------------------------------------------------------


def meta_path(path):
    path = Path(path)
    return path.with_suffix(".meta")


def _read_meta(path):
    mpath = meta_path(path)
    try:
        with open(mpath) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: malformed header ({exc})") from exc
    for key in ("height", "width", "channels"):
        if key not in meta:
            raise DataError(f"{mpath}: header lacks '{key}'")
    return meta


def _infer_format(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".f32", ".raw"):
        return "raw-f32"
    raise DataError(f"cannot infer format from suffix {suffix!r}")


def load_matrix(path, format=None):
    """Load a multiplex image from ``path`` plus its ``.meta`` sidecar.

    ``format`` is ``"csv"`` or ``"raw-f32"``; by default it is taken from the
    file suffix.
    """
    fmt = format or _infer_format(path)
    meta = _read_meta(path)
    h, w, c = int(meta["height"]), int(meta["width"]), int(meta["channels"])

    if fmt == "csv":
        try:
            data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        if data.size == 0:
            data = data.reshape(0, c)
    elif fmt == "raw-f32":
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % c:
            raise DataError(f"{path}: {raw.size} values is not a multiple of {c} channels")
        data = raw.reshape(-1, c).astype(np.float64)
    else:
        raise DataError(f"unknown format {fmt!r}")

    if data.shape[1] != c:
        raise DataError(f"{path}: {data.shape[1]} columns but header says {c} channels")
    return MultiplexImage(h, w, data, meta.get("channel_names"))


def save_matrix(img, path, format=None):
    """Write ``img`` in the layout :func:`load_matrix` reads.

    CSV values are written with 17 significant digits so they round-trip.
    """
    fmt = format or _infer_format(path)
    if fmt == "csv":
        np.savetxt(path, img.data, delimiter=",", fmt="%.17g")
    elif fmt == "raw-f32":
        img.data.astype("<f4").tofile(path)
    else:
        raise DataError(f"unknown format {fmt!r}")
    with open(meta_path(path), "w") as fh:
        json.dump(img.meta(), fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- Netpbm ------------------------------------------------------------------------


def _as_bytes(arr, ndim):
    arr = np.asarray(arr)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("pixel values must lie in 0..255")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def write_ppm(rgb, path):
    """Binary P6, maxval 255."""
    rgb = _as_bytes(rgb, 3)
    if rgb.shape[2] != 3:
        raise ValueError("PPM needs an H x W x 3 array")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.tobytes())


def write_pgm(gray, path):
    """Binary P5, maxval 255."""
    gray = _as_bytes(gray, 2)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(gray.tobytes())


def read_pgm(path):
    """Read a binary P5 file as written by :func:`write_pgm`."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise DataError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:], dtype=np.uint8)
    if pixels.size != w * h:
        raise DataError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w).copy()


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
