"""Stacked deep sparse autoencoder with sigmoid units.

Each stage is a one-hidden-layer autoencoder trained on the codes of the
previous stage. A stage minimises

    F = (1/N) * ||X - X'||_F^2 + alpha * L2(weights) + beta * KL(gamma || mean activation)

with scaled conjugate gradients over the full batch.
"""
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data_io import NormalizationSpec
from .scg import ScgDivergence, scg_minimize

log = logging.getLogger(__name__)

KL_EPS = 1e-10
MODEL_MAGIC = b"EMDENS-DSA"
MODEL_VERSION = 1


class TrainingDivergence(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


class ModelFormatError(ValueError):
    pass


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))``, evaluated without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SparseAeHyper:
    alpha: float = 1e-4
    beta: float = 100.0
    gamma: float = 0.5
    max_epochs: int = 10000

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class LayerParams:
    """One autoencoder stage: encoder ``(w_enc, b_enc)`` and decoder ``(w_dec, b_dec)``.

    Weight matrices are stored out x in, so a row batch ``X`` is encoded as
    ``sigmoid(X @ w_enc.T + b_enc)``.
    """

    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    def __post_init__(self):
        h, d = self.w_enc.shape
        if self.b_enc.shape != (h,) or self.w_dec.shape != (d, h) or self.b_dec.shape != (d,):
            raise ValueError("inconsistent layer shapes")
        for a in (self.w_enc, self.b_enc, self.w_dec, self.b_dec):
            if not np.all(np.isfinite(a)):
                raise ValueError("layer parameters must be finite")

    @property
    def n_in(self):
        return self.w_enc.shape[1]

    @property
    def n_hidden(self):
        return self.w_enc.shape[0]

    @property
    def size(self):
        return 2 * self.n_in * self.n_hidden + self.n_in + self.n_hidden

    def flat(self):
        return np.concatenate(
            [self.w_enc.ravel(), self.b_enc, self.w_dec.ravel(), self.b_dec]
        )

    @classmethod
    def from_flat(cls, theta, n_in, n_hidden):
        theta = np.asarray(theta, dtype=np.float64)
        d, h = n_in, n_hidden
        i = 0
        w_enc = theta[i:i + h * d].reshape(h, d)
        i += h * d
        b_enc = theta[i:i + h]
        i += h
        w_dec = theta[i:i + d * h].reshape(d, h)
        i += d * h
        b_dec = theta[i:i + d]
        i += d
        if i != theta.size:
            raise ValueError(f"expected {i} parameters, got {theta.size}")
        return cls(w_enc.copy(), b_enc.copy(), w_dec.copy(), b_dec.copy())

    @classmethod
    def init(cls, n_in, n_hidden, rng):
        r = np.sqrt(6.0 / (n_in + n_hidden))
        return cls(
            rng.uniform(-r, r, size=(n_hidden, n_in)),
            np.zeros(n_hidden),
            rng.uniform(-r, r, size=(n_in, n_hidden)),
            np.zeros(n_in),
        )

    def encode(self, x):
        return sigmoid(x @ self.w_enc.T + self.b_enc)

    def decode(self, z):
        return sigmoid(z @ self.w_dec.T + self.b_dec)


def l2_penalty(layers):
    """Half the sum of squared weights over all layers; biases are excluded."""
    if isinstance(layers, LayerParams):
        layers = [layers]
    total = 0.0
    for layer in layers:
        if isinstance(layer, LayerParams):
            mats = (layer.w_enc, layer.w_dec)
        else:
            mats = (np.asarray(layer, dtype=np.float64),)
        for m in mats:
            total += float(np.sum(m * m))
    return 0.5 * total


def kl_sparsity(gamma, gamma_hat):
    """Sum over neurons of KL(gamma || gamma_hat_j) between Bernoulli variables."""
    gh = np.clip(np.asarray(gamma_hat, dtype=np.float64), KL_EPS, 1.0 - KL_EPS)
    return float(
        np.sum(gamma * np.log(gamma / gh) + (1.0 - gamma) * np.log((1.0 - gamma) / (1.0 - gh)))
    )


@dataclass
class CostTerms:
    cost: float
    mse: float
    l2: float
    kl: float


def cost_terms(layer, x, hyper):
    """Forward pass only; returns the cost split into its three terms."""
    a = layer.encode(x)
    xr = layer.decode(a)
    n = x.shape[0]
    mse = float(np.sum((x - xr) ** 2)) / n
    l2 = l2_penalty(layer)
    kl = kl_sparsity(hyper.gamma, a.mean(axis=0))
    return CostTerms(mse + hyper.alpha * l2 + hyper.beta * kl, mse, l2, kl)


def cost_and_gradient(layer, x, hyper):
    """Cost of one stage and its gradient with respect to ``layer.flat()``.

    Returns
    -------
    cost : float
    grad : ndarray
        Same layout as :meth:`LayerParams.flat`.
    """
    n = x.shape[0]
    alpha, beta, gamma = hyper.alpha, hyper.beta, hyper.gamma

    a = layer.encode(x)
    xr = layer.decode(a)
    resid = xr - x
    gamma_hat = a.mean(axis=0)

    mse = float(np.sum(resid * resid)) / n
    l2 = l2_penalty(layer)
    kl = kl_sparsity(gamma, gamma_hat)
    cost = mse + alpha * l2 + beta * kl

    dz_dec = (2.0 / n) * resid * xr * (1.0 - xr)
    g_w_dec = dz_dec.T @ a + alpha * layer.w_dec
    g_b_dec = dz_dec.sum(axis=0)

    # d KL / d gamma_hat_j, zero where the clamp is active
    gh = np.clip(gamma_hat, KL_EPS, 1.0 - KL_EPS)
    dkl = -gamma / gh + (1.0 - gamma) / (1.0 - gh)
    dkl[(gamma_hat < KL_EPS) | (gamma_hat > 1.0 - KL_EPS)] = 0.0

    da = dz_dec @ layer.w_dec + (beta / n) * dkl
    dz_enc = da * a * (1.0 - a)
    g_w_enc = dz_enc.T @ x + alpha * layer.w_enc
    g_b_enc = dz_enc.sum(axis=0)

    grad = np.concatenate([g_w_enc.ravel(), g_b_enc, g_w_dec.ravel(), g_b_dec])
    return cost, grad


def train_stage(x, n_hidden, hyper, rng, stage=0, init=None):
    """Train one autoencoder stage on ``x``; returns ``(layer, cost history)``."""
    n_in = x.shape[1]
    layer = init if init is not None else LayerParams.init(n_in, n_hidden, rng)

    def objective(theta):
        return cost_and_gradient(LayerParams.from_flat(theta, n_in, n_hidden), x, hyper)

    try:
        res = scg_minimize(objective, layer.flat(), max_iters=hyper.max_epochs)
    except ScgDivergence as exc:
        raise TrainingDivergence(stage, str(exc)) from exc
    except ValueError as exc:
        raise TrainingDivergence(stage, str(exc)) from exc
    log.info(
        "stage %d (%d->%d): %d iterations, cost %.6g (%s)",
        stage, n_in, n_hidden, res.n_iter, res.fun, res.reason,
    )
    return LayerParams.from_flat(res.x, n_in, n_hidden), res.history


@dataclass
class DsaModel:
    """A trained stack of autoencoder stages plus the input normalisation."""

    layers: list
    normalization: NormalizationSpec = None
    hypers: list = field(default_factory=list)
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_hidden != nxt.n_in:
                raise ValueError("layer sizes do not chain")
        if self.normalization is not None and self.normalization.n_channels != self.n_in:
            raise ValueError("normalization channel count differs from model input")

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def layer_sizes(self):
        return [layer.n_hidden for layer in self.layers]

    @property
    def n_latent(self):
        return self.layers[-1].n_hidden


def train_stacked(x, layer_sizes=(15, 10, 3), hyper=None, seed=0, normalization=None):
    """Greedy layer-wise training of a stacked sparse autoencoder.

    Parameters
    ----------
    x : ndarray, shape (N, D)
        Training data, already scaled into [0, 1].
    layer_sizes : sequence of int
        Hidden widths; the last one is the embedding dimension.
    hyper : SparseAeHyper or sequence of them
        One shared setting or one per stage.
    seed : int
        Seeds the weight initialisation.
    normalization : NormalizationSpec, optional
        Stored on the model so that unseen data can be scaled identically.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two training rows")
    if any(int(s) < 1 for s in layer_sizes) or not layer_sizes:
        raise ValueError("layer sizes must be positive")
    if hyper is None:
        hyper = SparseAeHyper()
    hypers = list(hyper) if isinstance(hyper, (list, tuple)) else [hyper] * len(layer_sizes)
    if len(hypers) != len(layer_sizes):
        raise ValueError("need one hyperparameter set per layer")

    rng = np.random.default_rng(seed)
    layers, history = [], []
    h = x
    for stage, (size, hp) in enumerate(zip(layer_sizes, hypers)):
        layer, hist = train_stage(h, int(size), hp, rng, stage=stage)
        layers.append(layer)
        history.append(hist)
        h = layer.encode(h)
    return DsaModel(layers, normalization, hypers, history)


def _check_channels(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_in:
        raise ValueError(
            f"model expects {model.n_in} channels, got array of shape {x.shape}"
        )
    return x


def encode(model, x):
    """Map normalised rows to the bottleneck; every entry lies in [0, 1]."""
    h = _check_channels(model, x)
    for layer in model.layers:
        h = layer.encode(h)
    return h


def decode(model, z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.n_latent:
        raise ValueError(f"expected {model.n_latent} latent columns, got {z.shape}")
    h = z
    for layer in reversed(model.layers):
        h = layer.decode(h)
    return h


def reconstruction_mse(x, x_rec):
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum((x - x_rec) ** 2)) / x.shape[0]


# -- serialisation ---------------------------------------------------------
#
# Layout: MODEL_MAGIC, newline, one JSON header line, newline, then a block of
# little-endian float64 values (all layers in order, then normalisation mins
# and maxes). The header carries the block length and its SHA-256.


def _model_header(model, block):
    norm = model.normalization
    return {
        "format": "emdens-dsa",
        "version": MODEL_VERSION,
        "n_in": model.n_in,
        "layer_sizes": model.layer_sizes,
        "hyper": [
            {"alpha": h.alpha, "beta": h.beta, "gamma": h.gamma, "max_epochs": h.max_epochs}
            for h in model.hypers
        ],
        "normalization": None if norm is None else {
            "method": norm.method,
            "n_channels": norm.n_channels,
        },
        "n_values": block.size,
        "sha256": hashlib.sha256(block.astype("<f8").tobytes()).hexdigest(),
    }


def model_to_bytes(model):
    parts = [layer.flat() for layer in model.layers]
    if model.normalization is not None:
        parts += [model.normalization.mins, model.normalization.maxs]
    block = np.concatenate(parts).astype("<f8")
    header = json.dumps(_model_header(model, block), sort_keys=True)
    return MODEL_MAGIC + b"\n" + header.encode("ascii") + b"\n" + block.tobytes()


def model_from_bytes(data):
    buf = io.BytesIO(data)
    magic = buf.readline().rstrip(b"\n")
    if magic != MODEL_MAGIC:
        raise ModelFormatError("not an emdens model file")
    try:
        header = json.loads(buf.readline().decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from exc
    if header.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {header.get('version')!r}")

    raw = buf.read()
    n_values = header["n_values"]
    if len(raw) != 8 * n_values:
        raise ModelFormatError(
            f"parameter block holds {len(raw)} bytes, expected {8 * n_values}"
        )
    if hashlib.sha256(raw).hexdigest() != header["sha256"]:
        raise ModelFormatError("parameter block checksum mismatch")
    block = np.frombuffer(raw, dtype="<f8").astype(np.float64)

    sizes = [header["n_in"]] + list(header["layer_sizes"])
    layers, i = [], 0
    for n_in, n_hidden in zip(sizes, sizes[1:]):
        n = 2 * n_in * n_hidden + n_in + n_hidden
        layers.append(LayerParams.from_flat(block[i:i + n], n_in, n_hidden))
        i += n
    norm = None
    if header["normalization"] is not None:
        d = header["normalization"]["n_channels"]
        mins, maxs = block[i:i + d].copy(), block[i + d:i + 2 * d].copy()
        i += 2 * d
        norm = NormalizationSpec(mins, maxs)
    if i != block.size:
        raise ModelFormatError("parameter block length does not match layer sizes")
    hypers = [SparseAeHyper(**h) for h in header["hyper"]]
    try:
        return DsaModel(layers, norm, hypers)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(model, path):
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
