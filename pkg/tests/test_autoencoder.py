import io

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emdens import autoencoder as ae
from emdens.autoencoder import (
    DsaModel, LayerParams, ModelFormatError, SparseAeHyper, cost_and_gradient, cost_terms,
    decode, encode, kl_sparsity, l2_penalty, load_model, model_from_bytes, model_to_bytes,
    reconstruction_mse, save_model, sigmoid, train_stacked,
)
from emdens.data_io import BlobSpec, NormalizationSpec, normalize, synth_blobs


def central_difference(layer, x, hyper, h=1e-6):
    theta = layer.flat()
    num = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fp = cost_terms(LayerParams.from_flat(theta + e, layer.n_in, layer.n_hidden), x, hyper).cost
        fm = cost_terms(LayerParams.from_flat(theta - e, layer.n_in, layer.n_hidden), x, hyper).cost
        num[i] = (fp - fm) / (2 * h)
    return num


def random_case(rng, beta):
    d, h, n = rng.integers(1, 6), rng.integers(1, 6), rng.integers(2, 11)
    x = rng.uniform(size=(n, d))
    base = LayerParams.init(d, h, rng)
    layer = LayerParams.from_flat(base.flat() + rng.normal(0, 0.3, base.size), d, h)
    hyper = SparseAeHyper(alpha=float(rng.uniform(0, 1)), beta=beta,
                          gamma=float(rng.uniform(0.05, 0.95)))
    return layer, x, hyper


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    expected = float(1 / (1 + mpmath.exp(-25)))
    assert abs(sigmoid(25.0) - expected) <= 1e-15
    assert abs(sigmoid(25.0) - (1 - 1.3888e-11)) <= 1e-15


@given(st.floats(-700, 700))
def test_sigmoid_symmetry(x):
    assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-15)


def test_sigmoid_extremes_finite():
    out = sigmoid(np.array([-1e4, 1e4]))
    assert np.all(np.isfinite(out))


def test_l2_penalty():
    assert l2_penalty([np.zeros((3, 2))]) == 0.0
    assert l2_penalty([np.array([[1.0, 2.0], [3.0, 4.0]])]) == 15.0


def test_l2_homogeneous(rng):
    w = rng.normal(size=(4, 3))
    assert l2_penalty([2.5 * w]) == pytest.approx(2.5 ** 2 * l2_penalty([w]), rel=1e-14)


def test_l2_ignores_biases(rng):
    layer = LayerParams.init(3, 2, rng)
    shifted = LayerParams(layer.w_enc, layer.b_enc + 5, layer.w_dec, layer.b_dec - 3)
    assert l2_penalty(shifted) == l2_penalty(layer)


def test_kl_values():
    assert kl_sparsity(0.5, [0.5, 0.5]) == 0.0
    # 0.5 ln 2 + 0.5 ln(2/3), evaluated independently
    expected = float(0.5 * mpmath.log(2) + 0.5 * mpmath.log(mpmath.mpf(2) / 3))
    assert kl_sparsity(0.5, [0.25]) == pytest.approx(expected, abs=1e-12)
    assert kl_sparsity(0.5, [0.25]) == pytest.approx(0.14384, abs=1e-5)


@given(st.floats(0.01, 0.99), st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_kl_nonnegative(gamma, gh):
    assert kl_sparsity(gamma, gh) >= 0.0


def test_kl_clamps_saturated_neurons():
    assert np.isfinite(kl_sparsity(0.5, [0.0, 1.0]))


def test_regularisers_vanish_without_coefficients(rng):
    layer = LayerParams.init(3, 2, rng)
    x = rng.uniform(size=(6, 3))
    terms = cost_terms(layer, x, SparseAeHyper(alpha=0.0, beta=0.0))
    assert terms.cost == terms.mse


def test_perfect_reconstruction_cost_is_mse(rng):
    # targets equal to the network's own output: the MSE term is zero
    layer = LayerParams.init(3, 2, rng)
    x = layer.decode(layer.encode(rng.uniform(size=(5, 3))))
    x = layer.decode(layer.encode(x))
    terms = cost_terms(layer, x, SparseAeHyper(alpha=0.0, beta=0.0))
    assert terms.cost == terms.mse


def test_gradient_small_net_3_2_3(rng):
    layer = LayerParams.init(3, 2, rng)
    x = rng.uniform(size=(5, 3))
    hyper = SparseAeHyper()
    _, grad = cost_and_gradient(layer, x, hyper)
    num = central_difference(layer, x, hyper)
    rel = np.abs(grad - num) / np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-12)
    assert rel.max() <= 1e-5


@pytest.mark.parametrize("beta", [0.0, 0.1, 100.0])
def test_gradient_random_configs(beta):
    rng = np.random.default_rng(int(beta * 10) + 7)
    for _ in range(5):
        layer, x, hyper = random_case(rng, beta)
        _, grad = cost_and_gradient(layer, x, hyper)
        num = central_difference(layer, x, hyper)
        rel = np.abs(grad - num) / np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-12)
        assert rel.max() <= 1e-5


def test_cost_matches_forward_terms(rng):
    layer, x, hyper = random_case(rng, 100.0)
    cost, _ = cost_and_gradient(layer, x, hyper)
    assert cost == cost_terms(layer, x, hyper).cost


def test_default_hyperparameters():
    h = SparseAeHyper()
    assert (h.alpha, h.beta, h.gamma, h.max_epochs) == (1e-4, 100.0, 0.5, 10000)


@pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"gamma": 1.0}, {"alpha": -1.0}, {"max_epochs": 0}])
def test_hyper_validation(kw):
    with pytest.raises(ValueError):
        SparseAeHyper(**kw)


def test_layer_flat_roundtrip(rng):
    layer = LayerParams.init(4, 3, rng)
    back = LayerParams.from_flat(layer.flat(), 4, 3)
    np.testing.assert_array_equal(back.flat(), layer.flat())
    assert layer.size == layer.flat().size


def test_xavier_init_bounds(rng):
    layer = LayerParams.init(19, 15, rng)
    r = np.sqrt(6 / 34)
    assert np.abs(layer.w_enc).max() <= r and np.abs(layer.w_dec).max() <= r
    assert not layer.b_enc.any() and not layer.b_dec.any()


# -- stacked training ---------------------------------------------------------------


@pytest.fixture(scope="module")
def small_model(blobs4):
    _, scaled, spec, _ = blobs4
    return train_stacked(scaled.data, (5, 3), SparseAeHyper(max_epochs=150), seed=1,
                         normalization=spec)


def test_single_stage_model(rng):
    x = rng.uniform(size=(30, 3))
    model = train_stacked(x, [3], SparseAeHyper(max_epochs=20), seed=0)
    assert model.layer_sizes == [3]
    assert encode(model, x).shape == (30, 3)


def test_training_deterministic(blobs4):
    _, scaled, _, _ = blobs4
    a = train_stacked(scaled.data[:200], (4, 3), SparseAeHyper(max_epochs=30), seed=5)
    b = train_stacked(scaled.data[:200], (4, 3), SparseAeHyper(max_epochs=30), seed=5)
    assert model_to_bytes(a) == model_to_bytes(b)


def test_training_reduces_reconstruction_error(blobs4, small_model):
    _, scaled, _, _ = blobs4
    x = scaled.data
    rng = np.random.default_rng(1)
    untrained = DsaModel([LayerParams.init(6, 5, rng), LayerParams.init(5, 3, rng)])
    before = reconstruction_mse(x, decode(untrained, encode(untrained, x)))
    after = reconstruction_mse(x, decode(small_model, encode(small_model, x)))
    assert after < before


def test_training_history_monotone(small_model):
    for hist in small_model.history:
        assert np.all(np.diff(hist) <= 0)


def test_encode_bounded_and_deterministic(small_model, blobs4):
    _, scaled, _, _ = blobs4
    z1 = encode(small_model, scaled.data)
    z2 = encode(small_model, scaled.data)
    assert z1.shape == (scaled.n_pixels, 3)
    assert np.array_equal(z1, z2)
    assert z1.min() >= 0.0 and z1.max() <= 1.0
    xr = decode(small_model, z1)
    assert xr.shape == scaled.data.shape and xr.min() > 0 and xr.max() < 1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e8, 1e8), min_size=6, max_size=6))
def test_encode_bounded_any_input(small_model, row):
    z = encode(small_model, np.array([row]))
    assert z.min() >= 0.0 and z.max() <= 1.0


def test_mse_zero_for_identical():
    x = np.random.default_rng(0).uniform(size=(4, 3))
    assert reconstruction_mse(x, x.copy()) == 0.0


def test_encode_channel_mismatch(small_model):
    with pytest.raises(ValueError, match="channels"):
        encode(small_model, np.zeros((3, 5)))


def test_stacked_shapes_must_chain(rng):
    with pytest.raises(ValueError):
        DsaModel([LayerParams.init(4, 3, rng), LayerParams.init(2, 1, rng)])


def test_training_rejects_single_row():
    with pytest.raises(ValueError):
        train_stacked(np.zeros((1, 3)), (2,))


# -- serialisation ---------------------------------------------------------------------


def test_save_load_bitwise(tmp_path, small_model, blobs4):
    _, scaled, _, _ = blobs4
    path = tmp_path / "m.dsa"
    save_model(small_model, path)
    loaded = load_model(path)
    assert np.array_equal(encode(loaded, scaled.data), encode(small_model, scaled.data))
    np.testing.assert_array_equal(loaded.normalization.mins, small_model.normalization.mins)
    assert loaded.hypers == small_model.hypers
    assert model_to_bytes(loaded) == model_to_bytes(small_model)


def test_truncated_file_rejected(small_model):
    data = model_to_bytes(small_model)
    with pytest.raises(ModelFormatError):
        model_from_bytes(data[:-9])


def test_corrupted_block_rejected(small_model):
    data = bytearray(model_to_bytes(small_model))
    data[-3] ^= 0xFF
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_bytes(bytes(data))


def test_version_mismatch_rejected(small_model):
    data = model_to_bytes(small_model).replace(b'"version": 1', b'"version": 99')
    with pytest.raises(ModelFormatError, match="version"):
        model_from_bytes(data)


def test_not_a_model():
    with pytest.raises(ModelFormatError):
        model_from_bytes(b"hello\nworld")


def test_transfer_to_second_dataset(tmp_path, small_model):
    img_b, _ = synth_blobs(BlobSpec(3, 100, 6, mean_separation=8.0, noise_sigma=0.5, seed=11))
    path = tmp_path / "m.dsa"
    save_model(small_model, path)
    model = load_model(path)
    z = encode(model, model.normalization.apply(img_b.data))
    assert z.shape == (300, 3)
    assert np.all((z >= 0) & (z <= 1))
