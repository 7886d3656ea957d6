import colorsys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emdens.data_io import read_pgm
from emdens.evaluation import (
    RUNTIME_STAGES, ReportError, build_report, cluster_map, correlate_maps, palette,
    phi_coefficient, pseudo_rgb, read_report, write_cluster_map, write_correlation_csv,
    write_report,
)

FIXTURES = Path(__file__).parent / "fixtures"


def test_pseudo_rgb_endpoints_and_midpoint():
    z = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]])
    img = pseudo_rgb(z, 1, 3)
    assert img.dtype == np.uint8
    assert img[0, 0].tolist() == [0, 0, 0]
    assert img[0, 1].tolist() == [255, 255, 255]
    # 0.5 * 255 = 127.5 rounds half up
    assert img[0, 2].tolist() == [128, 128, 128]


def test_pseudo_rgb_channel_order():
    img = pseudo_rgb(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), 2, 1)
    assert img[0, 0].tolist() == [255, 0, 0]
    assert img[1, 0].tolist() == [0, 255, 0]


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_pseudo_rgb_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    img = pseudo_rgb(np.array([[lo] * 3, [hi] * 3]), 1, 2)
    assert img[0, 0, 0] <= img[0, 1, 0]


def test_pseudo_rgb_rejects_out_of_range():
    with pytest.raises(ValueError):
        pseudo_rgb(np.array([[1.5, 0, 0]]), 1, 1)
    with pytest.raises(ValueError):
        pseudo_rgb(np.zeros((3, 3)), 2, 2)


def test_palette_evenly_spaced_hues():
    p = palette(6)
    hues = [colorsys.rgb_to_hsv(*(c / 255.0))[0] for c in p]
    np.testing.assert_allclose(hues, np.arange(6) / 6, atol=2e-3)
    assert len({tuple(c) for c in p}) == 6


def test_single_cluster_uniform_colour():
    rgb, lab = cluster_map(np.zeros(12, dtype=int), 3, 4, k=1)
    assert np.unique(rgb.reshape(-1, 3), axis=0).shape == (1, 3)
    assert lab.max() == 0


def test_checker_label_image_matches_fixture(tmp_path):
    write_cluster_map([0, 1, 1, 0], 2, 2, tmp_path / "c.ppm", tmp_path / "c.pgm", k=2)
    assert (tmp_path / "c.pgm").read_bytes() == (FIXTURES / "checker_2x2.pgm").read_bytes()


def test_label_pgm_roundtrip(tmp_path, rng):
    labels = rng.integers(0, 7, 30)
    write_cluster_map(labels, 5, 6, tmp_path / "c.ppm", tmp_path / "c.pgm", k=7)
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm").ravel(), labels)


def test_colour_to_label_is_a_bijection(rng):
    labels = rng.integers(0, 9, 200)
    labels[:9] = np.arange(9)
    rgb, lab = cluster_map(labels, 10, 20, k=9)
    pairs = {(tuple(c), l) for c, l in zip(rgb.reshape(-1, 3), lab.ravel())}
    assert len(pairs) == 9
    assert len({c for c, _ in pairs}) == 9


def test_too_many_clusters_for_pgm():
    with pytest.raises(ValueError):
        cluster_map(np.arange(256), 16, 16, k=256)


def test_phi_perfect_and_inverse():
    a = np.array([1, 1, 0, 0, 1, 0], dtype=bool)
    assert phi_coefficient(a, a) == pytest.approx(1.0)
    assert phi_coefficient(a, ~a) == pytest.approx(-1.0)


def test_phi_constant_is_nan():
    a = np.array([1, 0, 1, 0], dtype=bool)
    assert np.isnan(phi_coefficient(a, np.ones(4, dtype=bool)))
    assert np.isnan(phi_coefficient(np.zeros(4, dtype=bool), a))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=3, max_size=60))
def test_phi_matches_pearson(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    phi = phi_coefficient(a, b)
    assert phi == phi_coefficient(b, a) or (np.isnan(phi) and np.isnan(phi_coefficient(b, a)))
    if a.all() or not a.any() or b.all() or not b.any():
        assert np.isnan(phi)
    else:
        assert phi == pytest.approx(np.corrcoef(a.astype(float), b.astype(float))[0, 1], abs=1e-12)


def test_correlate_maps_shape_and_threshold():
    data = np.array([[0.0, 3.0], [2.0, 0.0], [0.0, 1.0], [5.0, 0.0]])
    labels = np.array([0, 1, 0, 1])
    corr = correlate_maps(labels, 2, data)
    assert corr.shape == (2, 2)
    np.testing.assert_allclose(corr, [[-1.0, 1.0], [1.0, -1.0]])
    # a threshold above every value makes the channel constant
    assert np.isnan(correlate_maps(labels, 2, data, threshold=10.0)).all()


def test_correlation_csv_blank_for_nan(tmp_path):
    write_correlation_csv(np.array([[0.5, np.nan]]), tmp_path / "c.csv", ["CD3", "CD20"])
    assert (tmp_path / "c.csv").read_text() == "cluster,CD3,CD20\n0,0.5,\n"


def artifacts():
    return {
        "dataset": "a",
        "n_pixels": 100,
        "n_channels": 4,
        "k_estimate": {"k": 3, "homogeneous": False, "threshold": 2.5},
        "diagnostics": {"empty_fraction": 0.9, "skewness": 4.0},
        "silhouette": {"median": 0.8, "mad": 0.05},
        "runtimes": {s: 0.25 for s in RUNTIME_STAGES},
    }


def test_report_has_every_stage():
    rep = build_report(artifacts())
    assert set(RUNTIME_STAGES) <= set(rep["runtimes"])
    assert rep["k"] == 3 and rep["homogeneous"] is False


def test_report_empty_input():
    with pytest.raises(ReportError):
        build_report({})


def test_report_missing_stage():
    art = artifacts()
    del art["runtimes"]["density_estimation"]
    with pytest.raises(ReportError, match="density_estimation"):
        build_report(art)


def test_report_nan_becomes_null(tmp_path):
    art = artifacts()
    art["diagnostics"]["skewness"] = float("nan")
    write_report(build_report(art), tmp_path)
    assert read_report(tmp_path / "report.json")["diagnostics"]["skewness"] is None


def test_report_regenerates_byte_identical(tmp_path):
    write_report(build_report(artifacts()), tmp_path / "a")
    again = read_report(tmp_path / "a" / "report.json")
    write_report(again, tmp_path / "b")
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_csv_layout(tmp_path):
    write_report(build_report(artifacts()), tmp_path)
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "field,value"
    assert "k,3" in lines
    assert "runtimes.total,0.25" in lines
