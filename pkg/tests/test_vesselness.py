import warnings

import numpy as np
import pytest
from sklearn.base import clone

from osvessel.phantoms import Phantom, centerline_mask, make_phantom, phantom_center
from osvessel.se2ops import Se2Params, gauge_eig, hessian_se2
from osvessel.vesselness import (
    DEFAULT_SCALES,
    FrangiVesselness,
    MeasureFields,
    OrientationScoreVesselness,
    VesselnessParams,
    default_kernels,
    frangi_multiscale,
    frangi_scale_responses,
    measures_gauge,
    measures_xi_eta,
    vesselness_core,
    vesselness_layer,
    vesselness_sim2,
)
from osvessel.ostransform import sos_forward

SMALL = VesselnessParams(scales=(1.5, 3.0), n_orient=8)


@pytest.fixture(scope="module")
def x_phantom():
    p = Phantom("x_crossing", shape=(128, 128), noise=0.02)
    return p, make_phantom(p)


@pytest.fixture(scope="module")
def kernels128():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return default_kernels((128, 128), SMALL)


def test_params_defaults_and_aliases():
    p = VesselnessParams()
    assert (p.sigma1, p.sigma2_factor, p.c_beta, p.n_orient) == (0.5, 0.2, 0.05, 12)
    assert p.scales == DEFAULT_SCALES
    assert VesselnessParams(variant="xi-eta").variant == "xi_eta"
    assert VesselnessParams(variant="frangi").variant == "frangi2d"
    assert VesselnessParams(polarity="bright").polarity == "bright_vessels"
    se2 = p.se2(2.0)
    assert se2.beta == pytest.approx(0.025) and se2.sigma_s == pytest.approx(1.0)


@pytest.mark.parametrize("bad", [{"variant": "hessian"}, {"polarity": "up"}, {"sigma1": 0},
                                 {"sigma2_factor": 0}, {"scales": (2.0, 1.0)},
                                 {"c_beta": -1}, {"scales": ()}])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        VesselnessParams(**bad)


def test_core_examples():
    m = MeasureFields(R=np.array([0.0]), S=np.array([1.0]), Q=np.array([1.0]))
    v = vesselness_core(m, 0.5, 0.2)
    assert v[0] == pytest.approx(1 - np.exp(-1 / (2 * 0.04)))
    # R grows -> response drops with exp(-R^2 / (2 sigma1^2))
    m2 = MeasureFields(R=np.array([0.0, 0.5]), S=np.array([1.0, 1.0]), Q=np.array([1.0, 1.0]))
    v2 = vesselness_core(m2, 0.5, 0.2)
    assert v2[1] / v2[0] == pytest.approx(np.exp(-0.5))


def test_core_hard_zero_and_infinite_ratio(rng):
    R = rng.normal(size=10000)
    S = rng.uniform(0, 1, size=10000)
    Q = rng.normal(size=10000)
    R[:10] = np.inf
    v = vesselness_core(MeasureFields(R, S, Q))
    assert np.all(v[Q <= 0] == 0.0)
    assert np.all(v[:10] == 0.0)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(vesselness_core(MeasureFields(R, np.zeros_like(S), Q)) == 0)


def test_core_contrast_invariant(rng):
    R = rng.normal(size=100)
    S = rng.uniform(0, 1, size=100)
    Q = rng.normal(size=100)
    a = vesselness_core(MeasureFields(R, S, Q))
    b = vesselness_core(MeasureFields(R, 9.0 * S, 3.0 * Q))
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_measures_xi_eta_on_dark_line():
    y = np.arange(64)[:, None] * np.ones((1, 64))
    line = 1 - np.exp(-((y - 32) ** 2) / 8)
    U = np.repeat(line[None], 8, axis=0)
    m = measures_xi_eta(U, Se2Params(0.05, 1.0))
    assert m.Q[0, 32, 5] > 0
    assert abs(m.R[0, 32, 5]) < 1e-8
    assert m.S[0, 32, 5] == pytest.approx(m.Q[0, 32, 5] ** 2)


def test_measures_gauge_from_eigenvalues():
    lam = np.array([[0.1, 2.0, 4.0], [0.0, 0.0, 0.0]])
    m = measures_gauge(lam)
    assert m.Q[0] == pytest.approx(3.0)
    assert m.R[0] == pytest.approx(0.1 / 3.0)
    assert m.S[0] == pytest.approx(0.01 + 9.0)
    assert np.isinf(m.R[1])


def test_layer_path_matches_explicit_gauge(x_phantom, kernels128):
    _, f = x_phantom
    W = sos_forward(f, kernels128)
    se2 = SMALL.se2(kernels128.scales[1])
    fast = vesselness_layer(W.layer(1), se2, "gauge")
    G = gauge_eig(hessian_se2(W.layer(1).real, se2))
    slow = vesselness_core(measures_gauge(G), 0.5, 0.2)
    np.testing.assert_allclose(fast, slow, atol=1e-10)
    fast = vesselness_layer(W.layer(1), se2, "xi_eta")
    slow = vesselness_core(measures_xi_eta(W.layer(1), se2), 0.5, 0.2)
    np.testing.assert_allclose(fast, slow, atol=1e-12)


@pytest.mark.parametrize("variant", ["gauge", "xi_eta"])
def test_sim2_range_and_crossing(x_phantom, kernels128, variant):
    p, f = x_phantom
    params = VesselnessParams(variant=variant, scales=SMALL.scales, n_orient=8)
    V = vesselness_sim2(f, params, kernels128)
    assert V.shape == f.shape
    assert V.min() >= 0 and V.max() == pytest.approx(1.0)
    cl = centerline_mask(p, margin=16)
    assert V[phantom_center(p)] >= 0.5 * np.median(V[cl])
    # the background is far below the vessels
    far = make_phantom(Phantom("x_crossing", shape=(128, 128), width=20)) > 0.74
    assert np.median(V[far]) < 0.2 * np.median(V[cl])


def test_sim2_polarity(x_phantom, kernels128):
    _, f = x_phantom
    dark = vesselness_sim2(f, SMALL, kernels128)
    bright = vesselness_sim2(1 - f, VesselnessParams(scales=SMALL.scales, n_orient=8,
                                                     polarity="bright_vessels"), kernels128)
    np.testing.assert_allclose(dark, bright, atol=1e-8)


def test_sim2_contrast_and_offset_invariant(x_phantom, kernels128):
    _, f = x_phantom
    a = vesselness_sim2(f, SMALL, kernels128)
    b = vesselness_sim2(3.0 * f + 7.0, SMALL, kernels128)
    # the offset only enters through rounding
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_sim2_return_layers(x_phantom, kernels128):
    _, f = x_phantom
    V, layers = vesselness_sim2(f, SMALL, kernels128, return_layers=True)
    assert layers.shape == (2, 128, 128)
    total = sum(lay / lay.max() for lay in layers)
    np.testing.assert_allclose(V, total / total.max(), atol=1e-12)


def test_sim2_rejects_bad_inputs(x_phantom, kernels128):
    _, f = x_phantom
    with pytest.raises(ValueError):
        vesselness_sim2(f, VesselnessParams(variant="frangi2d"), kernels128)
    with pytest.raises(ValueError):
        vesselness_sim2(f[:64], SMALL, kernels128)


def test_flat_image_gives_zero(kernels128):
    V = vesselness_sim2(np.full((128, 128), 0.3), SMALL, kernels128)
    assert np.all(V == 0)
    assert np.all(frangi_multiscale(np.full((64, 64), 0.3)) == 0)


def test_frangi_on_straight_bar():
    p = Phantom("straight_bar", shape=(96, 96), angle=30)
    f = make_phantom(p)
    V = frangi_multiscale(f)
    assert V.max() == pytest.approx(1.0)
    cl = centerline_mask(p, margin=10)
    assert np.median(V[cl]) > 0.5
    far = make_phantom(Phantom("straight_bar", shape=(96, 96), angle=30, width=50)) > 0.74
    # the periodic wrap cuts the oblique bar at the image border
    far[:12] = far[-12:] = False
    far[:, :12] = far[:, -12:] = False
    assert np.all(V[far] < 0.05)


def test_frangi_dips_at_crossing():
    p = Phantom("x_crossing", shape=(128, 128))
    V = frangi_multiscale(make_phantom(p))
    assert V[phantom_center(p)] < 0.5 * np.median(V[centerline_mask(p, margin=16)])


def test_frangi_scale_responses_pick_matching_scale():
    p = Phantom("gaussian_ridge", shape=(128, 128), sigma=3.8)
    R = frangi_scale_responses(make_phantom(p))
    assert R.shape == (5, 128, 128)
    assert abs(int(np.argmax(R.max(axis=(1, 2)))) - 2) <= 1


def test_estimators(x_phantom):
    _, f = x_phantom
    est = OrientationScoreVesselness(scales=(1.5, 3.0), n_orient=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        V = est.fit_transform(f)
    assert V.shape == f.shape
    assert clone(est).get_params()["n_orient"] == 8
    with pytest.raises(ValueError):
        OrientationScoreVesselness(variant="frangi2d").fit(f)
    Vf = FrangiVesselness(scales=(1.5, 3.0)).fit_transform(f)
    np.testing.assert_allclose(Vf, frangi_multiscale(f, (1.5, 3.0)))
