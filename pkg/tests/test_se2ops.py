import math

import numpy as np
import pytest

from osvessel.se2ops import (
    GaugeFrameField,
    HessianField,
    Se2Params,
    gauge_eig,
    gauge_eigenvalues,
    hessian_se2,
    li_derivative,
    regularize,
    sym3_eigvalsh,
)

N_ORIENT = 12
SHAPE = (48, 48)


def smooth_score(n=N_ORIENT, shape=SHAPE):
    """Band-limited real score, pi-periodic in theta."""
    th = (np.arange(n) * np.pi / n)[:, None, None]
    y, x = np.mgrid[0:shape[0], 0:shape[1]] * (2 * np.pi)
    y = y / shape[0]
    x = x / shape[1]
    return (np.cos(2 * x + y) * (1 + 0.5 * np.cos(2 * th))
            + 0.7 * np.sin(x - 3 * y) * np.sin(2 * th)
            + 0.3 * np.cos(3 * y))


def spatial_shift(field, dy, dx):
    """Evaluate ``field(y + dy, x + dx)`` per slice by Fourier interpolation."""
    h, w = field.shape[-2:]
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    dy = np.asarray(dy, dtype=float).reshape(-1, 1, 1)
    dx = np.asarray(dx, dtype=float).reshape(-1, 1, 1)
    phase = np.exp(2j * np.pi * (ky * dy + kx * dx))
    return np.fft.ifft2(np.fft.fft2(field) * phase).real


def angular_shift(field, dth, parity=1):
    """Evaluate ``field(theta + dth)`` on the half-circle grid by Fourier interpolation."""
    n = field.shape[0]
    full = np.concatenate([field, parity * field], axis=0)
    m = np.fft.fftfreq(2 * n, d=1.0 / (2 * n)).reshape(-1, 1, 1)
    mult = np.exp(1j * m * dth)
    mult[n] = np.cos(n * dth)  # the Nyquist mode of a real signal
    return np.fft.ifft(np.fft.fft(full, axis=0) * mult, axis=0)[:n].real


def fd_frame(V, op, parity=1, h=1e-3):
    n = V.shape[0]
    th = np.arange(n) * np.pi / n
    if op == "theta":
        return (angular_shift(V, h, parity) - angular_shift(V, -h, parity)) / (2 * h)
    if op == "xi":
        dx, dy = np.cos(th), np.sin(th)
    else:
        dx, dy = -np.sin(th), np.cos(th)
    return (spatial_shift(V, h * dy, h * dx) - spatial_shift(V, -h * dy, -h * dx)) / (2 * h)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


P = Se2Params(beta=0.2, sigma_s=1.5)


def test_se2params_validation():
    with pytest.raises(ValueError):
        Se2Params(beta=0.0, sigma_s=1.0)
    with pytest.raises(ValueError):
        Se2Params(beta=0.1, sigma_s=-1.0)
    with pytest.raises(ValueError, match="pi/2"):
        Se2Params(beta=1.0, sigma_s=2.0)
    assert Se2Params(0.05, 3.0).sigma_theta == pytest.approx(0.15)


def test_regularize_preserves_mass_and_spreads_delta():
    U = np.zeros((N_ORIENT, 64, 64))
    U[3, 32, 32] = 1.0
    p = Se2Params(beta=0.1, sigma_s=2.0)
    V = regularize(U, p)
    assert V.sum() == pytest.approx(1.0)
    spatial = V.sum(axis=0)
    y, x = np.mgrid[0:64, 0:64]
    var_y = np.sum(spatial * (y - 32) ** 2)
    var_x = np.sum(spatial * (x - 32) ** 2)
    assert var_y == pytest.approx(4.0, rel=1e-6)
    assert var_x == pytest.approx(4.0, rel=1e-6)
    ang = V.sum(axis=(1, 2))
    assert int(np.argmax(ang)) == 3


def test_regularize_semigroup():
    U = np.random.default_rng(1).normal(size=(N_ORIENT, 32, 32))
    once = regularize(regularize(U, P), P)
    twice = regularize(U, Se2Params(P.beta, P.sigma_s * math.sqrt(2)))
    np.testing.assert_allclose(once, twice, atol=1e-12)


def test_regularize_complex_uses_conjugate_rule():
    rng = np.random.default_rng(2)
    U = rng.normal(size=(N_ORIENT, 16, 16)) + 1j * rng.normal(size=(N_ORIENT, 16, 16))
    V = regularize(U, P)
    re = regularize(U.real, P)
    assert np.iscomplexobj(V)
    np.testing.assert_allclose(V.real, re, atol=1e-13)
    with pytest.raises(ValueError):
        regularize(np.zeros((16, 16)), P)


@pytest.mark.parametrize("op", ["xi", "eta", "theta"])
def test_first_derivatives_match_finite_differences(op):
    U = smooth_score()
    V = regularize(U, P)
    d = li_derivative(U, P, (op,))
    assert rel_err(d, fd_frame(V, op)) < 1e-2


@pytest.mark.parametrize("pair", [("xi", "xi"), ("eta", "eta"), ("theta", "theta"),
                                  ("xi", "eta"), ("theta", "xi"), ("xi", "theta")])
def test_second_derivatives_match_finite_differences(pair):
    U = smooth_score()
    V = regularize(U, P)
    inner = li_derivative(V, P, (pair[1],), regularized=True)
    parity = 1 if pair[1] == "theta" else -1
    fd = fd_frame(inner, pair[0], parity=parity)
    assert rel_err(li_derivative(U, P, pair), fd) < 1e-2


def test_commutator_theta_xi_is_eta():
    U = smooth_score()
    lhs = li_derivative(U, P, ("theta", "xi")) - li_derivative(U, P, ("xi", "theta"))
    rhs = li_derivative(U, P, ("eta",))
    assert rel_err(lhs, rhs) < 0.05


def test_li_derivative_rejects_bad_index():
    U = smooth_score()
    with pytest.raises(ValueError):
        li_derivative(U, P, ("xi", "xi", "xi"))
    with pytest.raises(ValueError, match="frame direction"):
        li_derivative(U, P, ("zeta",))


def test_hessian_entries_match_li_derivatives():
    U = smooth_score()
    H = hessian_se2(U, P)
    b = P.beta
    np.testing.assert_allclose(H.xixi, li_derivative(U, P, ("xi", "xi")), atol=1e-12)
    np.testing.assert_allclose(H.etaeta, li_derivative(U, P, ("eta", "eta")), atol=1e-12)
    np.testing.assert_allclose(H.xieta, li_derivative(U, P, ("xi", "eta")), atol=1e-12)
    np.testing.assert_allclose(H.xitheta, b * li_derivative(U, P, ("xi", "theta")), atol=1e-12)
    np.testing.assert_allclose(H.thetatheta, b * b * li_derivative(U, P, ("theta", "theta")),
                               atol=1e-12)
    raw = hessian_se2(U, P, normalize=False)
    np.testing.assert_allclose(raw.xitheta * b, H.xitheta, atol=1e-12)
    M = H.matrix()
    assert M.shape == (N_ORIENT,) + SHAPE + (3, 3)
    np.testing.assert_array_equal(M, np.swapaxes(M, -1, -2))


def test_hessian_of_dark_line_score():
    # dark horizontal line in every slice: curvature across (eta) positive,
    # along (xi) near zero at theta = 0
    y = np.arange(48)[:, None] * np.ones((1, 48))
    line = -np.exp(-((y - 24) ** 2) / 8)
    U = np.repeat(line[None], N_ORIENT, axis=0)
    H = hessian_se2(U, P)
    assert H.etaeta[0, 24, 10] > 0
    assert abs(H.xixi[0, 24, 10]) < 1e-10 * abs(H.etaeta[0, 24, 10])


def test_gauge_eig_sorted_and_signed():
    A = np.diag([3.0, -0.5, 1.0])
    G = gauge_eig(A[None])
    np.testing.assert_allclose(G.values[0], [-0.5, 1.0, 3.0])
    assert isinstance(G, GaugeFrameField)
    # largest component of each eigenvector is positive
    vec = G.vectors[0]
    assert np.all(vec[np.argmax(np.abs(vec), axis=0), range(3)] > 0)
    np.testing.assert_allclose(np.abs(vec), np.eye(3)[:, [1, 2, 0]], atol=1e-12)


def test_gauge_eig_tie_break_keeps_frame_order():
    A = np.diag([2.0, -2.0, 5.0])
    G = gauge_eig(A)
    np.testing.assert_allclose(G.values, [2.0, -2.0, 5.0])
    np.testing.assert_allclose(G.vectors, np.eye(3), atol=1e-12)


def test_gauge_eig_reconstructs_and_flags_nonfinite():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(50, 3, 3))
    M = M + np.swapaxes(M, -1, -2)
    M[7, 0, 1] = np.nan
    G = gauge_eig(M)
    assert G.n_flagged == 1
    np.testing.assert_array_equal(G.values[7], 0.0)
    good = np.arange(50) != 7
    rec = np.einsum("nij,nj,nkj->nik", G.vectors[good], G.values[good], G.vectors[good])
    np.testing.assert_allclose(rec, M[good], atol=1e-12)
    assert np.all(np.diff(np.abs(G.values), axis=-1) >= 0)


def test_sym3_matches_lapack():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(2000, 3, 3))
    M = M + np.swapaxes(M, -1, -2)
    ref = np.linalg.eigvalsh(M)
    ref = np.take_along_axis(ref, np.argsort(np.abs(ref), axis=-1, kind="stable"), axis=-1)
    got = sym3_eigvalsh(M[:, 0, 0], M[:, 0, 1], M[:, 0, 2], M[:, 1, 1], M[:, 1, 2], M[:, 2, 2])
    np.testing.assert_allclose(got, ref, atol=1e-12)


@pytest.mark.parametrize("diag", [(1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (2.0, 2.0, -1.0)])
def test_sym3_degenerate(diag):
    a, b, c = diag
    got = sym3_eigvalsh(a, 0.0, 0.0, b, 0.0, c)
    ref = sorted(diag, key=abs)
    np.testing.assert_allclose(np.sort(got), np.sort(ref), atol=1e-7)


def test_gauge_eigenvalues_match_gauge_eig():
    U = smooth_score(shape=(24, 24))
    H = hessian_se2(U, P)
    a = gauge_eigenvalues(H, chunk=1000)
    b = gauge_eig(H).values
    np.testing.assert_allclose(np.abs(a), np.abs(b), atol=1e-12)
    assert isinstance(H, HessianField)
