"""Forward and inverse (scale-)orientation score transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image
from .ndfield import dft2, flip_frequencies, frequency_grid, idft2
from .wavelets import CakeParams, KernelSet, MultiScaleParams, build_cake_kernels, build_ms_kernels

__all__ = [
    "IllPosedReconstruction",
    "OrientationScore",
    "ScaleOrientationScore",
    "os_forward",
    "os_reconstruct_exact",
    "sos_forward",
    "sos_layer",
    "sos_reconstruct",
    "OrientationScoreTransform",
    "ScaleOrientationScoreTransform",
]

DELTA = 1e-3
CUTOFF = 1e-12


class IllPosedReconstruction(ValueError):
    """The stability map is too small inside the passband to invert."""


@dataclass
class OrientationScore:
    """Complex score ``U_f(x, theta_j)`` for ``theta_j = j*pi/n_orient``, shape ``(n_orient, H, W)``."""

    data: np.ndarray
    kernels: KernelSet

    @property
    def orientations(self):
        return self.kernels.orientations

    def full_circle(self):
        """Score over ``[0, 2*pi)`` using ``U(theta + pi) = conj(U(theta))`` (real images)."""
        return np.concatenate([self.data, np.conj(self.data)], axis=0)


@dataclass
class ScaleOrientationScore:
    """Complex field ``(W f)(x, theta_j, a_i)`` of shape ``(n_layers, n_orient, H, W)``.

    The last layer is the merged residual when ``kernels.has_residual``.
    """

    data: np.ndarray
    kernels: KernelSet

    @property
    def scales(self):
        return self.kernels.scales

    def layer(self, i):
        return self.data[i]


def _check_dims(f, kernels):
    if f.shape != kernels.shape:
        raise ValueError(f"image shape {f.shape} does not match kernel shape {kernels.shape}")


def os_forward(f, kernels):
    """Correlate ``f`` with every stored cake wavelet (spectrally, periodic)."""
    f = check_image(f)
    _check_dims(f, kernels)
    spec = dft2(f)
    return OrientationScore(idft2(kernels.layer(0) * spec[None]), kernels)


def os_reconstruct_exact(score, delta=DELTA, cutoff=CUTOFF):
    """Invert :func:`os_forward` with the stability map ``M_psi``.

    The orientation integral runs over the full circle; the half not stored
    enters through ``U(theta + pi) = conj(U(theta))``. Inside the passband
    ``M_psi`` must exceed ``delta``; elsewhere frequencies with
    ``M_psi <= cutoff`` are dropped.
    """
    ks = score.kernels
    m = ks.stability
    rho_hat = ks.params["cake"]["inflection"] * 0.5
    ky, kx = frequency_grid(ks.shape)
    in_band = np.hypot(ky, kx) <= rho_hat
    if np.min(m[in_band]) < delta:
        raise IllPosedReconstruction(
            f"M_psi drops to {np.min(m[in_band]):.2e} < {delta:g} inside the passband"
        )
    filters = ks.layer(0)
    spec = dft2(score.data)
    acc = np.sum(filters * spec, axis=0)
    acc += np.sum(flip_frequencies(filters) * np.conj(flip_frequencies(spec)), axis=0)
    inv = np.zeros_like(m)
    keep = m > cutoff
    inv[keep] = 1.0 / m[keep]
    return idft2(acc * inv).real


def sos_layer(spec, kernels, i):
    """Score layer ``i`` given the image spectrum ``spec = dft2(f)``."""
    return idft2(kernels.layer(i) * spec[None])


def sos_forward(f, kernels):
    """Scale-orientation score of ``f``, one correlation per (layer, orientation)."""
    f = check_image(f)
    _check_dims(f, kernels)
    spec = dft2(f)
    data = np.stack([sos_layer(spec, kernels, i) for i in range(kernels.n_layers)])
    return ScaleOrientationScore(data, kernels)


def sos_reconstruct(score, layers=None):
    """Recombine a scale-orientation score by summation over scales and angles.

    ``layers`` restricts the sum (for ablations); by default every stored
    layer, including the residual, is used.
    """
    ks = score.kernels
    data = score.data
    if layers is None:
        if data.shape[0] != ks.n_layers:
            raise ValueError(
                f"score has {data.shape[0]} layers but the kernels define {ks.n_layers}"
                " (residual layer missing?)"
            )
        layers = range(ks.n_layers)
    return 2.0 * sum(data[i].real.sum(axis=0) for i in layers)


class OrientationScoreTransform(TransformerMixin, BaseEstimator):
    """Single-scale invertible orientation score transform with cake wavelets.

    ``fit`` builds the wavelet bank for the image size; ``transform`` returns
    the complex score ``(n_orient, H, W)`` and ``inverse_transform`` the
    exact reconstruction.
    """

    def __init__(self, n_orient=12, spline_order=3, inflection=0.8, taylor_order=8,
                 window_scale=32.0**2):
        self.n_orient = n_orient
        self.spline_order = spline_order
        self.inflection = inflection
        self.taylor_order = taylor_order
        self.window_scale = window_scale

    def _params(self):
        return CakeParams(self.n_orient, self.spline_order, self.inflection,
                          self.taylor_order, self.window_scale)

    def fit(self, X, y=None):
        X = check_image(X)
        self.kernels_ = build_cake_kernels(self._params(), X.shape[1], X.shape[0])
        return self

    def transform(self, X):
        check_is_fitted(self, "kernels_")
        return os_forward(X, self.kernels_).data

    def inverse_transform(self, U):
        check_is_fitted(self, "kernels_")
        return os_reconstruct_exact(OrientationScore(np.asarray(U), self.kernels_))


class ScaleOrientationScoreTransform(TransformerMixin, BaseEstimator):
    """Multi-scale orientation score transform.

    ``transform`` returns ``(n_active + 1, n_orient, H, W)`` where the last
    layer is the merged residual; ``inverse_transform`` sums over scales and
    orientations.
    """

    def __init__(self, scales=(1.5, 2.4, 3.8, 6.0, 9.5), n_orient=12, spline_order=3,
                 n_rho=8, window_sx=None, window_sy=None, use_window=True):
        self.scales = scales
        self.n_orient = n_orient
        self.spline_order = spline_order
        self.n_rho = n_rho
        self.window_sx = window_sx
        self.window_sy = window_sy
        self.use_window = use_window

    def fit(self, X, y=None):
        X = check_image(X)
        ms = MultiScaleParams.from_scales(self.scales, n_rho=self.n_rho, window_sx=self.window_sx,
                                          window_sy=self.window_sy, use_window=self.use_window)
        cake = CakeParams(n_orient=self.n_orient, spline_order=self.spline_order)
        self.kernels_ = build_ms_kernels(ms, cake, X.shape[1], X.shape[0])
        return self

    def transform(self, X):
        check_is_fitted(self, "kernels_")
        return sos_forward(X, self.kernels_).data

    def inverse_transform(self, W):
        check_is_fitted(self, "kernels_")
        return sos_reconstruct(ScaleOrientationScore(np.asarray(W), self.kernels_))
