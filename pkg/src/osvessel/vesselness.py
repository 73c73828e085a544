"""Vesselness on scale-orientation scores and the 2D Frangi baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image
from .ndfield import _workers, angular_spectral_op, dft2, gaussian_derivative, gaussian_multiplier, idft2
from .se2ops import Se2Params, frame_hessian_slice, regularize, sym3_eigvalsh
from .wavelets import CakeParams, MultiScaleParams, build_ms_kernels

__all__ = [
    "VesselnessParams",
    "MeasureFields",
    "measures_xi_eta",
    "measures_gauge",
    "vesselness_core",
    "vesselness_layer",
    "default_kernels",
    "vesselness_sim2",
    "frangi_multiscale",
    "frangi_scale_responses",
    "OrientationScoreVesselness",
    "FrangiVesselness",
]

DEFAULT_SCALES = (1.5, 2.4, 3.8, 6.0, 9.5)

_VARIANTS = {
    "gauge": "gauge",
    "xi_eta": "xi_eta",
    "xi-eta": "xi_eta",
    "frangi": "frangi2d",
    "frangi2d": "frangi2d",
}
_POLARITY = {
    "dark": "dark_vessels",
    "dark_vessels": "dark_vessels",
    "bright": "bright_vessels",
    "bright_vessels": "bright_vessels",
}


@dataclass(frozen=True)
class VesselnessParams:
    """Settings shared by every vesselness variant.

    ``beta = c_beta / a`` and ``sigma_s = sigma_s_factor * a`` per scale
    layer ``a``; ``sigma2 = sigma2_factor * max(S)`` per layer.
    """

    sigma1: float = 0.5
    sigma2_factor: float = 0.2
    variant: str = "gauge"
    scales: tuple = DEFAULT_SCALES
    c_beta: float = 0.05
    polarity: str = "dark_vessels"
    n_orient: int = 12
    sigma_s_factor: float = 0.5

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; use gauge, xi_eta or frangi2d")
        if self.polarity not in _POLARITY:
            raise ValueError(f"unknown polarity {self.polarity!r}")
        object.__setattr__(self, "variant", _VARIANTS[self.variant])
        object.__setattr__(self, "polarity", _POLARITY[self.polarity])
        object.__setattr__(self, "scales", tuple(float(a) for a in self.scales))
        if not self.sigma1 > 0:
            raise ValueError("sigma1 must be > 0")
        if not 0 < self.sigma2_factor <= 1:
            raise ValueError("sigma2_factor must lie in (0, 1]")
        if not self.scales or any(a <= 0 for a in self.scales):
            raise ValueError("scales must be positive")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError("scales must be strictly increasing")
        if not self.c_beta > 0:
            raise ValueError("c_beta must be > 0")
        if not self.sigma_s_factor > 0:
            raise ValueError("sigma_s_factor must be > 0")

    def se2(self, a):
        """Derivative settings for scale layer ``a`` (px)."""
        return Se2Params(beta=self.c_beta / a, sigma_s=self.sigma_s_factor * a)


@dataclass
class MeasureFields:
    """Anisotropy ratio ``R``, structure ``S >= 0`` and convexity ``Q``."""

    R: np.ndarray
    S: np.ndarray
    Q: np.ndarray


def _guarded_ratio(num, den, scale=None):
    """``num/den`` with ``+inf`` wherever ``|den|`` is negligible for the layer.

    ``scale`` is the layer maximum of ``|den|``; it defaults to that of ``den``.
    """
    if scale is None:
        scale = np.max(np.abs(den)) if den.size else 0.0
    small = np.abs(den) <= np.finfo(float).eps * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / np.where(small, 1.0, den)
    r[small] = np.inf
    return r


def measures_xi_eta(U_layer, se2):
    """R, S, Q from the regularized frame derivatives ``d_xi^2`` and ``d_eta^2`` of ``Re U``."""
    V = regularize(np.asarray(getattr(U_layer, "data", U_layer)).real.astype(float), se2)
    n = V.shape[0]
    parts = [frame_hessian_slice(V[j], None, None, j * np.pi / n) for j in range(n)]
    hxx = np.stack([sl["xixi"] for sl in parts])
    hee = np.stack([sl["etaeta"] for sl in parts])
    return MeasureFields(_guarded_ratio(hxx, hee), hxx**2 + hee**2, hee)


def measures_gauge(G):
    """R, S, Q from gauge eigenvalues with ``c = (lambda2 + lambda3) / 2``.

    ``G`` is a :class:`~osvessel.se2ops.GaugeFrameField` or an array whose
    last axis holds the sorted eigenvalues.
    """
    lam = np.asarray(getattr(G, "values", G), dtype=float)
    l1 = lam[..., 0]
    c = 0.5 * (lam[..., 1] + lam[..., 2])
    return MeasureFields(_guarded_ratio(l1, c), l1**2 + c**2, c)


def vesselness_core(m, sigma1=0.5, sigma2_factor=0.2, s_max=None):
    """Frangi-form response, exactly 0 wherever ``Q <= 0``.

    The structure term uses ``S / max(S)`` so that
    ``sigma2 = sigma2_factor * max(S)`` becomes a fixed fraction and the
    response does not change when the image contrast is scaled. ``s_max``
    overrides the maximum, e.g. to share it between layers.
    """
    S = np.asarray(m.S, dtype=float)
    if s_max is None:
        s_max = float(np.max(S)) if S.size else 0.0
    smax = float(s_max)
    out = np.zeros(S.shape)
    if not smax > 0 or not np.isfinite(smax):
        return out
    R = np.asarray(m.R, dtype=float)
    Q = np.asarray(m.Q, dtype=float)
    keep = Q > 0
    with np.errstate(over="ignore", invalid="ignore"):
        r_term = np.exp(-(R[keep] ** 2) / (2 * sigma1**2))
    s_term = -np.expm1(-(S[keep] / smax) / (2 * sigma2_factor**2))
    vals = r_term * s_term
    out[keep] = np.where(np.isfinite(vals), vals, 0.0)
    return out


# above this many voxels per layer intermediate fields are stored as float32
FLOAT32_VOXELS = 1 << 24


def _smoothed_layer(spec, kernels, i, sigma_s, dtype):
    """``Re U`` of layer ``i`` blurred spatially with std ``sigma_s``, one slice at a time.

    ``spec`` is ``dft2(f)`` of a real image. ``Re U`` only sees the even
    part ``(F(k) + F(-k))/2`` of each filter, so it is obtained with a
    half-spectrum inverse transform; the Gaussian blur is folded in.
    """
    h, w = kernels.shape
    half = w // 2 + 1
    g = gaussian_multiplier(h, sigma_s)[:, None] * gaussian_multiplier(w, sigma_s)[None, :half]
    ctype = np.result_type(dtype, np.complex64)
    sg = (spec[:, :half] * g).astype(ctype)
    n = kernels.n_orient
    out = np.empty((n, h, w), dtype)
    for j in range(n):
        even = 0.5 * (kernels.filter(i, j) + kernels.filter(i, j + n))[:, :half]
        out[j] = sfft.irfft2(sg * even.astype(dtype), s=(h, w), norm="ortho", workers=_workers())
    return out


# rows per call of the closed-form eigenvalue solver on large slices
EIG_ROWS = 256


def _gauge_terms(hs, rows=EIG_ROWS):
    """``lambda1`` and ``(lambda2 + lambda3)/2`` of one Hessian slice, in row blocks."""
    keys = ("xixi", "xieta", "xitheta", "etaeta", "etatheta", "thetatheta")
    h = hs["xixi"].shape[0]
    num = np.empty_like(hs["xixi"])
    den = np.empty_like(hs["xixi"])
    for r in range(0, h, rows):
        lam = sym3_eigvalsh(*(hs[k][r:r + rows] for k in keys))
        num[r:r + rows] = lam[..., 0]
        den[r:r + rows] = 0.5 * (lam[..., 1] + lam[..., 2])
    return num, den


def _layer_terms(vs, se2, variant):
    """Numerator and denominator of ``R`` per voxel (``Q`` is the denominator).

    ``xi_eta``: ``d_xi^2 U`` and ``d_eta^2 U``; ``gauge``: ``lambda1`` and
    ``c = (lambda2 + lambda3)/2``. ``vs`` is the spatially smoothed real
    score; the angular regularization is applied here. The returned
    arrays reuse the buffers of the angular derivatives.
    """
    n = vs.shape[0]
    V = angular_spectral_op(vs, se2.sigma_theta, 0)
    if variant == "xi_eta":
        # vs is not needed any more; its buffer takes the denominator
        for j in range(n):
            hs = frame_hessian_slice(V[j], None, None, j * np.pi / n)
            V[j], vs[j] = hs["xixi"], hs["etaeta"]
        return V, vs
    Vt = angular_spectral_op(vs, se2.sigma_theta, 1)
    Vtt = angular_spectral_op(vs, se2.sigma_theta, 2)
    del vs
    for j in range(n):
        hs = frame_hessian_slice(V[j], Vt[j], Vtt[j], j * np.pi / n, se2.beta)
        V[j], Vt[j] = _gauge_terms(hs)
    return V, Vt


def _terms_vesselness(num, den, sigma1, sigma2_factor, reduce_theta):
    """Core response from ``R = num/den``, ``S = num^2 + den^2``, ``Q = den``, slice by slice."""
    den_max = 0.0
    s_max = 0.0
    for j in range(num.shape[0]):
        nj, dj = num[j].astype(float), den[j].astype(float)
        den_max = max(den_max, float(np.max(np.abs(dj))))
        s_max = max(s_max, float(np.max(nj * nj + dj * dj)))
    shape = num.shape[1:] if reduce_theta else num.shape
    out = np.zeros(shape)
    for j in range(num.shape[0]):
        nj, dj = num[j].astype(float), den[j].astype(float)
        m = MeasureFields(_guarded_ratio(nj, dj, den_max), nj * nj + dj * dj, dj)
        v = vesselness_core(m, sigma1, sigma2_factor, s_max=s_max)
        if reduce_theta:
            out += v
        else:
            out[j] = v
    return out


def _layer_vesselness(spec, kernels, i, se2, variant, sigma1, sigma2_factor, reduce_theta=True):
    n_vox = kernels.n_orient * kernels.shape[0] * kernels.shape[1]
    dtype = np.float32 if n_vox > FLOAT32_VOXELS else np.float64
    num, den = _layer_terms(_smoothed_layer(spec, kernels, i, se2.sigma_s, dtype), se2, variant)
    return _terms_vesselness(num, den, sigma1, sigma2_factor, reduce_theta)


def vesselness_layer(U_layer, se2, variant="gauge", sigma1=0.5, sigma2_factor=0.2):
    """SE(2) vesselness of one score layer ``(n_orient, H, W)``, per orientation.

    Derivatives act on ``Re U`` regularized with ``se2``.
    """
    U = np.asarray(getattr(U_layer, "data", U_layer))
    if U.ndim != 3:
        raise ValueError("expected a score layer of shape (n_orient, H, W)")
    h, w = U.shape[-2:]
    g = gaussian_multiplier(h, se2.sigma_s)[:, None] * gaussian_multiplier(w, se2.sigma_s)[None, :]
    vs = idft2(dft2(U.real.astype(float)) * g).real
    num, den = _layer_terms(vs, se2, _VARIANTS[variant])
    return _terms_vesselness(num, den, sigma1, sigma2_factor, reduce_theta=False)


def _normalized(x):
    peak = float(np.max(x)) if x.size else 0.0
    return x / peak if peak > 0 else np.zeros_like(x)


def _prepare(f, polarity):
    f = check_image(f)
    return -f if _POLARITY[polarity] == "bright_vessels" else f


def _is_flat(f):
    """True for a constant image, whose derivatives are pure rounding noise."""
    return float(np.ptp(f)) <= 1e-12 * max(1.0, float(np.max(np.abs(f))))


def default_kernels(shape, params=None):
    """Multi-scale bank for ``params.scales`` on an image of ``shape``."""
    params = params or VesselnessParams()
    ms = MultiScaleParams.from_scales(params.scales)
    return build_ms_kernels(ms, CakeParams(n_orient=params.n_orient), shape[1], shape[0])


def vesselness_sim2(f, params=None, kernels=None, return_layers=False):
    """Multi-scale SE(2) vesselness map in ``[0, 1]``.

    Per active layer the response is summed over orientations and divided
    by its maximum; the layer maps are summed and divided by the global
    maximum. The merged residual layer is skipped.

    Parameters
    ----------
    f : ndarray, shape (H, W)
    params : VesselnessParams
        ``variant`` must be ``gauge`` or ``xi_eta``.
    kernels : KernelSet, optional
        Multi-scale bank for ``f.shape``; built from ``params`` when omitted.
    return_layers : bool
        Also return the per-layer orientation sums before normalization.
    """
    params = params or VesselnessParams()
    if params.variant not in ("gauge", "xi_eta"):
        raise ValueError("vesselness_sim2 needs the gauge or xi_eta variant")
    f = _prepare(f, params.polarity)
    if kernels is None:
        kernels = default_kernels(f.shape, params)
    if not kernels.is_multiscale:
        raise ValueError("vesselness_sim2 needs a multi-scale kernel bank")
    if kernels.shape != f.shape:
        raise ValueError(f"image shape {f.shape} does not match kernel shape {kernels.shape}")
    if _is_flat(f):
        n_active = kernels.n_layers - (1 if kernels.has_residual else 0)
        zeros = np.zeros(f.shape)
        return (zeros, np.zeros((n_active,) + f.shape)) if return_layers else zeros
    spec = dft2(f)
    total = np.zeros(f.shape)
    layers = []
    n_active = kernels.n_layers - (1 if kernels.has_residual else 0)
    for i in range(n_active):
        v = _layer_vesselness(spec, kernels, i, params.se2(kernels.scales[i]), params.variant,
                              params.sigma1, params.sigma2_factor)
        layers.append(v)
        total += _normalized(v)
    out = _normalized(total)
    return (out, np.stack(layers)) if return_layers else out


def _frangi_measures(f, a):
    hxx = a**2 * gaussian_derivative(f, a, (0, 2))
    hyy = a**2 * gaussian_derivative(f, a, (2, 0))
    hxy = a**2 * gaussian_derivative(f, a, (1, 1))
    half_tr = 0.5 * (hxx + hyy)
    rad = np.sqrt((0.5 * (hxx - hyy)) ** 2 + hxy**2)
    e1, e2 = half_tr - rad, half_tr + rad
    swap = np.abs(e1) > np.abs(e2)
    l1 = np.where(swap, e2, e1)
    l2 = np.where(swap, e1, e2)
    return MeasureFields(_guarded_ratio(l1, l2), l1**2 + l2**2, l2)


def frangi_scale_responses(f, scales=DEFAULT_SCALES, sigma1=0.5, sigma2_factor=0.2,
                           polarity="dark_vessels"):
    """Single-scale Frangi responses with one structure normalization shared by all scales.

    Returns an array ``(n_scales, H, W)``; comparing layer maxima tells
    which scale fits a structure best.
    """
    f = _prepare(f, polarity)
    if _is_flat(f):
        return np.zeros((len(scales),) + f.shape)
    ms = [_frangi_measures(f, a) for a in scales]
    smax = max(float(np.max(m.S)) for m in ms)
    return np.stack([vesselness_core(m, sigma1, sigma2_factor, s_max=smax) for m in ms])


def frangi_multiscale(f, scales=DEFAULT_SCALES, sigma1=0.5, sigma2_factor=0.2,
                      polarity="dark_vessels"):
    """2D Frangi vesselness summed over scales, in ``[0, 1]``.

    Each scale uses the ``a^2``-normalized Gaussian Hessian with std ``a``;
    eigenvalues are ordered ``|l1| <= |l2|`` and dark vessels need
    ``l2 > 0``. Scale maps are max-normalized, summed and normalized again.
    """
    f = _prepare(f, polarity)
    total = np.zeros(f.shape)
    if _is_flat(f):
        return total
    for a in scales:
        total += _normalized(vesselness_core(_frangi_measures(f, a), sigma1, sigma2_factor))
    return _normalized(total)


class OrientationScoreVesselness(TransformerMixin, BaseEstimator):
    """Crossing-preserving multi-scale vesselness on orientation scores.

    ``fit`` builds the multi-scale wavelet bank for the image size;
    ``transform`` maps an image to a vesselness map in ``[0, 1]``.
    """

    def __init__(self, variant="gauge", scales=DEFAULT_SCALES, n_orient=12, c_beta=0.05,
                 sigma1=0.5, sigma2_factor=0.2, sigma_s_factor=0.5, polarity="dark_vessels"):
        self.variant = variant
        self.scales = scales
        self.n_orient = n_orient
        self.c_beta = c_beta
        self.sigma1 = sigma1
        self.sigma2_factor = sigma2_factor
        self.sigma_s_factor = sigma_s_factor
        self.polarity = polarity

    def _params(self):
        return VesselnessParams(sigma1=self.sigma1, sigma2_factor=self.sigma2_factor,
                                variant=self.variant, scales=tuple(self.scales),
                                c_beta=self.c_beta, polarity=self.polarity,
                                n_orient=self.n_orient, sigma_s_factor=self.sigma_s_factor)

    def fit(self, X, y=None):
        X = check_image(X)
        self.params_ = self._params()
        if self.params_.variant == "frangi2d":
            raise ValueError("use FrangiVesselness for the frangi2d variant")
        self.kernels_ = default_kernels(X.shape, self.params_)
        return self

    def transform(self, X):
        check_is_fitted(self, "kernels_")
        return vesselness_sim2(X, self.params_, self.kernels_)


class FrangiVesselness(TransformerMixin, BaseEstimator):
    """Multi-scale 2D Frangi vesselness (baseline)."""

    def __init__(self, scales=DEFAULT_SCALES, sigma1=0.5, sigma2_factor=0.2,
                 polarity="dark_vessels"):
        self.scales = scales
        self.sigma1 = sigma1
        self.sigma2_factor = sigma2_factor
        self.polarity = polarity

    def fit(self, X, y=None):
        check_image(X)
        self.params_ = VesselnessParams(sigma1=self.sigma1, sigma2_factor=self.sigma2_factor,
                                        variant="frangi2d", scales=tuple(self.scales),
                                        polarity=self.polarity)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        p = self.params_
        return frangi_multiscale(X, p.scales, p.sigma1, p.sigma2_factor, p.polarity)
