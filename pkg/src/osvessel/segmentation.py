"""Binary vessel masks from vesselness maps.

Adaptive thresholding against a wide Gaussian background estimate followed
by connected-component filtering on size and elongation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image
from .ndfield import gaussian_blur
from .vesselness import (
    DEFAULT_SCALES,
    VesselnessParams,
    default_kernels,
    frangi_multiscale,
    vesselness_sim2,
)

__all__ = [
    "SegParams",
    "Component",
    "adaptive_threshold",
    "connected_components",
    "filter_components",
    "segment",
    "VesselSegmenter",
]

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegParams:
    """Background scale ``gamma`` (px), threshold ``t``, minimum size ``tau`` (px) and elongation ``nu``."""

    gamma: float = 100.0
    t: float = 0.05
    tau: int = 500
    nu: float = 0.85

    def __post_init__(self):
        if not self.gamma >= 10:
            raise ValueError("gamma must be >= 10 px")
        if not 0 <= self.t <= 1:
            raise ValueError("t must lie in [0, 1]")
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if not 0 <= self.nu <= 1:
            raise ValueError("nu must lie in [0, 1]")


@dataclass
class Component:
    """One 8-connected set of mask pixels.

    ``pixels`` is an ``(n, 2)`` array of ``(row, col)``; ``moments`` the
    2x2 covariance of those coordinates.
    """

    pixels: np.ndarray
    centroid: np.ndarray
    moments: np.ndarray
    elongation: float
    label: int = field(default=0)

    @property
    def size(self):
        return int(self.pixels.shape[0])


def adaptive_threshold(V, gamma=100.0, t=0.05):
    """``V - G_gamma * V > t`` with a periodic Gaussian of std ``gamma``; strict inequality."""
    if not gamma >= 10:
        raise ValueError("gamma must be >= 10 px")
    V = check_image(V, "vesselness map")
    return (V - gaussian_blur(V, gamma)) > t


def moment_elongation(cov):
    """``1 - sqrt(mu_min / mu_max)`` of a 2x2 covariance; 0 when degenerate."""
    mu = np.linalg.eigvalsh(cov)
    if not mu[1] > 0:
        return 0.0
    return float(1.0 - np.sqrt(max(mu[0], 0.0) / mu[1]))


def skeleton_elongation(pixels):
    """``1 - area / L^2`` with ``L`` the skeleton length in pixels, clipped at 0.

    For a straight ``w x L`` strip this equals ``1 - w/L``, the same value
    as the moment measure, but it stays meaningful for curved or branching
    shapes whose coordinate covariance is nearly isotropic.
    """
    n = pixels.shape[0]
    if n < 2:
        return 0.0
    lo = pixels.min(axis=0)
    ext = pixels.max(axis=0) - lo + 3
    img = np.zeros(tuple(int(e) for e in ext), dtype=bool)
    img[pixels[:, 0] - lo[0] + 1, pixels[:, 1] - lo[1] + 1] = True
    length = int(skeletonize(img).sum())
    if length == 0:
        return 0.0
    return float(max(0.0, 1.0 - n / length**2))


def connected_components(mask):
    """8-connected components with coordinate moments and elongation.

    Elongation is the larger of ``1 - sqrt(mu_min/mu_max)`` (coordinate
    covariance eigenvalues) and the skeleton thinness
    ``1 - area / skeleton_length^2``; both agree on straight strips.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2D")
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return []
    coords = np.argwhere(labels)
    ids = labels[coords[:, 0], coords[:, 1]]
    order = np.argsort(ids, kind="stable")
    coords, ids = coords[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, n + 2))
    out = []
    for k in range(n):
        pix = coords[bounds[k]:bounds[k + 1]]
        pf = pix.astype(float)
        centroid = pf.mean(axis=0)
        d = pf - centroid
        cov = d.T @ d / len(pf)
        e = max(moment_elongation(cov), skeleton_elongation(pix))
        out.append(Component(pix, centroid, cov, e, label=k + 1))
    return out


def filter_components(components, tau=500, nu=0.85, shape=None):
    """Rasterize the components with ``size >= tau`` and ``elongation >= nu``.

    ``shape`` is needed when ``components`` may be empty; otherwise the
    extent of the pixels is used.
    """
    if shape is None:
        if not components:
            raise ValueError("shape is required for an empty component list")
        top = np.max([c.pixels.max(axis=0) for c in components], axis=0)
        shape = (int(top[0]) + 1, int(top[1]) + 1)
    out = np.zeros(shape, dtype=bool)
    for c in components:
        if c.size >= tau and c.elongation >= nu:
            out[c.pixels[:, 0], c.pixels[:, 1]] = True
    return out


def vesselness_map(f, vparams=None, kernels=None):
    """Vesselness of ``f`` for the variant in ``vparams``."""
    vparams = vparams or VesselnessParams()
    if vparams.variant == "frangi2d":
        return frangi_multiscale(f, vparams.scales, vparams.sigma1, vparams.sigma2_factor,
                                 vparams.polarity)
    return vesselness_sim2(f, vparams, kernels)


def mask_from_vesselness(V, sparams=None):
    sparams = sparams or SegParams()
    raw = adaptive_threshold(V, sparams.gamma, sparams.t)
    return filter_components(connected_components(raw), sparams.tau, sparams.nu, raw.shape)


def segment(f, vparams=None, sparams=None, kernels=None):
    """Vessel mask of image ``f``: vesselness, adaptive threshold, component filtering."""
    return mask_from_vesselness(vesselness_map(f, vparams, kernels), sparams)


class VesselSegmenter(ClassifierMixin, BaseEstimator):
    """Pixel classifier (vessel = 1) built on the vesselness pipeline.

    ``fit`` only prepares the wavelet bank for the image size (the method is
    unsupervised); ``y`` is ignored. ``decision_function`` returns the
    background-corrected vesselness ``V - G_gamma * V`` whose strict
    exceedance of ``t`` defines the raw mask.
    """

    def __init__(self, variant="gauge", scales=DEFAULT_SCALES, n_orient=12, c_beta=0.05,
                 sigma1=0.5, sigma2_factor=0.2, polarity="dark_vessels",
                 gamma=100.0, t=0.05, tau=500, nu=0.85):
        self.variant = variant
        self.scales = scales
        self.n_orient = n_orient
        self.c_beta = c_beta
        self.sigma1 = sigma1
        self.sigma2_factor = sigma2_factor
        self.polarity = polarity
        self.gamma = gamma
        self.t = t
        self.tau = tau
        self.nu = nu

    def fit(self, X, y=None):
        X = check_image(X)
        self.vparams_ = VesselnessParams(sigma1=self.sigma1, sigma2_factor=self.sigma2_factor,
                                         variant=self.variant, scales=tuple(self.scales),
                                         c_beta=self.c_beta, polarity=self.polarity,
                                         n_orient=self.n_orient)
        self.sparams_ = SegParams(self.gamma, self.t, self.tau, self.nu)
        self.kernels_ = (None if self.vparams_.variant == "frangi2d"
                         else default_kernels(X.shape, self.vparams_))
        self.shape_ = X.shape
        self.classes_ = np.array([False, True])
        return self

    def _vesselness(self, X):
        check_is_fitted(self, "sparams_")
        X = check_image(X)
        if X.shape != self.shape_:
            raise ValueError(f"fitted for shape {self.shape_}, got {X.shape}")
        return vesselness_map(X, self.vparams_, self.kernels_)

    def decision_function(self, X):
        V = self._vesselness(X)
        return V - gaussian_blur(V, self.sparams_.gamma)

    def predict(self, X):
        return mask_from_vesselness(self._vesselness(X), self.sparams_)

    def score(self, X, y, sample_weight=None):
        """Pixel accuracy against a ground-truth mask ``y``."""
        if sample_weight is not None:
            warnings.warn("sample_weight is ignored", UserWarning, stacklevel=2)
        y = np.asarray(y).astype(bool)
        pred = self.predict(X)
        if y.shape != pred.shape:
            raise ValueError("ground truth shape does not match the image")
        return float(np.mean(pred == y))
