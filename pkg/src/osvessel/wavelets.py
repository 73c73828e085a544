"""Cake wavelets and multi-scale cake kernels.

Filters are stored as real, nonnegative transfer functions sampled on the
DFT grid of the target image. Only the half circle ``theta_j = j*pi/n_orient``
is stored; the filter at ``theta_j + pi`` is the frequency-flipped copy
(``psi_{theta+pi}(x) = psi_theta(-x)``), which is exact on the grid because
all frequency-domain sampling goes through :func:`ndfield.alias_average`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import comb, factorial, gammaincc

from .ndfield import _workers, alias_average, flip_frequencies

__all__ = [
    "CakeParams",
    "MultiScaleParams",
    "KernelSet",
    "bspline",
    "angular_part",
    "radial_part",
    "ms_radial_envelope",
    "build_cake_kernels",
    "build_ms_kernels",
]

NYQUIST = 0.5  # cycles/px
MIN_SIZE = 32
# Filter banks bigger than this many samples are rebuilt per request.
CACHE_BUDGET = 64_000_000
MAX_WINDOW_COPIES = 4


def bspline(k, x):
    """Centred cardinal B-spline of order ``k`` (support ``[-(k+1)/2, (k+1)/2]``)."""
    if k < 0:
        raise ValueError("spline order must be >= 0")
    x = np.asarray(x, dtype=float)
    half = (k + 1) / 2.0
    inside = np.abs(x) < half
    out = np.zeros_like(x)
    xi = x[inside]
    acc = np.zeros_like(xi)
    for i in range(k + 2):
        shifted = xi + half - i
        if k == 0:
            term = (shifted > 0).astype(float)
        else:
            term = np.where(shifted > 0, shifted, 0.0) ** k
        acc += (-1) ** i * comb(k + 1, i) * term
    out[inside] = acc / factorial(k)
    return out if out.ndim else float(out)


def _spline_sum(k, x, lo, hi):
    """Sum of ``bspline(k, x + l)`` over integers ``lo <= l <= hi`` (bounds may be inf)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    finite = np.isfinite(x)
    if not finite.any():
        return out
    half = (k + 1) / 2.0
    xf = x[finite]
    l_min = math.floor(-xf.max() - half)
    l_max = math.ceil(-xf.min() + half)
    if np.isfinite(lo):
        l_min = max(l_min, int(lo))
    if np.isfinite(hi):
        l_max = min(l_max, int(hi))
    acc = np.zeros_like(xf)
    for l in range(l_min, l_max + 1):
        acc += bspline(k, xf + l)
    out[finite] = acc
    return out


@dataclass
class CakeParams:
    """Design parameters of single-scale cake wavelets.

    ``n_orient`` orientations are stored over ``[0, pi)``; the kernel design
    uses the full-circle count ``n_theta = 2 * n_orient``. ``inflection`` is
    the bending point of the radial profile as a fraction of Nyquist and
    ``window_scale`` the variance (px^2) of the spatial Gaussian window.
    """

    n_orient: int = 12
    spline_order: int = 3
    inflection: float = 0.8
    taylor_order: int = 8
    window_scale: float = 32.0**2

    def __post_init__(self):
        if self.n_orient < 3:
            raise ValueError("n_orient must be >= 3")
        if self.spline_order < 0:
            raise ValueError("spline_order must be >= 0")
        if not 0 < self.inflection <= 1:
            raise ValueError("inflection must lie in (0, 1] (fraction of Nyquist)")
        if self.taylor_order < 1:
            raise ValueError("taylor_order must be >= 1")
        if not self.window_scale > 0:
            raise ValueError("window_scale must be > 0")

    @property
    def n_theta(self):
        return 2 * self.n_orient

    @property
    def s_theta(self):
        return 2 * np.pi / self.n_theta

    @property
    def rho_hat(self):
        """Inflection point of the radial profile in cycles/px."""
        return self.inflection * NYQUIST

    @property
    def t(self):
        return math.sqrt(2 * self.rho_hat**2 / (1 + 2 * self.taylor_order))

    def orientations(self):
        return np.arange(self.n_orient) * np.pi / self.n_orient


@dataclass
class MultiScaleParams:
    """Log-radial sampling of the scale axis.

    Active layers sit at spatial scales ``a_l = a_minus * exp(l * s_rho)``
    for ``l < n_active``; layers ``n_active .. n_rho-1`` and every layer
    finer than ``a_minus`` are merged into one residual layer. ``window_sx``/``window_sy`` are the window variances
    (px^2) along and across the wavelet orientation at the finest scale;
    ``None`` means the defaults ``(4 a_minus)^2`` and ``(16 a_minus)^2``.
    ``use_window=False`` disables the window.
    """

    a_minus: float = 1.5
    s_rho: float = math.log(9.5 / 1.5) / 4
    n_rho: int = 8
    n_active: int = 5
    window_sx: float | None = None
    window_sy: float | None = None
    use_window: bool = True

    def __post_init__(self):
        if not self.a_minus > 0:
            raise ValueError("a_minus must be > 0")
        if not self.s_rho > 0:
            raise ValueError("s_rho must be > 0")
        if not 1 <= self.n_active <= self.n_rho:
            raise ValueError("need 1 <= n_active <= n_rho")

    @property
    def sx(self):
        return (4 * self.a_minus) ** 2 if self.window_sx is None else self.window_sx

    @property
    def sy(self):
        return (16 * self.a_minus) ** 2 if self.window_sy is None else self.window_sy

    def scales(self):
        return self.a_minus * np.exp(np.arange(self.n_active) * self.s_rho)

    @classmethod
    def from_scales(cls, scales, n_rho=None, **kw):
        """Parameters whose active layers sit at a given geometric scale list."""
        scales = np.asarray(scales, dtype=float)
        if scales.size < 1 or np.any(np.diff(scales) <= 0):
            raise ValueError("scales must be strictly increasing")
        if scales.size == 1:
            s_rho = kw.pop("s_rho", math.log(9.5 / 1.5) / 4)
        else:
            s_rho = math.log(scales[-1] / scales[0]) / (scales.size - 1)
        n_rho = scales.size + 3 if n_rho is None else n_rho
        return cls(a_minus=float(scales[0]), s_rho=s_rho, n_rho=n_rho,
                   n_active=scales.size, **kw)


def angular_part(params, phi, rho):
    """Angular profile ``A(phi)`` of the cake wavelet at orientation 0.

    For ``rho > 0`` this is a B-spline in ``(phi - pi/2)/s_theta`` wrapped on
    the circle; at ``rho == 0`` it is ``1/n_theta``.
    """
    phi = np.asarray(phi, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), phi.shape)
    k = params.spline_order
    s = params.s_theta
    d = np.mod(phi - np.pi / 2 + np.pi, 2 * np.pi) - np.pi
    reps = int(math.ceil((k + 1) / (2 * params.n_theta)))
    val = np.zeros_like(d)
    for m in range(-reps, reps + 1):
        val += bspline(k, (d + 2 * np.pi * m) / s)
    val = np.where(rho > 0, val, 1.0 / params.n_theta)
    return val if val.ndim else float(val)


def radial_part(params, rho):
    """Radial profile ``B(rho) = exp(-(rho/t)^2) * sum_{i<=N} (rho/t)^(2i)/i!``.

    ``t^2 = 2 rho_hat^2 / (1 + 2N)`` puts the inflection point of ``B`` at
    ``rho_hat``. The finite Taylor sum equals the regularized upper
    incomplete gamma function ``Q(N+1, (rho/t)^2)``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be >= 0")
    x = (rho / params.t) ** 2
    out = gammaincc(params.taylor_order + 1, x)
    return out if out.ndim else float(out)


def ms_radial_envelope(params, k, omega):
    """Log-radial envelopes ``B_l(omega) = B^k(log(omega a_minus)/s_rho + l)``.

    ``omega`` is angular frequency in rad/px (``2*pi*rho``); layer ``l``
    peaks at ``omega = 1/a_l``. Returns the per-layer values (leading axis
    ``l = 0..n_rho-1``) and their sum. ``omega == 0`` gives all zeros; the
    DC bin is owned by the coarsest layer of a kernel set.
    """
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore"):
        x = np.where(omega > 0, np.log(np.where(omega > 0, omega, 1.0) * params.a_minus) / params.s_rho, -np.inf)
    layers = np.stack([np.where(np.isfinite(x), bspline(k, x + l), 0.0)
                       for l in range(params.n_rho)])
    return layers, layers.sum(axis=0)


def _layer_envelope(params, k, omega, lo, hi):
    """Sum of log-radial B-spline layers ``lo..hi`` (inf bounds allowed), DC -> coarsest cap."""
    omega = np.asarray(omega, dtype=float)
    pos = omega > 0
    with np.errstate(divide="ignore"):
        x = np.where(pos, np.log(np.where(pos, omega, 1.0) * params.a_minus) / params.s_rho, -np.inf)
    val = _spline_sum(k, x, lo, hi)
    return np.where(pos, val, 1.0 if not np.isfinite(hi) else 0.0)


def _spatial_window(shape, std_along, std_across, theta):
    """Periodized anisotropic Gaussian window (peak 1) rotated to ``theta``.

    Periodic copies are only added when the Gaussian reaches past half the
    grid (8.5 standard deviations, where the tail drops below double
    precision), at most ``MAX_WINDOW_COPIES`` per side; the
    sum is rescaled to 1 at the origin so very wide windows tend to no
    window at all.
    """
    h, w = shape
    c, s = math.cos(theta), math.sin(theta)
    reach = 8.5 * max(std_along, std_across)
    py = min(MAX_WINDOW_COPIES, max(0, int(math.ceil((reach - h / 2) / h))))
    px = min(MAX_WINDOW_COPIES, max(0, int(math.ceil((reach - w / 2) / w))))

    def copies(fy, fx):
        y, x = fy * h, fx * w
        out = 0.0
        for my in range(-py, py + 1):
            for mx in range(-px, px + 1):
                yy = y + my * h
                xx = x + mx * w
                along = c * xx + s * yy
                across = -s * xx + c * yy
                out = out + np.exp(-0.5 * ((along / std_along) ** 2 + (across / std_across) ** 2))
        return out

    # a truncated sum is not exactly periodic: average the two aliases of
    # the -h/2 row and -w/2 column like the frequency samples
    out = alias_average(copies, shape)
    return out / out[0, 0]


def _apply_window(transfer, window):
    """Multiply the spatial kernel of a real transfer function by an even real window.

    The result is real because the window's spectrum is real and even.
    """
    kernel = sfft.ifft2(transfer, workers=_workers())
    return sfft.fft2(kernel * window, workers=_workers()).real


class KernelSet:
    """Bank of Fourier-domain orientation (and scale) filters for one image size.

    Attributes
    ----------
    shape : tuple of int
        ``(H, W)`` grid size.
    n_orient : int
        Stored orientations over ``[0, pi)``.
    scales : ndarray
        Active spatial scales (px); empty for a single-scale bank.
    has_residual : bool
        Whether the last stored layer is the merged residual layer.
    stability : ndarray or None
        ``M_psi = sum over the full circle of |psi_hat|^2`` (single scale).
    normalization : ndarray or None
        ``M(omega)``, the multi-scale normalization already divided out of
        the stored filters.
    params : dict
        Copy of the construction parameters.
    """

    def __init__(self, shape, n_orient, n_layers, make_filter, *, scales=(),
                 has_residual=False, stability=None, normalization=None,
                 params=None, kind="single", cache=None, bank=None):
        self.shape = tuple(shape)
        self.n_orient = n_orient
        self.n_layers = n_layers
        self.scales = np.asarray(scales, dtype=float)
        self.has_residual = has_residual
        self.stability = stability
        self.normalization = normalization
        self.params = dict(params or {})
        self.kind = kind
        self._make = make_filter
        self._bank = bank
        if bank is not None:
            self._bank.setflags(write=False)
            return
        if cache is None:
            cache = _fits_cache(shape, n_layers, n_orient)
        if cache:
            self._bank = np.stack([
                np.stack([make_filter(i, j) for j in range(n_orient)])
                for i in range(n_layers)
            ])
            self._bank.setflags(write=False)

    @property
    def is_multiscale(self):
        return self.kind == "multiscale"

    @property
    def orientations(self):
        return np.arange(self.n_orient) * np.pi / self.n_orient

    def filter(self, layer, j):
        """Transfer function of layer ``layer`` at orientation index ``j`` (may be >= n_orient)."""
        flip = j >= self.n_orient
        j = j % self.n_orient
        f = self._bank[layer, j] if self._bank is not None else self._make(layer, j)
        return flip_frequencies(f) if flip else f

    def layer(self, i):
        """All stored orientations of layer ``i`` as an array ``(n_orient, H, W)``."""
        if self._bank is not None:
            return self._bank[i]
        return np.stack([self._make(i, j) for j in range(self.n_orient)])

    @property
    def bank(self):
        """Filters as ``(n_layers, n_orient, H, W)``; materialized on access."""
        if self._bank is not None:
            return self._bank
        return np.stack([self.layer(i) for i in range(self.n_layers)])

    def recombination_map(self):
        """Sum of all filters over the full circle (and every stored layer)."""
        total = np.zeros(self.shape)
        for i in range(self.n_layers):
            lay = self.layer(i)
            half = lay.sum(axis=0)
            total += half + flip_frequencies(half)
        return total

    def stability_map(self):
        """``sum |psi_hat|^2`` over the full circle and all layers."""
        total = np.zeros(self.shape)
        for i in range(self.n_layers):
            sq = (self.layer(i) ** 2).sum(axis=0)
            total += sq + flip_frequencies(sq)
        return total


def _fits_cache(shape, n_layers, n_orient):
    return n_layers * n_orient * shape[0] * shape[1] <= CACHE_BUDGET


def build_cake_kernels(params, width, height, cache=None):
    """Single-scale cake wavelet bank for a ``height x width`` image.

    The wavelet at orientation ``theta_j`` has transfer function
    ``A(phi - theta_j) B(rho)`` before its spatial kernel is multiplied by
    the isotropic Gaussian window ``exp(-|x|^2 / (2 s))``.
    """
    if min(width, height) < MIN_SIZE:
        raise ValueError(f"image dimensions must be >= {MIN_SIZE} px, got {height}x{width}")
    shape = (height, width)
    std = math.sqrt(params.window_scale)
    window = _spatial_window(shape, std, std, 0.0)

    def make(layer, j):
        theta = j * np.pi / params.n_orient

        def fn(ky, kx):
            rho = np.hypot(ky, kx)
            return angular_part(params, np.arctan2(ky, kx) - theta, rho) * radial_part(params, rho)

        return _apply_window(alias_average(fn, shape), window)

    ks = KernelSet(shape, params.n_orient, 1, make, params={"cake": asdict(params)},
                   kind="single", cache=cache)
    ks.stability = ks.stability_map()
    return ks


def build_ms_kernels(ms, cake, width, height, cache=None):
    """Multi-scale cake kernel bank normalized by ``M(omega)``.

    Active layer ``i`` at orientation ``theta_j`` starts from
    ``A(phi - theta_j) * B_i(omega)``; its spatial kernel is multiplied by an
    anisotropic Gaussian window scaled by ``a_i / a_minus`` and aligned with
    ``theta_j``. One extra residual layer (no window) carries every
    log-radial layer outside the active range: the finer ones up to Nyquist
    and the coarser ones down to DC. ``M(omega)`` is the sum of ``|filter|``
    over layers and the full circle (constant factors cancel); dividing it
    out makes the recombination map exactly one.
    """
    if min(width, height) < MIN_SIZE:
        raise ValueError(f"image dimensions must be >= {MIN_SIZE} px, got {height}x{width}")
    shape = (height, width)
    k = cake.spline_order
    scales = ms.scales()
    n_layers = ms.n_active + 1
    if cache is None:
        cache = _fits_cache(shape, n_layers, cake.n_orient)

    def omega_fn(ky, kx):
        return 2 * np.pi * np.hypot(ky, kx)

    def residual_env(omega):
        return (_layer_envelope(ms, k, omega, -np.inf, -1)
                + _layer_envelope(ms, k, omega, ms.n_active, np.inf))

    envelopes = [alias_average(lambda ky, kx, i=i: _layer_envelope(ms, k, omega_fn(ky, kx), i, i), shape)
                 for i in range(ms.n_active)]
    envelopes.append(alias_average(lambda ky, kx: residual_env(omega_fn(ky, kx)), shape))

    def angular(j):
        theta = j * np.pi / cake.n_orient

        def ang(ky, kx):
            return angular_part(cake, np.arctan2(ky, kx) - theta, np.hypot(ky, kx))

        return alias_average(ang, shape)

    # lazily built banks keep the angular maps in single precision
    dtype = float if cache else np.float32
    angulars = [angular(j).astype(dtype) for j in range(cake.n_orient)]

    def raw(i, j, windowed=True):
        transfer = angulars[j] * envelopes[i]
        if windowed and ms.use_window and i < ms.n_active:
            theta = j * np.pi / cake.n_orient
            scale = scales[i] / ms.a_minus
            window = _spatial_window(shape, math.sqrt(ms.sx) * scale, math.sqrt(ms.sy) * scale, theta)
            transfer = _apply_window(transfer, window)
        return np.abs(transfer)

    if ms.use_window:
        _check_window(raw(0, 0), raw(0, 0, windowed=False))

    params = {"cake": asdict(cake), "multiscale": asdict(ms)}
    if cache:
        bank = np.stack([np.stack([raw(i, j) for j in range(cake.n_orient)])
                         for i in range(n_layers)])
        half = bank.sum(axis=(0, 1))
        norm = half + flip_frequencies(half)
    else:
        bank = None
        norm = np.zeros(shape)
        for i in range(n_layers):
            for j in range(cake.n_orient):
                f = raw(i, j)
                norm += f + flip_frequencies(f)
    if np.any(norm <= 0):
        raise ValueError("multi-scale filters leave frequencies uncovered")
    if bank is not None:
        bank /= norm

    def make(i, j):
        return raw(i, j) / norm

    return KernelSet(shape, cake.n_orient, n_layers, make, scales=scales,
                     has_residual=True, normalization=norm, params=params,
                     kind="multiscale", cache=False, bank=bank)


def _check_window(windowed, unwindowed, limit=0.2):
    """Warn when the window removes more than ``limit`` of the finest kernel's energy."""
    diff = np.sum((windowed - unwindowed) ** 2)
    total = np.sum(unwindowed**2)
    lost = float(diff / total) if total > 0 else 0.0
    if lost > limit:
        warnings.warn(
            f"anisotropic window removes {lost:.0%} of the finest kernel energy; "
            "consider larger window_sx/window_sy",
            RuntimeWarning,
            stacklevel=3,
        )
    return lost
