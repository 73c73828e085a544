"""Field containers and the spectral engine.

Every transform in the package runs on the discrete torus: 2D transforms use
unitary normalization (``1/sqrt(H*W)`` per direction) and correlation or
convolution is a pointwise product of transfer functions in the Fourier
domain.

Frequency convention: bin ``(0, 0)`` is DC, axis 0 is ``y`` (rows), axis 1
is ``x`` (columns), and frequencies are in cycles/px as returned by
``numpy.fft.fftfreq``. Angular frequency is ``omega = 2*pi*rho``.

Fields are plain numpy arrays laid out ``(scale, theta, y, x)``; a single
orientation score drops the scale axis and an image is 2D.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "dft2",
    "idft2",
    "frequency_grid",
    "alias_average",
    "derivative_multiplier",
    "gaussian_multiplier",
    "spectral_filter",
    "gaussian_blur",
    "gaussian_derivative",
    "periodic_convolve_axis",
    "flip_frequencies",
    "angular_operator_matrix",
    "angular_spectral_op",
    "write_field",
    "read_field",
]

THREADS_ENV = "OSVESSEL_THREADS"


def _workers():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains NaN or Inf values")


def dft2(x):
    """Unitary 2D DFT over the last two axes.

    Parameters
    ----------
    x : ndarray, shape (..., H, W)
        Real or complex samples.

    Returns
    -------
    ndarray of complex128
        Spectrum with DC at index ``(0, 0)``; ``||dft2(x)|| == ||x||``.
    """
    x = np.asarray(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError("dft2 needs an array with at least 2 non-empty axes")
    _check_finite(x, "dft2 input")
    return sfft.fft2(x, norm="ortho", workers=_workers())


def idft2(spec):
    """Inverse of :func:`dft2`."""
    spec = np.asarray(spec)
    if spec.ndim < 2 or min(spec.shape[-2:]) < 1:
        raise ValueError("idft2 needs an array with at least 2 non-empty axes")
    _check_finite(spec, "idft2 input")
    return sfft.ifft2(spec, norm="ortho", workers=_workers())


def frequency_grid(shape):
    """Return ``(ky, kx)`` frequency grids in cycles/px for a 2D shape."""
    h, w = shape
    ky = np.fft.fftfreq(h)[:, None] * np.ones((1, w))
    kx = np.fft.fftfreq(w)[None, :] * np.ones((h, 1))
    return ky, kx


def alias_average(fn, shape):
    """Sample a frequency-domain function so grid symmetries hold exactly.

    On even-sized axes the Nyquist bin is its own negative, and its
    ``fftfreq`` value (-0.5) is only one of two aliases. Averaging ``fn``
    over both aliases makes the sampled function commute with ``k -> -k``
    and, on square grids, with 90 degree rotations.

    Parameters
    ----------
    fn : callable
        ``fn(ky, kx)`` evaluated elementwise on equally shaped arrays.
    shape : tuple of int
        ``(H, W)`` grid size.
    """
    h, w = shape
    ky, kx = frequency_grid(shape)
    out = np.array(fn(ky, kx), dtype=float)
    r = h // 2 if h % 2 == 0 else None
    c = w // 2 if w % 2 == 0 else None
    if r is not None:
        alt_row = fn(np.full((1, w), 0.5), kx[r : r + 1])
        base_row = out[r].copy()
        out[r] = 0.5 * (base_row + alt_row[0])
    if c is not None:
        alt_col = fn(ky[:, c : c + 1], np.full((h, 1), 0.5))
        base_col = fn(ky[:, c : c + 1], kx[:, c : c + 1])
        out[:, c] = 0.5 * (base_col[:, 0] + alt_col[:, 0])
    if r is not None and c is not None:
        corners = [
            fn(np.array([[sy]]), np.array([[sx]]))[0, 0]
            for sy in (-0.5, 0.5)
            for sx in (-0.5, 0.5)
        ]
        out[r, c] = 0.25 * sum(corners)
    return out


def derivative_multiplier(n, order):
    """1D transfer function of ``d^order/dx^order`` on an n-periodic grid.

    Odd orders vanish at the Nyquist bin, which keeps derivatives of real
    fields real.
    """
    k = np.fft.fftfreq(n)
    mult = (2j * np.pi * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0.0
    return mult


def gaussian_multiplier(n, sigma):
    """1D transfer function of a periodic Gaussian blur with std ``sigma`` px."""
    k = np.fft.fftfreq(n)
    return np.exp(-2.0 * (np.pi * sigma * k) ** 2)


def spectral_filter(field, transfer):
    """Apply a 2D transfer function to the last two axes of ``field``.

    The result is complex; callers take ``.real`` when the transfer function
    is Hermitian and the input real.
    """
    return idft2(dft2(field) * transfer)


def gaussian_blur(img, sigma):
    """Periodic Gaussian blur with std ``sigma`` px (real in, real out)."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[-2:]
    transfer = gaussian_multiplier(h, sigma)[:, None] * gaussian_multiplier(w, sigma)[None, :]
    return spectral_filter(img, transfer).real


def gaussian_derivative(img, sigma, order):
    """Periodic Gaussian derivative.

    Parameters
    ----------
    img : ndarray, shape (..., H, W)
    sigma : float
        Gaussian std in px (0 disables smoothing).
    order : tuple of int
        ``(order_y, order_x)``.
    """
    img = np.asarray(img)
    h, w = img.shape[-2:]
    oy, ox = order
    ty = gaussian_multiplier(h, sigma) * derivative_multiplier(h, oy)
    tx = gaussian_multiplier(w, sigma) * derivative_multiplier(w, ox)
    out = spectral_filter(img, ty[:, None] * tx[None, :])
    return out.real if np.isrealobj(img) else out


def periodic_convolve_axis(field, kernel, axis=0):
    """Circular convolution of ``field`` with ``kernel`` along one axis.

    ``kernel[0]`` is the weight at zero offset and ``kernel[-1]`` at offset
    -1, so a centred kernel wraps around the ends of the array.
    """
    field = np.asarray(field)
    kernel = np.asarray(kernel)
    if kernel.ndim != 1:
        raise ValueError("kernel must be one-dimensional")
    n = field.shape[axis]
    if kernel.shape[0] != n:
        raise ValueError(
            f"kernel length {kernel.shape[0]} does not match axis length {n}"
        )
    shape = [1] * field.ndim
    shape[axis] = n
    kf = np.fft.fft(kernel).reshape(shape)
    out = np.fft.ifft(np.fft.fft(field, axis=axis) * kf, axis=axis)
    if np.isrealobj(field) and np.isrealobj(kernel):
        return out.real
    return out


def flip_frequencies(a):
    """Return ``a(-k)`` for an array indexed by frequency on the last two axes."""
    return np.roll(np.flip(a, axis=(-2, -1)), 1, axis=(-2, -1))


def angular_operator_matrix(n, sigma, order, parity=1):
    """Matrix ``M`` with ``op(F) = M @ F`` along a half-circle axis of ``n`` samples.

    The operator is a Gaussian-regularized derivative evaluated on the full
    circle extension (see :func:`angular_spectral_op`); it is real because
    the multiplier is Hermitian.
    """
    full = np.concatenate([np.eye(n), parity * np.eye(n)], axis=0)
    m = np.fft.fftfreq(2 * n, d=1.0 / (2 * n))
    mult = np.exp(-0.5 * (sigma * m) ** 2) * (1j * m) ** order
    if order % 2 == 1:
        mult[n] = 0.0
    return np.fft.ifft(np.fft.fft(full, axis=0) * mult[:, None], axis=0)[:n].real


def angular_spectral_op(field, sigma, order, parity=1, axis=0):
    """Gaussian-regularized derivative along a half-circle orientation axis.

    The axis samples ``theta_j = j*pi/n``. A field with ``parity`` +1
    satisfies ``F(theta + pi) = F(theta)``, with -1 it is antiperiodic.
    The field is extended to the full circle (``2n`` samples over
    ``2*pi``) so both cases are handled by one periodic spectral operator,
    applied here as an ``n x n`` matrix.

    Parameters
    ----------
    sigma : float
        Angular Gaussian std in radians.
    order : int
        Derivative order (0 = smoothing only).
    """
    field = np.asarray(field)
    mat = angular_operator_matrix(field.shape[axis], sigma, order, parity)
    out = np.tensordot(mat.astype(field.real.dtype), np.moveaxis(field, axis, 0), axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def write_field(path, data, scales=(), meta=None):
    """Write a field in the binary dump format.

    The file starts with one UTF-8 JSON header line followed by little-endian
    raw samples in ``scale, theta, row-major`` order. Complex samples are
    stored interleaved as ``c64`` (two float32), real ones as ``f32``.
    """
    data = np.asarray(data)
    if data.ndim == 2:
        full = data[None, None]
    elif data.ndim == 3:
        full = data[None]
    elif data.ndim == 4:
        full = data
    else:
        raise ValueError("fields must have 2, 3 or 4 dimensions")
    s, t, h, w = full.shape
    if np.iscomplexobj(full):
        dtype, raw = "c64", full.astype("<c8")
    else:
        dtype, raw = "f32", full.astype("<f4")
    header = {
        "width": int(w),
        "height": int(h),
        "n_theta": int(t),
        "n_scales": int(s),
        "scales": [float(a) for a in scales],
        "dtype": dtype,
        "layout": "scale,theta,row-major",
        "ndim": int(data.ndim),
    }
    if meta:
        header["meta"] = meta
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(raw).tobytes())


def read_field(path):
    """Read a field written by :func:`write_field`.

    Returns
    -------
    data : ndarray
        Array with the dimensionality it was written with.
    header : dict
    """
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    dt = {"c64": "<c8", "f32": "<f4"}.get(header.get("dtype"))
    if dt is None:
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    shape = (header["n_scales"], header["n_theta"], header["height"], header["width"])
    arr = np.frombuffer(payload, dtype=dt)
    if arr.size != int(np.prod(shape)):
        raise ValueError(
            f"payload has {arr.size} samples, header declares {int(np.prod(shape))}"
        )
    arr = arr.reshape(shape)
    arr = arr.astype(np.complex128 if header["dtype"] == "c64" else np.float64)
    ndim = header.get("ndim", 4)
    if ndim == 2:
        arr = arr[0, 0]
    elif ndim == 3:
        arr = arr[0]
    return arr, header
