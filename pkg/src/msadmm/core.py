"""Signals, linear operators with adjoints, and noise generation.

Signals are plain ``float64`` numpy arrays (1D of length ``n`` or 2D of
shape ``(h, w)``).  :func:`as_signal` is the single validation gate used by
the rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from .errors import InvalidInputError

__all__ = [
    "as_signal",
    "LinearMap",
    "identity",
    "convolution",
    "apply",
    "apply_adjoint",
    "gaussian_noise",
    "forward_gradient",
    "forward_gradient_adjoint",
]

_MAX_SEED = 2**64
# direct summation is cheaper than FFT only for very small kernels
_DIRECT_MAX = 8


def as_signal(values, shape=None, name="signal"):
    """Return ``values`` as a finite float64 array, checking its shape.

    Parameters
    ----------
    values : array_like
        Signal values.
    shape : tuple of int, optional
        Required shape.  Checked when given.
    name : str
        Used in error messages.

    Raises
    ------
    InvalidInputError
        On shape mismatch, wrong dimensionality or non-finite entries.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise InvalidInputError(f"{name} must be 1D or 2D, got ndim={arr.ndim}")
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidInputError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True, eq=False)
class LinearMap:
    """A linear operator ``A`` from ``R^shape`` to ``R^shape`` with adjoint.

    Use :func:`identity` or :func:`convolution` rather than instantiating
    directly.

    Convolution is "same-size":
    ``(A u)[i] = sum_k psf[k] * u[i - (k - center)]``, with indices outside
    the domain either wrapped (``boundary="periodic"``) or treated as zero
    (``boundary="zero"``).  The PSF is used as given; no normalization.
    """

    kind: str
    shape: Tuple[int, ...]
    psf: Optional[np.ndarray] = None
    center: Optional[Tuple[int, ...]] = None
    boundary: str = "periodic"
    method: str = "auto"
    _kernel_ft: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def domain_shape(self):
        return self.shape

    @property
    def codomain_shape(self):
        return self.shape

    def __call__(self, u):
        return apply(self, u)

    @property
    def T(self):
        return _Adjoint(self)

    def _use_fft(self):
        if self.method == "fft":
            return True
        if self.method == "direct":
            return False
        return self.psf.size > _DIRECT_MAX

    def singular_value_bounds(self):
        """Return ``(smin, smax)`` bounds on the singular values of ``A``.

        Exact for identity and periodic convolution.  For zero boundary the
        lower bound is 0 (unknown) and the upper bound is ``sum |psf|``.
        """
        if self.kind == "identity":
            return 1.0, 1.0
        if self.boundary == "periodic":
            mags = np.abs(self._kernel_ft)
            return float(mags.min()), float(mags.max())
        return 0.0, float(np.abs(self.psf).sum())


class _Adjoint:
    def __init__(self, op):
        self.op = op

    def __call__(self, v):
        return apply_adjoint(self.op, v)


def identity(shape):
    """Identity map on signals of the given shape."""
    shape = _check_shape(shape)
    return LinearMap(kind="identity", shape=shape)


def convolution(psf, shape, center=None, boundary="periodic", method="auto"):
    """Convolution by ``psf`` on signals of ``shape``.

    Parameters
    ----------
    psf : array_like
        Kernel, same dimensionality as ``shape`` and no larger in any axis.
    shape : tuple of int
        Image shape (domain and codomain).
    center : tuple of int, optional
        Index of the PSF origin.  Defaults to ``psf.shape // 2``.
    boundary : {"periodic", "zero"}
    method : {"auto", "fft", "direct"}
        ``auto`` uses direct summation for PSFs with at most 8 entries.
    """
    shape = _check_shape(shape)
    psf = as_signal(psf, name="psf")
    if psf.ndim != len(shape):
        raise InvalidInputError("psf and image must have the same dimensionality")
    if any(p > s for p, s in zip(psf.shape, shape)):
        raise InvalidInputError(f"psf {psf.shape} larger than image {shape}")
    if center is None:
        center = tuple(p // 2 for p in psf.shape)
    center = tuple(int(c) for c in np.atleast_1d(center))
    if len(center) != psf.ndim or any(not 0 <= c < p for c, p in zip(center, psf.shape)):
        raise InvalidInputError(f"psf center {center} outside psf of shape {psf.shape}")
    if boundary not in ("periodic", "zero"):
        raise InvalidInputError(f"unknown boundary {boundary!r}")
    if method not in ("auto", "fft", "direct"):
        raise InvalidInputError(f"unknown method {method!r}")
    psf = psf.copy()
    psf.setflags(write=False)
    kernel_ft = None
    if boundary == "periodic":
        kernel = np.zeros(shape)
        for k in np.ndindex(psf.shape):
            idx = tuple((ki - ci) % s for ki, ci, s in zip(k, center, shape))
            kernel[idx] += psf[k]
        kernel_ft = np.fft.rfftn(kernel)
    return LinearMap(
        kind="convolution",
        shape=shape,
        psf=psf,
        center=center,
        boundary=boundary,
        method=method,
        _kernel_ft=kernel_ft,
    )


def _check_shape(shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if len(shape) not in (1, 2) or any(s < 1 for s in shape):
        raise InvalidInputError(f"invalid signal shape {shape}")
    return shape


def _shifted(u, shift, periodic):
    # out[i] = u[i - shift], zero where i - shift falls outside when not periodic
    if periodic:
        return np.roll(u, shift, axis=tuple(range(u.ndim)))
    out = np.zeros_like(u)
    dst, src = [], []
    for s, n in zip(shift, u.shape):
        if abs(s) >= n:
            return out
        if s >= 0:
            dst.append(slice(s, n))
            src.append(slice(0, n - s))
        else:
            dst.append(slice(0, n + s))
            src.append(slice(-s, n))
    out[tuple(dst)] = u[tuple(src)]
    return out


def _direct(op, u, adjoint):
    out = np.zeros(op.shape)
    periodic = op.boundary == "periodic"
    for k in np.ndindex(op.psf.shape):
        w = op.psf[k]
        if w == 0.0:
            continue
        shift = tuple(ki - ci for ki, ci in zip(k, op.center))
        if adjoint:
            shift = tuple(-s for s in shift)
        out += w * _shifted(u, shift, periodic)
    return out


def _fft(op, u, adjoint):
    if op.boundary == "periodic":
        kft = np.conj(op._kernel_ft) if adjoint else op._kernel_ft
        axes = tuple(range(u.ndim))
        return np.fft.irfftn(kft * np.fft.rfftn(u), s=op.shape, axes=axes)
    psf = op.psf
    if adjoint:
        psf = psf[(slice(None, None, -1),) * psf.ndim]
        offset = tuple(p - 1 - c for p, c in zip(op.psf.shape, op.center))
    else:
        offset = op.center
    full = fftconvolve(u, psf, mode="full")
    return full[tuple(slice(o, o + n) for o, n in zip(offset, op.shape))].copy()


def apply(op, u, method=None):
    """Return ``A u``.

    ``method`` overrides the map's evaluation path (``"fft"``/``"direct"``)
    for convolution maps.
    """
    u = as_signal(u, op.domain_shape, name="u")
    if op.kind == "identity":
        return u.copy()
    use_fft = op._use_fft() if method is None else method == "fft"
    return _fft(op, u, False) if use_fft else _direct(op, u, False)


def apply_adjoint(op, v, method=None):
    """Return ``A^T v``."""
    v = as_signal(v, op.codomain_shape, name="v")
    if op.kind == "identity":
        return v.copy()
    use_fft = op._use_fft() if method is None else method == "fft"
    return _fft(op, v, True) if use_fft else _direct(op, v, True)


def gaussian_noise(shape, sigma, seed):
    """I.i.d. ``N(0, sigma^2)`` samples, reproducible from a 64-bit seed."""
    if sigma < 0:
        raise InvalidInputError("sigma must be nonnegative")
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise InvalidInputError("seed must be a 64-bit unsigned integer")
    shape = _check_shape(shape)
    rng = np.random.default_rng(seed)
    return sigma * rng.standard_normal(shape)


def forward_gradient(u):
    """Forward differences without wrap-around.

    Returns an array for 1D input (length ``n - 1``) and a tuple
    ``(d_rows, d_cols)`` for 2D input.
    """
    if u.ndim == 1:
        return np.diff(u)
    return np.diff(u, axis=0), np.diff(u, axis=1)


def _diff_adjoint(g, n, axis):
    # adjoint of np.diff along axis: out[i] = g[i-1] - g[i]
    pad = [(0, 0)] * g.ndim
    pad[axis] = (1, 1)
    gp = np.pad(g, pad)
    return -np.diff(gp, axis=axis)


def forward_gradient_adjoint(g, shape):
    """Adjoint of :func:`forward_gradient`."""
    if len(shape) == 1:
        return _diff_adjoint(g, shape[0], 0)
    gr, gc = g
    return _diff_adjoint(gr, shape[0], 0) + _diff_adjoint(gc, shape[1], 1)
