"""Dense complex array core: circular shifts, circular convolution, pooling
reductions, and elementwise algebra.

Conventions, fixed once for the whole package:

* arrays are numpy ``complex128`` (f64 per part), row-major;
* indexing is 0-based; a shift by ``s`` maps ``out[n] = x[(n + s) mod N]``
  on the shifted axis;
* all boundary handling is circular, so shift relations hold exactly;
* "convolution" means cross-correlation (no kernel flip), stride 1; a
  stride ``s`` is the stride-1 result subsampled at phase 0.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels


class ShiftSpec(NamedTuple):
    """A circular shift of ``amount`` samples along ``axis``."""

    axis: int
    amount: int


def as_ctensor(data) -> np.ndarray:
    """Coerce to a finite complex128 array."""
    t = np.asarray(data, dtype=np.complex128)
    if not np.all(np.isfinite(t)):
        raise ValueError("complex tensor contains non-finite samples")
    return t


def circular_shift(t: np.ndarray, amount: int, axis: int = -1) -> np.ndarray:
    """out[.., n, ..] = t[.., (n + amount) mod N, ..] on the given axis."""
    t = np.asarray(t)
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for rank {t.ndim}")
    return np.roll(t, -int(amount), axis=axis)


def shift_all(t: np.ndarray, amount: int, axes) -> np.ndarray:
    """Apply the same circular shift along each axis in ``axes``."""
    for ax in axes:
        t = circular_shift(t, amount, ax)
    return t


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a * b


def _split_conv_shapes(x: np.ndarray, kernel: np.ndarray):
    """Return (x[C,*sp], w[O,C,*k], d) adding unit channels when absent."""
    if kernel.ndim == x.ndim:  # channel-free form
        d = x.ndim
        return x[None, :], kernel[None, None], d
    if kernel.ndim == x.ndim + 1:
        d = x.ndim - 1
        return x, kernel, d
    raise ValueError("kernel rank must match input rank or input rank + 1")


def conv_circular(x: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Circular cross-correlation of a complex input with a complex kernel.

    Accepts either channel-free (x [*sp], kernel [*k]) or channelled
    (x [C,*sp], kernel [O,C,*k]) operands; spatial rank 1 or 2. Stride s
    subsamples the stride-1 output by s on every spatial axis (phase 0),
    giving spatial length floor(N/s).
    """
    x = np.asarray(x, dtype=np.complex128)
    kernel = np.asarray(kernel, dtype=np.complex128)
    if kernel.size == 0:
        raise ValueError("empty kernel")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    had_channels = kernel.ndim == x.ndim + 1
    xc, w, d = _split_conv_shapes(x, kernel)
    if d not in (1, 2):
        raise ValueError("spatial rank must be 1 or 2")
    if w.shape[1] != xc.shape[0]:
        raise ValueError("kernel input channels must match input channels")
    if any(w.shape[2 + i] > xc.shape[1 + i] for i in range(d)):
        raise ValueError("kernel spatial dims exceed input spatial dims")

    xr, xi = np.ascontiguousarray(xc.real)[None], np.ascontiguousarray(xc.imag)[None]
    wr, wi = np.ascontiguousarray(w.real), np.ascontiguousarray(w.imag)
    fwd = _kernels.conv1_fwd if d == 1 else _kernels.conv2_fwd
    out_re = fwd(xr, wr) - fwd(xi, wi)
    out_im = fwd(xr, wi) + fwd(xi, wr)
    out = (out_re + 1j * out_im)[0]
    if stride > 1:
        sl = (slice(None),) + (slice(None, None, stride),) * d
        out = out[sl]
    return out if had_channels else out[0]


def modulus(t: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(t))


def arg(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.complex128)
    return np.arctan2(t.imag, t.real)


def norm_l2(t: np.ndarray) -> float:
    """sqrt of the sum of |z|^2 over every sample (pairwise-summed)."""
    t = np.asarray(t)
    return float(np.sqrt(np.sum(t.real * t.real + t.imag * t.imag)))


def global_pool(t: np.ndarray, kind: str = "mean", channel_axis: int | None = 0) -> np.ndarray:
    """Reduce all spatial positions to one complex scalar (per channel).

    ``channel_axis=None`` reduces everything to a single scalar. mean/sum
    are permutation invariant, hence invariant under any circular shift of
    the pooled axes (up to summation rounding).
    """
    t = np.asarray(t)
    if kind not in ("mean", "sum"):
        raise ValueError(f"unknown pooling kind {kind!r}")
    if channel_axis is None:
        return t.mean() if kind == "mean" else t.sum()
    axes = tuple(a for a in range(t.ndim) if a != channel_axis % t.ndim)
    return t.mean(axis=axes) if kind == "mean" else t.sum(axis=axes)
