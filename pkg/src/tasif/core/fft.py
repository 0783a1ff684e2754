"""Radix-2 real FFT pair and its differentiable wrappers.

The forward transform is unnormalised, ``X[k] = sum_t x[t] exp(-2 pi i k t / n)``,
and the inverse carries the ``1/n`` factor. Lengths must be powers of two.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, _result


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 1j * np.pi * np.arange(m) / m)


def _fft_first(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalised iterative Cooley-Tukey transform over the leading axis.

    The leading axis is kept outermost so every butterfly stage works on
    contiguous blocks spanning all trailing entries at once.
    """
    n = a.shape[0]
    if not is_power_of_two(n):
        raise ShapeError(f"transform length must be a power of two, got {n}")
    rest = a.shape[1:]
    cur = np.asarray(a, dtype=np.complex128)[_bit_reverse(n)].reshape(n, -1)
    buf = np.empty_like(cur)
    m = 1
    while m < n:
        blocks = cur.reshape(n // (2 * m), 2, m, -1)
        out = buf.reshape(n // (2 * m), 2, m, -1)
        odd = blocks[:, 1] * _twiddles(m, inverse)[:, None]
        np.add(blocks[:, 0], odd, out=out[:, 0])
        np.subtract(blocks[:, 0], odd, out=out[:, 1])
        cur, buf = buf, cur
        m *= 2
    return cur.reshape((n,) + rest)


def _transform(x: np.ndarray, axis: int, inverse: bool) -> np.ndarray:
    return np.moveaxis(_fft_first(np.moveaxis(x, axis, 0), inverse), 0, axis)


def fft(x: np.ndarray, axis: int = 0) -> np.ndarray:
    return _transform(x, axis, False)


def ifft(x: np.ndarray, axis: int = 0) -> np.ndarray:
    return _transform(x, axis, True) / x.shape[axis]


def rfft(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Spectrum of a real signal: the ``n // 2 + 1`` non-negative frequency bins."""
    x = np.asarray(x)
    n = x.shape[axis]
    full = _fft_first(np.moveaxis(x, axis, 0))
    spec = full[: n // 2 + 1]
    spec[0] = spec[0].real
    if n % 2 == 0:
        spec[n // 2] = spec[n // 2].real
    return np.moveaxis(spec, 0, axis)


def irfft(spec: np.ndarray, n: int, axis: int = 0) -> np.ndarray:
    """Inverse of :func:`rfft` for a length-``n`` real signal."""
    spec = np.asarray(spec)
    bins = n // 2 + 1
    if spec.shape[axis] != bins:
        raise ShapeError(f"expected {bins} bins for length {n}, got {spec.shape[axis]}")
    s = np.moveaxis(spec, axis, 0)
    full = np.empty((n,) + s.shape[1:], dtype=np.complex128)
    full[:bins] = s
    full[0] = s[0].real
    if n % 2 == 0:
        full[n // 2] = s[n // 2].real
    full[bins:] = np.conj(s[1 : n - bins + 1][::-1])
    out = _fft_first(full, inverse=True).real / n
    return np.moveaxis(out, 0, axis)


def _bin_weights(n: int) -> np.ndarray:
    # multiplicity of each rfft bin in the full Hermitian spectrum
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def _expand(v: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = v.size
    return v.reshape(shape)


def rfft_t(x: Tensor, axis: int = 0) -> Tensor:
    """Differentiable :func:`rfft`; returns a complex tensor (``ComplexSpectrum``)."""
    axis = axis % x.ndim
    n = x.shape[axis]
    if not is_power_of_two(n):
        raise ShapeError(f"sequence length must be a power of two, got {n}")
    dtype = x.data.dtype

    def backward(g):
        # dL/dx[t] = Re sum_k G[k] exp(+2 pi i k t / n), summed over kept bins only
        widths = [(0, 0)] * g.ndim
        widths[axis] = (0, n - g.shape[axis])
        padded = np.pad(g, widths)
        return ((ifft(padded, axis=axis) * n).real.astype(dtype),)

    return _result(rfft(x.data, axis=axis), (x,), backward)


def irfft_t(spec: Tensor, n: int, axis: int = 0) -> Tensor:
    """Differentiable :func:`irfft` of a complex tensor."""
    axis = axis % spec.ndim
    if spec.shape[axis] != n // 2 + 1:
        raise ShapeError(f"expected {n // 2 + 1} bins for length {n}, got {spec.shape[axis]}")
    weights = _expand(_bin_weights(n), spec.ndim, axis) / n

    def backward(g):
        return (rfft(g, axis=axis) * weights,)

    return _result(irfft(spec.data, n, axis=axis), (spec,), backward)


def complex_modulate(spec: Tensor, filt: Tensor) -> Tensor:
    """Elementwise product of a spectrum with a (complex or real) filter."""
    if spec.shape[-filt.ndim:] != filt.shape:
        raise ShapeError(f"filter shape {filt.shape} does not match spectrum {spec.shape}")
    return spec * filt
