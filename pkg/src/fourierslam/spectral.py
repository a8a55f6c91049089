"""Real 2D FFT with half-spectrum storage and spectral circular correlation.

The transform is implemented here rather than delegated to ``numpy.fft`` so
that every floating-point multiply can be tallied (see ``MultiplyCounter``).
Lengths are decomposed by their smallest prime factor (decimation in time);
primes above ``_MAX_RADIX`` go through Bluestein's chirp-z algorithm, so no
extent is ever zero-padded at the signal level.

Conventions: forward transforms are unnormalized,
``X[k] = sum_n x[n] exp(-2 pi i k n / N)``; inverses carry ``1/(W*H)``.
Multiplies are counted as real multiplies: 4 per complex*complex product,
2 per real*complex scaling.
"""

import contextvars
import functools
from dataclasses import dataclass

import numpy as np

from fourierslam.config import get_fft_mode
from fourierslam.errors import DataError, ShapeError
from fourierslam.nn import as_feature_map

_MAX_RADIX = 7

_active_counter = contextvars.ContextVar("fourierslam_multiply_counter", default=None)


class MultiplyCounter:
    """Context manager tallying real multiplies in spectral and oracle paths.

    >>> with MultiplyCounter() as c:
    ...     _ = spectral_correlate(q, k)
    >>> c.count
    """

    def __init__(self):
        self.count = 0
        self._token = None

    def __enter__(self):
        self._token = _active_counter.set(self)
        return self

    def __exit__(self, *exc):
        _active_counter.reset(self._token)
        self._token = None


def _tally(n):
    c = _active_counter.get()
    if c is not None:
        c.count += int(n)


def _smallest_factor(n):
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _ctype(dtype):
    return np.complex64 if np.dtype(dtype) in (np.float32, np.complex64) else np.complex128


@functools.lru_cache(maxsize=512)
def _twiddles(n, p, inverse, ctype):
    # w_n^(r*k) for r < p, k < n/p
    m = n // p
    rk = np.outer(np.arange(p), np.arange(m)) % n
    sign = 1.0 if inverse else -1.0
    tw = np.exp(sign * 2j * np.pi * rk / n).astype(ctype)
    tw.setflags(write=False)
    return tw


@functools.lru_cache(maxsize=64)
def _small_dft(p, inverse, ctype):
    sr = np.outer(np.arange(p), np.arange(p)) % p
    sign = 1.0 if inverse else -1.0
    w = np.exp(sign * 2j * np.pi * sr / p).astype(ctype)
    w.setflags(write=False)
    return w


def _fft(x, inverse=False):
    """Unnormalized complex DFT along the last axis, batched over the rest."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_factor(n)
    if p > _MAX_RADIX:
        return _bluestein(x, inverse)
    m = n // p
    batch = x.shape[:-1]
    # sub-sequence r holds x[r], x[r+p], ...; transform each (length m)
    sub = np.ascontiguousarray(x.reshape(*batch, m, p).swapaxes(-1, -2))
    sub = _fft(sub, inverse)
    tw = _twiddles(n, p, inverse, x.dtype.type)
    if p == 2:
        t = sub[..., 1, :] * tw[1]
        _tally(4 * m * int(np.prod(batch, dtype=np.int64)))
        return np.concatenate([sub[..., 0, :] + t, sub[..., 0, :] - t], axis=-1)
    t = sub.copy()
    t[..., 1:, :] *= tw[1:]
    nb = int(np.prod(batch, dtype=np.int64))
    _tally(4 * (p - 1) * m * nb)
    out = np.einsum("sr,...rk->...sk", _small_dft(p, inverse, x.dtype.type), t)
    _tally(4 * p * p * m * nb)
    return out.reshape(*batch, n)


@functools.lru_cache(maxsize=128)
def _bluestein_plan(n, inverse, ctype):
    sign = 1.0 if inverse else -1.0
    j = np.arange(n)
    # j^2 mod 2n keeps the chirp phase argument small and exact
    chirp = np.exp(sign * 1j * np.pi * ((j * j) % (2 * n)) / n).astype(ctype)
    size = 1 << (2 * n - 2).bit_length()
    b = np.zeros(size, ctype)
    b[:n] = np.conj(chirp)
    b[size - n + 1 :] = np.conj(chirp[1:][::-1])
    with MultiplyCounter():  # plan construction is cached, so not billed per call
        b_hat = _fft(b, False)
    chirp.setflags(write=False)
    b_hat.setflags(write=False)
    return chirp, b_hat, size


def _bluestein(x, inverse):
    n = x.shape[-1]
    chirp, b_hat, size = _bluestein_plan(n, inverse, x.dtype.type)
    nb = int(np.prod(x.shape[:-1], dtype=np.int64))
    a = np.zeros(x.shape[:-1] + (size,), x.dtype)
    a[..., :n] = x * chirp
    a_hat = _fft(a, False) * b_hat
    conv = _fft(a_hat, True)[..., :n]
    out = conv * (chirp / size)
    _tally(4 * n * nb + 4 * size * nb + 4 * n * nb)
    return out


def _rfft(x):
    """Real (..., n) -> half spectrum (..., n//2 + 1)."""
    n = x.shape[-1]
    ctype = _ctype(x.dtype)
    if n % 2 or n == 2:
        return _fft(x.astype(ctype), False)[..., : n // 2 + 1]
    half = n // 2
    z = np.empty(x.shape[:-1] + (half,), ctype)
    z.real = x[..., 0::2]
    z.imag = x[..., 1::2]
    zf = _fft(z, False)
    zk = np.concatenate([zf, zf[..., :1]], axis=-1)
    zr = np.conj(zk[..., ::-1])
    w = _rfft_twiddles(n, False, ctype)
    nb = int(np.prod(x.shape[:-1], dtype=np.int64))
    _tally(6 * (half + 1) * nb)
    return (zk + zr) * 0.5 + w * (zk - zr)


@functools.lru_cache(maxsize=256)
def _rfft_twiddles(n, inverse, ctype):
    k = np.arange(n // 2 + 1)
    if inverse:
        w = 0.5j * np.exp(2j * np.pi * k / n)
    else:
        w = -0.5j * np.exp(-2j * np.pi * k / n)
    w = w.astype(ctype)
    w.setflags(write=False)
    return w


def _irfft(spec, n):
    """Half spectrum (..., n//2 + 1) -> real (..., n), normalized by 1/n."""
    ctype = spec.dtype.type
    rtype = np.float32 if ctype is np.complex64 else np.float64
    nb = int(np.prod(spec.shape[:-1], dtype=np.int64))
    if n % 2 or n == 2:
        tail = np.conj(spec[..., 1 : n - n // 2][..., ::-1])
        full = np.concatenate([spec, tail], axis=-1)
        out = _fft(full, True).real / n
        _tally(n * nb)
        return out.astype(rtype)
    half = n // 2
    xk = spec[..., :half]
    xr = np.conj(spec[..., half:0:-1])
    w = _rfft_twiddles(n, True, ctype)[:half]
    # Z = E + i*O, E = (X + conj X[L-k]) / 2, O = (X - conj X[L-k]) w^-k / 2
    zf = (xk + xr) * 0.5 + w * (xk - xr)
    z = _fft(zf, True) * (1.0 / half)
    _tally(6 * half * nb + 2 * half * nb)
    out = np.empty(spec.shape[:-1] + (n,), rtype)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def fft_1d(x, inverse=False):
    """Complex DFT along the last axis; the inverse is normalized by 1/n."""
    x = np.asarray(x)
    x = x.astype(_ctype(x.real.dtype), copy=False)
    out = _fft(x, inverse)
    if inverse:
        out = out / x.shape[-1]
    return out


@dataclass(frozen=True)
class SpectralTensor:
    """Half-spectrum of a real feature map, stored (H', W'//2 + 1, D).

    In ``"flat"`` mode the map is transformed as one length H*W signal, so
    H' = 1 and W' = H*W; ``shape`` always records the source (H, W, D).
    """

    coeffs: np.ndarray
    shape: tuple
    mode: str = "2d"

    @property
    def real(self):
        return self.coeffs.real

    @property
    def imag(self):
        return self.coeffs.imag

    @property
    def grid(self):
        h, w, _ = self.shape
        return (1, h * w) if self.mode == "flat" else (h, w)

    def full(self):
        """Reconstruct the full (H', W', D) spectrum through X[k] = conj(X[-k])."""
        gh, gw = self.grid
        c = self.coeffs
        cols = np.arange(gw)
        rows = np.arange(gh)
        out = np.empty((gh, gw, c.shape[-1]), c.dtype)
        kept = gw // 2 + 1
        out[:, :kept] = c
        mirror = cols[kept:]
        out[:, kept:] = np.conj(c[(-rows) % gh][:, (-mirror) % gw])
        return out

    def __mul__(self, other):
        if isinstance(other, SpectralTensor):
            _check_compatible(self, other)
            _tally(4 * self.coeffs.size)
            return SpectralTensor(self.coeffs * other.coeffs, self.shape, self.mode)
        return SpectralTensor(self.coeffs * other, self.shape, self.mode)

    __rmul__ = __mul__

    def __add__(self, other):
        _check_compatible(self, other)
        return SpectralTensor(self.coeffs + other.coeffs, self.shape, self.mode)

    def conj(self):
        return SpectralTensor(np.conj(self.coeffs), self.shape, self.mode)


def _check_compatible(a, b):
    if a.shape != b.shape or a.mode != b.mode:
        raise ShapeError(f"spectra differ: {a.shape}/{a.mode} vs {b.shape}/{b.mode}")


def fft_forward(x, mode=None):
    """Per-channel real FFT of an (H, W, D) map, half spectrum along W."""
    x = as_feature_map(x)
    mode = mode or get_fft_mode()
    h, w, d = x.shape
    if mode == "flat":
        grid = x.reshape(1, h * w, d)
    elif mode == "2d":
        grid = x
    else:
        raise ValueError(f"unknown fft mode {mode!r}")
    planes = np.ascontiguousarray(np.moveaxis(grid, -1, 0))  # (D, H', W')
    half = _rfft(planes)  # (D, H', W'//2+1)
    if half.shape[1] > 1:
        half = _fft(np.ascontiguousarray(half.swapaxes(1, 2)), False).swapaxes(1, 2)
    return SpectralTensor(np.ascontiguousarray(np.moveaxis(half, 0, -1)), (h, w, d), mode)


def _self_conjugate_bins(gh, gw):
    rows = {0, gh // 2} if gh % 2 == 0 else {0}
    cols = {0, gw // 2} if gw % 2 == 0 else {0}
    return [(r, c) for r in sorted(rows) for c in sorted(cols)]


def fft_inverse(s):
    """Inverse of ``fft_forward`` with 1/(W*H) normalization; returns a real map."""
    gh, gw = s.grid
    c = s.coeffs
    if c.shape[:2] != (gh, gw // 2 + 1):
        raise ShapeError(f"half spectrum shape {c.shape} inconsistent with grid {gh}x{gw}")
    # Bins that must be real for a real signal; a violation means the
    # caller handed in something that is not a real-signal spectrum.
    scale = float(np.max(np.abs(c), initial=0.0))
    tol = np.sqrt(np.finfo(c.real.dtype).eps) * max(1.0, scale)
    for r, k in _self_conjugate_bins(gh, gw):
        bad = np.max(np.abs(c[r, k].imag))
        if bad > tol:
            raise DataError(
                f"spectrum is not Hermitian: imaginary part {bad:.3g} at real-valued bin ({r}, {k})"
            )
    planes = np.ascontiguousarray(np.moveaxis(c, -1, 0))  # (D, H', W'//2+1)
    if gh > 1:
        t = _fft(np.ascontiguousarray(planes.swapaxes(1, 2)), True) * (1.0 / gh)
        _tally(2 * t.size)
        planes = np.ascontiguousarray(t.swapaxes(1, 2))
    real = _irfft(planes, gw)
    out = np.moveaxis(real, 0, -1)
    return np.ascontiguousarray(out.reshape(s.shape))


def spectral_correlate(q, k, mode=None):
    """Circular cross-correlation ``IFFT(FFT(q) * conj(FFT(k)))`` per channel.

    ``out[m] = sum_n q[n + m] * k[n]`` with spatial indices taken modulo
    the extents (or modulo H*W in ``"flat"`` mode).
    """
    q = as_feature_map(q, "q")
    k = as_feature_map(k, "k")
    if q.shape != k.shape:
        raise ShapeError(f"correlate operands differ in shape: {q.shape} vs {k.shape}")
    sq = fft_forward(q, mode)
    sk = fft_forward(k, mode)
    return fft_inverse(sq * sk.conj())


def naive_correlate_oracle(q, k, mode=None, budget=1 << 22):
    """Direct-summation circular cross-correlation, quadratic by construction.

    Shares no code with the FFT path. Shifts are processed in blocks whose
    gathered operand holds about ``budget`` elements.
    """
    q = as_feature_map(q, "q")
    k = as_feature_map(k, "k")
    if q.shape != k.shape:
        raise ShapeError(f"correlate operands differ in shape: {q.shape} vs {k.shape}")
    mode = mode or get_fft_mode()
    h, w, d = q.shape
    if mode == "flat":
        q = q.reshape(1, h * w, d)
        k = k.reshape(1, h * w, d)
    elif mode != "2d":
        raise ValueError(f"unknown fft mode {mode!r}")
    gh, gw = q.shape[:2]
    dtype = np.result_type(q.dtype, k.dtype)
    cols = (np.arange(gw)[:, None] + np.arange(gw)[None, :]) % gw  # [mw, j]
    per_row_shift = gh * gw * gw * d
    block = max(1, min(gh, budget // max(per_row_shift, 1)))
    out = np.empty((gh, gw, d), dtype)
    for start in range(0, gh, block):
        mh = np.arange(start, min(gh, start + block))
        rows = (mh[:, None] + np.arange(gh)[None, :]) % gh  # [mh, i]
        gathered = q[rows[:, :, None, None], cols[None, None, :, :]]  # (b, i, mw, j, d)
        out[mh] = np.einsum("aimjd,ijd->amd", gathered, k)
        _tally(gathered.size)
    return out.reshape(h, w, d)


def dft_oracle(x, inverse=False):
    """Textbook O(n^2) DFT along the last axis (inverse normalized by 1/n)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    kn = np.outer(np.arange(n), np.arange(n)) % n
    sign = 1.0 if inverse else -1.0
    mat = np.exp(sign * 2j * np.pi * kn / n)
    out = np.einsum("kn,...n->...k", mat, x)
    return out / n if inverse else out
