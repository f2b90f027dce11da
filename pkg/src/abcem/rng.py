"""Deterministic pseudo-random numbers: a native 64-bit Mersenne Twister with
optional pooling.

The raw stream is MT19937-64 (bit-identical to ``std::mt19937_64``).  Every
variate is built from raw 64-bit draws with a fixed, documented consumption:

========================  ==========================================
operation                 raw draws per variate
========================  ==========================================
uniform / discrete        1
normal (Box-Muller)       2
truncated normal          2 per attempt (rejection, variable)
permutation(n)            n - 1 (Fisher-Yates, from the top down)
========================  ==========================================

In ``pooled`` mode raw draws are pre-generated in batches of ``pool_size``
and served from the buffer; the buffer is refilled when a draw is requested
and the cursor sits at its end.  Both modes yield the same variate sequence
for the same seed, for any interleaving of operations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

MT_ALGORITHM = "mersenne-twister-19937-64"
MODES = ("on-the-fly", "pooled")

_NN = 312
_MM = 156
_MATRIX_A = np.uint64(0xB5026F5AA96619E9)
_UPPER = np.uint64(0xFFFFFFFF80000000)
_LOWER = np.uint64(0x7FFFFFFF)
_ONE = np.uint64(1)
_INIT_MULT = np.uint64(6364136223846793005)
_TEMPER_D = np.uint64(0x5555555555555555)
_TEMPER_B = np.uint64(0x71D67FFFEDA60000)
_TEMPER_C = np.uint64(0xFFF7EEE000000000)
_S11 = np.uint64(11)
_S29 = np.uint64(29)
_S17 = np.uint64(17)
_S37 = np.uint64(37)
_S43 = np.uint64(43)
_S62 = np.uint64(62)
_UNIT = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 2.0 * np.pi
MAX_REJECTIONS = 1_000_000


@njit(cache=True)
def _seed_state(seed):
    mt = np.empty(_NN, dtype=np.uint64)
    mt[0] = seed
    for i in range(1, _NN):
        prev = mt[i - 1]
        mt[i] = _INIT_MULT * (prev ^ (prev >> _S62)) + np.uint64(i)
    return mt


@njit(cache=True)
def _twist(mt):
    for i in range(_NN):
        x = (mt[i] & _UPPER) | (mt[(i + 1) % _NN] & _LOWER)
        xa = x >> _ONE
        if x & _ONE:
            xa ^= _MATRIX_A
        mt[i] = mt[(i + _MM) % _NN] ^ xa


@njit(cache=True)
def _mt_next(mt, pos):
    p = pos[0]
    if p >= _NN:
        _twist(mt)
        p = 0
    y = mt[p]
    pos[0] = p + 1
    y ^= (y >> _S29) & _TEMPER_D
    y ^= (y << _S17) & _TEMPER_B
    y ^= (y << _S37) & _TEMPER_C
    y ^= y >> _S43
    return y


@njit(cache=True)
def _mt_fill(mt, pos, out):
    for k in range(out.size):
        out[k] = _mt_next(mt, pos)


@njit(cache=True)
def _raw_array(mt, pos, buf, cur, pooled, out):
    # the pool logic is written out here rather than in a helper: numba's
    # IR inlining of an array-taking helper makes this loop ~10x slower
    if pooled:
        c = cur[0]
        for k in range(out.size):
            if c >= buf.size:
                _mt_fill(mt, pos, buf)
                c = 0
            out[k] = buf[c]
            c += 1
        cur[0] = c
    else:
        for k in range(out.size):
            out[k] = _mt_next(mt, pos)


@njit(cache=True, inline="always")
def _unit(raw):
    return float(raw >> _S11) * _UNIT


@njit(cache=True, inline="always")
def _box_muller(a, b):
    u1 = 1.0 - _unit(a)  # in (0, 1]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * _unit(b))


@njit(cache=True)
def _std_normal(mt, pos, buf, cur, pooled):
    pair = np.empty(2, dtype=np.uint64)
    _raw_array(mt, pos, buf, cur, pooled, pair)
    return _box_muller(pair[0], pair[1])


@njit(cache=True)
def _uniform_array(mt, pos, buf, cur, pooled, lo, hi, below, out):
    raw = np.empty(out.size, dtype=np.uint64)
    _raw_array(mt, pos, buf, cur, pooled, raw)
    width = hi - lo
    for k in range(out.size):
        v = lo + width * _unit(raw[k])
        out[k] = v if v < hi else below


@njit(cache=True)
def _index_array(mt, pos, buf, cur, pooled, count, out):
    raw = np.empty(out.size, dtype=np.uint64)
    _raw_array(mt, pos, buf, cur, pooled, raw)
    for k in range(out.size):
        j = int(_unit(raw[k]) * count)
        out[k] = j if j < count else count - 1


@njit(cache=True)
def _normal_array(mt, pos, buf, cur, pooled, mu, sigma, out):
    raw = np.empty(2 * out.size, dtype=np.uint64)
    _raw_array(mt, pos, buf, cur, pooled, raw)
    for k in range(out.size):
        out[k] = mu + sigma * _box_muller(raw[2 * k], raw[2 * k + 1])


@njit(cache=True)
def _truncated_array(mt, pos, buf, cur, pooled, mu, sigma, lo, hi, max_reject, out):
    """Returns -1 on success, else the index whose rejection budget ran out."""
    pair = np.empty(2, dtype=np.uint64)
    for k in range(out.size):
        accepted = False
        for _ in range(max_reject + 1):
            _raw_array(mt, pos, buf, cur, pooled, pair)
            v = mu + sigma * _box_muller(pair[0], pair[1])
            if lo <= v and v <= hi:
                out[k] = v
                accepted = True
                break
        if not accepted:
            return k
    return -1


@njit(cache=True)
def _permutation(mt, pos, buf, cur, pooled, out):
    n = out.size
    raw = np.empty(max(n - 1, 0), dtype=np.uint64)
    _raw_array(mt, pos, buf, cur, pooled, raw)
    for i in range(n):
        out[i] = i
    for i in range(n - 1, 0, -1):
        j = int(_unit(raw[n - 1 - i]) * (i + 1))
        if j > i:
            j = i
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    mode: str = "pooled"
    pool_size: int = 65536
    algorithm: str = MT_ALGORITHM

    def __post_init__(self):
        if self.algorithm != MT_ALGORITHM:
            raise ValueError(f"unsupported generator algorithm {self.algorithm!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "pooled" and self.pool_size < 1:
            raise ValueError("pool_size must be >= 1 in pooled mode")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _check_interval(lo, hi):
    if not lo < hi:
        raise ValueError(f"empty interval: lo={lo} must be < hi={hi}")


class RandomStream:
    """MT19937-64 stream with on-the-fly or pooled raw generation.

    The distribution methods are the only way the simulation consumes
    randomness, so stream positions stay auditable (see module docstring).
    """

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self._mt = _seed_state(np.uint64(spec.seed))
        self._pos = np.array([_NN], dtype=np.int64)
        self._pooled = spec.mode == "pooled"
        size = spec.pool_size if self._pooled else 1
        self._buf = np.empty(size, dtype=np.uint64)
        self._cur = np.array([size], dtype=np.int64)  # empty until first draw
        self._one = np.empty(1, dtype=np.uint64)

    @classmethod
    def from_seed(cls, seed: int, mode: str = "pooled", pool_size: int = 65536):
        return cls(GeneratorSpec(seed=seed, mode=mode, pool_size=pool_size))

    @property
    def _state(self):
        return self._mt, self._pos, self._buf, self._cur, self._pooled

    # raw stream -----------------------------------------------------------

    def next_raw(self) -> int:
        _raw_array(*self._state, self._one)
        return int(self._one[0])

    def raw_array(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        _raw_array(*self._state, out)
        return out

    @property
    def pool_remaining(self) -> int:
        return int(self._buf.size - self._cur[0]) if self._pooled else 0

    def fill_pool(self, n: int | None = None) -> None:
        """Pre-generate raw draws so the buffer holds the next ``n`` of them.

        Unconsumed draws are kept at the front, so the stream position is the
        same as if the draws had been taken one by one.
        """
        if not self._pooled:
            raise RuntimeError("fill_pool requires mode='pooled'")
        n = self.spec.pool_size if n is None else n
        if n < 1:
            raise ValueError("pool size must be positive")
        left = self._buf[self._cur[0]:]
        try:
            buf = np.empty(max(n, left.size), dtype=np.uint64)
        except MemoryError as exc:
            raise MemoryError(f"cannot allocate a pool of {n} draws") from exc
        buf[: left.size] = left
        _mt_fill(self._mt, self._pos, buf[left.size:])
        self._buf = buf
        self._cur = np.array([0], dtype=np.int64)

    # distributions --------------------------------------------------------

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(self.uniform_array(lo, hi, 1)[0])

    def uniform_array(self, lo: float, hi: float, n: int) -> np.ndarray:
        _check_interval(lo, hi)
        out = np.empty(n)
        lo, hi = float(lo), float(hi)
        _uniform_array(*self._state, lo, hi, float(np.nextafter(hi, lo)), out)
        return out

    def discrete_uniform(self, values: Sequence):
        return self.discrete_uniform_array(values, 1)[0]

    def discrete_uniform_array(self, values: Sequence, n: int) -> np.ndarray:
        values = np.asarray(values)
        if values.size == 0:
            raise ValueError("cannot draw from an empty set")
        idx = np.empty(n, dtype=np.int64)
        _index_array(*self._state, values.size, idx)
        return values[idx]

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        if sigma == 0:
            return float(mu)
        return float(self.normal_array(mu, sigma, 1)[0])

    def normal_array(self, mu: float, sigma: float, n: int) -> np.ndarray:
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        if sigma == 0:
            return np.full(n, float(mu))
        out = np.empty(n)
        _normal_array(*self._state, float(mu), float(sigma), out)
        return out

    def truncated_normal(self, mu: float, sigma: float, lo: float, hi: float) -> float:
        return float(self.truncated_normal_array(mu, sigma, lo, hi, 1)[0])

    def truncated_normal_array(self, mu, sigma, lo, hi, n: int) -> np.ndarray:
        _check_interval(lo, hi)
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        if sigma == 0:
            if not lo <= mu <= hi:
                raise ValueError("sigma=0 requires mu inside [lo, hi]")
            return np.full(n, float(mu))
        out = np.empty(n)
        bad = _truncated_array(*self._state, float(mu), float(sigma), float(lo),
                               float(hi), MAX_REJECTIONS, out)
        if bad >= 0:
            raise RuntimeError(
                f"truncated normal: more than {MAX_REJECTIONS} rejections "
                f"for N({mu}, {sigma}^2) on [{lo}, {hi}]")
        return out

    def permutation(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        _permutation(*self._state, out)
        return out


class StubRandom:
    """Deterministic stand-in with the distribution interface of RandomStream.

    ``uniform`` values are positions in [0, 1) mapped onto the requested
    interval, ``normal`` values are standard-normal deviates.  Both cycle
    through the given sequences.  ``permutation`` is the identity.
    """

    def __init__(self, uniform: float | Sequence[float] = 0.0,
                 normal: float | Sequence[float] = 0.0):
        self._u = list(np.atleast_1d(uniform).astype(float))
        self._z = list(np.atleast_1d(normal).astype(float))
        self._iu = 0
        self._iz = 0

    def _next_u(self):
        v = self._u[self._iu % len(self._u)]
        self._iu += 1
        return v

    def _next_z(self):
        v = self._z[self._iz % len(self._z)]
        self._iz += 1
        return v

    def uniform(self, lo=0.0, hi=1.0):
        _check_interval(lo, hi)
        return lo + (hi - lo) * self._next_u()

    def uniform_array(self, lo, hi, n):
        return np.array([self.uniform(lo, hi) for _ in range(n)])

    def discrete_uniform(self, values):
        values = list(values)
        if not values:
            raise ValueError("cannot draw from an empty set")
        return values[min(int(self._next_u() * len(values)), len(values) - 1)]

    def discrete_uniform_array(self, values, n):
        return np.array([self.discrete_uniform(values) for _ in range(n)])

    def normal(self, mu=0.0, sigma=1.0):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        return mu + sigma * self._next_z()

    def normal_array(self, mu, sigma, n):
        return np.array([self.normal(mu, sigma) for _ in range(n)])

    def truncated_normal(self, mu, sigma, lo, hi):
        _check_interval(lo, hi)
        v = self.normal(mu, sigma)
        if not lo <= v <= hi:
            raise ValueError("stub normal value falls outside the truncation bounds")
        return v

    def truncated_normal_array(self, mu, sigma, lo, hi, n):
        return np.array([self.truncated_normal(mu, sigma, lo, hi) for _ in range(n)])

    def permutation(self, n):
        return np.arange(n)
