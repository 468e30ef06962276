"""Reproducible random streams.

Every stream is a xoshiro256** generator whose 256-bit state is derived from
``(seed, stream_id)`` through :class:`numpy.random.SeedSequence`.  The state is
a plain ``uint64[4]`` array so the same generator runs inside numba kernels,
which is what makes replicate results independent of thread scheduling.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_MASK64 = (1 << 64) - 1

# spawn-key prefixes that keep the different consumers of one seed apart
PURPOSE_USER = 0
PURPOSE_CHAIN = 1
PURPOSE_PD_START = 2
PURPOSE_PD_SAMPLE = 3


def stream_state(seed: int, stream_id: int, purpose: int = PURPOSE_USER) -> np.ndarray:
    """Initial xoshiro256** state for one stream."""
    if not 0 <= seed <= _MASK64 or not 0 <= stream_id <= _MASK64:
        raise ValueError("seed and stream_id must be unsigned 64-bit integers")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(purpose, stream_id))
    state = ss.generate_state(4, dtype=np.uint64)
    if not state.any():  # pragma: no cover - probability 2**-256
        state[0] = 1
    return state


def stream_states(seed: int, count: int, purpose: int, first: int = 0) -> np.ndarray:
    """States for ``count`` consecutive stream ids, one row each."""
    out = np.empty((count, 4), dtype=np.uint64)
    for i in range(count):
        out[i] = stream_state(seed, first + i, purpose)
    return out


# -- generator core (numba) ---------------------------------------------------

@nb.njit(inline="always", cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(inline="always", cache=True)
def next_u64(state):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


@nb.njit(inline="always", cache=True)
def uniform(state):
    """Uniform on [0, 1) with 53 random bits."""
    return float(next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(inline="always", cache=True)
def uniform_open(state):
    """Uniform on the open interval (0, 1)."""
    return (float(next_u64(state) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(inline="always", cache=True)
def below(state, n):
    """Uniform integer in [0, n) for 0 < n < 2**32.

    Lemire's multiply-shift on the top 32 bits with rejection of the short
    residue class, so the draw is exactly uniform.
    """
    nn = np.uint64(n)
    m = (next_u64(state) >> np.uint64(32)) * nn
    low = m & np.uint64(0xFFFFFFFF)
    if low < nn:
        t = (np.uint64(0x100000000) - nn) % nn
        while low < t:
            m = (next_u64(state) >> np.uint64(32)) * nn
            low = m & np.uint64(0xFFFFFFFF)
    return np.int64(m >> np.uint64(32))


def _ziggurat_tables(layers=256, r=3.6541528853610088, area=4.92867323399e-3):
    """Layer edges and densities for the 256-layer normal ziggurat."""
    f = lambda x: math.exp(-0.5 * x * x)
    x = np.zeros(layers + 1)
    x[0] = area / f(r)
    x[1] = r
    for i in range(1, layers - 1):
        x[i + 1] = math.sqrt(-2.0 * math.log(area / x[i] + f(x[i])))
    x[layers] = 0.0
    return x, np.exp(-0.5 * x * x)


_ZIG_X, _ZIG_F = _ziggurat_tables()
_ZIG_R = 3.6541528853610088


def _exp_ziggurat_tables(layers=256, r=7.69711747013104972, area=3.9496598225815571993e-3):
    """Layer edges and densities for the 256-layer exponential ziggurat."""
    x = np.zeros(layers + 1)
    x[0] = area / math.exp(-r)
    x[1] = r
    for i in range(1, layers - 1):
        x[i + 1] = -math.log(area / x[i] + math.exp(-x[i]))
    x[layers] = 0.0
    return x, np.exp(-x)


_EZIG_X, _EZIG_F = _exp_ziggurat_tables()
_EZIG_R = 7.69711747013104972


@nb.njit(inline="always", cache=True)
def normal(state):
    """Standard normal variate by the ziggurat method."""
    while True:
        bits = next_u64(state)
        i = int(bits & np.uint64(255))
        sign = -1.0 if (bits >> np.uint64(8)) & np.uint64(1) else 1.0
        u = float(bits >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        x = u * _ZIG_X[i]
        if x < _ZIG_X[i + 1]:
            return sign * x
        if i == 0:
            # tail beyond r
            while True:
                xt = -math.log(uniform_open(state)) / _ZIG_R
                yt = -math.log(uniform_open(state))
                if yt + yt > xt * xt:
                    return sign * (_ZIG_R + xt)
        y = _ZIG_F[i] + uniform(state) * (_ZIG_F[i + 1] - _ZIG_F[i])
        if y < math.exp(-0.5 * x * x):
            return sign * x


@nb.njit(inline="always", cache=True)
def exponential(state):
    """Standard exponential variate by the ziggurat method."""
    while True:
        bits = next_u64(state)
        i = int(bits & np.uint64(255))
        u = float(bits >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        x = u * _EZIG_X[i]
        if x < _EZIG_X[i + 1]:
            return x
        if i == 0:
            # memoryless tail beyond r
            return _EZIG_R - math.log(uniform_open(state))
        y = _EZIG_F[i] + uniform(state) * (_EZIG_F[i + 1] - _EZIG_F[i])
        if y < math.exp(-x):
            return x


@nb.njit(inline="always", cache=True)
def gamma_mt(state, d, c):
    """Marsaglia-Tsang squeeze/rejection core with ``d = a - 1/3``, ``c = 1/sqrt(9d)``."""
    while True:
        x = normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform_open(state)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


@nb.njit(inline="always", cache=True)
def gamma_constants(a):
    """``(d, c, inv_a)`` for :func:`gamma_pre`; shapes below one are boosted by one."""
    if a >= 1.0:
        d = a - 1.0 / 3.0
        return d, 1.0 / math.sqrt(9.0 * d), 0.0
    d = a + 1.0 - 1.0 / 3.0
    return d, 1.0 / math.sqrt(9.0 * d), 1.0 / a


@nb.njit(inline="always", cache=True)
def gamma_pre(state, d, c, inv_a):
    """Gamma variate from precomputed constants; ``inv_a > 0`` marks a boosted shape."""
    g = gamma_mt(state, d, c)
    if inv_a > 0.0:
        g *= math.exp(-exponential(state) * inv_a)  # U**(1/a) without pow
    return g


@nb.njit(inline="always", cache=True)
def gamma(state, a):
    """Gamma(a, 1) variate; shapes below one use the U**(1/a) boost."""
    d, c, inv_a = gamma_constants(a)
    return gamma_pre(state, d, c, inv_a)


@nb.njit(inline="always", cache=True)
def beta(state, a, b):
    """Beta(a, b) variate as X / (X + Y) with X, Y independent gammas."""
    while True:
        x = gamma(state, a)
        y = gamma(state, b)
        s = x + y
        if s > 0.0:
            return x / s


@nb.njit(cache=True)
def _fill_uniform(state, out):
    for i in range(out.shape[0]):
        out[i] = uniform(state)


@nb.njit(cache=True)
def _fill_exponential(state, out):
    for i in range(out.shape[0]):
        out[i] = exponential(state)


@nb.njit(cache=True)
def _fill_beta(state, a, b, out):
    for i in range(out.shape[0]):
        out[i] = beta(state, a, b)


@nb.njit(cache=True)
def _fill_gamma(state, a, out):
    for i in range(out.shape[0]):
        out[i] = gamma(state, a)


class RngStream:
    """One reproducible stream of random draws.

    Identical ``(seed, stream_id)`` pairs replay identical draws; distinct
    stream ids are statistically independent.  A stream is owned by a single
    task at a time.
    """

    def __init__(self, seed: int, stream_id: int = 0, purpose: int = PURPOSE_USER):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.purpose = int(purpose)
        self.state = stream_state(self.seed, self.stream_id, self.purpose)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, size: int | None = None):
        if size is None:
            return uniform(self.state)
        out = np.empty(size)
        _fill_uniform(self.state, out)
        return out

    def below(self, n: int) -> int:
        if not 0 < n < 2**32:
            raise ValueError(f"n must lie in [1, 2**32), got {n}")
        return int(below(self.state, n))

    def exponential(self, size: int | None = None):
        if size is None:
            return exponential(self.state)
        out = np.empty(size)
        _fill_exponential(self.state, out)
        return out

    def gamma(self, a: float, size: int | None = None):
        if a <= 0:
            raise ValueError(f"gamma shape must be positive, got {a}")
        if size is None:
            return gamma(self.state, float(a))
        out = np.empty(size)
        _fill_gamma(self.state, float(a), out)
        return out


def sample_beta(rng: RngStream, a: float, b: float, size: int | None = None):
    """Draw from Beta(a, b) through two gamma variates.

    ``size=None`` returns a float, otherwise an array of independent draws.
    """
    if not (a > 0 and b > 0):
        raise ValueError(f"beta shapes must be positive, got a={a}, b={b}")
    if size is None:
        return beta(rng.state, float(a), float(b))
    out = np.empty(size)
    _fill_beta(rng.state, float(a), float(b), out)
    return out
