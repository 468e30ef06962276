"""Stick-breaking samples from the two-parameter Poisson-Dirichlet law.

``V_i ~ Beta(1 - alpha, theta + i alpha)`` independently and the i-th stick is
``V_i * prod_{j<i} (1 - V_j)``.  Ranking the sticks gives a PD(alpha, theta)
draw; the mass left after the last stick is kept as ``tail_mass``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .rng import (PURPOSE_PD_SAMPLE, RngStream, exponential, gamma_constants, gamma_mt,
                  stream_states)
from .simplex import Params, RankedMassVector

DEFAULT_TRUNCATION = 10_000


@dataclass(frozen=True)
class GemSample:
    """Unranked stick weights plus the mass beyond the truncation."""

    sticks: np.ndarray
    truncation: int
    tail_mass: float


@nb.njit(cache=True)
def _gem_constants(alpha, theta, truncation):
    # gamma constants for both Beta shapes of every stick, shared by all draws
    da, ca, ia = gamma_constants(1.0 - alpha)
    const = np.empty((truncation, 6))
    for i in range(truncation):
        db, cb, ib = gamma_constants(theta + (i + 1) * alpha)
        const[i, 0] = da
        const[i, 1] = ca
        const[i, 2] = ia
        const[i, 3] = db
        const[i, 4] = cb
        const[i, 5] = ib
    return const


@nb.njit(cache=True)
def _gem_into(state, const, out):
    # Once the remaining stick underflows to 0.0 every later stick is exactly
    # 0.0 as well, so the loop stops drawing there.
    rest = 1.0
    for i in range(out.shape[0]):
        if rest == 0.0:
            out[i:] = 0.0
            return 0.0
        while True:
            # the shape<1 boost is applied here rather than through gamma_pre;
            # numba generates much slower code for the nested helper. exp(-E/a)
            # with E exponential is U**(1/a) at less than half the cost of pow
            x = gamma_mt(state, const[i, 0], const[i, 1])
            if const[i, 2] > 0.0:
                x *= math.exp(-exponential(state) * const[i, 2])
            y = gamma_mt(state, const[i, 3], const[i, 4])
            if const[i, 5] > 0.0:
                y *= math.exp(-exponential(state) * const[i, 5])
            if x + y > 0.0:
                break
        v = x / (x + y)
        out[i] = v * rest
        rest *= 1.0 - v
    return rest


@nb.njit(cache=True)
def _power_sums_batch(states, alpha, theta, truncation, orders, sums, tails):
    # orders are integers >= 2; sums[r, j] = sum_i stick_i ** orders[j]
    const = _gem_constants(alpha, theta, truncation)
    sticks = np.empty(truncation)
    top = orders.max()
    acc = np.empty(top + 1)
    for r in range(states.shape[0]):
        tails[r] = _gem_into(states[r], const, sticks)
        acc[:] = 0.0
        for i in range(truncation):
            s = sticks[i]
            if s == 0.0:
                continue
            pw = s * s
            for k in range(2, top + 1):
                acc[k] += pw
                pw *= s
        for j in range(orders.shape[0]):
            sums[r, j] = acc[orders[j]]


@nb.njit(cache=True)
def _ranked_batch(states, alpha, theta, truncation, keep, orders, coords, sums, tails):
    # orders may be empty; otherwise sums[r, j] is the power sum of order orders[j]
    const = _gem_constants(alpha, theta, truncation)
    sticks = np.empty(truncation)
    for r in range(states.shape[0]):
        tails[r] = _gem_into(states[r], const, sticks)
        ranked = np.sort(sticks)[::-1]
        coords[r, :] = ranked[:keep]
        for j in range(orders.shape[0]):
            acc = 0.0
            for i in range(truncation):
                if ranked[i] == 0.0:
                    break
                acc += ranked[i] ** orders[j]
            sums[r, j] = acc


def sample_gem(rng: RngStream, p: Params, truncation: int = DEFAULT_TRUNCATION) -> GemSample:
    """One stick-breaking draw with ``truncation`` sticks."""
    if truncation < 1:
        raise ValueError(f"truncation must be at least 1, got {truncation}")
    sticks = np.empty(int(truncation))
    tail = _gem_into(rng.state, _gem_constants(p.alpha, p.theta, int(truncation)), sticks)
    sticks.setflags(write=False)
    return GemSample(sticks, int(truncation), float(tail))


def rank_gem(sample: GemSample) -> RankedMassVector:
    ranked = np.sort(sample.sticks)[::-1]
    return RankedMassVector(ranked, sample.tail_mass, tail_is_ranked=True)


def sample_pd_ranked(rng: RngStream, p: Params,
                     truncation: int = DEFAULT_TRUNCATION) -> RankedMassVector:
    """A ranked PD(alpha, theta) draw; the residual is the untracked ranked tail."""
    return rank_gem(sample_gem(rng, p, truncation))


def pd_power_sums(p: Params, orders, draws: int, seed: int,
                  truncation: int = DEFAULT_TRUNCATION, first_stream: int = 0):
    """Power sums of ``draws`` independent PD draws.

    Draw ``r`` uses stream ``first_stream + r`` of ``seed``.  Returns
    ``(sums, tails)`` with ``sums[r, j]`` the power sum of order ``orders[j]``.
    """
    orders = np.asarray(orders, dtype=np.int64)
    if orders.size == 0 or orders.min() < 2:
        raise ValueError("orders must be integers >= 2")
    if truncation < 1:
        raise ValueError(f"truncation must be at least 1, got {truncation}")
    states = stream_states(seed, draws, PURPOSE_PD_SAMPLE, first_stream)
    sums = np.empty((draws, orders.size))
    tails = np.empty(draws)
    _power_sums_batch(states, p.alpha, p.theta, int(truncation), orders, sums, tails)
    return sums, tails


def pd_ranked_batch(p: Params, keep: int, draws: int, seed: int,
                    truncation: int = DEFAULT_TRUNCATION, first_stream: int = 0,
                    purpose: int = PURPOSE_PD_SAMPLE):
    """Largest ``keep`` coordinates of ``draws`` ranked PD draws plus tail masses.

    With the default ``purpose`` this uses the same streams as
    :func:`pd_power_sums`, so row ``r`` here is the ranking of draw ``r`` there.
    ``tails[r]`` is the mass beyond the truncation; mass dropped by ``keep``
    is not included in it.
    """
    coords, _, tails = pd_sample_table(p, keep, (), draws, seed, truncation, first_stream,
                                       purpose)
    return coords, tails


def pd_sample_table(p: Params, keep: int, orders, draws: int, seed: int,
                    truncation: int = DEFAULT_TRUNCATION, first_stream: int = 0,
                    purpose: int = PURPOSE_PD_SAMPLE):
    """Ranked prefixes and power sums of the same draws in one pass.

    Returns ``(coords, sums, tails)``; the draws are those of
    :func:`pd_ranked_batch` with the same arguments.
    """
    if truncation < 1:
        raise ValueError(f"truncation must be at least 1, got {truncation}")
    if draws < 0:
        raise ValueError(f"draws must be non-negative, got {draws}")
    orders = np.asarray(orders, dtype=np.int64)
    if orders.size and orders.min() < 2:
        raise ValueError("orders must be integers >= 2")
    keep = min(int(keep), int(truncation))
    states = stream_states(seed, draws, purpose, first_stream)
    coords = np.empty((draws, keep))
    sums = np.empty((draws, orders.size))
    tails = np.empty(draws)
    _ranked_batch(states, p.alpha, p.theta, int(truncation), keep, orders, coords, sums, tails)
    return coords, sums, tails
