"""Up-down Markov chain on integer partitions.

One step adds a box by the two-parameter Chinese-restaurant rule and then
removes a uniformly chosen box, so the partition size ``n`` is preserved.
Read as ``lambda / n`` the chain approximates the diffusion after rescaling
time by a per-step increment ``delta ~ c / n**2``; the constant is measured
against the closed-form generator by :func:`calibrate_clock`.

The functions here are the exact reference layer: enumerated transition
probabilities, small-n transition matrices and the generator applied by
exact expectation.  Long trajectories run in :mod:`pdlab.engine`.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .rng import RngStream
from .simplex import Params, RankedMassVector

MAX_EXACT_N = 10


@dataclass(frozen=True, order=True)
class Partition:
    """A partition of ``n`` as a non-increasing tuple of positive parts."""

    parts: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(int(v) for v in self.parts)
        if not parts:
            raise ValueError("a partition needs at least one part")
        if parts[-1] < 1:
            raise ValueError("parts must be positive")
        if any(a < b for a, b in zip(parts, parts[1:])):
            raise ValueError(f"parts must be non-increasing: {parts}")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def of(cls, parts: Iterable[int]) -> "Partition":
        """Build from parts in any order."""
        return cls(tuple(sorted((int(v) for v in parts), reverse=True)))

    @classmethod
    def parse(cls, text: str) -> "Partition":
        """Inverse of ``str``: ``"4+2+1"``."""
        try:
            return cls.of(int(v) for v in text.split("+"))
        except ValueError:
            raise ValueError(f"not a partition string: {text!r}") from None

    @property
    def n(self) -> int:
        return sum(self.parts)

    @property
    def k(self) -> int:
        return len(self.parts)

    def __str__(self) -> str:
        return "+".join(str(v) for v in self.parts)

    def compact(self) -> str:
        """Run-length form, e.g. ``"5+1^3"`` for ``5+1+1+1``."""
        runs = []
        for size, count in sorted(Counter(self.parts).items(), reverse=True):
            runs.append(str(size) if count == 1 else f"{size}^{count}")
        return "+".join(runs)

    def masses(self) -> np.ndarray:
        return np.asarray(self.parts, dtype=float) / self.n

    def to_simplex(self) -> RankedMassVector:
        return RankedMassVector(self.masses(), 0.0)

    def phi(self, m: float) -> float:
        """Power sum of ``lambda / n`` (1 for ``m == 1``)."""
        if m == 1:
            return 1.0
        return float(np.sum(self.masses() ** m))


def _grow(parts: tuple[int, ...], i: int) -> tuple[int, ...]:
    # the grown part moves to the front of its run of equal sizes
    s = parts[i]
    j = parts.index(s)
    return parts[:j] + (s + 1,) + parts[j:i] + parts[i + 1:]


def _shrink(parts: tuple[int, ...], i: int) -> tuple[int, ...]:
    # the shrunk part moves to the back of its run of equal sizes
    s = parts[i]
    j = len(parts) - 1 - parts[::-1].index(s)
    rest = parts[:i] + parts[i + 1:j + 1]
    tail = parts[j + 1:]
    return rest + ((s - 1,) if s > 1 else ()) + tail


def up_probabilities(p: Params, lam: Partition) -> list[tuple[Partition, float]]:
    """Outcomes of one growth step with their probabilities, one entry per part plus a new part."""
    n, k = lam.n, lam.k
    denom = n + p.theta
    out = [(Partition(_grow(lam.parts, i)), (s - p.alpha) / denom) for i, s in enumerate(lam.parts)]
    out.append((Partition(lam.parts + (1,)), (p.theta + k * p.alpha) / denom))
    return out


def down_probabilities(lam: Partition) -> list[tuple[Partition, float]]:
    """Outcomes of removing a uniformly chosen box."""
    n = lam.n
    if n < 2:
        raise ValueError("cannot remove a box from a partition of 1")
    return [(Partition(_shrink(lam.parts, i)), s / n) for i, s in enumerate(lam.parts)]


def up_step(rng: RngStream, p: Params, lam: Partition) -> Partition:
    """Add one box: part ``i`` grows w.p. ``(lambda_i - alpha)/(n + theta)``, else a new part."""
    u = rng.uniform() * (lam.n + p.theta)
    for i, s in enumerate(lam.parts):
        u -= s - p.alpha
        if u < 0.0:
            return Partition(_grow(lam.parts, i))
    return Partition(lam.parts + (1,))


def down_step(rng: RngStream, lam: Partition) -> Partition:
    """Remove a uniformly chosen box."""
    if lam.n < 2:
        raise ValueError("cannot remove a box from a partition of 1")
    b = rng.below(lam.n)
    for i, s in enumerate(lam.parts):
        b -= s
        if b < 0:
            return Partition(_shrink(lam.parts, i))
    raise AssertionError("box index out of range")  # pragma: no cover


def updown_step(rng: RngStream, p: Params, lam: Partition) -> Partition:
    return down_step(rng, up_step(rng, p, lam))


def partition_from_simplex_point(x: RankedMassVector, n: int) -> Partition:
    """Embed a point of the closed simplex at resolution ``1/n``.

    Tracked coordinates become parts ``floor(x_i n)`` (when at least 1); every
    remaining box, including all deficiency mass, becomes a singleton.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    # the small offset keeps products like 0.29 * 100 from flooring to 28
    sizes = np.floor(x.coords * n + 1e-9)
    if x.coords.size and x.coords[0] > 0.0 and sizes[0] < 1:
        raise ValueError(f"n={n} is too small to represent any coordinate of {x}")
    parts = [int(v) for v in sizes if v >= 1]
    used = sum(parts)
    if used > n:
        raise ValueError(f"n={n} is too small to represent the coordinates")
    return Partition.of(parts + [1] * (n - used))


@lru_cache(maxsize=None)
def partitions_of(n: int) -> tuple[Partition, ...]:
    """All partitions of ``n`` in reverse lexicographic order."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")

    def gen(rem: int, cap: int):
        if rem == 0:
            yield ()
            return
        for first in range(min(rem, cap), 0, -1):
            for rest in gen(rem - first, first):
                yield (first,) + rest

    return tuple(Partition(t) for t in gen(n, n))


def exact_transition_matrix(p: Params, n: int) -> tuple[tuple[Partition, ...], np.ndarray]:
    """Row-stochastic matrix of one up-down step on the partitions of ``n``.

    Built by enumerating every (grow, remove) pair part by part.
    """
    if not 1 <= n <= MAX_EXACT_N:
        raise ValueError(f"exact matrices are limited to 1 <= n <= {MAX_EXACT_N}, got {n}")
    states = partitions_of(n)
    if n == 1:
        return states, np.ones((1, 1))
    index = {lam: i for i, lam in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for i, lam in enumerate(states):
        for mid, pu in up_probabilities(p, lam):
            for end, pd in down_probabilities(mid):
                P[i, index[end]] += pu * pd
    return states, P


def is_irreducible_aperiodic(P: np.ndarray) -> bool:
    """Strong connectivity of the transition graph plus a positive self-loop."""
    ncomp, _ = connected_components(P > 0.0, directed=True, connection="strong")
    return ncomp == 1 and bool(np.any(np.diag(P) > 0.0))


def exact_stationary_small_n(p: Params, n: int) -> dict[Partition, float]:
    """The unique stationary law of the exact transition matrix."""
    states, P = exact_transition_matrix(p, n)
    size = len(states)
    A = P.T - np.eye(size)
    A[-1, :] = 1.0
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"stationary system is singular for n={n}, {p}") from exc
    return dict(zip(states, pi))


def pair_match_probability(pi: dict[Partition, float]) -> float:
    """Chance that two boxes drawn without replacement share a part."""
    total = 0.0
    for lam, w in pi.items():
        n = lam.n
        total += w * sum(s * (s - 1) for s in lam.parts) / (n * (n - 1))
    return total


def exact_generator_apply(p: Params, lam: Partition, m: int) -> float:
    """Expected one-step change of the power sum of order ``m`` of ``lambda / n``.

    Exact expectation over all grow/remove outcomes, grouped by part size:
    after growing a part, the expected removal change only depends on the
    grown size, so the double sum collapses to one pass over distinct sizes.
    """
    if int(m) != m or m < 2:
        raise ValueError(f"m must be an integer >= 2, got {m}")
    m = int(m)
    n, k = lam.n, lam.k
    counts = Counter(lam.parts)

    def g(s):  # s * ((s - 1)**m - s**m): removal change weighted by size
        return s * ((s - 1) ** m - s ** m)

    F = sum(c * g(s) for s, c in counts.items())
    denom = n + p.theta
    total = 0.0
    for s, c in counts.items():
        prob = c * (s - p.alpha) / denom
        up = (s + 1) ** m - s ** m
        down = (F - g(s) + g(s + 1)) / (n + 1)
        total += prob * (up + down)
    prob_new = (p.theta + k * p.alpha) / denom
    total += prob_new * (1 + (F + g(1)) / (n + 1))
    return total / n ** m


def closed_form_drift(p: Params, lam: Partition, m: int) -> float:
    """Closed-form generator action evaluated at ``lambda / n``."""
    return 0.5 * m * ((m - 1 - p.alpha) * lam.phi(m - 1) - (m - 1 + p.theta) * lam.phi(m))


def default_probe_states(n: int) -> list[Partition]:
    """Probe partitions spread over the simplex: corner, splits, mixtures with dust."""
    if n < 20:
        raise ValueError(f"probe states need n >= 20, got {n}")
    probes = [
        [n],
        [n - n // 4, n // 4],
        [n - n // 2, n // 2],
        [n // 4] * 3 + [n - 3 * (n // 4)],
        [n // 10] * 9 + [n - 9 * (n // 10)],
        [n - n // 2] + [1] * (n // 2),
        [n // 5] + [1] * (n - n // 5),
        [1] * n,
    ]
    return [Partition.of(q) for q in probes]


@dataclass(frozen=True)
class ChainClock:
    """Diffusion time per up-down step at resolution ``n``.

    ``calibration_constant`` is ``delta_per_step * n**2``.  The remaining
    fields record how the value was measured.
    """

    n: int
    delta_per_step: float
    calibration_constant: float
    spread: float = 0.0
    constant_m3: float = float("nan")
    spread_m3: float = float("nan")
    probes: tuple[str, ...] = field(default=())
    ratios: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.delta_per_step > 0.0:
            raise ValueError("delta_per_step must be positive")

    @classmethod
    def from_constant(cls, n: int, c: float) -> "ChainClock":
        return cls(n, c / n ** 2, c)

    def scaled(self, factor: float) -> "ChainClock":
        """A deliberately mis-scaled copy (negative controls)."""
        return ChainClock(self.n, self.delta_per_step * factor, self.calibration_constant * factor,
                          self.spread, self.constant_m3, self.spread_m3, self.probes, self.ratios)

    def steps_for(self, t: float) -> int:
        return int(math.floor(t / self.delta_per_step + 0.5))

    def to_dict(self) -> dict:
        return {"n": self.n, "delta_per_step": self.delta_per_step,
                "calibration_constant": self.calibration_constant, "spread": self.spread,
                "constant_m3": self.constant_m3, "spread_m3": self.spread_m3,
                "probes": list(self.probes), "ratios": list(self.ratios)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChainClock":
        return cls(int(d["n"]), float(d["delta_per_step"]), float(d["calibration_constant"]),
                   float(d.get("spread", 0.0)), float(d.get("constant_m3", float("nan"))),
                   float(d.get("spread_m3", float("nan"))), tuple(d.get("probes", ())),
                   tuple(float(v) for v in d.get("ratios", ())))


def _ratios(p: Params, probes: Sequence[Partition], m: int, min_drift: float):
    kept, ratios = [], []
    for lam in probes:
        target = closed_form_drift(p, lam, m)
        if abs(target) < min_drift:
            continue
        kept.append(lam)
        ratios.append(exact_generator_apply(p, lam, m) / target)
    return kept, np.asarray(ratios)


def _spread(r: np.ndarray) -> float:
    return float((r.max() - r.min()) / abs(np.median(r)))


def calibrate_clock(p: Params, n: int, probe_states: Sequence[Partition] | None = None,
                    min_drift: float = 0.1) -> ChainClock:
    """Measure the diffusion time of one step against the closed-form generator.

    For each probe the exact expected change of ``phi_2`` is divided by the
    closed-form drift at ``lambda / n``; the clock is the median ratio.
    Probes whose closed-form drift is below ``min_drift`` in absolute value
    are skipped because the ratio is ill-conditioned there.
    """
    probes = list(probe_states) if probe_states is not None else default_probe_states(n)
    for lam in probes:
        if lam.n != n:
            raise ValueError(f"probe {lam} is not a partition of {n}")
    kept, r2 = _ratios(p, probes, 2, min_drift)
    if r2.size == 0:
        raise ValueError(f"no probe has |drift of phi_2| >= {min_drift}; the clock is undetermined")
    delta = float(np.median(r2))
    if not delta > 0.0:
        raise ArithmeticError(f"calibrated step length is not positive: {delta}")
    _, r3 = _ratios(p, probes, 3, min_drift)
    c3 = float(np.median(r3)) * n ** 2 if r3.size else float("nan")
    s3 = _spread(r3) if r3.size else float("nan")
    return ChainClock(n, delta, delta * n ** 2, _spread(r2), c3, s3,
                      tuple(lam.compact() for lam in kept), tuple(float(v) for v in r2))
