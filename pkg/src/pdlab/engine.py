"""Compiled trajectories of the up-down chain.

The chain state is kept as a box array: ``boxes[b]`` is the id of the part
holding box ``b`` and ``sizes[id]`` its size.  A uniform box is then a uniform
array index, growth by ``(size - alpha)`` is box sampling with acceptance
``1 - alpha/size``, and every step costs O(1) plus one table lookup per
tracked power sum.  Power sums of ``lambda / n`` are updated incrementally
and the path integrals entering the martingale functionals are accumulated
with the value before each step times the step length.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .chain import ChainClock, Partition
from .rng import PURPOSE_CHAIN, RngStream, below, stream_states, uniform
from .simplex import Params

# numba probes TBB first and warns when the installed version is too old,
# then falls back to another threading layer; the warning is noise here
warnings.filterwarnings("ignore", message="The TBB threading layer", category=nb.NumbaWarning)

# -- kernels -----------------------------------------------------------------


@nb.njit(cache=True)
def _init_chain(parts, nparts, n, boxes, sizes, free):
    sizes[:] = 0
    b = 0
    for i in range(nparts):
        s = parts[i]
        sizes[i] = s
        for _ in range(s):
            boxes[b] = i
            b += 1
    # free ids are popped from the top, smallest id first
    top = 0
    for pid in range(sizes.shape[0] - 1, nparts - 1, -1):
        free[top] = pid
        top += 1
    return top


@nb.njit(cache=True)
def _live_sizes(sizes, k):
    out = np.empty(k, dtype=np.int64)
    j = 0
    for pid in range(sizes.shape[0]):
        if sizes[pid] > 0:
            out[j] = sizes[pid]
            j += 1
    out = np.sort(out)[::-1]
    return out


@nb.njit(cache=True)
def _simulate(state, alpha, theta, n, parts, nparts, diff, lo_idx, hi_idx, qv_idx,
              cp_steps, delta, K_list, phi_out, lo_out, hi_out, qv_out, top_out, k_out,
              record, states_out):
    # The step is written out inline with k and the free-stack top held in
    # locals; routing it through a helper with array state costs ~3x.
    boxes = np.empty(n + 1, dtype=np.int64)
    sizes = np.empty(n + 2, dtype=np.int64)
    free = np.empty(n + 2, dtype=np.int64)
    ftop = _init_chain(parts, nparts, n, boxes, sizes, free)
    k = nparts
    E = diff.shape[1]
    S = np.zeros(E)
    for e in range(E):
        for i in range(nparts):
            for s in range(parts[i]):
                S[e] += diff[s, e]
    J = lo_idx.shape[0]
    acc = np.zeros(E)
    acc_qv = np.zeros(J)
    tot = np.zeros(E)
    tot_qv = np.zeros(J)
    nt = n + theta
    step = 0
    for c in range(cp_steps.shape[0]):
        acc[:] = 0.0
        acc_qv[:] = 0.0
        while step < cp_steps[c]:
            # left-point sums for the path integrals
            for e in range(E):
                acc[e] += S[e]
            # phi_{2m-1} >= phi_m**2 exactly; clamping the rounding residue
            # keeps the integral non-decreasing
            for j in range(J):
                v = S[hi_idx[j]]
                g = S[qv_idx[j]] - v * v
                if g > 0.0:
                    acc_qv[j] += g
            # up: new part w.p. (theta + k alpha)/(n + theta), else part i w.p. (size_i - alpha)/(n + theta)
            if uniform(state) * nt < theta + k * alpha:
                ftop -= 1
                pid = free[ftop]
                s = 0
                k += 1
            else:
                while True:
                    pid = boxes[below(state, n)]
                    s = sizes[pid]
                    if alpha == 0.0 or uniform(state) * s < s - alpha:
                        break
            sizes[pid] = s + 1
            boxes[n] = pid
            for e in range(E):
                S[e] += diff[s, e]
            # down: remove a uniform box out of n + 1
            b = below(state, n + 1)
            pid = boxes[b]
            s = sizes[pid]
            sizes[pid] = s - 1
            boxes[b] = boxes[n]
            for e in range(E):
                S[e] -= diff[s - 1, e]
            if s == 1:
                free[ftop] = pid
                ftop += 1
                k -= 1
            step += 1
        for e in range(E):
            tot[e] += acc[e] * delta
        for j in range(J):
            tot_qv[j] += acc_qv[j] * delta
            lo_out[c, j] = cp_steps[c] * delta if lo_idx[j] < 0 else tot[lo_idx[j]]
            hi_out[c, j] = tot[hi_idx[j]]
            qv_out[c, j] = tot_qv[j]
        for e in range(E):
            phi_out[c, e] = S[e]
        k_out[c] = k
        live = _live_sizes(sizes, k)
        for l in range(K_list.shape[0]):
            top = 0
            for i in range(min(K_list[l], k)):
                top += live[i]
            top_out[c, l] = top / n
        if record:
            states_out[c, :] = 0
            states_out[c, :k] = live


@nb.njit(parallel=True, cache=True)
def _ensemble(states, alpha, theta, n, starts, start_lens, start_rows, diff, lo_idx, hi_idx,
              qv_idx, cp_steps, delta, K_list, phi_out, lo_out, hi_out, qv_out, top_out, k_out):
    R = states.shape[0]
    for r in nb.prange(R):
        srow = start_rows[r]
        dummy = np.zeros((1, 1), dtype=np.int64)
        _simulate(states[r], alpha, theta, n, starts[srow], start_lens[srow], diff, lo_idx,
                  hi_idx, qv_idx, cp_steps, delta, K_list, phi_out[r], lo_out[r], hi_out[r],
                  qv_out[r], top_out[r], k_out[r], False, dummy)


@nb.njit(cache=True)
def _one_step_keys(state, alpha, theta, parts, n, draws, keys):
    diff = np.zeros((n + 1, 0))
    idx = np.zeros(0, dtype=np.int64)
    cp = np.ones(1, dtype=np.int64)
    K = np.zeros(0, dtype=np.int64)
    phi = np.zeros((1, 0))
    ints = np.zeros((1, 0))
    top = np.zeros((1, 0))
    kc = np.zeros(1, dtype=np.int64)
    snap = np.zeros((1, n), dtype=np.int64)
    for d in range(draws):
        _simulate(state, alpha, theta, n, parts, parts.shape[0], diff, idx, idx, idx, cp, 1.0,
                  K, phi, ints, ints, ints, top, kc, True, snap)
        key = 0
        for i in range(kc[0]):
            key = key * (n + 1) + snap[0, i]
        keys[d] = key


# -- Python surface ----------------------------------------------------------


def power_table(n: int, orders: Sequence[float]) -> np.ndarray:
    """``tab[e, s] = (s / n) ** orders[e]`` for ``s = 0..n+1``."""
    s = np.arange(n + 2, dtype=float) / n
    return np.vstack([s ** m for m in orders]) if len(orders) else np.zeros((0, n + 2))


def increment_table(n: int, orders: Sequence[float]) -> np.ndarray:
    """``diff[s, e]``: change of ``(size / n) ** orders[e]`` when a part grows from ``s`` to ``s + 1``."""
    return np.ascontiguousarray(np.diff(power_table(n, orders), axis=1).T)


def tracked_orders(m_list: Sequence[int], max_order: int = 2) -> list[int]:
    """Power-sum orders needed for ``phi_2..phi_max_order`` and the martingales of ``m_list``."""
    need = set(range(2, max_order + 1))
    for m in m_list:
        need.update({m, 2 * m - 1})
        if m - 1 >= 2:
            need.add(m - 1)
    return sorted(need)


def _checkpoint_steps(clock: ChainClock, checkpoints: Sequence[float]) -> np.ndarray:
    cps = np.asarray(checkpoints, dtype=float)
    if cps.ndim != 1 or cps.size == 0:
        raise ValueError("need at least one checkpoint")
    if cps.min() < 0.0 or np.any(np.diff(cps) < 0.0):
        raise ValueError("checkpoints must be non-negative and sorted")
    return np.array([clock.steps_for(t) for t in cps], dtype=np.int64)


def _index_arrays(orders: list[int], m_list: Sequence[int]):
    pos = {m: i for i, m in enumerate(orders)}
    lo = np.array([pos[m - 1] if m - 1 >= 2 else -1 for m in m_list], dtype=np.int64)
    hi = np.array([pos[m] for m in m_list], dtype=np.int64)
    qv = np.array([pos[2 * m - 1] for m in m_list], dtype=np.int64)
    return lo, hi, qv


def _check_m_list(m_list):
    m_list = [int(m) for m in m_list]
    if any(m < 2 for m in m_list):
        raise ValueError("martingale orders must be integers >= 2")
    return m_list


@dataclass
class Ensemble:
    """Checkpoint records of independent replicate trajectories.

    Arrays are indexed ``[replicate, checkpoint, ...]``; ``times`` are the
    checkpoint times rounded to whole steps.
    """

    params: Params
    n: int
    delta: float
    checkpoints: np.ndarray
    times: np.ndarray
    orders: list[int]
    m_list: list[int]
    K_list: list[int]
    phi_values: np.ndarray
    lo_int: np.ndarray
    hi_int: np.ndarray
    qv_int: np.ndarray
    top_mass: np.ndarray
    part_counts: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def replicates(self) -> int:
        return self.phi_values.shape[0]

    def phi(self, m: int) -> np.ndarray:
        if m == 1:
            return np.ones(self.phi_values.shape[:2])
        return self.phi_values[:, :, self.orders.index(m)]

    def _j(self, m: int) -> int:
        try:
            return self.m_list.index(m)
        except ValueError:
            raise KeyError(f"order {m} was not tracked for martingales") from None

    def Z(self, m: int) -> np.ndarray:
        """``phi_m(X_t) - phi_m(X_0) - int_0^t (A phi_m)(X_s) ds`` per replicate."""
        j = self._j(m)
        a, th = self.params.alpha, self.params.theta
        phi = self.phi(m)
        drift = 0.5 * m * ((m - 1 - a) * self.lo_int[:, :, j] - (m - 1 + th) * self.hi_int[:, :, j])
        return phi - phi[:, :1] - drift

    def I(self, m: int) -> np.ndarray:
        """``m**2 int_0^t (phi_{2m-1} - phi_m**2)(X_s) ds`` per replicate."""
        return m * m * self.qv_int[:, :, self._j(m)]

    def deficiency(self, K: int) -> np.ndarray:
        return 1.0 - self.top_mass[:, :, self.K_list.index(K)]

    def summary_table(self) -> tuple[list[str], list[list[float]]]:
        """Per-checkpoint replicate means and standard errors as CSV columns."""
        R = self.replicates

        def stats(a):
            se = a.std(0, ddof=1) / np.sqrt(R) if R > 1 else np.full(a.shape[1], np.nan)
            return a.mean(0), se

        header, cols = ["time"], [self.times]
        for m in self.orders:
            mean, se = stats(self.phi(m))
            header += [f"phi_{m}", f"phi_{m}_se"]
            cols += [mean, se]
        for m in self.m_list:
            Z, I = self.Z(m), self.I(m)
            z_mean, z_se = stats(Z)
            q_mean, q_se = stats(Z * Z - I)
            header += [f"Z_{m}", f"Z_{m}_se", f"Z_{m}_sq_minus_I_{m}", f"Z_{m}_sq_minus_I_{m}_se",
                       f"I_{m}"]
            cols += [z_mean, z_se, q_mean, q_se, I.mean(0)]
        for K in self.K_list:
            mean, se = stats(self.top_mass[:, :, self.K_list.index(K)])
            header += [f"top_{K}", f"top_{K}_se"]
            cols += [mean, se]
        header.append("parts")
        cols.append(self.part_counts.mean(0))
        rows = [list(r) for r in np.column_stack(cols)]
        return header, rows


def run_ensemble(p: Params, n: int, clock: ChainClock, starts: Partition | Sequence[Partition],
                 checkpoints: Sequence[float], replicates: int, seed: int,
                 m_list: Sequence[int] = (2,), K_list: Sequence[int] = (10,),
                 max_order: int = 2) -> Ensemble:
    """Run ``replicates`` independent trajectories; replicate ``r`` uses chain stream ``r``.

    ``starts`` is one partition shared by all replicates or one per replicate.
    """
    if replicates < 1:
        raise ValueError(f"replicates must be positive, got {replicates}")
    if isinstance(starts, Partition):
        starts = [starts]
    starts = list(starts)
    if len(starts) not in (1, replicates):
        raise ValueError("need one start state or one per replicate")
    for lam in starts:
        if lam.n != n:
            raise ValueError(f"start {lam.compact()} is not a partition of {n}")
    m_list = _check_m_list(m_list)
    K_list = [int(K) for K in K_list]
    if any(K < 1 for K in K_list):
        raise ValueError("K values must be positive")
    orders = tracked_orders(m_list, max_order)
    diff = increment_table(n, orders)
    lo_idx, hi_idx, qv_idx = _index_arrays(orders, m_list)
    cp_steps = _checkpoint_steps(clock, checkpoints)
    width = max(lam.k for lam in starts)
    start_arr = np.zeros((len(starts), width), dtype=np.int64)
    start_lens = np.zeros(len(starts), dtype=np.int64)
    for i, lam in enumerate(starts):
        start_arr[i, :lam.k] = lam.parts
        start_lens[i] = lam.k
    R, C, E, J, L = replicates, cp_steps.size, len(orders), len(m_list), len(K_list)
    phi = np.empty((R, C, E))
    lo = np.empty((R, C, J))
    hi = np.empty((R, C, J))
    qv = np.empty((R, C, J))
    top = np.empty((R, C, L))
    kc = np.empty((R, C), dtype=np.int64)
    states = stream_states(seed, R, PURPOSE_CHAIN)
    start_rows = np.zeros(R, dtype=np.int64) if len(starts) == 1 else np.arange(R, dtype=np.int64)
    _ensemble(states, p.alpha, p.theta, int(n), start_arr, start_lens, start_rows, diff, lo_idx,
              hi_idx, qv_idx, cp_steps, clock.delta_per_step, np.asarray(K_list, dtype=np.int64),
              phi, lo, hi, qv, top, kc)
    return Ensemble(p, int(n), clock.delta_per_step, np.asarray(checkpoints, dtype=float),
                    cp_steps * clock.delta_per_step, orders, m_list, K_list, phi, lo, hi, qv,
                    top, kc, int(seed))


@dataclass
class ChainTrajectory:
    """One trajectory recorded at checkpoints on the step lattice.

    ``integrals[m]`` holds the running integrals of ``phi_{m-1}``, ``phi_m``
    and ``phi_{2m-1} - phi_m**2`` as rows, one column per checkpoint.
    """

    times: np.ndarray
    states: list[Partition]
    phi: dict[int, np.ndarray]
    integrals: dict[int, np.ndarray]
    Z: dict[int, np.ndarray]
    I: dict[int, np.ndarray]
    top_mass: dict[int, np.ndarray]
    part_counts: np.ndarray

    def table(self) -> tuple[list[str], list[list]]:
        """Checkpoint rows: time, tracked phi_m, Z_m and I_m, top-K sums, part count."""
        orders = sorted(m for m in self.phi if m >= 2)
        header = ["time"] + [f"phi_{m}" for m in orders]
        cols = [self.times] + [self.phi[m] for m in orders]
        for m in sorted(self.Z):
            header += [f"Z_{m}", f"I_{m}"]
            cols += [self.Z[m], self.I[m]]
        for K in sorted(self.top_mass):
            header.append(f"top_{K}")
            cols.append(self.top_mass[K])
        header.append("parts")
        rows = [list(r) + [int(k)] for r, k in zip(np.column_stack(cols), self.part_counts)]
        return header, rows


def run_trajectory(rng: RngStream, p: Params, start: Partition, clock: ChainClock,
                   horizon: float, m_list: Sequence[int], checkpoints: Sequence[float],
                   K_list: Sequence[int] = (10,), max_order: int = 2) -> ChainTrajectory:
    """Simulate one path from ``start``, drawing from (and advancing) ``rng``."""
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    cps = np.asarray(checkpoints, dtype=float)
    if cps.size and cps.max() > horizon:
        raise ValueError("checkpoints must lie in [0, horizon]")
    m_list = _check_m_list(m_list)
    n = start.n
    orders = tracked_orders(m_list, max_order)
    diff = increment_table(n, orders)
    lo_idx, hi_idx, qv_idx = _index_arrays(orders, m_list)
    cp_steps = _checkpoint_steps(clock, cps)
    C, E, J = cp_steps.size, len(orders), len(m_list)
    K_arr = np.asarray(K_list, dtype=np.int64)
    phi = np.empty((C, E))
    lo, hi, qv = np.empty((C, J)), np.empty((C, J)), np.empty((C, J))
    top = np.empty((C, K_arr.size))
    kc = np.empty(C, dtype=np.int64)
    snap = np.zeros((C, n), dtype=np.int64)
    _simulate(rng.state, p.alpha, p.theta, n, np.asarray(start.parts, dtype=np.int64), start.k,
              diff, lo_idx, hi_idx, qv_idx, cp_steps, clock.delta_per_step, K_arr, phi, lo, hi,
              qv, top, kc, True, snap)
    states = [Partition(tuple(int(v) for v in row[:kc[c]])) for c, row in enumerate(snap)]
    phis = {m: phi[:, i].copy() for i, m in enumerate(orders)}
    phis[1] = np.ones(C)
    Z, I, integrals = {}, {}, {}
    for j, m in enumerate(m_list):
        drift = 0.5 * m * ((m - 1 - p.alpha) * lo[:, j] - (m - 1 + p.theta) * hi[:, j])
        Z[m] = phis[m] - phis[m][0] - drift
        I[m] = m * m * qv[:, j]
        integrals[m] = np.vstack([lo[:, j], hi[:, j], qv[:, j]])
    tops = {int(K): top[:, l].copy() for l, K in enumerate(K_arr)}
    return ChainTrajectory(cp_steps * clock.delta_per_step, states, phis, integrals, Z, I, tops, kc)


def sample_one_step(rng: RngStream, p: Params, lam: Partition, draws: int) -> dict[Partition, int]:
    """Counts of the states reached by ``draws`` independent up-down steps from ``lam``."""
    n = lam.n
    if n < 1 or (n + 1) ** n >= 2 ** 62:
        raise ValueError(f"one-step sampling is limited to small n, got {n}")
    keys = np.empty(int(draws), dtype=np.int64)
    _one_step_keys(rng.state, p.alpha, p.theta, np.asarray(lam.parts, dtype=np.int64), n,
                   int(draws), keys)
    out: dict[Partition, int] = {}
    values, counts = np.unique(keys, return_counts=True)
    for key, cnt in zip(values.tolist(), counts.tolist()):
        parts = []
        while key:
            key, digit = divmod(key, n + 1)
            parts.append(digit)
        out[Partition.of(parts)] = cnt
    return out
