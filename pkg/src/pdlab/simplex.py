"""Points of the Kingman simplex, power-sum functionals and moment dynamics.

A point ``x = (x_1 >= x_2 >= ... >= 0)`` with ``sum(x) <= 1`` is stored as a
finite ranked prefix plus the mass the prefix does not account for.  The
generator of the two-parameter diffusion acts in closed form on the power sums
``phi_m(x) = sum_i x_i**m`` (with the convention ``phi_1 = 1``), which makes the
expected power sums solve a lower-triangular linear ODE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ATOL = 1e-12
_MASS_TOL = 1e-10


@dataclass(frozen=True)
class Params:
    """Discount ``alpha`` and strength ``theta`` of the diffusion."""

    alpha: float
    theta: float

    def __post_init__(self):
        a, t = float(self.alpha), float(self.theta)
        if not (math.isfinite(a) and math.isfinite(t)):
            raise ValueError("alpha and theta must be finite")
        if not 0.0 <= a < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {a}")
        if not t > -a:
            raise ValueError(f"theta must exceed -alpha, got theta={t}, alpha={a}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "theta", t)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "theta": self.theta}


PARAMS_GRID = (Params(0.0, 1.0), Params(0.3, 0.7), Params(0.5, 0.5), Params(0.5, -0.25))


class RankedMassVector:
    """A point of the closed simplex stored as a ranked prefix plus residual.

    ``residual = 1 - sum(coords)``.  When ``tail_is_ranked`` is true the
    residual is an untracked ranked tail (the point lies in the open simplex
    and was truncated for storage); otherwise the residual is genuine
    deficiency, i.e. dust.
    """

    __slots__ = ("coords", "residual", "tail_is_ranked")

    def __init__(self, coords: Sequence[float], residual: float | None = None,
                 tail_is_ranked: bool = False):
        c = np.array(coords, dtype=float).reshape(-1)
        if c.size and (not np.all(np.isfinite(c)) or c.min() < 0.0):
            raise ValueError("coordinates must be finite and non-negative")
        if c.size > 1 and np.any(np.diff(c) > 0.0):
            raise ValueError("coordinates must be non-increasing")
        total = float(c.sum())
        if residual is None:
            residual = max(0.0, 1.0 - total)
        residual = float(residual)
        if residual < 0.0:
            raise ValueError(f"residual must be non-negative, got {residual}")
        if abs(total + residual - 1.0) > _MASS_TOL:
            raise ValueError(f"coords sum {total} plus residual {residual} is not 1")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "residual", residual)
        object.__setattr__(self, "tail_is_ranked", bool(tail_is_ranked))

    def __setattr__(self, name, value):
        raise AttributeError("RankedMassVector is immutable")

    def __repr__(self) -> str:
        head = ", ".join(f"{v:.6g}" for v in self.coords[:6])
        more = ", ..." if self.coords.size > 6 else ""
        return (f"RankedMassVector(({head}{more}), residual={self.residual:.6g}, "
                f"tail_is_ranked={self.tail_is_ranked})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, RankedMassVector):
            return NotImplemented
        return (np.array_equal(self.coords, other.coords) and self.residual == other.residual
                and self.tail_is_ranked == other.tail_is_ranked)

    __hash__ = None

    @classmethod
    def corner(cls) -> "RankedMassVector":
        """The vertex (1, 0, 0, ...)."""
        return cls([1.0], 0.0)

    @classmethod
    def dust(cls) -> "RankedMassVector":
        """The zero vector: all mass is deficiency."""
        return cls([], 1.0)

    @property
    def in_open_simplex(self) -> bool:
        """True when the stored point belongs to the set where coordinates sum to 1."""
        return self.tail_is_ranked or self.residual <= _MASS_TOL

    def to_dict(self) -> dict:
        return {"coords": [float(v) for v in self.coords], "residual": self.residual,
                "tail_is_ranked": self.tail_is_ranked}

    @classmethod
    def from_dict(cls, d: dict) -> "RankedMassVector":
        try:
            coords = d["coords"]
        except (KeyError, TypeError):
            raise ValueError("start state needs a 'coords' array") from None
        return cls(coords, d.get("residual"), bool(d.get("tail_is_ranked", False)))


@dataclass(frozen=True)
class SmoothFunctional:
    """A C^2 function on [0, 1] vanishing to first order at 0.

    ``h``, ``h1`` and ``h2`` are the function and its first two derivatives;
    all three must accept numpy arrays.
    """

    h: Callable
    h1: Callable
    h2: Callable

    def __post_init__(self):
        if abs(float(self.h(0.0))) > ATOL or abs(float(self.h1(0.0))) > ATOL:
            raise ValueError("functional must satisfy h(0) = h'(0) = 0")

    def __call__(self, u):
        return self.h(u)


class MomentVector:
    """Expected power sums ``E[phi_m]`` for ``m = 1..M``.

    ``values[m - 1]`` holds the moment of order ``m``; use :meth:`moment` for
    1-based access.
    """

    __slots__ = ("values",)

    def __init__(self, values: Sequence[float]):
        v = np.array(values, dtype=float).reshape(-1)
        if v.size < 1 or v[0] != 1.0:
            raise ValueError("the order-1 moment must be exactly 1")
        if np.any(v < -ATOL) or np.any(v > 1.0 + ATOL):
            raise ValueError("moments must lie in [0, 1]")
        if v.size > 1 and np.any(np.diff(v) > ATOL):
            raise ValueError("moments must be non-increasing in m")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("MomentVector is immutable")

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"MomentVector({np.array2string(self.values, precision=6)})"

    def moment(self, m: int) -> float:
        if not 1 <= m <= self.values.size:
            raise IndexError(f"order {m} outside 1..{self.values.size}")
        return float(self.values[m - 1])


def _check_exponent(m: float) -> float:
    m = float(m)
    if not (m == 1.0 or m > 1.0):
        raise ValueError(f"power index must be 1 or exceed 1, got {m}")
    return m


def _positive(x: RankedMassVector) -> np.ndarray:
    c = x.coords
    return c[c > 0.0]


def phi_m(x: RankedMassVector, m: float) -> float:
    """Power sum of the stored coordinates; exactly 1 for ``m == 1``."""
    m = _check_exponent(m)
    if m == 1.0:
        return 1.0
    return float(np.sum(_positive(x) ** m))


def moments_of(x: RankedMassVector, M: int) -> MomentVector:
    """The vector ``(phi_1(x), ..., phi_M(x))``."""
    return MomentVector([phi_m(x, m) for m in range(1, M + 1)])


def apply_A_phi(p: Params, x: RankedMassVector, m: float, extended: bool = False) -> float:
    """Closed-form generator action on the power sum of order ``m``.

    Orders in (1, 2) are only accepted with ``extended=True``; there the
    order ``m - 1`` term is the raw sum ``sum x_i**(m - 1)`` over the stored
    positive coordinates.
    """
    m = float(m)
    if m < 2.0:
        if not (extended and m > 1.0):
            raise ValueError(f"order {m} needs m >= 2 (or m > 1 with extended=True)")
        lower = float(np.sum(_positive(x) ** (m - 1.0)))
    else:
        lower = phi_m(x, m - 1.0)
    return 0.5 * m * ((m - 1.0 - p.alpha) * lower - (m - 1.0 + p.theta) * phi_m(x, m))


def apply_A_psi(p: Params, x: RankedMassVector, f: SmoothFunctional) -> float:
    """Generator action on the additive functional ``psi_h(x) = sum h(x_i)``.

    On points whose coordinates sum to one this is
    ``1/2 sum x_i (1 - x_i) h''(x_i) - 1/2 sum (theta x_i + alpha) h'(x_i)``.
    The parts of both sums that behave like ``h''(0) * sum x_i`` are replaced
    by ``h''(0)``, which is their continuous extension to deficient points.
    """
    c = _positive(x)
    h1 = np.asarray(f.h1(c), dtype=float)
    h2 = np.asarray(f.h2(c), dtype=float)
    h2_0 = float(f.h2(0.0))
    diffusion = 0.5 * (h2_0 + np.sum(c * (h2 - h2_0)) - np.sum(c * c * h2))
    drift = -0.5 * (p.theta * np.sum(c * h1) + p.alpha * (h2_0 + np.sum(h1 - h2_0 * c)))
    return float(diffusion + drift)


def power_functional(m: float) -> SmoothFunctional:
    """``h(u) = u**m`` for ``m >= 2``."""
    m = float(m)
    if m < 2.0:
        raise ValueError("u**m has a continuous second derivative at 0 only for m >= 2")
    return SmoothFunctional(lambda u: np.power(u, m), lambda u: m * np.power(u, m - 1.0),
                            lambda u: m * (m - 1.0) * np.power(u, m - 2.0))


def h_eps(m: float, eps: float) -> SmoothFunctional:
    """The smoothing ``(u + eps)**m - eps**m - m eps**(m-1) u`` of ``u**m``, 1 < m < 2."""
    m, eps = float(m), float(eps)
    if not 1.0 < m < 2.0:
        raise ValueError(f"m must lie in (1, 2), got {m}")
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    e_m = eps ** m
    e_m1 = eps ** (m - 1.0)

    def h(u):
        return np.power(np.add(u, eps), m) - e_m - m * e_m1 * np.asarray(u, dtype=float)

    def h1(u):
        return m * (np.power(np.add(u, eps), m - 1.0) - e_m1)

    def h2(u):
        return m * (m - 1.0) * np.power(np.add(u, eps), m - 2.0)

    return SmoothFunctional(h, h1, h2)


def awkward_terms(p: Params, x: RankedMassVector, m: float, eps: float) -> tuple[float, float]:
    """The two sums ``1/2 sum x_i h''(x_i)`` and ``-alpha/2 sum h'(x_i)`` for ``h_eps``.

    Both grow as ``eps`` decreases on vectors with many small coordinates,
    with opposite signs, which is what blocks a bounded limit as eps -> 0.
    """
    f = h_eps(m, eps)
    c = _positive(x)
    s1 = 0.5 * float(np.sum(c * f.h2(c)))
    s2 = -0.5 * p.alpha * float(np.sum(f.h1(c)))
    return s1, s2


def ode_rates(p: Params, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Forcing coefficients ``b_m`` and decay rates ``c_m`` for orders 1..M.

    ``dE_m/dt = b_m E_{m-1} - c_m E_m`` for m >= 2; order 1 is constant so
    ``b_1 = c_1 = 0``.
    """
    m = np.arange(1, M + 1, dtype=float)
    b = 0.5 * m * (m - 1.0 - p.alpha)
    c = 0.5 * m * (m - 1.0 + p.theta)
    b[0] = c[0] = 0.0
    return b, c


def moment_exponentials(p: Params, x0: MomentVector, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution of the moment ODE as sums of exponentials.

    Returns ``(rates, coef)`` with ``E_m(t) = sum_j coef[m-1, j] exp(-rates[j] t)``.
    The rates are distinct for the integer ladder, so the integrating-factor
    convolution has a closed form term by term.
    """
    if M < 2:
        raise ValueError(f"M must be at least 2, got {M}")
    if len(x0) < M:
        raise ValueError(f"initial moments have {len(x0)} orders, need {M}")
    b, c = ode_rates(p, M)
    coef = np.zeros((M, M))
    coef[0, 0] = 1.0
    for k in range(1, M):
        coef[k, :k] = b[k] * coef[k - 1, :k] / (c[k] - c[:k])
        coef[k, k] = x0.values[k] - coef[k, :k].sum()
    return c, coef


def moment_ode_solve(p: Params, x0: MomentVector, M: int,
                     t_grid: Sequence[float]) -> list[MomentVector]:
    """Expected power sums of orders 1..M at each time in ``t_grid``."""
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    if t.size and (t.min() < 0.0 or np.any(np.diff(t) < 0.0)):
        raise ValueError("t_grid must be non-negative and non-decreasing")
    rates, coef = moment_exponentials(p, x0, M)
    start = x0.values[:M]
    out = []
    for ti in t:
        if ti == 0.0:
            out.append(MomentVector(start))
        else:
            out.append(MomentVector(coef @ np.exp(-rates * ti)))
    return out


def stationary_moments(p: Params, M: int) -> MomentVector:
    """Moments of the stationary law: ``E[phi_m] = prod_{k=2}^m (k-1-alpha)/(k-1+theta)``."""
    if M < 1:
        raise ValueError(f"M must be at least 1, got {M}")
    v = np.ones(M)
    for m in range(2, M + 1):
        v[m - 1] = v[m - 2] * (m - 1.0 - p.alpha) / (m - 1.0 + p.theta)
    return MomentVector(v)


def deficiency(x: RankedMassVector, K: int) -> float:
    """``1 - (x_1 + ... + x_K)``: mass outside the K largest coordinates."""
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    # fsum is correctly rounded, so the result is exactly monotone in K
    return float(min(1.0, max(0.0, 1.0 - math.fsum(x.coords[:K]))))
