"""Gain-splitting functions and the numerical side of the ratio proofs.

Two families of functions live here:

* rank-domain functions ``g: [0, 1] -> [0, 1]`` used to split the gain of a
  Ranking match between the offline and the online endpoint, and
* load-domain functions ``g: [0, inf) -> [0, 1]`` used by Stochastic Balance,
  where ``g`` is evaluated at the current load of the offline vertex.

Every function exposes ``integral(a, b)`` and ``exp_integral(a, b)``
(the integral of ``e^{-z} g(z)``).  Step functions integrate in closed
form, so the factor-revealing LP has no quadrature error at all.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from . import lpcore

E = math.e
ONE_MINUS_INV_E = 1.0 - 1.0 / E
#: tail cut-off for integrals against e^{-theta}; e^{-32.3} < 1e-14
EXP_TAIL = -math.log(1e-14)


def _quad(fn, a, b, points=None, tol=1e-13):
    if b <= a:
        return 0.0
    pts = None
    if points is not None:
        pts = sorted({float(x) for x in points if a < x < b}) or None
    val, _ = integrate.quad(fn, a, b, points=pts, epsabs=tol, epsrel=tol, limit=500)
    return val


class GainFunction:
    """Non-decreasing map into ``[0, 1]``.

    Subclasses implement ``__call__`` on scalars; the generic integrals use
    adaptive quadrature and are overridden where a closed form exists.
    """

    kind = "abstract"
    domain = "rank"  # or "load"

    def __call__(self, x: float) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def values(self, xs) -> np.ndarray:
        return np.array([self(float(x)) for x in np.atleast_1d(xs)])

    def breakpoints(self) -> list[float]:
        return []

    def integral(self, a: float, b: float) -> float:
        return _quad(self, a, b, self.breakpoints())

    def exp_integral(self, a: float, b: float) -> float:
        """Integral of ``e^{-z} g(z)`` over ``[a, b]``; ``b`` may be ``inf``."""
        tail = 0.0
        if math.isinf(b):
            b_cut = max(a, EXP_TAIL)
            tail = math.exp(-b_cut) * self(b_cut)  # g is ~constant that far out
            b = b_cut
        return _quad(lambda z: math.exp(-z) * self(z), a, b, self.breakpoints()) + tail

    def check_monotone(self, upper: Optional[float] = None, step: float = 1e-4, tol: float = 1e-12) -> None:
        hi = upper if upper is not None else (1.0 if self.domain == "rank" else 10.0)
        xs = np.arange(0.0, hi + step / 2, step)
        vals = self.values(xs)
        if (vals < -tol).any() or (vals > 1 + tol).any():
            raise ValueError(f"{self.kind}: values leave [0, 1]")
        if (np.diff(vals) < -tol).any():
            raise ValueError(f"{self.kind}: not non-decreasing")

    def to_dict(self) -> dict:
        return {"kind": self.kind}


# -- Ranking vs the non-stochastic benchmark ------------------------------------


def g_ranking(rho: float, c: float) -> float:
    """``min(c / (e - (e-1) rho), 1 - 1/e)`` on ``[0, 1)``, and 1 at ``rho = 1``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rank {rho} outside [0, 1]")
    if rho == 1.0:
        return 1.0
    return min(c / (E - (E - 1.0) * rho), ONE_MINUS_INV_E)


def _mu_low_closed_form(c: float) -> float:
    # c / (e - (e-1) rho) = 1 - 1/e  <=>  rho = (e - c e / (e-1)) / (e-1)
    return min(max((E - c * E / (E - 1.0)) / (E - 1.0), 0.0), 1.0)


def _ranking_integral(c: float, a: float, b: float) -> float:
    """Closed-form integral of ``g_ranking(., c)`` over ``[a, b]``."""
    a, b = max(a, 0.0), min(b, 1.0)
    if b <= a:
        return 0.0
    mu = _mu_low_closed_form(c)
    total = 0.0
    lo, hi = a, min(b, mu)
    if hi > lo:
        total += c / (E - 1.0) * math.log((E - (E - 1.0) * lo) / (E - (E - 1.0) * hi))
    lo = max(a, mu)
    if b > lo:
        total += (b - lo) * ONE_MINUS_INV_E
    return total


class RankingGain(GainFunction):
    kind = "closed_form_ranking"
    domain = "rank"

    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, x):
        return g_ranking(x, self.c)

    def values(self, xs):
        r = np.asarray(xs, dtype=float)
        out = np.minimum(self.c / (E - (E - 1.0) * r), ONE_MINUS_INV_E)
        return np.where(r == 1.0, 1.0, out)

    def breakpoints(self):
        return [_mu_low_closed_form(self.c)]

    def integral(self, a, b):
        return _ranking_integral(self.c, a, b)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class RankingConstant:
    c: float
    gamma: float
    mu_low: float
    residual: float


def _bisect(fn, lo: float, hi: float, tol: float = 1e-15, maxiter: int = 200) -> float:
    """Root of an increasing function on ``[lo, hi]``."""
    flo, fhi = fn(lo), fn(hi)
    if flo > 0 or fhi < 0:
        raise ArithmeticError(f"bisection bracket [{lo}, {hi}] does not straddle a root ({flo}, {fhi})")
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def solve_ranking_constant() -> RankingConstant:
    """Find ``c`` with ``int_0^1 g = 1 - g(0)``; return ``(c, 1 - c/e, mu_low)``.

    ``F(c) = int_0^1 g(., c) - (1 - c/e)`` is increasing in ``c`` (both terms
    are), negative at ``c = 1`` and positive at ``c = e``.
    """

    def F(c):
        return _ranking_integral(c, 0.0, 1.0) - (1.0 - c / E)

    c = _bisect(F, 1.0, E)
    residual = F(c)
    if abs(residual) > 1e-10:
        raise ArithmeticError(f"ranking constant residual {residual:.3e}")
    mu_low = _bisect(lambda r: g_ranking(r, c) - ONE_MINUS_INV_E, 0.0, 1.0 - 1e-15)
    return RankingConstant(c=c, gamma=1.0 - c / E, mu_low=mu_low, residual=residual)


def ranking_final_inequality(mu0: float, rho0: float, c: float) -> float:
    """Left side of the last inequality of the Ranking analysis.

    ``int_0^{mu0} g + (1 - g(rho0)) + (1 - 1/e)(rho0 - mu0) g(rho0)``
    """
    if not 0.0 <= mu0 < rho0 <= 1.0:
        raise ValueError("need 0 <= mu0 < rho0 <= 1")
    g0 = g_ranking(rho0, c)
    return _ranking_integral(c, 0.0, mu0) + (1.0 - g0) + ONE_MINUS_INV_E * (rho0 - mu0) * g0


def ranking_final_inequality_min(c: float, points: int = 200) -> tuple[float, float, float]:
    """Minimum of :func:`ranking_final_inequality` over a ``points x points`` grid."""
    grid = np.linspace(0.0, 1.0, points)
    best = (math.inf, 0.0, 0.0)
    for mu0 in grid:
        for rho0 in grid[grid > mu0]:
            val = ranking_final_inequality(float(mu0), float(rho0), c)
            if val < best[0]:
                best = (val, float(mu0), float(rho0))
    return best


def f_discrete(mu0: float, mu: Sequence[float], p: float, g: Optional[GainFunction] = None) -> float:
    """Discretized worst-case objective for critical ranks inside ``S``.

    ``int_0^{mu0} g + sum_i p (1 - g(mu_i))
    + sum_j (mu_j - mu_{j-1}) sum_{i >= j} p e^{-p (i - j)} g(mu_i)``
    with ``mu_0 = mu0``.  Requires a sorted vector and ``n p = 1``.
    """
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    if abs(n * p - 1.0) > 1e-9:
        raise ValueError(f"need n * p = 1, got {n} * {p}")
    full = np.concatenate([[mu0], mu])
    if (np.diff(full) < 0).any() or full[-1] > 1.0 or mu0 < 0.0:
        raise ValueError("critical ranks must satisfy 0 <= mu0 <= mu_1 <= ... <= mu_n <= 1")
    if g is None:
        g = RankingGain(_default_c())
    gv = g.values(mu)
    total = g.integral(0.0, mu0) + p * float(np.sum(1.0 - gv))
    decay = np.exp(-p * np.arange(n))
    for j in range(n):
        gap = full[j + 1] - full[j]
        if gap:
            total += gap * p * float(np.dot(decay[: n - j], gv[j:]))
    return total


_C_CACHE: list[float] = []


def _default_c() -> float:
    if not _C_CACHE:
        _C_CACHE.append(solve_ranking_constant().c)
    return _C_CACHE[0]


@dataclass
class BruteMinResult:
    argmin: tuple[float, ...]
    value: float
    mu_low: float
    grid_step: float
    all_equal_at_mu_low: bool
    all_equal_at_one: bool
    evaluated: int
    mu0: float = 0.0

    @property
    def all_equal(self) -> bool:
        """Argmin entries agree to within one grid cell."""
        return max(self.argmin) - min(self.argmin) <= self.grid_step + 1e-12

    @property
    def all_equal_at_mu0(self) -> bool:
        return all(abs(x - self.mu0) <= self.grid_step for x in self.argmin)


def brute_min_f(n: int, grid_points: int = 21, mu0: float = 0.0, c: Optional[float] = None) -> BruteMinResult:
    """Exhaustive minimum of :func:`f_discrete` over sorted grid vectors.

    Only grid values in ``[mu0, 1]`` are used, with ``p = 1/n``.
    """
    if n < 1 or n > 5:
        raise ValueError("brute force supports 1 <= n <= 5")
    const = solve_ranking_constant() if c is None else None
    c = const.c if const is not None else c
    mu_low = const.mu_low if const is not None else _mu_low_closed_form(c)
    g = RankingGain(c)
    grid = np.linspace(0.0, 1.0, grid_points)
    step = float(grid[1] - grid[0])
    cand = grid[grid >= mu0 - 1e-12]
    best_val, best_vec, count = math.inf, None, 0
    for vec in combinations_with_replacement(cand, n):
        val = f_discrete(mu0, vec, 1.0 / n, g)
        count += 1
        if val < best_val:
            best_val, best_vec = val, tuple(float(x) for x in vec)
    arr = np.array(best_vec)
    return BruteMinResult(
        argmin=best_vec,
        value=best_val,
        mu_low=mu_low,
        grid_step=step,
        all_equal_at_mu_low=bool(np.all(np.abs(arr - mu_low) <= step)),
        all_equal_at_one=bool(np.all(arr >= 1.0 - step)),
        evaluated=count,
        mu0=float(mu0),
    )


def f_gradient_bound(n: int, mu0: float = 0.0, samples: int = 2000, seed: int = 0, h: float = 1e-6) -> float:
    """Numerical estimate of ``max ||grad f||_1`` over sorted vectors in ``[mu0, 1)``.

    Used to turn a grid minimum into a bound on the continuous minimum.
    The jump of ``g`` at exactly 1 is excluded by sampling below ``1 - 2h``.
    """
    rng = np.random.default_rng(seed)
    g = RankingGain(_default_c())
    p = 1.0 / n
    worst = 0.0
    for _ in range(samples):
        vec = np.sort(rng.uniform(mu0 + 2 * h, 1.0 - 2 * h, size=n))
        grad = 0.0
        for i in range(n):
            up, dn = vec.copy(), vec.copy()
            up[i] += h
            dn[i] -= h
            up = np.sort(up)
            dn = np.sort(dn)
            grad += abs(f_discrete(mu0, up, p, g) - f_discrete(mu0, dn, p, g)) / (2 * h)
        worst = max(worst, grad)
    return worst


def ranking_bound_eval(mu: Sequence[float], in_S: Sequence[bool], p: float, g: GainFunction) -> float:
    """Lower bound on ``E[alpha_u + sum_{v in S} beta_v]`` for Ranking.

    ``mu`` holds the critical ranks of ``u``'s neighbors listed in arrival
    order and ``in_S`` marks which of them belong to ``S``.  The counting
    functions ``|N_u(rho)|`` and ``|N_u(rho, v)|`` are constant between
    consecutive critical ranks, so each piece integrates exactly.
    """
    mu = np.asarray(mu, dtype=float)
    in_S = np.asarray(in_S, dtype=bool)
    if mu.shape != in_S.shape:
        raise ValueError("mu and in_S must have the same length")
    if len(mu) == 0:
        return 0.0
    if (mu < 0).any() or (mu > 1).any():
        raise ValueError("critical ranks must lie in [0, 1]")
    cuts = np.unique(np.concatenate([[0.0, 1.0], mu]))
    pieces = list(zip(cuts[:-1], cuts[1:]))
    g_int = [g.integral(a, b) for a, b in pieces]
    decay = 1.0 - math.exp(-p)

    total = 0.0
    for (a, b), gi in zip(pieces, g_int):
        count = int(np.count_nonzero(mu >= b))
        total += (1.0 - math.exp(-p * count)) * gi
    for k in np.flatnonzero(in_S):
        mv = mu[k]
        gm = g(float(mv))
        total += p * (1.0 - gm)
        earlier = mu[:k]
        for (a, b), gi in zip(pieces, g_int):
            if b > mv:
                break
            before = int(np.count_nonzero(earlier >= b))
            total += math.exp(-p * before) * decay * (gm * (b - a) - gi)
    return total


# -- Ranking vs the stochastic benchmark ----------------------------------------


def g_ranking_stochastic(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"rank {x} outside [0, 1]")
    return math.exp(x - 1.0)


class ExpGain(GainFunction):
    kind = "closed_form_ranking_stochastic"
    domain = "rank"

    def __call__(self, x):
        return g_ranking_stochastic(x)

    def values(self, xs):
        return np.exp(np.asarray(xs, dtype=float) - 1.0)

    def integral(self, a, b):
        a, b = max(a, 0.0), min(b, 1.0)
        return math.exp(b - 1.0) - math.exp(a - 1.0) if b > a else 0.0


def star_constant(mu: float) -> float:
    """``int_0^mu e^{rho-1} d rho + 1 - e^{mu-1}`` by quadrature."""
    return _quad(lambda r: math.exp(r - 1.0), 0.0, mu, tol=1e-14) + 1.0 - math.exp(mu - 1.0)


# -- Stochastic Balance, equal probabilities ------------------------------------


def f_balance_equal(mu: float) -> float:
    """Closed-form solution of the equal-probability differential equation."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu {mu} outside [0, 1]")
    if mu == 0.0:
        return 1.0
    s = math.sqrt(mu)
    # ln 2 - ln(2 - s) = -log1p(-s/2), stable as s -> 0
    return 2.0 * (2.0 - s) * (-math.log1p(-s / 2.0)) / s - 1.0


def g_balance_equal(theta: float) -> float:
    if theta < 0:
        raise ValueError("load must be non-negative")
    return f_balance_equal(math.exp(-theta))


def balance_equal_gamma() -> float:
    return 2.0 * (1.0 - math.log(2.0))


def _balance_equal_antiderivative(s: float) -> float:
    """Antiderivative of ``-g`` in the variable ``s = e^{-z/2}``.

    With ``mu = s^2`` the integrand ``f(mu) / mu`` becomes
    ``4 (2 - s) L(s) / s^2 - 2 / s`` with ``L(s) = -log(1 - s/2)``, whose
    antiderivative involves the dilogarithm ``Li2(s/2) = spence(1 - s/2)``.
    """
    L = -math.log1p(-s / 2.0)
    return -8.0 * L / s + 2.0 * math.log(s) - 4.0 * math.log(2.0 - s) - 4.0 * float(special.spence(1.0 - s / 2.0))


class BalanceEqualGain(GainFunction):
    kind = "closed_form_balance_equal"
    domain = "load"

    def __call__(self, x):
        return g_balance_equal(x)

    def values(self, xs):
        s = np.exp(-0.5 * np.asarray(xs, dtype=float))
        return 2.0 * (2.0 - s) * (-np.log1p(-s / 2.0)) / s - 1.0

    def integral(self, a, b):
        if b <= a:
            return 0.0
        return _balance_equal_antiderivative(math.exp(-a / 2.0)) - _balance_equal_antiderivative(math.exp(-b / 2.0))

    def exp_integral(self, a, b):
        # substitute mu = e^{-z}:  int e^{-z} g(z) dz = int f(mu) dmu
        lo = 0.0 if math.isinf(b) else math.exp(-b)
        return _quad(f_balance_equal, lo, math.exp(-a))


def verify_balance_equal_ode(grid_size: int = 1000) -> float:
    """Max over a lambda grid of the residual of the equal-probability ODE."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    lam = np.linspace(0.0, 1.0, grid_size)
    pieces = [_quad(f_balance_equal, lam[k], lam[k + 1]) for k in range(grid_size - 1)]
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])  # int_lambda^1 f
    gamma = balance_equal_gamma()
    worst = 0.0
    for lk, ik in zip(lam, tail):
        res = ik + (2.0 * math.sqrt(lk) - lk) * (1.0 - f_balance_equal(float(lk))) - gamma
        worst = max(worst, abs(res))
    return worst


def balance_equal_inequality_lhs(ell: float, q: float, g: GainFunction) -> float:
    """Left side of the equal-probability inequality for load ``ell`` and ``p_uS = q``.

    ``int_0^ell e^{-t} g(t) dt
    + int_0^inf e^{-t} (min(q, t) - (ell - t)^+)^+ dt * (1 - g(ell))``.
    ``q`` may be ``inf``.
    """
    if ell < 0 or q < 0:
        raise ValueError("ell and q must be non-negative")
    first = g.exp_integral(0.0, ell)

    def inner(t):
        return math.exp(-t) * max(min(q, t) - max(ell - t, 0.0), 0.0)

    cut = max(EXP_TAIL, ell, 0.0 if math.isinf(q) else q) + 1.0
    kinks = [ell / 2.0, ell, ell - q if not math.isinf(q) else 0.0, q if not math.isinf(q) else 0.0]
    body = _quad(inner, 0.0, cut, kinks)
    # beyond cut the bracket is min(q, t): q e^{-cut}, or (cut + 1) e^{-cut} when q = inf
    tail = (cut + 1.0) * math.exp(-cut) if math.isinf(q) else q * math.exp(-cut)
    return first + (body + tail) * (1.0 - g(ell))


# -- Stochastic Balance, general probabilities ------------------------------------


class StepGain(GainFunction):
    """Right-continuous step function on a load grid.

    ``values[i]`` holds on ``[grid[i], grid[i+1])`` and the last value
    extends to infinity.
    """

    kind = "step"
    domain = "load"

    def __init__(self, grid, values, domain: str = "load"):
        self.grid = np.asarray(grid, dtype=float)
        self.vals = np.asarray(values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.vals.shape or self.grid[0] != 0.0:
            raise ValueError("grid must start at 0 and match values in length")
        if (np.diff(self.grid) <= 0).any():
            raise ValueError("grid must be strictly increasing")
        self.domain = domain
        self._right = np.append(self.grid[1:], np.inf)
        widths = np.diff(self.grid)
        self._cum = np.concatenate([[0.0], np.cumsum(widths * self.vals[:-1])])
        self._ecum = np.concatenate(
            [[0.0], np.cumsum(self.vals[:-1] * (np.exp(-self.grid[:-1]) - np.exp(-self.grid[1:])))]
        )

    def _cell(self, x):
        return np.searchsorted(self.grid, x, side="right") - 1

    def __call__(self, x):
        return float(self.vals[self._cell(x)])

    def values(self, xs):
        return self.vals[self._cell(np.asarray(xs, dtype=float))]

    def breakpoints(self):
        return list(self.grid)

    def cumulative(self, x):
        """``int_0^x g`` (vectorized)."""
        x = np.asarray(x, dtype=float)
        i = self._cell(x)
        return self._cum[i] + (x - self.grid[i]) * self.vals[i]

    def exp_cumulative(self, x):
        """``int_0^x e^{-z} g(z) dz`` (vectorized, ``x`` may be ``inf``)."""
        x = np.asarray(x, dtype=float)
        i = self._cell(x)
        return self._ecum[i] + self.vals[i] * (np.exp(-self.grid[i]) - np.exp(-x))

    def integral(self, a, b):
        return float(self.cumulative(b) - self.cumulative(a)) if b > a else 0.0

    def exp_integral(self, a, b):
        return float(self.exp_cumulative(b) - self.exp_cumulative(a)) if b > a else 0.0

    def to_dict(self):
        return {"kind": self.kind, "grid": self.grid.tolist(), "values": self.vals.tolist()}


def constant_gain(kappa: float) -> StepGain:
    return StepGain([0.0], [kappa])


def balance_general_lhs(ell: float, g: GainFunction, h: float) -> float:
    """``int_0^l e^{-z} g - int_h^l (e^{-h} - e^{-z})(1 - g(z)) dz + (1 + h) e^{-h} (1 - g(l))``."""
    if not 0.0 <= h <= ell + 1e-15:
        raise ValueError(f"need 0 <= h <= ell, got h={h}, ell={ell}")
    h = min(h, ell)
    eh = math.exp(-h)
    middle = eh * (ell - h) - (eh - math.exp(-ell)) - eh * g.integral(h, ell) + g.exp_integral(h, ell)
    return g.exp_integral(0.0, ell) - middle + (1.0 + h) * eh * (1.0 - g(ell))


def update_h(g: StepGain, points, tol: float = 1e-12) -> np.ndarray:
    """Smallest ``h`` in ``[0, l]`` with ``h (1 - g(l)) - int_h^l (1 - g) >= 0``.

    The left side is non-decreasing in ``h`` (its derivative is
    ``(1 - g(l)) + (1 - g(h)) >= 0``), so a vectorized bisection on
    ``[0, l]`` finds it.  The returned value is the upper end of the final
    bracket, which satisfies the inequality.
    """
    ell = np.asarray(points, dtype=float)
    g_ell = g.values(ell)
    c_ell = g.cumulative(ell)

    def phi(hv):
        return hv * (1.0 - g_ell) - (ell - hv) + (c_ell - g.cumulative(hv))

    lo = np.zeros_like(ell)
    hi = ell.copy()
    done = phi(lo) >= 0
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        ok = phi(mid) >= 0
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.where(done, 0.0, hi)


def h_defining_residual(g: StepGain, points, h) -> np.ndarray:
    ell = np.asarray(points, dtype=float)
    h = np.asarray(h, dtype=float)
    return h * (1.0 - g.values(ell)) - (ell - h) + (g.cumulative(ell) - g.cumulative(h))


def evaluation_points(step: float, ell_max: float, tail_points: int = 20, tail_span: float = 10.0) -> np.ndarray:
    """Grid points on ``[0, ell_max]`` plus sampled points past the truncation."""
    k = int(round(ell_max / step))
    if k < 1 or abs(k * step - ell_max) > 1e-9:
        raise ValueError("ell_max must be a positive multiple of step")
    grid = np.arange(k + 1) * step
    tail = np.linspace(ell_max, ell_max + tail_span, tail_points + 1)[1:]
    return np.concatenate([grid, tail])


def _lhs_affine(grid: np.ndarray, points: np.ndarray, h: np.ndarray):
    """Coefficients ``A, b`` with ``balance_general_lhs(l_j, g, h_j) = A[j] @ g + b[j]``.

    ``g`` is the vector of step values on the cells of ``grid``.
    """
    left = grid[None, :]
    right = np.append(grid[1:], np.inf)[None, :]
    L = points[:, None]
    H = h[:, None]

    def overlap(x, y):
        lo = np.maximum(left, x)
        hi = np.minimum(right, y)
        width = np.clip(hi - lo, 0.0, None)
        mass = np.where(width > 0, np.exp(-lo) - np.exp(-np.minimum(hi, 1e300)), 0.0)
        return width, mass

    _, e_full = overlap(0.0, L)
    w_h, e_h = overlap(H, L)
    A = e_full + np.exp(-H) * w_h - e_h
    cell = np.searchsorted(grid, points, side="right") - 1
    eh = np.exp(-h)
    A[np.arange(len(points)), cell] -= (1.0 + h) * eh
    b = -eh * (points - h) + (eh - np.exp(-points)) + (1.0 + h) * eh
    return A, b


def optimize_g_given_h(h, step: float, ell_max: float, tail_points: int = 20, method: str = "auto"):
    """Best step function ``g`` for a fixed ``h``; returns ``(g, gamma)``.

    Variables are one value per grid cell plus ``gamma``; constraints are
    one inequality per evaluation point and the monotonicity chain.
    """
    points = evaluation_points(step, ell_max, tail_points)
    h = np.asarray(h, dtype=float)
    if h.shape != points.shape:
        raise ValueError("h must be given at every evaluation point")
    if (h < 0).any() or (h > points + 1e-12).any():
        raise ValueError("need 0 <= h(l) <= l")
    grid = points[: int(round(ell_max / step)) + 1]
    k = len(grid)
    A, b = _lhs_affine(grid, points, h)

    # maximize gamma  s.t.  A g - gamma >= -b,  g_i - g_{i+1} <= 0,  0 <= g <= 1
    obj = np.zeros(k + 1)
    obj[-1] = 1.0
    rows = np.hstack([A, -np.ones((len(points), 1))])
    mono = np.zeros((k - 1, k + 1))
    mono[np.arange(k - 1), np.arange(k - 1)] = 1.0
    mono[np.arange(k - 1), np.arange(1, k)] = -1.0
    problem = lpcore.LpProblem(
        c=obj,
        A=np.vstack([rows, mono]),
        senses=[">="] * len(points) + ["<="] * (k - 1),
        b=np.concatenate([-b, np.zeros(k - 1)]),
        lower=[0.0] * k + [None],
        upper=[1.0] * k + [None],
    )
    sol = lpcore.solve(problem, method=method)
    if sol.status != "optimal":
        raise lpcore.LpError(f"factor-revealing LP is {sol.status}")
    vals = np.clip(sol.x[:k], 0.0, 1.0)
    vals = np.maximum.accumulate(vals)  # remove solver-tolerance dips
    return StepGain(grid, vals), float(sol.x[-1])


@dataclass
class AltOptState:
    step: float
    ell_max: float
    g: StepGain
    h: np.ndarray
    gamma: float
    lp_gamma: float
    rounds: int
    history: list[float] = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def slacks(self) -> np.ndarray:
        """``lhs(l) - gamma`` at every evaluation point, recomputed from scratch."""
        return np.array(
            [balance_general_lhs(float(l), self.g, float(hv)) for l, hv in zip(self.points, self.h)]
        ) - self.lp_gamma

    def to_dict(self) -> dict:
        return {
            "kind": "step",
            "grid": self.g.grid.tolist(),
            "values": self.g.vals.tolist(),
            "gamma": self.gamma,
            "lp_gamma": self.lp_gamma,
            "step": self.step,
            "ell_max": self.ell_max,
            "rounds": self.rounds,
            "history": self.history,
            "h_points": self.points.tolist(),
            "h_values": self.h.tolist(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    def write_slack_csv(self, path) -> None:
        sl = self.slacks()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "h", "g", "lhs", "slack"])
            for l, hv, s in zip(self.points, self.h, sl):
                w.writerow([f"{l:.12g}", f"{hv:.12g}", f"{self.g(float(l)):.12g}", f"{s + self.lp_gamma:.12g}", f"{s:.12g}"])


def alternate_optimize(step: float = 0.005, ell_max: float = 8.0, rounds: int = 3, tail_points: int = 20,
                       method: str = "auto") -> AltOptState:
    """Alternate between the LP for ``g`` (given ``h``) and the ``h`` update.

    Starts from ``h = 0``.  ``gamma`` of the returned state is the minimum of
    the independently recomputed left sides, so it is certified for the
    returned ``(g, h)`` regardless of LP tolerances.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    points = evaluation_points(step, ell_max, tail_points)
    h = np.zeros_like(points)
    history: list[float] = []
    for _ in range(rounds):
        g, lp_gamma = optimize_g_given_h(h, step, ell_max, tail_points, method)
        history.append(lp_gamma)
        # the h that is best for this g; also the certificate's h
        h = update_h(g, points)
    lhs = np.array([balance_general_lhs(float(l), g, float(hv)) for l, hv in zip(points, h)])
    return AltOptState(
        step=step,
        ell_max=ell_max,
        g=g,
        h=h,
        gamma=float(min(lhs.min(), lp_gamma)),
        lp_gamma=lp_gamma,
        rounds=rounds,
        history=history,
        points=points,
    )


def certificate_from_dict(doc: dict) -> AltOptState:
    try:
        g = StepGain(doc["grid"], doc["values"])
        return AltOptState(
            step=float(doc["step"]),
            ell_max=float(doc["ell_max"]),
            g=g,
            h=np.asarray(doc["h_values"], dtype=float),
            gamma=float(doc["gamma"]),
            lp_gamma=float(doc["lp_gamma"]),
            rounds=int(doc["rounds"]),
            history=list(doc.get("history", [])),
            points=np.asarray(doc["h_points"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed certificate: {exc}") from exc


def read_certificate(path) -> AltOptState:
    return certificate_from_dict(json.loads(Path(path).read_text()))


def verify_certificate(state: AltOptState) -> float:
    """Smallest ``lhs(l) - gamma`` over the certificate's points, recomputed from ``(g, h)``.

    Also rejects a ``g`` that is not non-decreasing or leaves ``[0, 1]``.
    """
    v = state.g.vals
    if (v < 0).any() or (v > 1).any() or (np.diff(v) < 0).any():
        raise ValueError("certificate g is not a non-decreasing map into [0, 1]")
    lhs = state.slacks() + state.lp_gamma
    return float((lhs - state.gamma).min())
