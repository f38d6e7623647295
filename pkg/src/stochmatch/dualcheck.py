"""Empirical checks of approximate dual feasibility and of pathwise structure.

Monte Carlo estimates are compared against their targets with a margin of
three standard errors: a shortfall beyond the margin is a ``violation``,
one inside it is ``inconclusive``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bench import MAX_CONFIG_N, _round_floats
from .instance import Instance, RandomDraw, make_rng, p_bar, p_tilde, spawn_seeds
from .simul import (
    DualLedger,
    Trace,
    batch_draws,
    critical_ranks,
    ledger_fractional,
    run_balance_fractional,
    run_ranking,
    simulate_batch,
)

MARGIN = 3.0
FRACTIONAL = "balance_fractional"


class DualCheckError(ValueError):
    pass


@dataclass
class DualEstimate:
    """Monte Carlo means of the dual ledgers.

    ``cov`` is the covariance of the stacked sample means ``(alpha, beta)``,
    used for standard errors of linear combinations.
    """

    alpha: np.ndarray
    beta: np.ndarray
    cov: np.ndarray
    trials: int
    value: float
    value_se: float
    gain: float
    theta_minus_u: Optional[np.ndarray] = None

    @property
    def alpha_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov)[: len(self.alpha)])

    @property
    def beta_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov)[len(self.alpha) :])

    def combo(self, wa: np.ndarray, wb: np.ndarray) -> tuple[float, float]:
        """Mean and standard error of ``wa . alpha + wb . beta``."""
        w = np.concatenate([wa, wb])
        mean = float(w[: len(self.alpha)] @ self.alpha + w[len(self.alpha) :] @ self.beta)
        var = float(w @ self.cov @ w) if self.trials > 1 else math.inf
        return mean, math.sqrt(max(var, 0.0))

    def conservation_gap(self) -> tuple[float, float]:
        """``sum E[alpha] + sum E[beta] - E[value]`` and its standard error."""
        return float(self.alpha.sum() + self.beta.sum() - self.value), self.value_se


def _estimate(A: np.ndarray, B: np.ndarray, vals: np.ndarray, gains: np.ndarray) -> DualEstimate:
    T = len(vals)
    X = np.hstack([A, B])
    if T > 1 and X.shape[1] > 0:
        cov = np.atleast_2d(np.cov(X, rowvar=False)) / T
    else:
        cov = np.zeros((X.shape[1], X.shape[1]))
    if T > 1:
        # the ledger total is the gain; its gap to the realized value is what conservation tests
        vse = float(np.std(gains - vals, ddof=1) / math.sqrt(T))
    else:
        vse = math.inf
    return DualEstimate(A.mean(axis=0), B.mean(axis=0), cov, T, float(vals.mean()), vse, float(gains.mean()))


def estimate_duals(inst: Instance, alg: str, g, trials: int, seed) -> DualEstimate:
    """Means of the dual ledgers over ``trials`` independent draws."""
    if trials < 1:
        raise DualCheckError("trials must be at least 1")
    want = "rank" if alg == "ranking" else "load"
    if alg not in ("ranking", "balance_equal", FRACTIONAL):
        raise DualCheckError(f"unknown algorithm {alg!r}")
    if g.domain != want:
        raise DualCheckError(f"{alg} needs a {want}-domain gain function, got {g.kind}")
    if alg == FRACTIONAL:
        rng = make_rng(seed)
        A = np.zeros((trials, inst.m))
        B = np.zeros((trials, inst.n))
        vals = np.zeros(trials)
        for t in range(trials):
            theta = -np.log1p(-rng.random(inst.m))
            tr = run_balance_fractional(inst, theta, g)
            led = ledger_fractional(tr, inst, g)
            A[t], B[t], vals[t] = led.alpha, led.beta, tr.value
        return _estimate(A, B, vals, A.sum(axis=1) + B.sum(axis=1))
    res = simulate_batch(inst, alg, batch_draws(inst, trials, seed), g)
    return _estimate(res.alpha, res.beta, res.value, res.gain)


# -- feasibility sweeps ------------------------------------------------------------


@dataclass
class FeasibilityRow:
    u: int
    S: tuple
    lhs: float
    target: float
    stderr: float

    @property
    def slack(self) -> float:
        return self.lhs - self.target

    @property
    def mask(self) -> int:
        return sum(1 << v for v in self.S)

    @property
    def verdict(self) -> str:
        if self.slack >= 0:
            return "ok"
        if self.slack + MARGIN * self.stderr >= 0:
            return "inconclusive"
        return "violation"


@dataclass
class FeasibilityReport:
    gamma: float
    rows: list = field(default_factory=list)

    @property
    def worst(self) -> Optional[FeasibilityRow]:
        rated = [r for r in self.rows if r.target > 0]
        return min(rated, key=lambda r: r.lhs / r.target) if rated else None

    @property
    def worst_ratio(self) -> float:
        w = self.worst
        return math.inf if w is None else w.lhs / w.target

    @property
    def worst_ratio_margin(self) -> float:
        """Three standard errors of the worst ratio."""
        w = self.worst
        return 0.0 if w is None else MARGIN * w.stderr / w.target

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r.verdict == "violation"]

    @property
    def inconclusive(self) -> list:
        return [r for r in self.rows if r.verdict == "inconclusive"]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        w = self.worst
        return {
            "gamma": self.gamma,
            "worst": None if w is None else {"u": w.u, "S": list(w.S), "ratio": self.worst_ratio},
            "margin": MARGIN,
            "violations": len(self.violations),
            "inconclusive": len(self.inconclusive),
            "rows": [
                {"u": r.u, "S": r.mask, "lhs": r.lhs, "target": r.target, "slack": r.slack, "stderr": r.stderr}
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(_round_floats(self.to_dict()), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "S", "lhs", "target", "slack", "stderr"])
        for r in self.rows:
            w.writerow([r.u, r.mask] + [f"{x:.12g}" for x in (r.lhs, r.target, r.slack, r.stderr)])
        return buf.getvalue()


def _all_subsets(items):
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def _sweep(inst: Instance, est: DualEstimate, gamma: float, reduced: bool) -> FeasibilityReport:
    if inst.n > MAX_CONFIG_N:
        raise DualCheckError(f"feasibility sweeps need n <= {MAX_CONFIG_N}, got {inst.n}")
    rep = FeasibilityReport(gamma)
    for u in range(inst.m):
        wa = np.zeros(inst.m)
        wa[u] = 1.0
        for S in _all_subsets(inst.neighbors(u)):
            wb = np.zeros(inst.n)
            q = 1.0
            for v in S:
                wb[v] = q if reduced else 1.0
                q *= 1.0 - inst.prob[u, v]
            target = gamma * (p_tilde(inst, u, S) if reduced else p_bar(inst, u, S))
            lhs, se = est.combo(wa, wb)
            rep.rows.append(FeasibilityRow(u, S, lhs, target, se))
    return rep


def check_config_feasibility(inst: Instance, est: DualEstimate, gamma: float) -> FeasibilityReport:
    """``E[alpha_u] + sum_{v in S} E[beta_v]`` against ``gamma * p_bar_uS`` for all neighbor subsets."""
    return _sweep(inst, est, gamma, reduced=False)


def check_reduced_feasibility(inst: Instance, est: DualEstimate, gamma: float) -> FeasibilityReport:
    """Same sweep with ``beta_v`` weighted by ``1 - p~`` of the earlier members of ``S``."""
    return _sweep(inst, est, gamma, reduced=True)


# -- conditional checks for fractional Balance ---------------------------------------


@dataclass
class FullCheck:
    alpha: float
    beta: float
    target: float
    ell_inf: float

    @property
    def lhs(self) -> float:
        return self.alpha + self.beta

    @property
    def slack(self) -> float:
        return self.lhs - self.target


def _with_budget(theta_minus_u, u: int, value: float) -> np.ndarray:
    b = np.array(theta_minus_u, dtype=float)
    b[u] = value
    return b


def _prefix_sums(inst: Instance, u: int, S: Sequence[int]) -> dict:
    """``p_{uS(v)}``: total probability of the members of ``S`` arriving before ``v``."""
    out, acc = {}, 0.0
    for v in sorted(S):
        out[v] = acc
        acc += inst.prob[u, v]
    return out


def counted_beta(inst: Instance, u: int, S, theta_u: float, beta: np.ndarray) -> float:
    """``sum of beta_v`` over ``v in S`` with ``theta_u >= p_{uS(v)}``."""
    pre = _prefix_sums(inst, u, S)
    return float(sum(beta[v] for v in S if theta_u >= pre[v]))


def ell_infinity(inst: Instance, u: int, theta_minus_u, g, delta: float = 1e-3) -> float:
    tr = run_balance_fractional(inst, _with_budget(theta_minus_u, u, math.inf), g, delta)
    return float(tr.load[u])


def check_full_stochastic_feasibility(
    inst: Instance,
    u: int,
    S,
    theta_minus_u,
    g,
    gamma: float,
    nodes: int = 64,
    delta: float = 1e-3,
) -> FullCheck:
    """Conditional dual condition of fractional Balance for fixed ``theta_minus_u``.

    ``alpha_u`` comes from the run with ``theta_u = inf`` through
    ``E alpha_u = int_0^{l_inf} e^{-t} g(t) dt``.  The expected counted
    ``beta`` is integrated over ``theta_u ~ Exp(1)`` piecewise: Gauss-Legendre
    between consecutive breakpoints ``{p_{uS(v)}} + {l_inf}``, one full run
    per node, and the constant tail past the last breakpoint in closed form.
    """
    if g.domain != "load":
        raise DualCheckError("fractional Balance needs a load-domain gain function")
    S = tuple(sorted(S))
    if any(inst.prob[u, v] == 0 for v in S):
        raise DualCheckError("S must consist of neighbors of u")
    ell = ell_infinity(inst, u, theta_minus_u, g, delta)
    alpha = g.exp_integral(0.0, ell)
    target = gamma * p_tilde(inst, u, S)
    if not S:
        return FullCheck(alpha, 0.0, target, ell)

    def F(theta: float) -> float:
        tr = run_balance_fractional(inst, _with_budget(theta_minus_u, u, theta), g, delta)
        return counted_beta(inst, u, S, theta, ledger_fractional(tr, inst, g).beta)

    cuts = sorted({0.0, ell, *_prefix_sums(inst, u, S).values()})
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    beta = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        for x, w in zip(xs, ws):
            t = mid + half * x
            beta += half * w * math.exp(-t) * F(t)
    top = cuts[-1]
    beta += math.exp(-top) * F(top if top > 0 else math.inf)
    return FullCheck(alpha, beta, target, ell)


def verify_alpha_invariant(
    trace: Trace,
    ledger: DualLedger,
    g,
    mode: str,
    ranks=None,
    tol: float = 1e-12,
) -> bool:
    """Pathwise alpha invariants.

    ``ranking``: ``alpha_u = l_u g(rho_u)``; ``balance`` (fractional):
    ``alpha_u = G(l_u)``; ``balance_equal``: ``alpha_u = p sum_{k < c_u} g(k p)``
    with ``c_u`` the number of matches to ``u``.
    """
    if mode == "ranking":
        if ranks is None:
            raise DualCheckError("ranking mode needs the ranks")
        if g.domain != "rank":
            raise DualCheckError("mode mismatch: ranking needs a rank-domain gain")
        expect = np.array([trace.load[u] * g(float(ranks[u])) for u in range(trace.m)])
    elif mode == "balance":
        if g.domain != "load":
            raise DualCheckError("mode mismatch: balance needs a load-domain gain")
        expect = np.array([g.integral(0.0, float(trace.load[u])) for u in range(trace.m)])
    elif mode == "balance_equal":
        if g.domain != "load":
            raise DualCheckError("mode mismatch: balance needs a load-domain gain")
        counts = np.zeros(trace.m, dtype=int)
        for _, u, x, _ in trace.steps:
            if x != 1.0:
                raise DualCheckError("mode mismatch: trace has fractional matches")
            counts[u] += 1
        expect = np.zeros(trace.m)
        for u in range(trace.m):
            if counts[u]:
                p = trace.load[u] / counts[u]
                expect[u] = p * sum(g(k * p) for k in range(counts[u]))
    else:
        raise DualCheckError(f"unknown mode {mode!r}")
    scale = np.maximum(1.0, np.abs(expect))
    return bool(np.all(np.abs(ledger.alpha - expect) <= tol * scale))


@dataclass
class AlphaExpectation:
    mc: float
    stderr: float
    quadrature: float
    ell_inf: float

    @property
    def residual(self) -> float:
        return abs(self.mc - self.quadrature)


def verify_balance_alpha_expectation(
    inst: Instance,
    theta_minus_u,
    u: int,
    g,
    samples: int,
    seed=0,
    rerun: int = 0,
    delta: float = 1e-3,
) -> AlphaExpectation:
    """Monte Carlo mean of ``alpha_u`` over ``theta_u ~ Exp(1)`` vs quadrature.

    Given ``theta_u`` the final load of ``u`` is ``min(l_inf, theta_u)`` and
    ``alpha_u = G`` of it.  The first ``rerun`` samples are also replayed
    through the algorithm and the ledger, which must agree.
    """
    ell = ell_infinity(inst, u, theta_minus_u, g, delta)
    theta = -np.log1p(-make_rng(seed).random(samples))
    loads = np.minimum(theta, ell)
    vals = np.array([g.integral(0.0, float(x)) for x in loads])
    for t in range(min(rerun, samples)):
        tr = run_balance_fractional(inst, _with_budget(theta_minus_u, u, theta[t]), g, delta)
        a = ledger_fractional(tr, inst, g).alpha[u]
        if abs(a - vals[t]) > 1e-10 * max(1.0, abs(a)):
            raise DualCheckError(f"replayed alpha {a} differs from G(min(l_inf, theta)) = {vals[t]}")
    se = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return AlphaExpectation(float(vals.mean()), se, g.exp_integral(0.0, ell), ell)


@dataclass
class BetaBound:
    realized: float
    bound: float
    case: str

    @property
    def holds(self) -> bool:
        return self.realized >= self.bound


def beta_lower_bound(q: float, theta: float, ell: float, g, equal_p: bool) -> tuple[float, str]:
    """Lower bound on the counted ``beta`` sum.

    ``q`` is ``p_uS``.  For ``theta >= l_inf`` both cases give
    ``min(q, theta) (1 - g(l_inf))``.  Below ``l_inf`` the equal-probability
    bound subtracts ``l_inf - theta`` inside the positive part; the general
    bound subtracts ``int_theta^l_inf (1 - g)``.
    """
    share = 1.0 - g(ell)
    base = min(q, theta)
    if theta >= ell:
        return base * share, "theta>=ell"
    if equal_p:
        return max(base - (ell - theta), 0.0) * share, "equal"
    return max(base * share - ((ell - theta) - g.integral(theta, ell)), 0.0), "general"


def verify_balance_beta_bound(
    inst: Instance,
    theta_minus_u,
    u: int,
    theta_u: float,
    S,
    g,
    delta: float = 1e-3,
    tol: float = 0.0,
) -> BetaBound:
    """Run with the actual ``theta_u`` and with ``theta_u = inf`` and compare the counted beta to the bound."""
    S = tuple(sorted(S))
    ell = ell_infinity(inst, u, theta_minus_u, g, delta)
    tr = run_balance_fractional(inst, _with_budget(theta_minus_u, u, theta_u), g, delta)
    realized = counted_beta(inst, u, S, theta_u, ledger_fractional(tr, inst, g).beta)
    q = float(sum(inst.prob[u, v] for v in S))
    bound, case = beta_lower_bound(q, theta_u, ell, g, inst.equal_p is not None)
    return BetaBound(realized + tol, bound, case)


@dataclass
class RankingOutcome:
    actual: list
    predicted: list
    attempts_to_success: float

    @property
    def holds(self) -> bool:
        return self.actual == self.predicted


def verify_ranking_outcome(inst: Instance, draw: RandomDraw, u: int) -> RankingOutcome:
    """Matched set of ``u`` equals the first ``min(i, |N_u(rho_u)|)`` members of ``N_u(rho_u)``.

    Success is decided by the offline threshold, so ``i`` (the number of
    matches ``u`` needs to succeed) is fixed by ``tau_u`` alone.
    """
    if inst.equal_p is None and inst.num_edges > 0:
        raise DualCheckError("the outcome characterization needs equal probabilities")
    if draw.thresholds is None:
        raise DualCheckError("draw needs thresholds")
    trace, _ = run_ranking(inst, draw, model="thresholds")
    actual = trace.matched_to(u)
    profile = critical_ranks(inst, u, draw, model="thresholds")
    N = profile.N(float(draw.ranks[u]))
    p = inst.equal_p or 0.0
    i, q = math.inf, 1.0
    if p > 0:
        for k in range(1, len(N) + 1):
            q *= 1.0 - p
            if 1.0 - q >= draw.thresholds[u]:
                i = k
                break
    k = len(N) if math.isinf(i) else min(int(i), len(N))
    return RankingOutcome(actual, N[:k], i)


def sample_theta(inst: Instance, seed) -> np.ndarray:
    return -np.log1p(-make_rng(seed).random(inst.m))


__all__ = [
    "DualEstimate",
    "FeasibilityReport",
    "FeasibilityRow",
    "FullCheck",
    "estimate_duals",
    "check_config_feasibility",
    "check_reduced_feasibility",
    "check_full_stochastic_feasibility",
    "verify_alpha_invariant",
    "verify_balance_alpha_expectation",
    "verify_balance_beta_bound",
    "verify_ranking_outcome",
    "beta_lower_bound",
    "counted_beta",
    "ell_infinity",
    "sample_theta",
    "spawn_seeds",
]
