"""Online algorithms run on one realization of randomness.

Each ``run_*`` function is a pure function of the instance and the draw and
returns a :class:`Trace`.  Gain-splitting duals are computed from the
trace by the ``ledger_*`` helpers, so a trace never depends on the choice
of gain function (the fractional algorithm is the exception: its
allocation rule itself uses ``g``).

Success of an integral match is decided by the per-edge coins of the
draw, or by the offline thresholds when ``model="thresholds"``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .instance import Instance, RandomDraw, make_rng

ALGORITHMS = ("ranking", "balance_equal", "greedy")


class SimulationError(ValueError):
    pass


@dataclass
class Trace:
    """Outcome of one run.

    ``steps`` lists every (partial) match in the order it was made as
    ``(v, u, fraction, load_before)``; ``match[v]`` aggregates them per
    online vertex.
    """

    m: int
    n: int
    match: list = field(default_factory=list)
    load: np.ndarray = None
    success_at: list = field(default_factory=list)
    value: float = 0.0
    steps: list = field(default_factory=list)

    @property
    def gain(self) -> float:
        """Sum of ``x * p`` over all matches."""
        return float(np.sum(self.load))

    def matched_to(self, u: int) -> list[int]:
        return [v for v, allocs in enumerate(self.match) if any(w == u for w, _ in allocs)]

    def same_as(self, other: "Trace") -> bool:
        return (
            self.match == other.match
            and np.array_equal(self.load, other.load)
            and self.success_at == other.success_at
            and self.value == other.value
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "matched_u", "fraction", "success_flag"])
            for v, allocs in enumerate(self.match):
                if not allocs:
                    w.writerow([v, -1, 0, 0])
                for u, x in allocs:
                    w.writerow([v, u, f"{x:.12g}", int(self.success_at[u] == v)])
            w.writerow(["value", "", f"{self.value:.12g}", ""])


@dataclass
class DualLedger:
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def total(self) -> float:
        return float(self.alpha.sum() + self.beta.sum())

    def conservation_error(self, trace: Trace) -> float:
        return abs(self.total - trace.gain)


@dataclass
class CriticalProfile:
    """Critical ranks of ``u``'s neighbors, listed in arrival order."""

    u: int
    neighbors: list
    mu: np.ndarray

    def N(self, rho: float) -> list[int]:
        """Neighbors whose critical rank is at least ``rho``, in arrival order."""
        return [v for v, m in zip(self.neighbors, self.mu) if m >= rho]

    def N_before(self, rho: float, v: int) -> list[int]:
        return [w for w in self.N(rho) if w < v]


def _success_model(draw: RandomDraw, model: Optional[str]) -> str:
    if model is None:
        model = "coins" if draw.coins is not None else "thresholds"
    if model == "coins" and draw.coins is None:
        raise SimulationError("draw has no coins")
    if model == "thresholds" and draw.thresholds is None:
        raise SimulationError("draw has no thresholds")
    if model not in ("coins", "thresholds"):
        raise SimulationError(f"unknown success model {model!r}")
    return model


def _run_integral(inst: Instance, draw: RandomDraw, choose, model: Optional[str]) -> Trace:
    model = _success_model(draw, model)
    m, n = inst.m, inst.n
    P = inst.prob
    load = np.zeros(m)
    fail_prob = np.ones(m)  # prod (1 - p) over matched edges
    success_at: list = [None] * m
    match: list = [[] for _ in range(n)]
    steps = []
    for v in range(n):
        cands = [u for u in range(m) if P[u, v] > 0 and success_at[u] is None]
        if not cands:
            continue
        u = choose(v, cands, load)
        steps.append((v, u, 1.0, float(load[u])))
        match[v].append((u, 1.0))
        load[u] += P[u, v]
        if model == "coins":
            hit = bool(draw.coins[u, v])
        else:
            fail_prob[u] *= 1.0 - P[u, v]
            hit = 1.0 - fail_prob[u] >= draw.thresholds[u]
        if hit:
            success_at[u] = v
    value = float(sum(s is not None for s in success_at))
    return Trace(m, n, match, load, success_at, value, steps)


def _require_equal_p(inst: Instance, alg: str) -> float:
    if inst.equal_p is None:
        if inst.num_edges == 0:
            return 0.0
        raise SimulationError(f"{alg} requires equal success probabilities")
    return inst.equal_p


def ledger_ranking(trace: Trace, inst: Instance, ranks, g) -> DualLedger:
    """``alpha_u += p g(rho_u)`` and ``beta_v = p (1 - g(rho_u))`` per match."""
    alpha = np.zeros(trace.m)
    beta = np.zeros(trace.n)
    for v, u, x, _ in trace.steps:
        p = inst.prob[u, v]
        share = g(float(ranks[u]))
        alpha[u] += x * p * share
        beta[v] += x * p * (1.0 - share)
    return DualLedger(alpha, beta)


def ledger_balance_equal(trace: Trace, inst: Instance, g) -> DualLedger:
    """Split at the pre-match load: ``alpha_u += p g(l_u)``."""
    alpha = np.zeros(trace.m)
    beta = np.zeros(trace.n)
    for v, u, x, ell in trace.steps:
        p = inst.prob[u, v]
        share = g(ell)
        alpha[u] += x * p * share
        beta[v] += x * p * (1.0 - share)
    return DualLedger(alpha, beta)


def ledger_fractional(trace: Trace, inst: Instance, g, split: str = "integral") -> DualLedger:
    """Split each chunk by the exact integral of ``g`` over the load it adds.

    A chunk raising ``l_u`` from ``a`` to ``b`` gives ``G(b) - G(a)`` to
    ``alpha_u`` and the rest of ``(b - a)`` to ``beta_v``; this is the
    continuous-process split, so ``alpha_u = G(l_u)`` holds exactly.
    ``split="left"`` uses ``(b - a) g(a)`` instead, which is off by O(delta).
    """
    if split not in ("integral", "left"):
        raise SimulationError(f"unknown split {split!r}")
    alpha = np.zeros(trace.m)
    beta = np.zeros(trace.n)
    for v, u, x, ell in trace.steps:
        dl = x * inst.prob[u, v]
        share = g.integral(ell, ell + dl) if split == "integral" else dl * g(ell)
        alpha[u] += share
        beta[v] += dl - share
    return DualLedger(alpha, beta)


def run_ranking(inst: Instance, draw: RandomDraw, g=None, model: Optional[str] = None):
    """Match each arrival to the unsuccessful neighbor of smallest rank.

    Returns ``(trace, ledger)``; ``ledger`` is ``None`` when ``g`` is not given.
    """
    _require_equal_p(inst, "Ranking")
    if draw.ranks is None:
        raise SimulationError("Ranking needs ranks")
    ranks = draw.ranks

    def choose(v, cands, load):
        return min(cands, key=lambda u: ranks[u])

    trace = _run_integral(inst, draw, choose, model)
    return trace, (ledger_ranking(trace, inst, ranks, g) if g is not None else None)


def run_balance_equal(inst: Instance, draw: RandomDraw, g=None, model: Optional[str] = None):
    """Match each arrival to the unsuccessful neighbor of smallest load (ties: smallest id)."""
    _require_equal_p(inst, "Stochastic Balance (equal)")

    def choose(v, cands, load):
        return min(cands, key=lambda u: (load[u], u))

    trace = _run_integral(inst, draw, choose, model)
    return trace, (ledger_balance_equal(trace, inst, g) if g is not None else None)


def run_greedy(inst: Instance, draw: RandomDraw, model: Optional[str] = None) -> Trace:
    P = inst.prob

    def choose(v, cands, load):
        return min(cands, key=lambda u: (-P[u, v], u))

    return _run_integral(inst, draw, choose, model)


def run_algorithm(alg: str, inst: Instance, draw: RandomDraw, g=None, model: Optional[str] = None):
    if alg == "ranking":
        return run_ranking(inst, draw, g, model)
    if alg == "balance_equal":
        return run_balance_equal(inst, draw, g, model)
    if alg == "greedy":
        return run_greedy(inst, draw, model), None
    raise SimulationError(f"unknown algorithm {alg!r}")


DEFAULT_DELTA = 1e-3


def run_balance_fractional(inst: Instance, budgets, g, delta: float = DEFAULT_DELTA) -> Trace:
    """Fractional Stochastic Balance driven by stochastic budgets.

    Each arrival is split into chunks of mass ``delta``; every chunk goes
    to the active neighbor maximizing ``p_uv (1 - g(l_u))`` (ties: smallest
    id).  A vertex is active while ``l_u < theta_u``.  A chunk that would
    push ``l_u`` past ``theta_u`` is cut at the budget and ``u`` becomes
    successful.  When a single neighbor is active the whole remainder is
    allocated at once.
    """
    if delta <= 0:
        raise SimulationError("delta must be positive")
    m, n = inst.m, inst.n
    P = inst.prob
    theta = np.asarray(budgets, dtype=float)
    if theta.shape != (m,):
        raise SimulationError("need one budget per offline vertex")
    load = np.zeros(m)
    success_at: list = [None] * m
    match: list = [[] for _ in range(n)]
    steps = []
    for v in range(n):
        nbrs = [u for u in range(m) if P[u, v] > 0]
        left = 1.0
        alloc: dict = {}
        while left > 1e-15:
            active = [u for u in nbrs if load[u] < theta[u]]
            if not active:
                break
            if len(active) == 1:
                u, x = active[0], left
            else:
                u = max(active, key=lambda w: (P[w, v] * (1.0 - g(float(load[w]))), -w))
                x = min(delta, left)
            p = P[u, v]
            if load[u] + x * p >= theta[u]:
                x = float((theta[u] - load[u]) / p)
                new_load = theta[u]
                success_at[u] = v
            else:
                new_load = load[u] + x * p
            steps.append((v, u, x, float(load[u])))
            load[u] = new_load
            alloc[u] = alloc.get(u, 0.0) + x
            left -= x
        match[v] = list(alloc.items())
    value = float(np.sum(np.minimum(load, theta)))
    return Trace(m, n, match, load, success_at, value, steps)


def critical_ranks(inst: Instance, u: int, draw: RandomDraw, model: Optional[str] = None) -> CriticalProfile:
    """Critical ranks of ``u``'s neighbors from a run of Ranking without ``u``.

    ``mu_v`` is the rank of the vertex ``v`` gets in that run, or 1 if
    ``v`` stays unmatched.
    """
    if not 0 <= u < inst.m:
        raise SimulationError(f"offline vertex {u} out of range")
    prob = np.array(inst.prob)
    nbrs = inst.neighbors(u)
    prob[u, :] = 0.0
    reduced = Instance(inst.m, inst.n, prob, inst.equal_p)
    trace, _ = run_ranking(reduced, draw, model=model)
    mu = []
    for v in nbrs:
        allocs = trace.match[v]
        mu.append(float(draw.ranks[allocs[0][0]]) if allocs else 1.0)
    return CriticalProfile(u, nbrs, np.array(mu))


# -- vectorized Monte Carlo ------------------------------------------------------


@dataclass
class BatchDraws:
    ranks: np.ndarray  # trials x m
    coins: np.ndarray  # trials x m x n

    def draw(self, t: int) -> RandomDraw:
        return RandomDraw(ranks=self.ranks[t], coins=self.coins[t])


def batch_draws(inst: Instance, trials: int, seed) -> BatchDraws:
    rng = make_rng(seed)
    ranks = rng.random((trials, inst.m))
    coins = rng.random((trials, inst.m, inst.n)) < inst.prob[None, :, :]
    # ties among ranks have probability zero; nudge any that occur
    if inst.m > 1:
        srt = np.sort(ranks, axis=1)
        bad = np.flatnonzero((np.diff(srt, axis=1) == 0).any(axis=1))
        for t in bad:
            while len(np.unique(ranks[t])) < inst.m:
                ranks[t] = rng.random(inst.m)
    return BatchDraws(ranks, coins)


@dataclass
class BatchResult:
    value: np.ndarray  # trials
    alpha: Optional[np.ndarray] = None  # trials x m
    beta: Optional[np.ndarray] = None  # trials x n
    gain: Optional[np.ndarray] = None  # trials


def simulate_batch(inst: Instance, alg: str, draws: BatchDraws, g=None) -> BatchResult:
    """Run ``alg`` on every draw at once; matches the scalar runs draw by draw."""
    if alg not in ALGORITHMS:
        raise SimulationError(f"unknown algorithm {alg!r}")
    if alg in ("ranking", "balance_equal"):
        _require_equal_p(inst, alg)
    T = draws.ranks.shape[0]
    m, n = inst.m, inst.n
    P = inst.prob
    succ = np.zeros((T, m), dtype=bool)
    load = np.zeros((T, m))
    alpha = np.zeros((T, m)) if g is not None else None
    beta = np.zeros((T, n)) if g is not None else None
    rows = np.arange(T)
    rank_share = None
    if g is not None and alg == "ranking":
        rank_share = _gain_values(g, draws.ranks)
    for v in range(n):
        edge = P[:, v] > 0
        if not edge.any():
            continue
        cand = edge[None, :] & ~succ
        if alg == "ranking":
            key = np.where(cand, draws.ranks, np.inf)
        elif alg == "balance_equal":
            key = np.where(cand, load, np.inf)
        else:
            key = np.where(cand, -P[:, v][None, :], np.inf)
        u = np.argmin(key, axis=1)
        ok = cand[rows, u]
        r, uu = rows[ok], u[ok]
        p = P[uu, v]
        if g is not None:
            if alg == "ranking":
                share = rank_share[r, uu]
            else:
                share = _gain_values(g, load[r, uu])
            alpha[r, uu] += p * share
            beta[r, v] = p * (1.0 - share)
        load[r, uu] += p
        succ[r, uu] |= draws.coins[r, uu, v]
    return BatchResult(succ.sum(axis=1).astype(float), alpha, beta, load.sum(axis=1))


def _gain_values(g, x: np.ndarray) -> np.ndarray:
    flat = np.asarray(x, dtype=float).ravel()
    return np.asarray(g.values(flat), dtype=float).reshape(np.shape(x))


def exp1_budgets(rng: np.random.Generator, m: int) -> np.ndarray:
    return -np.log1p(-rng.random(m))


def infinite_budgets(m: int) -> np.ndarray:
    return np.full(m, math.inf)
