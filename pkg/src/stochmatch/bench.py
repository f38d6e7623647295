"""Benchmarks and exact algorithm values on small instances.

OPT is the optimum of the matching LP.  With unit budgets the objective
``sum_u min(sum_v p_uv x_uv, 1)`` is maximized with every ``min``
saturated at the constraint ``sum_v p_uv x_uv <= 1``, so the LP optimum is
the fractional offline optimum.

S-OPT (the best offline policy that matches arrivals one at a time and
observes outcomes) is computed exactly by backward induction over the set
of successful offline vertices.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import lpcore
from .instance import Instance
from .simul import ALGORITHMS, batch_draws, simulate_batch

MAX_CONFIG_N = 12
MAX_SOPT_M = 20
MAX_EXACT_M = 7
MAX_EXACT_EDGES = 20
MC_CHUNK = 10_000


class BenchError(ValueError):
    pass


@dataclass
class AlgValue:
    mean: float
    stderr: Optional[float] = None  # None marks an exact value

    @property
    def exact(self) -> bool:
        return self.stderr is None


@dataclass
class BenchReport:
    matching_lp: float
    config_lp: Optional[float] = None
    reduced_lp: Optional[float] = None
    s_opt: Optional[float] = None
    algs: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        out = []
        for name in ("matching_lp", "config_lp", "reduced_lp", "s_opt"):
            val = getattr(self, name)
            if val is not None:
                out.append((name, val, "", True))
        for name, av in self.algs.items():
            out.append((name, av.mean, "" if av.exact else av.stderr, av.exact))
        return out

    def to_dict(self) -> dict:
        return {
            "matching_lp": self.matching_lp,
            "config_lp": self.config_lp,
            "reduced_lp": self.reduced_lp,
            "s_opt": self.s_opt,
            "algs": {k: {"mean": v.mean, "stderr": v.stderr, "exact": v.exact} for k, v in self.algs.items()},
        }

    def to_json(self) -> str:
        return json.dumps(_round_floats(self.to_dict()), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "stderr", "exact"])
        for name, val, se, exact in self.rows():
            w.writerow([name, _fmt(val), _fmt(se) if se != "" else "", int(exact)])
        return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _round_floats(obj):
    if isinstance(obj, float):
        return obj if not math.isfinite(obj) else float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


# -- LP benchmarks ----------------------------------------------------------------


def _solve_max(c, A, b, method: str) -> float:
    if len(c) == 0:
        return 0.0
    A = np.asarray(A, dtype=float).reshape(len(b), len(c))
    prob = lpcore.LpProblem(c=np.asarray(c, dtype=float), A=A, senses=["<="] * len(b), b=np.asarray(b, dtype=float))
    sol = lpcore.solve(prob, method=method)
    if sol.status != "optimal":
        raise BenchError(f"benchmark LP ended with status {sol.status}")
    return float(sol.value)


def matching_lp_value(inst: Instance, method: str = "auto") -> float:
    edges = inst.edges
    A = np.zeros((inst.m + inst.n, len(edges)))
    c = np.zeros(len(edges))
    for j, (u, v, p) in enumerate(edges):
        c[j] = p
        A[u, j] = p
        A[inst.m + v, j] = 1.0
    return _solve_max(c, A, np.ones(inst.m + inst.n), method)


def _subsets(items):
    for r in range(1, len(items) + 1):
        yield from itertools.combinations(items, r)


def _check_config_size(inst: Instance) -> None:
    if inst.n > MAX_CONFIG_N:
        raise BenchError(f"configuration LPs need n <= {MAX_CONFIG_N}, got {inst.n}")


def _config_lp(inst: Instance, reduced: bool, method: str) -> float:
    _check_config_size(inst)
    cols, rows_u, coef = [], [], []
    for u in range(inst.m):
        for S in _subsets(inst.neighbors(u)):
            ps = [inst.prob[u, v] for v in S]
            if reduced:
                q = np.concatenate(([1.0], np.cumprod([1.0 - p for p in ps])))
                cols.append(1.0 - q[-1])
                coef.append({v: q[i] for i, v in enumerate(S)})
            else:
                cols.append(min(sum(ps), 1.0))
                coef.append({v: 1.0 for v in S})
            rows_u.append(u)
    A = np.zeros((inst.m + inst.n, len(cols)))
    for j, (u, cv) in enumerate(zip(rows_u, coef)):
        A[u, j] = 1.0
        for v, a in cv.items():
            A[inst.m + v, j] = a
    return _solve_max(cols, A, np.ones(inst.m + inst.n), method)


def configuration_lp_value(inst: Instance, method: str = "auto") -> float:
    """Configuration LP with column value ``min(sum_S p, 1)``."""
    return _config_lp(inst, reduced=False, method=method)


def reduced_stochastic_config_lp_value(inst: Instance, method: str = "auto") -> float:
    """Reduced-form stochastic configuration LP.

    Column ``(u, S)`` is worth ``p~_uS`` and uses ``1 - p~`` of the members
    of ``S`` arriving before ``v`` in the row of ``v``.
    """
    return _config_lp(inst, reduced=True, method=method)


def s_opt_value(inst: Instance) -> float:
    if inst.m > MAX_SOPT_M:
        raise BenchError(f"S-OPT needs m <= {MAX_SOPT_M}, got {inst.m}")
    cols = [[(u, float(inst.prob[u, v])) for u in inst.offline_neighbors(v)] for v in range(inst.n)]

    @lru_cache(maxsize=None)
    def V(j: int, T: int) -> float:
        if j == inst.n:
            return 0.0
        skip = V(j + 1, T)
        best = skip
        for u, p in cols[j]:
            if not T >> u & 1:
                best = max(best, p * (1.0 + V(j + 1, T | 1 << u)) + (1.0 - p) * skip)
        return best

    return V(0, 0)


# -- exact algorithm values ------------------------------------------------------


def _check_exact_size(inst: Instance) -> None:
    if inst.m > MAX_EXACT_M or inst.num_edges > MAX_EXACT_EDGES:
        raise BenchError(
            f"exact enumeration needs m <= {MAX_EXACT_M} and at most {MAX_EXACT_EDGES} edges "
            f"(got m={inst.m}, {inst.num_edges} edges)"
        )


def _expected_value(inst: Instance, choose) -> float:
    """Expectation over coins of an algorithm whose choice depends on (v, succ, counts)."""
    P = inst.prob
    cols = [inst.offline_neighbors(v) for v in range(inst.n)]

    @lru_cache(maxsize=None)
    def E(j: int, succ: int, counts: tuple) -> float:
        if j == inst.n:
            return 0.0
        cands = [u for u in cols[j] if not succ >> u & 1]
        if not cands:
            return E(j + 1, succ, counts)
        u = choose(j, cands, counts)
        p = P[u, j]
        nc = counts[:u] + (counts[u] + 1,) + counts[u + 1 :]
        hit = E(j + 1, succ | 1 << u, nc) + 1.0 if p > 0 else 0.0
        miss = E(j + 1, succ, nc) if p < 1 else 0.0
        return p * hit + (1.0 - p) * miss

    return E(0, 0, (0,) * inst.m)


def exact_alg_value(inst: Instance, alg: str) -> float:
    """Exact expected value by enumerating rank orders and coin outcomes."""
    if alg not in ALGORITHMS:
        raise BenchError(f"unknown algorithm {alg!r}")
    _check_exact_size(inst)
    if inst.num_edges == 0:
        return 0.0
    P = inst.prob
    if alg == "greedy":
        return _expected_value(inst, lambda v, cands, counts: min(cands, key=lambda u: (-P[u, v], u)))
    if inst.equal_p is None:
        raise BenchError(f"{alg} requires equal success probabilities")
    if alg == "balance_equal":
        return _expected_value(inst, lambda v, cands, counts: min(cands, key=lambda u: (counts[u], u)))
    total = 0.0
    perms = list(itertools.permutations(range(inst.m)))
    for order in perms:
        pos = {u: i for i, u in enumerate(order)}
        total += _expected_value(inst, lambda v, cands, counts: min(cands, key=pos.__getitem__))
    return total / len(perms)


# -- Monte Carlo ----------------------------------------------------------------------


def _mc_chunk(args):
    inst, alg, trials, seed = args
    vals = simulate_batch(inst, alg, batch_draws(inst, trials, seed)).value
    return float(vals.sum()), float(np.square(vals).sum())


def mc_alg_value(inst: Instance, alg: str, trials: int, seed, jobs: int = 1) -> tuple[float, float]:
    """Sample mean and standard error; ``stderr`` is ``inf`` for a single trial.

    Trials are split into fixed chunks with seeds spawned from ``seed``, so
    the result does not depend on ``jobs``.
    """
    if trials < 1:
        raise BenchError("trials must be at least 1")
    if alg not in ALGORITHMS:
        raise BenchError(f"unknown algorithm {alg!r}")
    sizes = [MC_CHUNK] * (trials // MC_CHUNK)
    if trials % MC_CHUNK:
        sizes.append(trials % MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    tasks = [(inst, alg, k, s) for k, s in zip(sizes, seeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_mc_chunk, tasks))
    else:
        parts = [_mc_chunk(t) for t in tasks]
    s1 = sum(a for a, _ in parts)
    s2 = sum(b for _, b in parts)
    mean = s1 / trials
    if trials == 1:
        return mean, math.inf
    var = max(s2 - trials * mean * mean, 0.0) / (trials - 1)
    return mean, math.sqrt(var / trials)


def bench_report(
    inst: Instance,
    algs=ALGORITHMS,
    trials: int = 10_000,
    seed=0,
    jobs: int = 1,
    exact: Optional[bool] = None,
) -> BenchReport:
    """All benchmarks that fit the instance size plus each algorithm's value.

    Algorithm values are exact when the instance is small enough (or when
    ``exact`` is forced) and Monte Carlo otherwise.
    """
    small_cfg = inst.n <= MAX_CONFIG_N
    rep = BenchReport(
        matching_lp=matching_lp_value(inst),
        config_lp=configuration_lp_value(inst) if small_cfg else None,
        reduced_lp=reduced_stochastic_config_lp_value(inst) if small_cfg else None,
        s_opt=s_opt_value(inst) if inst.m <= MAX_SOPT_M else None,
    )
    can_exact = inst.m <= MAX_EXACT_M and inst.num_edges <= MAX_EXACT_EDGES
    use_exact = can_exact if exact is None else exact
    for alg in algs:
        if alg != "greedy" and inst.equal_p is None and inst.num_edges > 0:
            continue
        if use_exact:
            rep.algs[alg] = AlgValue(exact_alg_value(inst, alg))
        else:
            rep.algs[alg] = AlgValue(*mc_alg_value(inst, alg, trials, seed, jobs))
    return rep
