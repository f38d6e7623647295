"""Independent reference implementations used only by the tests.

Each oracle recomputes a quantity by a different route from the library:
vertex enumeration instead of simplex, brute-force outcome enumeration
instead of memoized recursion, scipy's HiGHS on independently built
matrices, plain adaptive quadrature instead of closed forms.
"""

import itertools
import math

import numpy as np
from scipy import integrate, optimize

from stochmatch.instance import RandomDraw
from stochmatch.simul import run_balance_equal, run_greedy, run_ranking


def vertex_enumeration(c, A, senses, b, lower, upper):
    """Maximize ``c.x`` over a bounded polytope by trying every basis.

    All variables must have finite bounds.  Returns ``(status, value)``.
    """
    c = np.asarray(c, float)
    k = len(c)
    rows, rhs = [], []
    for a, s, bi in zip(np.asarray(A, float), senses, b):
        if s in ("<=", "=="):
            rows.append(a)
            rhs.append(bi)
        if s in (">=", "=="):
            rows.append(-a)
            rhs.append(-bi)
    for j in range(k):
        e = np.zeros(k)
        e[j] = 1.0
        rows.append(e)
        rhs.append(upper[j])
        rows.append(-e)
        rhs.append(-lower[j])
    G, h = np.array(rows), np.array(rhs)
    best = None
    for idx in itertools.combinations(range(len(G)), k):
        M = G[list(idx)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(idx)])
        if np.all(G @ x <= h + 1e-9):
            val = float(c @ x)
            best = val if best is None else max(best, val)
    return ("infeasible", None) if best is None else ("optimal", best)


def highs_max(c, A_ub, b_ub):
    res = optimize.linprog(-np.asarray(c, float), A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return -res.fun


def matching_lp_highs(inst):
    edges = inst.edges
    A = np.zeros((inst.m + inst.n, len(edges)))
    for j, (u, v, p) in enumerate(edges):
        A[u, j] = p
        A[inst.m + v, j] = 1
    return highs_max([p for _, _, p in edges], A, np.ones(inst.m + inst.n)) if edges else 0.0


def config_lp_highs(inst, reduced):
    cols, entries = [], []
    for u in range(inst.m):
        nb = inst.neighbors(u)
        for r in range(1, len(nb) + 1):
            for S in itertools.combinations(nb, r):
                col = {u: 1.0}
                surv = 1.0
                for v in S:
                    col[inst.m + v] = surv if reduced else 1.0
                    surv *= 1 - inst.prob[u, v]
                total = sum(inst.prob[u, v] for v in S)
                cols.append(1 - surv if reduced else min(total, 1.0))
                entries.append(col)
    if not cols:
        return 0.0
    A = np.zeros((inst.m + inst.n, len(cols)))
    for j, col in enumerate(entries):
        for i, a in col.items():
            A[i, j] = a
    return highs_max(cols, A, np.ones(inst.m + inst.n))


def enumerate_outcomes(inst, alg):
    """Exact expected value by running the scalar simulator on every outcome.

    Every rank order and every coin vector over all edges is enumerated and
    weighted by its probability.
    """
    edges = inst.edges
    orders = list(itertools.permutations(range(inst.m))) if alg == "ranking" else [tuple(range(inst.m))]
    total = 0.0
    for order in orders:
        ranks = np.empty(inst.m)
        for pos, u in enumerate(order):
            ranks[u] = (pos + 1) / (inst.m + 1)
        for bits in itertools.product((0, 1), repeat=len(edges)):
            w = 1.0
            coins = np.zeros((inst.m, inst.n), bool)
            for (u, v, p), b in zip(edges, bits):
                w *= p if b else 1 - p
                coins[u, v] = bool(b)
            if w == 0:
                continue
            draw = RandomDraw(ranks=ranks, coins=coins)
            if alg == "ranking":
                tr, _ = run_ranking(inst, draw)
            elif alg == "balance_equal":
                tr, _ = run_balance_equal(inst, draw)
            else:
                tr = run_greedy(inst, draw)
            total += w * tr.value
    return total / len(orders)


def quad(fn, a, b, points=None):
    val, _ = integrate.quad(fn, a, b, points=points, limit=400, epsabs=1e-13, epsrel=1e-12)
    return val


def one_vertex_full_lhs(q, g):
    """Conditional dual left side for one offline vertex fed a stream of total probability ``q``.

    With a single offline vertex the run is forced: the load rises to
    ``min(q, theta)`` and the counted beta is ``m - G(m)`` for
    ``m = min(q, theta)``.
    """
    G = lambda x: quad(g, 0.0, x)
    alpha = quad(lambda t: math.exp(-t) * g(t), 0.0, q)
    body = quad(lambda t: math.exp(-t) * (t - G(t)), 0.0, q)
    return alpha + body + math.exp(-q) * (q - G(q))
