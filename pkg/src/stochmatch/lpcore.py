"""Small dense linear programs with primal and dual certificates.

Problems are stated as

    maximize    c @ x
    subject to  A[i] @ x  (<=, =, >=)  b[i]
                lower <= x <= upper

with ``lower`` defaulting to 0 (``None`` means unbounded below) and
``upper`` defaulting to ``None`` (unbounded above).

``solve`` runs a dense two-phase revised simplex.  Pricing uses the
steepest-edge ratio ``d_j / ||B^-1 a_j||`` and switches to Bland's rule
once the iteration count passes ``10 * (rows + cols)``, which rules out
cycling.  ``method="highs"`` hands the problem to SciPy's HiGHS instead;
both paths return the same :class:`LpSolution` and both are checked by
:func:`certificate`, which only looks at the original problem data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
GAP_TOL = 1e-7
_PIVOT_TOL = 1e-11
_COST_TOL = 1e-11


class LpError(RuntimeError):
    pass


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    senses: Sequence[str]
    b: np.ndarray
    lower: Optional[Sequence[Optional[float]]] = None
    upper: Optional[Sequence[Optional[float]]] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        nvar = len(self.c)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, nvar) if nvar else np.zeros((len(self.b), 0))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        if self.A.shape[0] != len(self.b) or len(self.senses) != len(self.b):
            raise ValueError("A, b and senses disagree on the number of rows")
        if any(s not in ("<=", "=", ">=") for s in self.senses):
            raise ValueError("senses must be '<=', '=' or '>='")
        lo = [0.0] * nvar if self.lower is None else list(self.lower)
        up = [None] * nvar if self.upper is None else list(self.upper)
        if len(lo) != nvar or len(up) != nvar:
            raise ValueError("bounds must have one entry per variable")
        self.lo = np.array([-np.inf if v is None else float(v) for v in lo])
        self.up = np.array([np.inf if v is None else float(v) for v in up])
        for arr in (self.c, self.A, self.b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite (no NaN/inf)")
        if (self.lo > self.up).any():
            raise ValueError("lower bound above upper bound")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    value: float = float("nan")
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    iterations: int = 0
    method: str = "simplex"
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")


@dataclass
class Certificate:
    primal_residual: float
    dual_residual: float
    gap: float
    dual_value: float

    def ok(self, feas_tol: float = FEAS_TOL, gap_tol: float = GAP_TOL) -> bool:
        return self.primal_residual <= feas_tol and self.dual_residual <= feas_tol and abs(self.gap) <= gap_tol


def certificate(problem: LpProblem, x, y) -> Certificate:
    """Residuals and duality gap of a primal/dual pair for ``problem``.

    The dual bound is ``b @ y + sum_j sup_{lo_j <= x_j <= up_j} r_j x_j``
    with reduced costs ``r = c - A^T y``; it is finite only when ``y``
    has the right signs and ``r_j`` has the right sign on every infinite
    bound.  Those sign violations make up the dual residual.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    P = problem
    ax = P.A @ x
    viol = [0.0]
    for s, lhs, rhs in zip(P.senses, ax, P.b):
        scale = 1.0 + abs(rhs)
        if s == "<=":
            viol.append((lhs - rhs) / scale)
        elif s == ">=":
            viol.append((rhs - lhs) / scale)
        else:
            viol.append(abs(lhs - rhs) / scale)
    viol.extend(P.lo - x)
    viol.extend(x - P.up)
    primal = max(0.0, max(viol))

    dual_viol = [0.0]
    for s, yi in zip(P.senses, y):
        if s == "<=":
            dual_viol.append(-yi)
        elif s == ">=":
            dual_viol.append(yi)
    r = P.c - P.A.T @ y
    bound_term = 0.0
    for rj, lo, up in zip(r, P.lo, P.up):
        if rj > 0:
            if np.isinf(up):
                dual_viol.append(rj)
            else:
                bound_term += rj * up
        elif rj < 0:
            if np.isinf(lo):
                dual_viol.append(-rj)
            else:
                bound_term += rj * lo
    dual_value = float(P.b @ y + bound_term)
    return Certificate(primal, max(0.0, max(dual_viol)), dual_value - float(P.c @ x), dual_value)


# -- simplex -------------------------------------------------------------------


class _Standard:
    """Equality form ``max cs @ z, As z = bs, z >= 0`` of an :class:`LpProblem`."""

    def __init__(self, P: LpProblem):
        nvar = len(P.c)
        cols = []  # (orig var, sign)
        offset = np.zeros(nvar)
        for j in range(nvar):
            lo, up = P.lo[j], P.up[j]
            if np.isfinite(lo):
                cols.append((j, 1.0))
                offset[j] = lo
            elif np.isfinite(up):
                cols.append((j, -1.0))
                offset[j] = up
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        self.cols = cols
        self.offset = offset
        M = np.zeros((nvar, len(cols)))  # x = offset + M z
        for k, (j, sgn) in enumerate(cols):
            M[j, k] = sgn
        self.M = M

        rows_A = [P.A @ M]
        rows_b = [P.b - P.A @ offset]
        senses = list(P.senses)
        # finite upper bounds of lower-bounded variables become rows
        self.n_orig_rows = len(P.b)
        for k, (j, sgn) in enumerate(cols):
            if sgn > 0 and np.isfinite(P.lo[j]) and np.isfinite(P.up[j]):
                row = np.zeros(len(cols))
                row[k] = 1.0
                rows_A.append(row[None, :])
                rows_b.append(np.array([P.up[j] - P.lo[j]]))
                senses.append("<=")
        A = np.vstack(rows_A) if rows_A else np.zeros((0, len(cols)))
        b = np.concatenate(rows_b)
        flip = b < 0
        A[flip] *= -1
        b[flip] *= -1
        senses = [{"<=": ">=", ">=": "<="}.get(s, s) if f else s for s, f in zip(senses, flip)]
        self.flip = np.where(flip, -1.0, 1.0)

        nrows = len(b)
        slack_cols, art_rows = [], []
        for i, s in enumerate(senses):
            if s == "<=":
                slack_cols.append((i, 1.0))
            elif s == ">=":
                slack_cols.append((i, -1.0))
                art_rows.append(i)
            else:
                art_rows.append(i)
        S = np.zeros((nrows, len(slack_cols)))
        for k, (i, sgn) in enumerate(slack_cols):
            S[i, k] = sgn
        R = np.zeros((nrows, len(art_rows)))
        for k, i in enumerate(art_rows):
            R[i, k] = 1.0
        self.A = np.hstack([A, S, R])
        self.b = b
        self.nz = len(cols)
        self.nslack = len(slack_cols)
        self.nart = len(art_rows)
        self.c = np.concatenate([M.T @ P.c, np.zeros(self.nslack + self.nart)])
        self.const = float(P.c @ offset)
        basis = []
        art_iter = iter(range(self.nz + self.nslack, self.nz + self.nslack + self.nart))
        slack_of_row = {i: self.nz + k for k, (i, sgn) in enumerate(slack_cols) if sgn > 0}
        for i in range(nrows):
            basis.append(slack_of_row[i] if i in slack_of_row else next(art_iter))
        self.basis = basis

    @property
    def art_start(self) -> int:
        return self.nz + self.nslack


def _simplex_phase(A, b, c, basis, allowed, max_iter, bland_after):
    """Revised simplex on ``max c z, A z = b, z >= 0`` from a feasible basis.

    Returns ``(status, basis, iterations)``.  ``allowed`` masks columns that
    may enter.
    """
    m, ncols = A.shape
    basis = list(basis)
    it = 0
    while True:
        if it >= max_iter:
            raise LpError("simplex iteration limit reached")
        B = A[:, basis]
        try:
            y = np.linalg.solve(B.T, c[basis])
            xb = np.linalg.solve(B, b)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise LpError("singular basis") from exc
        d = c - A.T @ y
        d[basis] = 0.0
        cand = np.flatnonzero(allowed & (d > _COST_TOL))
        if len(cand) == 0:
            return "optimal", basis, it
        bland = it >= bland_after
        if bland:
            enter = int(cand[0])
            w = np.linalg.solve(B, A[:, enter])
        else:
            W = np.linalg.solve(B, A[:, cand])
            score = d[cand] / np.sqrt(1.0 + np.sum(W * W, axis=0))
            pick = int(np.argmax(score))
            enter = int(cand[pick])
            w = W[:, pick]
        pos = w > _PIVOT_TOL
        if not pos.any():
            return "unbounded", basis, it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xb[pos], 0.0) / w[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * (1.0 + best))
        leave = int(min(ties, key=lambda i: basis[i]))
        basis[leave] = enter
        it += 1


def _solve_simplex(P: LpProblem) -> LpSolution:
    st = _Standard(P)
    A, b = st.A, st.b
    m, ncols = A.shape
    nvar = len(P.c)
    if m == 0:
        # only sign constraints: optimum at the offsets unless some cost pushes to infinity
        if (st.c[: st.nz] > 0).any():
            return LpSolution("unbounded", method="simplex")
        x = st.offset.copy()
        return LpSolution("optimal", float(P.c @ x), x, np.zeros(0), 0, "simplex")

    max_iter = 50 * (m + ncols) + 1000
    bland_after = 10 * (m + ncols)
    basis = st.basis
    iters = 0
    art = np.zeros(ncols, dtype=bool)
    art[st.art_start:] = True
    if st.nart:
        c1 = np.where(art, -1.0, 0.0)
        status, basis, k = _simplex_phase(A, b, c1, basis, np.ones(ncols, dtype=bool), max_iter, bland_after)
        iters += k
        xb = np.linalg.solve(A[:, basis], b)
        infeas = sum(v for i, v in zip(basis, xb) if art[i])
        if infeas > 1e-9 * (1.0 + np.abs(b).max()):
            return LpSolution("infeasible", iterations=iters, method="simplex")
        # pivot zero-level artificials out where possible
        for r in range(m):
            if not art[basis[r]]:
                continue
            Binv_row = np.linalg.solve(A[:, basis].T, np.eye(m)[r])
            row = Binv_row @ A
            options = [j for j in range(st.art_start) if j not in basis and abs(row[j]) > 1e-9]
            if options:
                basis[r] = options[0]
    allowed = ~art
    status, basis, k = _simplex_phase(A, b, st.c, basis, allowed, max_iter, bland_after)
    iters += k
    if status == "unbounded":
        return LpSolution("unbounded", iterations=iters, method="simplex")

    B = A[:, basis]
    xb = np.linalg.solve(B, b)
    z = np.zeros(ncols)
    z[basis] = np.maximum(xb, 0.0)
    x = st.offset + st.M @ z[: st.nz]
    y_std = np.linalg.solve(B.T, st.c[basis])
    y = (y_std * st.flip)[: st.n_orig_rows]
    return LpSolution("optimal", float(P.c @ x), x, y, iters, "simplex")


# -- HiGHS ---------------------------------------------------------------------


def _solve_highs(P: LpProblem) -> LpSolution:
    from scipy.optimize import linprog

    ub_rows = [i for i, s in enumerate(P.senses) if s != "="]
    eq_rows = [i for i, s in enumerate(P.senses) if s == "="]
    sign = np.array([1.0 if P.senses[i] == "<=" else -1.0 for i in ub_rows])
    A_ub = P.A[ub_rows] * sign[:, None] if ub_rows else None
    b_ub = P.b[ub_rows] * sign if ub_rows else None
    A_eq = P.A[eq_rows] if eq_rows else None
    b_eq = P.b[eq_rows] if eq_rows else None
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(up) else up) for lo, up in zip(P.lo, P.up)]
    res = linprog(-P.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        # presolve may report an unbounded problem as infeasible; settle it with a zero objective
        feas = linprog(np.zeros_like(P.c), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        return LpSolution("unbounded" if feas.status == 0 else "infeasible", method="highs")
    if res.status == 3:
        return LpSolution("unbounded", method="highs")
    if res.status != 0:
        raise LpError(f"HiGHS failed: {res.message}")
    y = np.zeros(len(P.b))
    if ub_rows:
        y[ub_rows] = -res.ineqlin.marginals * sign
    if eq_rows:
        y[eq_rows] = -res.eqlin.marginals
    x = np.asarray(res.x, dtype=float)
    return LpSolution("optimal", float(P.c @ x), x, y, int(getattr(res, "nit", 0)), "highs")


def solve(problem: LpProblem, method: str = "simplex", check: bool = True) -> LpSolution:
    """Solve ``problem``; ``method`` is ``"simplex"``, ``"highs"`` or ``"auto"``.

    ``auto`` keeps the dense simplex up to 5e4 matrix entries.  With
    ``check`` the certificate is computed and an optimal answer whose
    duality gap exceeds tolerance raises :class:`LpError`.
    """
    if method == "auto":
        rows, cols = problem.shape
        method = "simplex" if rows * max(cols, 1) <= 50_000 else "highs"
    if method == "simplex":
        sol = _solve_simplex(problem)
    elif method == "highs":
        sol = _solve_highs(problem)
    else:
        raise ValueError(f"unknown method {method!r}")
    if sol.status == "optimal" and check:
        cert = certificate(problem, sol.x, sol.y)
        sol.primal_residual, sol.dual_residual, sol.gap = cert.primal_residual, cert.dual_residual, cert.gap
        scale = 1.0 + abs(sol.value)
        # HiGHS works at 1e-7 feasibility; the dense simplex is held to 1e-9
        feas = FEAS_TOL if sol.method == "simplex" else 1e-6
        if cert.primal_residual > feas or cert.dual_residual > feas * scale or abs(cert.gap) > GAP_TOL * scale:
            raise LpError(
                f"certificate check failed ({sol.method}): primal {cert.primal_residual:.2e}, "
                f"dual {cert.dual_residual:.2e}, gap {cert.gap:.2e}"
            )
    log.debug("lp %s: %s value=%s iters=%d", sol.method, sol.status, sol.value, sol.iterations)
    return sol
