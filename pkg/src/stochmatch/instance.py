"""Problem instances and realizations of randomness.

An instance is a bipartite graph between ``m`` offline vertices and ``n``
online vertices, stored as a dense ``m x n`` matrix of success
probabilities.  Online vertex ids double as the arrival order.  A zero
entry is a non-edge.

Coins versus thresholds
-----------------------
The threshold model draws ``tau_u ~ U[0, 1]`` once per offline vertex and
declares ``u`` successful as soon as the matched set ``S`` satisfies
``1 - prod_{v in S} (1 - p_uv) >= tau_u``.  Given that ``u`` is still
unsuccessful after being matched to ``S``, i.e. ``tau_u > p~(S)``, the next
match to ``v`` succeeds with probability

    (p~(S + v) - p~(S)) / (1 - p~(S)) = p_uv,

because ``1 - p~(S + v) = (1 - p~(S)) (1 - p_uv)``.  So each new attempt
succeeds independently with probability ``p_uv`` and the outcome
distribution is the same as flipping one independent coin per edge.  The
simulators use coins by default; thresholds are kept for the pathwise
statements about Ranking, which need success to depend only on the number
of matches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1


class InstanceError(ValueError):
    """Raised for malformed instances or instance files."""


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a ``SeedSequence``."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed, k: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(k)


@dataclass(frozen=True, eq=False)
class Instance:
    m: int
    n: int
    prob: np.ndarray
    equal_p: Optional[float] = None

    def __post_init__(self):
        prob = np.array(self.prob, dtype=float).reshape(self.m, self.n)
        if np.isnan(prob).any() or (prob < 0).any() or (prob > 1).any():
            raise InstanceError("probabilities must lie in [0, 1]")
        nz = prob[prob > 0]
        if self.equal_p is not None and not np.all(nz == self.equal_p):
            raise InstanceError("equal_p set but nonzero entries differ")
        prob.setflags(write=False)
        object.__setattr__(self, "prob", prob)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.m, self.n, self.equal_p) == (other.m, other.n, other.equal_p) and np.array_equal(
            self.prob, other.prob
        )

    def neighbors(self, u: int) -> list[int]:
        """Online neighbors of ``u`` in arrival order."""
        return [int(v) for v in np.flatnonzero(self.prob[u] > 0)]

    def offline_neighbors(self, v: int) -> list[int]:
        return [int(u) for u in np.flatnonzero(self.prob[:, v] > 0)]

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        us, vs = np.nonzero(self.prob)
        return [(int(u), int(v), float(self.prob[u, v])) for u, v in zip(us, vs)]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.prob))


def _detect_equal_p(prob: np.ndarray) -> Optional[float]:
    nz = np.unique(prob[prob > 0])
    return float(nz[0]) if len(nz) == 1 else None


def build_instance(m: int, n: int, probs: Iterable[Sequence]) -> Instance:
    """Dense instance from an edge list ``[(u, v, p), ...]``."""
    if m < 0 or n < 0:
        raise InstanceError("m and n must be non-negative")
    prob = np.zeros((m, n))
    for u, v, p in probs:
        if not (0 <= u < m and 0 <= v < n):
            raise InstanceError(f"edge ({u}, {v}) out of range for {m}x{n} instance")
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise InstanceError(f"probability {p} out of range [0, 1]")
        prob[u, v] = p
    return Instance(m, n, prob, _detect_equal_p(prob))


def gen_upper_triangular(k: int, p: float) -> Instance:
    """Offline vertex ``i`` neighbors the first ``i + 1`` arrivals."""
    if k < 1:
        raise InstanceError("k must be at least 1")
    if not 0.0 < p <= 1.0:
        raise InstanceError("p must lie in (0, 1]")
    return build_instance(k, k, [(i, j, p) for i in range(k) for j in range(i + 1)])


def gen_random(m: int, n: int, density: float, p_low: float, p_high: float, seed) -> Instance:
    if not (0.0 <= density <= 1.0 and 0.0 <= p_low <= p_high <= 1.0):
        raise InstanceError("need 0 <= density <= 1 and 0 <= p_low <= p_high <= 1")
    rng = make_rng(seed)
    mask = rng.random((m, n)) < density
    vals = rng.uniform(p_low, p_high, size=(m, n)) if p_low < p_high else np.full((m, n), p_low)
    # p_low == 0 may produce a zero draw; that is a non-edge by convention
    edges = [(u, v, vals[u, v]) for u, v in product(range(m), range(n)) if mask[u, v] and vals[u, v] > 0]
    return build_instance(m, n, edges)


def gen_random_equal(m: int, n: int, density: float, p: float, seed) -> Instance:
    return gen_random(m, n, density, p, p, seed)


# -- subset quantities -------------------------------------------------------


def p_sum(inst: Instance, u: int, S: Iterable[int]) -> float:
    return float(sum(inst.prob[u, v] for v in S))


def p_tilde(inst: Instance, u: int, S: Iterable[int]) -> float:
    """Probability that at least one of the matches of ``u`` to ``S`` succeeds."""
    q = 1.0
    for v in S:
        q *= 1.0 - inst.prob[u, v]
    return 1.0 - q


def p_bar(inst: Instance, u: int, S: Iterable[int]) -> float:
    return min(p_sum(inst, u, S), 1.0)


@dataclass(frozen=True)
class SubsetView:
    """Offline vertex ``u`` with an ordered subset ``S`` of online vertices."""

    u: int
    S: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "S", tuple(sorted(int(v) for v in self.S)))

    def before(self, v: int) -> tuple[int, ...]:
        """Members of ``S`` that arrive strictly before ``v``."""
        return tuple(w for w in self.S if w < v)

    def p_tilde(self, inst: Instance) -> float:
        return p_tilde(inst, self.u, self.S)

    def p_bar(self, inst: Instance) -> float:
        return p_bar(inst, self.u, self.S)

    def reduced_weights(self, inst: Instance) -> dict[int, float]:
        """``1 - p~(S(v))`` for each ``v`` in ``S``."""
        out, q = {}, 1.0
        for v in self.S:
            out[v] = q
            q *= 1.0 - inst.prob[self.u, v]
        return out


# -- randomness ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RandomDraw:
    """One realization of model and algorithm randomness.

    ``coins[u, v]`` is the success indicator of edge ``(u, v)``; budgets are
    ``-log(1 - tau)`` whenever both are present.
    """

    ranks: Optional[np.ndarray] = None
    thresholds: Optional[np.ndarray] = None
    budgets: Optional[np.ndarray] = None
    coins: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("ranks", "thresholds", "budgets", "coins"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=bool if name == "coins" else float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.ranks is not None and len(np.unique(self.ranks)) != len(self.ranks):
            raise InstanceError("ranks must be pairwise distinct")

    def with_budget(self, u: int, value: float) -> "RandomDraw":
        b = np.array(self.budgets, dtype=float)
        b[u] = value
        return RandomDraw(self.ranks, None, b, self.coins)


def _distinct_uniform(rng: np.random.Generator, k: int) -> np.ndarray:
    r = rng.random(k)
    while len(np.unique(r)) < k:  # probability zero in practice
        r = rng.random(k)
    return r


def budgets_from_thresholds(tau) -> np.ndarray:
    return -np.log1p(-np.asarray(tau, dtype=float))


def sample_draw(inst: Instance, seed, mode: str = "all") -> RandomDraw:
    """Draw ranks, thresholds/budgets and coins.

    ``mode`` is one of ``"thresholds"``, ``"budgets"``, ``"coins"`` or
    ``"all"``.  Ranks are drawn in every mode.  The same seed gives the
    same ranks and thresholds regardless of mode.
    """
    if mode not in ("thresholds", "budgets", "coins", "all"):
        raise ValueError(f"unknown mode {mode!r}")
    rank_seed, tau_seed, coin_seed = spawn_seeds(seed, 3)
    ranks = _distinct_uniform(make_rng(rank_seed), inst.m)
    tau = make_rng(tau_seed).random(inst.m)
    coins = make_rng(coin_seed).random((inst.m, inst.n)) < inst.prob
    thresholds = budgets = None
    if mode in ("thresholds", "all"):
        thresholds = tau
    if mode in ("budgets", "all"):
        budgets = budgets_from_thresholds(tau)
    return RandomDraw(
        ranks=ranks,
        thresholds=thresholds,
        budgets=budgets,
        coins=coins if mode in ("coins", "all") else None,
    )


# -- serialization -----------------------------------------------------------


def instance_to_dict(inst: Instance) -> dict:
    return {
        "version": FORMAT_VERSION,
        "m": inst.m,
        "n": inst.n,
        "equal_p": inst.equal_p,
        "edges": [[u, v, p] for u, v, p in inst.edges],
    }


def instance_from_dict(doc: dict) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    keys = {"version", "m", "n", "equal_p", "edges"}
    missing = keys - doc.keys()
    if missing:
        raise InstanceError(f"missing field(s): {sorted(missing)}")
    extra = doc.keys() - keys
    if extra:
        raise InstanceError(f"unexpected field(s): {sorted(extra)}")
    if doc["version"] != FORMAT_VERSION:
        raise InstanceError(f"unsupported version {doc['version']!r}")
    try:
        edges = [(int(u), int(v), float(p)) for u, v, p in doc["edges"]]
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"malformed edge list: {exc}") from exc
    inst = build_instance(int(doc["m"]), int(doc["n"]), edges)
    if doc["equal_p"] is not None and inst.equal_p != float(doc["equal_p"]):
        raise InstanceError("equal_p does not match the edge probabilities")
    return inst


def write_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst)) + "\n")


def read_instance(path) -> Instance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(doc)
