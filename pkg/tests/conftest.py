import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stochmatch import gainfn  # noqa: E402
from stochmatch.instance import build_instance, gen_random, gen_random_equal, gen_upper_triangular  # noqa: E402


@pytest.fixture(scope="session")
def rank_const():
    return gainfn.solve_ranking_constant()


@pytest.fixture(scope="session")
def rank_gain(rank_const):
    return gainfn.RankingGain(rank_const.c)


def tiny_suite():
    """Small instances shared by the oracle comparisons (m <= 4, n <= 6)."""
    out = [
        ("single_edge_p1", build_instance(1, 1, [(0, 0, 1.0)])),
        ("single_edge_p06", build_instance(1, 1, [(0, 0, 0.6)])),
        ("one_offline_two_online", build_instance(1, 2, [(0, 0, 0.5), (0, 1, 0.5)])),
        ("upper_tri_2_p1", gen_upper_triangular(2, 1.0)),
        ("upper_tri_3_p05", gen_upper_triangular(3, 0.5)),
        ("empty", build_instance(2, 2, [])),
    ]
    for s in range(6):
        out.append((f"random_equal_{s}", gen_random_equal(3, 4, 0.5, [0.3, 0.5, 1.0][s % 3], s)))
    for s in range(3):
        out.append((f"random_general_{s}", gen_random(3, 3, 0.6, 0.2, 0.9, 100 + s)))
    return [(name, inst) for name, inst in out if inst.num_edges <= 10]


@pytest.fixture(scope="session")
def suite():
    return tiny_suite()
