import json
import math

import numpy as np
import pytest
from oracles import quad

from stochmatch import gainfn as G
from stochmatch.gainfn import (
    BalanceEqualGain,
    ExpGain,
    RankingGain,
    StepGain,
    constant_gain,
)

E = math.e


@pytest.fixture(scope="module")
def const():
    return G.solve_ranking_constant()


@pytest.fixture(scope="module")
def coarse_cert():
    return G.alternate_optimize(0.1, 4.0, 3, method="highs")


# -- Ranking, non-stochastic benchmark ------------------------------------------


def test_g_ranking_values():
    assert G.g_ranking(1.0, 1.161) == 1.0
    assert G.g_ranking(0.0, 1.161) == pytest.approx(1.161 / E)
    assert G.g_ranking(0.0, 1.161) == pytest.approx(0.4271, abs=1e-4)
    for c in (1.0, 1.161, 1.5):
        assert G.g_ranking(0.9, c) == pytest.approx(1 - 1 / E)
    with pytest.raises(ValueError):
        G.g_ranking(1.2, 1.161)
    with pytest.raises(ValueError):
        G.g_ranking(-0.1, 1.161)


def test_ranking_constant(const):
    assert const.c == pytest.approx(1.161, abs=1e-3)
    assert const.gamma >= 0.572
    assert const.gamma == pytest.approx(1 - const.c / E, abs=1e-15)
    assert const.mu_low == pytest.approx(0.513, abs=1e-3)
    # defining identity, checked with adaptive quadrature
    g = RankingGain(const.c)
    assert quad(g, 0, 1, points=[const.mu_low]) == pytest.approx(1 - g(0.0), abs=1e-10)
    assert G.g_ranking(const.mu_low - 1e-9, const.c) < 1 - 1 / E


def test_ranking_gain_integral_matches_quadrature(const):
    g = RankingGain(const.c)
    for a, b in [(0, 1), (0, 0.3), (0.2, 0.8), (0.6, 0.99)]:
        assert g.integral(a, b) == pytest.approx(quad(g, a, b, points=[const.mu_low]), abs=1e-12)
    xs = np.linspace(0, 1, 101)
    assert np.allclose(g.values(xs), [g(float(x)) for x in xs])
    g.check_monotone()


def test_stochastic_ranking_gain():
    assert G.g_ranking_stochastic(1.0) == 1.0
    assert G.g_ranking_stochastic(0.0) == pytest.approx(1 / E)
    assert G.g_ranking_stochastic(0.3) < G.g_ranking_stochastic(0.7)
    with pytest.raises(ValueError):
        G.g_ranking_stochastic(1.5)
    g = ExpGain()
    assert g.integral(0.2, 0.7) == pytest.approx(quad(g, 0.2, 0.7), abs=1e-13)


@pytest.mark.parametrize("mu", [0.0, 0.25, 0.5, 0.8, 1.0])
def test_star_constant(mu):
    assert G.star_constant(mu) == pytest.approx(1 - 1 / E, abs=1e-12)


def test_final_inequality(const):
    c = const.c
    assert G.ranking_final_inequality(0.0, 1.0, c) == pytest.approx(1 - 1 / E)
    val, _, _ = G.ranking_final_inequality_min(c, 200)
    assert val >= 0.572
    assert G.ranking_final_inequality(0.0, 1 - 1e-12, c) >= 1 - c / E - 1e-6
    with pytest.raises(ValueError):
        G.ranking_final_inequality(0.5, 0.5, c)


# -- f and the brute-force minimum --------------------------------------------


def test_f_discrete_values(const):
    assert G.f_discrete(0.0, [1.0], 1.0) == pytest.approx(1.0)
    # all critical ranks at 1: regression values
    pinned = {2: 0.8032653298563167, 3: 0.7433161432021269, 4: 0.7144244988812634, 5: 0.6974382798649739}
    for n, want in pinned.items():
        assert G.f_discrete(0.0, [1.0] * n, 1.0 / n) == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValueError):
        G.f_discrete(0.0, [0.6, 0.4], 0.5)
    with pytest.raises(ValueError):
        G.f_discrete(0.0, [0.6, 0.7], 0.4)


def test_f_discrete_mu0_derivative(const):
    # d f / d mu0 = g(mu0) - p sum_i e^{-p(i-1)} g(mu_i); the sign can go either way
    g = RankingGain(const.c)
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        p = 1.0 / n
        mu = np.sort(rng.uniform(0.3, 0.99, size=n))
        mu0 = float(rng.uniform(0.0, mu[0] - 0.01))
        h = 1e-6
        fd = (G.f_discrete(mu0 + h, mu, p, g) - G.f_discrete(mu0 - h, mu, p, g)) / (2 * h)
        want = g(mu0) - p * np.dot(np.exp(-p * np.arange(n)), g.values(mu))
        assert fd == pytest.approx(want, abs=1e-6)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_brute_min(n, const):
    res = G.brute_min_f(n)
    assert res.all_equal and res.all_equal_at_mu0
    assert res.value == pytest.approx(const.gamma, abs=1e-12)
    assert res.evaluated == math.comb(21 + n - 1, n)
    shifted = G.brute_min_f(n, mu0=0.2)
    assert shifted.all_equal and min(shifted.argmin) >= 0.2 - 1e-12
    assert shifted.value >= 0.572


def test_gradient_bound_is_finite():
    L = G.f_gradient_bound(2, samples=200)
    assert 0 < L < 10


# -- ranking_bound_eval -------------------------------------------------------


def test_ranking_bound_no_neighbors(const):
    assert G.ranking_bound_eval([], [], 0.5, RankingGain(const.c)) == 0.0


def test_ranking_bound_small_p(const):
    g = RankingGain(const.c)
    p = 1e-4
    with_v = G.ranking_bound_eval([1.0], [True], p, g)
    without = G.ranking_bound_eval([1.0], [False], p, g)
    # the vertex's own share scaled by 1/p tends to 1 - g(1) + int (g(1) - g)
    assert (with_v - without) / p == pytest.approx(1 - g(1.0) + 1 - g.integral(0, 1), abs=1e-3)
    assert without / p == pytest.approx(g.integral(0, 1), abs=1e-3)


def test_ranking_bound_matches_f_for_many_vertices(const):
    g = RankingGain(const.c)
    n = 200
    mu = [const.mu_low] * n
    lhs = G.ranking_bound_eval(mu, [True] * n, 1.0 / n, g)
    assert lhs == pytest.approx(G.f_discrete(0.0, mu, 1.0 / n, g), abs=1e-3)
    assert lhs == pytest.approx(const.gamma, abs=1e-12)


def test_ranking_bound_piecewise_oracle(const):
    # direct midpoint-rule evaluation of the same three terms
    g = RankingGain(const.c)
    mu = np.array([0.9, 0.2, 0.6, 0.6])
    in_S = np.array([True, False, True, True])
    p = 0.3
    rho = (np.arange(200_000) + 0.5) / 200_000
    gr = g.values(rho)
    count = (mu[None, :] >= rho[:, None]).sum(1)
    want = np.mean((1 - np.exp(-p * count)) * gr)
    for k in np.flatnonzero(in_S):
        before = (mu[None, :k] >= rho[:, None]).sum(1)
        gm = g(float(mu[k]))
        want += p * (1 - gm)
        want += np.mean(np.where(rho < mu[k], np.exp(-p * before) * (1 - np.exp(-p)) * (gm - gr), 0.0))
    assert G.ranking_bound_eval(mu, in_S, p, g) == pytest.approx(want, abs=1e-5)
    with pytest.raises(ValueError):
        G.ranking_bound_eval([0.5, 1.2], [True, True], p, g)


# -- Stochastic Balance, equal probabilities ------------------------------------


def test_f_balance_equal():
    assert G.f_balance_equal(1.0) == pytest.approx(2 * math.log(2) - 1, abs=1e-15)
    assert G.f_balance_equal(0.0) == 1.0
    assert G.f_balance_equal(0.25) == pytest.approx(0.7261, abs=1e-4)
    assert G.f_balance_equal(1e-12) == pytest.approx(1.0, abs=1e-5)
    assert G.g_balance_equal(0.0) == G.f_balance_equal(1.0)
    assert G.g_balance_equal(2.0) == pytest.approx(G.f_balance_equal(math.exp(-2.0)))
    BalanceEqualGain().check_monotone()


def test_balance_equal_gamma():
    gam = G.balance_equal_gamma()
    assert gam == pytest.approx(0.6137056388801094, abs=1e-15)
    assert gam == pytest.approx(1 - G.f_balance_equal(1.0), abs=1e-12)
    assert gam > 0.596


def test_balance_equal_ode():
    assert G.verify_balance_equal_ode(1000) <= 1e-6
    assert G.verify_balance_equal_ode(2) <= 1e-6
    lam = 1.0
    assert abs((2 * math.sqrt(lam) - lam) * (1 - G.f_balance_equal(lam)) - G.balance_equal_gamma()) <= 1e-12
    with pytest.raises(ValueError):
        G.verify_balance_equal_ode(1)


@pytest.mark.parametrize("a, b", [(0, 0.5), (0, 3), (1.2, 4.5), (2, 30)])
def test_balance_equal_closed_form_integrals(a, b):
    g = BalanceEqualGain()
    assert g.integral(a, b) == pytest.approx(quad(g, a, b), abs=1e-11)
    assert g.exp_integral(a, b) == pytest.approx(quad(lambda z: math.exp(-z) * g(z), a, b), abs=1e-12)
    xs = np.linspace(a, b, 17)
    assert np.allclose(g.values(xs), [g(float(x)) for x in xs], atol=1e-14)


def test_balance_equal_inequality_boundaries():
    g = BalanceEqualGain()
    for q in (0.0, 0.4, 2.0):
        assert G.balance_equal_inequality_lhs(0.0, q, g) == pytest.approx((1 - math.exp(-q)) * (1 - g(0.0)), abs=1e-12)
    for ell in (0.5, 2.0):
        assert G.balance_equal_inequality_lhs(ell, 0.0, g) == pytest.approx(
            quad(lambda t: math.exp(-t) * g(t), 0, ell), abs=1e-12
        )
    for ell in (0.0, 0.3, 1.0, 2.5, 6.0):
        want = g.exp_integral(0, ell) + (2 * math.exp(-ell / 2) - math.exp(-ell)) * (1 - g(ell))
        assert G.balance_equal_inequality_lhs(ell, math.inf, g) == pytest.approx(want, abs=1e-8)
    with pytest.raises(ValueError):
        G.balance_equal_inequality_lhs(-1.0, 1.0, g)


def test_balance_equal_inequality_meets_gamma():
    g = BalanceEqualGain()
    gam = G.balance_equal_gamma()
    for ell in np.linspace(0, 6, 13):
        assert G.balance_equal_inequality_lhs(float(ell), math.inf, g) >= gam - 1e-9


# -- Stochastic Balance, general probabilities -----------------------------------


def test_step_gain_integrals():
    g = StepGain([0.0, 0.5, 1.0, 2.5], [0.2, 0.4, 0.4, 0.9])
    for a, b in [(0, 3), (0.3, 0.7), (1.1, 2.6), (0, math.inf)]:
        if math.isinf(b):
            want = quad(lambda z: math.exp(-z) * g(z), 0, 40, points=g.grid) + 0.9 * math.exp(-40)
            assert g.exp_integral(a, b) == pytest.approx(want, abs=1e-12)
            continue
        assert g.integral(a, b) == pytest.approx(quad(g, a, b, points=g.grid), abs=1e-12)
        assert g.exp_integral(a, b) == pytest.approx(quad(lambda z: math.exp(-z) * g(z), a, b, points=g.grid), abs=1e-12)
    assert g(0.5) == 0.4 and g(0.49) == 0.2 and g(100.0) == 0.9
    assert json.loads(json.dumps(g.to_dict()))["values"] == [0.2, 0.4, 0.4, 0.9]
    with pytest.raises(ValueError):
        StepGain([0.1, 0.5], [0.2, 0.3])
    with pytest.raises(ValueError):
        StepGain([0.0, 0.0], [0.2, 0.3])


def test_balance_general_lhs_boundary():
    gam = 0.6
    g = StepGain([0.0, 1.0], [1 - gam, 0.9])
    assert G.balance_general_lhs(0.0, g, 0.0) == pytest.approx(gam)
    with pytest.raises(ValueError):
        G.balance_general_lhs(1.0, g, 1.5)
    with pytest.raises(ValueError):
        G.balance_general_lhs(1.0, g, -0.1)


@pytest.mark.parametrize("kappa, ell", [(0.3, 0.5), (0.6, 2.0), (1.0, 1.0), (0.0, 3.0)])
def test_balance_general_lhs_constant(kappa, ell):
    want = (1 - math.exp(-ell)) * kappa - (ell - 1 + math.exp(-ell)) * (1 - kappa) + (1 - kappa)
    assert G.balance_general_lhs(ell, constant_gain(kappa), 0.0) == pytest.approx(want, abs=1e-13)


def _riemann_lhs(ell, g, h, step=1e-5):
    def mid(a, b):
        k = max(int(round((b - a) / step)), 1)
        z = a + (np.arange(k) + 0.5) * (b - a) / k
        return z, (b - a) / k

    z, dz = mid(0.0, ell)
    first = np.sum(np.exp(-z) * g.values(z)) * dz
    z, dz = mid(h, ell)
    second = np.sum((math.exp(-h) - np.exp(-z)) * (1 - g.values(z))) * dz if ell > h else 0.0
    return first - second + (1 + h) * math.exp(-h) * (1 - g(ell))


def test_balance_general_lhs_riemann():
    rng = np.random.default_rng(11)
    grid = np.arange(0, 3.0, 0.25)
    vals = np.sort(rng.uniform(0.3, 1.0, size=len(grid)))
    g = StepGain(grid, vals)
    for ell, h in [(0.7, 0.0), (1.3, 0.4), (2.9, 1.1), (4.0, 2.0), (2.5, 2.5)]:
        assert G.balance_general_lhs(ell, g, h) == pytest.approx(_riemann_lhs(ell, g, h), abs=1e-6)


def test_lhs_affine_matches_direct():
    grid = np.arange(0, 2.01, 0.5)
    points = np.array([0.0, 0.3, 1.0, 1.75, 2.0, 3.5])
    h = np.array([0.0, 0.1, 0.5, 0.6, 1.0, 2.0])
    vals = np.array([0.3, 0.5, 0.55, 0.8, 0.95])
    A, b = G._lhs_affine(grid, points, h)
    g = StepGain(grid, vals)
    direct = [G.balance_general_lhs(float(l), g, float(hv)) for l, hv in zip(points, h)]
    assert A @ vals + b == pytest.approx(direct, abs=1e-13)


def test_update_h():
    pts = np.array([0.0, 0.4, 1.0, 2.5, 7.0])
    h = G.update_h(constant_gain(0.5), pts)
    assert h == pytest.approx(pts / 2, abs=1e-10)
    g = StepGain([0.0, 1.0], [0.3, 0.9])
    h = G.update_h(g, pts)
    assert h[0] == 0.0
    assert (h >= 0).all() and (h <= pts).all()
    assert np.all(G.h_defining_residual(g, pts, h) >= -1e-12)
    # slightly smaller h violates the condition wherever h > 0
    pos = h > 0
    assert np.all(G.h_defining_residual(g, pts[pos], h[pos] - 1e-8) < 0)
    assert G.update_h(constant_gain(1.0), pts) == pytest.approx(np.zeros(len(pts)))


def test_evaluation_points():
    pts = G.evaluation_points(0.5, 2.0, tail_points=4, tail_span=8.0)
    assert pts.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0]
    with pytest.raises(ValueError):
        G.evaluation_points(0.3, 1.0)


def test_optimize_with_zero_h():
    pts = G.evaluation_points(0.1, 4.0)
    g, gam = G.optimize_g_given_h(np.zeros_like(pts), 0.1, 4.0)
    # measured value of the first round; the second and third rounds are what certify 0.61
    assert gam == pytest.approx(0.48745, abs=1e-4)
    assert g(0.0) <= 1 - gam + 1e-9
    assert np.all(np.diff(g.vals) >= 0) and g.vals.min() >= 0 and g.vals.max() <= 1
    with pytest.raises(ValueError):
        G.optimize_g_given_h(np.zeros(3), 0.1, 4.0)
    with pytest.raises(ValueError):
        G.optimize_g_given_h(pts + 1.0, 0.1, 4.0)


def test_optimize_backends_agree():
    pts = G.evaluation_points(0.25, 3.0, tail_points=5)
    h = G.update_h(StepGain([0.0, 1.0], [0.4, 0.8]), pts)
    _, a = G.optimize_g_given_h(h, 0.25, 3.0, 5, method="simplex")
    _, b = G.optimize_g_given_h(h, 0.25, 3.0, 5, method="highs")
    assert a == pytest.approx(b, abs=1e-8)


def test_alternate_optimize(coarse_cert):
    one = G.alternate_optimize(0.1, 4.0, 1, method="highs")
    assert one.gamma <= coarse_cert.gamma
    assert coarse_cert.history == sorted(coarse_cert.history)
    assert coarse_cert.gamma > 0.6
    assert coarse_cert.slacks().min() >= -1e-8
    assert np.all((coarse_cert.h >= 0) & (coarse_cert.h <= coarse_cert.points + 1e-12))
    again = G.alternate_optimize(0.1, 4.0, 3, method="highs")
    assert again.gamma == coarse_cert.gamma
    with pytest.raises(ValueError):
        G.alternate_optimize(0.1, 4.0, 0)


def test_certificate_round_trip(coarse_cert, tmp_path):
    path = tmp_path / "cert.json"
    coarse_cert.write_json(path)
    back = G.read_certificate(path)
    assert back.gamma == coarse_cert.gamma
    assert np.array_equal(back.g.vals, coarse_cert.g.vals)
    assert G.verify_certificate(back) >= -1e-8
    csv_path = tmp_path / "slack.csv"
    coarse_cert.write_slack_csv(csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "ell,h,g,lhs,slack" and len(lines) == len(coarse_cert.points) + 1


def test_tampered_certificate_is_caught(coarse_cert):
    doc = coarse_cert.to_dict()
    doc["gamma"] = coarse_cert.gamma + 0.01
    assert G.verify_certificate(G.certificate_from_dict(doc)) < 0
    doc = coarse_cert.to_dict()
    doc["values"][3] = 0.0
    with pytest.raises(ValueError):
        G.verify_certificate(G.certificate_from_dict(doc))
    with pytest.raises(ValueError):
        G.certificate_from_dict({"grid": [0.0]})
