# %% [markdown]
# # Checking the dual constraints empirically
#
# Estimate the expected dual variables by simulation and sweep every
# (offline vertex, neighbor subset) constraint.

# %%
import math

import numpy as np

from stochmatch import dualcheck, gainfn
from stochmatch.instance import build_instance, gen_random_equal

inst = gen_random_equal(4, 5, 0.6, 0.5, 11)
g = gainfn.RankingGain(gainfn.solve_ranking_constant().c)
est = dualcheck.estimate_duals(inst, "ranking", g, trials=50_000, seed=1)
rep = dualcheck.check_config_feasibility(inst, est, gamma=0.572)
w = rep.worst
print(f"{len(rep.rows)} constraints, violations {len(rep.violations)}, inconclusive {len(rep.inconclusive)}")
print(f"tightest: u={w.u} S={w.S} ratio {rep.worst_ratio:.4f} (+/- {rep.worst_ratio_margin:.4f})")

# %% [markdown]
# Same sweep against the stochastic benchmark with `g(x) = e^(x-1)`.

# %%
est = dualcheck.estimate_duals(inst, "ranking", gainfn.ExpGain(), trials=50_000, seed=2)
rep = dualcheck.check_reduced_feasibility(inst, est, gamma=1 - 1 / math.e)
print(f"reduced sweep: worst ratio {rep.worst_ratio:.4f}, passed {rep.passed}")

# %% [markdown]
# Fractional Stochastic Balance is deterministic once the budgets are fixed,
# so its conditional constraint can be integrated over `theta_u` directly.
# With one offline vertex and a stream of small probabilities the left side
# clears the closed-form bound.

# %%
gb = gainfn.BalanceEqualGain()
star = build_instance(1, 30, [(0, v, 0.05) for v in range(30)])
fc = dualcheck.check_full_stochastic_feasibility(star, 0, range(30), np.zeros(1), gb, gamma=0.61, nodes=16)
bound = gainfn.balance_equal_inequality_lhs(1.5, 1.5, gb)
print(f"alpha {fc.alpha:.4f} + beta {fc.beta:.4f} = {fc.lhs:.4f} >= bound {bound:.4f}, target {fc.target:.4f}")
