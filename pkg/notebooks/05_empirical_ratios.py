# %% [markdown]
# # Empirical ratios on the upper-triangular family
#
# Offline vertex `u_i` neighbors arrivals `v_0..v_i`.  With small edge
# probabilities, Stochastic Balance stays close to the optimal online
# policy and Ranking stays close to the matching LP.

# %%
from stochmatch import bench
from stochmatch.instance import gen_upper_triangular

for k in (4, 8, 12):
    inst = gen_upper_triangular(k, 0.05)
    sopt = bench.s_opt_value(inst)
    mlp = bench.matching_lp_value(inst)
    bal, bal_se = bench.mc_alg_value(inst, "balance_equal", 10_000, seed=k, jobs=1)
    rnk, rnk_se = bench.mc_alg_value(inst, "ranking", 10_000, seed=k, jobs=1)
    print(f"k={k:>2}: balance/s_opt {bal / sopt:.3f} (+/- {bal_se / sopt:.3f}), "
          f"ranking/matching_lp {rnk / mlp:.3f} (+/- {rnk_se / mlp:.3f})")
