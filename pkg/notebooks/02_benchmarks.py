# %% [markdown]
# # Benchmarks and exact algorithm values
#
# Compare the LP benchmarks with the optimal online policy and with the
# exact expected value of each algorithm on a tiny instance.

# %%
from stochmatch import bench
from stochmatch.instance import gen_random_equal, gen_upper_triangular

inst = gen_upper_triangular(3, 0.5)
report = bench.bench_report(inst)
for name, value, stderr, exact in report.rows():
    print(f"{name:>14}  {value:.6f}  {'exact' if exact else f'+/- {stderr:.4f}'}")

# %% [markdown]
# The reduced configuration LP upper-bounds the optimal online policy,
# and the matching LP upper-bounds the configuration LP.

# %%
for seed in range(5):
    inst = gen_random_equal(3, 5, 0.6, 0.4, seed)
    mlp = bench.matching_lp_value(inst)
    cfg = bench.configuration_lp_value(inst)
    red = bench.reduced_stochastic_config_lp_value(inst)
    sopt = bench.s_opt_value(inst)
    print(f"seed {seed}: matching {mlp:.4f} >= config {cfg:.4f};  reduced {red:.4f} >= s_opt {sopt:.4f}")

# %% [markdown]
# Monte Carlo estimates land within a few standard errors of the exact values.

# %%
inst = gen_random_equal(3, 4, 0.6, 0.5, 1)
for alg in bench.ALGORITHMS:
    exact = bench.exact_alg_value(inst, alg)
    mean, se = bench.mc_alg_value(inst, alg, trials=50_000, seed=2, jobs=1)
    print(f"{alg:>14}: exact {exact:.5f}  mc {mean:.5f} +/- {se:.5f}")
