# %% [markdown]
# # Ranking on a small stochastic instance
#
# Build an instance, run Ranking on one draw, look at how each match's
# expected gain is split between the two endpoints, then compute the
# critical ranks of one offline vertex.

# %%
import numpy as np

from stochmatch.gainfn import RankingGain, solve_ranking_constant
from stochmatch.instance import gen_random_equal, sample_draw
from stochmatch.simul import critical_ranks, run_ranking
from stochmatch.dualcheck import verify_alpha_invariant, verify_ranking_outcome

inst = gen_random_equal(m=4, n=6, density=0.6, p=0.5, seed=3)
print(f"{inst.m} offline, {inst.n} online, {inst.num_edges} edges, p = {inst.equal_p}")

# %% [markdown]
# One draw fixes the ranks of the offline vertices and a coin per edge.

# %%
const = solve_ranking_constant()
g = RankingGain(const.c)
draw = sample_draw(inst, seed=7)
trace, ledger = run_ranking(inst, draw, g)
print("ranks:", np.round(draw.ranks, 3))
for v, allocs in enumerate(trace.match):
    print(f"arrival {v}: {allocs or 'unmatched'}")
print(f"value {trace.value}, expected gain {trace.gain:.3f}")

# %% [markdown]
# The ledger splits every attempt's gain `p` into `p g(rank)` for the offline
# side and the rest for the arrival, so the two sides add up to the gain.

# %%
print("alpha:", np.round(ledger.alpha, 4))
print("beta: ", np.round(ledger.beta, 4))
print("conservation error:", ledger.conservation_error(trace))
print("alpha = load * g(rank):", verify_alpha_invariant(trace, ledger, g, "ranking", ranks=draw.ranks))

# %% [markdown]
# Critical ranks of `u`: rerun with `u` removed and record the rank each
# neighbor ends up with (1 if it stays unmatched).

# %%
u = 0
profile = critical_ranks(inst, u, draw)
for v, mu in zip(profile.neighbors, profile.mu):
    print(f"neighbor {v}: critical rank {mu:.3f}")
print("N_u(rank of u):", profile.N(float(draw.ranks[u])))

# %% [markdown]
# The matched set of `u` is a prefix of `N_u(rank of u)`.  That statement
# decides success by `u`'s threshold, so this check reruns Ranking in
# threshold mode; its matches can differ from the coin-driven run above.

# %%
res = verify_ranking_outcome(inst, draw, u)
print(f"matched to u: {res.actual}, predicted: {res.predicted}, holds: {res.holds}")
