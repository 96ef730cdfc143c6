"""
Hardness above x*
=================

Steep vertices, the probability that a chain of spindles contains one, and
what the hitting time of greedy search looks like on either side of x*.
"""

# %% Imports
import numpy as np

from crem import builtin_profile, thresholds
from crem.hardness import SteepParams, spindle_chain, steep_chain_probability_mc, steep_threshold_params
from crem.field import NodeId
from crem.search import AlgorithmSpec, hitting_time_experiment

brw = builtin_profile("brw")
sq = builtin_profile("square")

# %% the size of a chain of spindles grows like K 2^(N/K)
for N, K in [(12, 3), (24, 4), (40, 4)]:
    print(N, K, spindle_chain(NodeId(N, 0), K, N).cardinality)

# %% how many blocks the covering argument needs above x*
for x in (1.12, 1.15, 1.2):
    p = steep_threshold_params(sq, x)
    print(f"x={x}: eps={p.epsilon:.4f} K={p.K} gamma_max={p.gamma_max:.5f}")

# %% geometric decay of the steep-chain probability
params = SteepParams(1.0, 4)
for N in (16, 20, 24, 28):
    r = steep_chain_probability_mc(brw, N, params, 2000, seed=N)
    print(f"N={N}: p={r.empirical_p:.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}] bound {r.bound:.4f}")

# %% hitting times on either side of x* (t^2, N = 40)
x_star = thresholds(sq).x_star
alg = AlgorithmSpec("block_greedy", M=8)
for x in (x_star - 0.15, x_star + 0.06):
    recs = hitting_time_experiment(sq, 40, x, alg, 2 * 10**5, range(10))
    taus = [r["tau"] for r in recs if r["hit"]]
    print(f"x = {x:.3f}: {len(taus)}/10 hit, median tau {np.median(taus) if taus else None}")
