"""
Block greedy on the tree
========================

How close does greedy search get to x* for the plain branching random walk,
and how does the block size M trade queries for quality?
"""

# %% Imports
import time

import numpy as np

from crem import FieldOracle, builtin_profile, thresholds
from crem.search import block_greedy, exhaustive_max, leaf_only_greedy, random_leaf_baseline

brw = builtin_profile("brw")
x_star = thresholds(brw).x_star

# %% small N: greedy with M = N is the exhaustive maximum
N = 14
for seed in range(3):
    g = block_greedy(FieldOracle(brw, N, seed), N)
    e = exhaustive_max(FieldOracle(brw, N, seed))
    print(seed, g.node == e.node, round(g.value / N, 4))

# %% quality against M at N = 2000
N = 2000
for M in (2, 4, 8, 12):
    t0 = time.perf_counter()
    vals = [block_greedy(FieldOracle(brw, N, s, track_unique=False), M).value / N for s in range(10)]
    print(f"M={M:2d}  mean X/N = {np.mean(vals):.4f} ({np.mean(vals) / x_star:.3f} x*)  "
          f"{time.perf_counter() - t0:.1f} s")

# %% random leaves are far worse for the same budget
budget = 1 + 2**8 * (N // 8)
r = random_leaf_baseline(FieldOracle(brw, N, 0), budget, seed=0)
print(f"random, {budget} leaves: X/N = {r.value / N:.4f}")

# %% the trajectory of a greedy leaf against the line x* t
o = FieldOracle(brw, 400, 1)
res = block_greedy(o, 8)
traj = o.trajectory(res.node) / 400
for k in range(0, 401, 50):
    print(f"t={k / 400:.3f}  X/N={traj[k]:.4f}  x* t={x_star * k / 400:.4f}")

# %% the leaf-only model: proxies from 2^ell leaf extensions
N, M, ell = 256, 8, 6
lo = leaf_only_greedy(FieldOracle(brw, N, 3, mode="leaf_only"), M, ell, instrument=True)
g = block_greedy(FieldOracle(brw, N, 3), M)
errs = np.concatenate(lo.diagnostics["proxy_errors"])
print(f"leaf-only {lo.value / N:.4f} vs full {g.value / N:.4f}; proxy error var {errs.var():.3f} "
      f"(at most about 1 + N/2^ell = {1 + N / 2**ell:.2f})")
