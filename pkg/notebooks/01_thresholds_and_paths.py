"""
Thresholds of a covariance profile
==================================

Three builtin profiles, their concave hulls, and the two optimal paths.
The algorithmic threshold x* integrates sqrt(a); the ground state x_s
integrates the hull density instead, so they differ exactly when A is
not concave.
"""

# %% Imports
from pathlib import Path

import numpy as np

from crem import builtin_profile, thresholds
from crem.covariance import make_profile, natural_speed_path, optimal_path, variational_check

out = Path("nb_out")
out.mkdir(exist_ok=True)

# %% threshold table
names = ["brw", "square", "concave_square", "two_slope(0.5)"]
print(f"{'profile':>16} {'x*':>9} {'x_s':>9} {'x_c':>9} {'x_G':>9}  regime")
for name in names:
    r = thresholds(builtin_profile(name))
    print(f"{name:>16} {r.x_star:9.6f} {r.x_s:9.6f} {r.x_c:9.6f} {r.x_G:9.6f}  {r.regime}")

# %% t^2 against the closed form sqrt(2 log 2) * 2 sqrt(2) / 3
sq = builtin_profile("square")
print(thresholds(sq).x_star, np.sqrt(2 * np.log(2)) * 2 * np.sqrt(2) / 3)

# %% a profile that leaves its hull and comes back
# the hull bridges the dip, so x_s uses the chord slope there
dip = make_profile([(0, 0), (0.3, 0.45), (0.5, 0.5), (0.7, 0.8), (1, 1)], name="dip")
r = thresholds(dip)
print(r.hull.breakpoints())
print(f"t_G = {r.t_G}, x_G = {r.x_G:.6f} <= x* = {r.x_star:.6f}")

# %% paths: z* follows the natural speed, z bends along the hull
for name in ("square", "concave_square"):
    p = builtin_profile(name)
    zs, z = natural_speed_path(p), optimal_path(p)
    t = np.linspace(0, 1, 11)
    print(name)
    print("  t  ", np.round(t, 2))
    print("  z* ", np.round(zs(t), 4))
    print("  z  ", np.round(z(t), 4))
    np.savetxt(out / f"{name}_paths.dat", np.c_[t, zs(t), z(t)], header="t zstar z")

# %% the admissible-path check behind x_s
rep = variational_check(sq, trial_count=200)
print(rep)
