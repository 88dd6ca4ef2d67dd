"""Density of the hedgehog x/|x| and of its discrete minimizer.

The scaled energy r^(2-N) E(B_r) of x/|x| in three dimensions is 8*pi at
every radius, so the density at the origin is 8*pi. The minimizer with the
same trace on a box should reproduce it and flag only cells at the origin.
"""

import numpy as np

from qmaps import MinimizeConfig, density, minimize
from qmaps.grid import sample_map
from qmaps.manifold import sphere
from qmaps.minimizer import classify_regularity
from qmaps.presets import boundary_problem, hedgehog

n = 32
exact = sample_map(hedgehog, (n + 1,) * 3, 2 / n, (-1,) * 3, sphere(3))
print(f"sampled x/|x|: Theta(0)/8pi = {density(exact, [0, 0, 0]).value / (8 * np.pi):.4f}")

u0, free = boundary_problem("hedgehog", (n + 3,) * 3, 2 / n)
res = minimize(u0, free, MinimizeConfig())
print(f"minimizer: {res.sweeps} sweeps, converged={res.converged}")
print(f"minimizer: Theta(0)/8pi = {density(res.u, [0, 0, 0]).value / (8 * np.pi):.4f}")

rep = classify_regularity(res.u, 4 * np.pi)
far = np.abs(rep.candidates).max() / res.u.h if rep.count else 0.0
print(f"candidates at eps0 = 4 pi: {rep.count}, farthest {far:.1f} h from the origin "
      f"(box dimension {rep.box_dimension})")
