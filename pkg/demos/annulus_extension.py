"""Glue a two-valued sphere map to a slightly rotated copy across a thin annulus.

Prints the measured energy constant and the sup distance as the annulus
width 1/L and the sub-division l vary.
"""

import numpy as np

from qmaps.luckhaus import build_annulus_extension
from qmaps.presets import sphere_branch

a = 0.005
R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1.0]])


def rotated(y):
    return sphere_branch(y @ R.T)


print(" L  l     eps      energy     C_meas   sup^2      trace")
for L in (4, 8):
    for l in (1, 2, 4):
        rep = build_annulus_extension(sphere_branch, rotated, 3, L, l, px=2, seed=1, keep_map=False)
        print(f"{L:2d} {l:2d}  {rep.epsilon:.5f}  {rep.measured_energy:9.4f}  {rep.C_meas:.4f}"
              f"  {rep.measured_sup_dist ** 2:.3e}  {rep.trace_error}")
