"""Split a noisy three-valued map whose reference point has two far clusters."""

import numpy as np

from qmaps.aq_space import QPoint
from qmaps.grid import QGridMap
from qmaps.splitting import split_map, split_qpoint

T = QPoint([[0.0, 0.0], [0.05, 0.0], [30.0, 10.0]])
print("Q-point split:", split_qpoint(T).multiplicities)

rng = np.random.default_rng(7)
u = QGridMap(T.points + 3.0 * rng.normal(size=(16, 16, 3, 2)), 1 / 15, [0.0, 0.0])
rep = split_map(u, T)
print(f"parts {rep.multiplicities}, sigma {rep.sigma:.3f}, s {rep.s:.3f}, gap {rep.support_gaps:.3f}")
print(f"energy {rep.energy_in:.2f} -> {rep.energy_out:.2f}, retraction acted on "
      f"{100 * rep.bad_set_fraction:.1f}% of nodes")
print(f"edge violations {rep.edge_violations}, contraction violations {rep.contraction_violations}")
