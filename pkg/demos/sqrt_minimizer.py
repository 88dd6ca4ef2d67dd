"""Minimize a two-valued map with the square-root trace and fit its Holder exponent.

The energy on the unit disk should approach 2*pi and the exponent 1/2.
"""

import argparse
import time

import numpy as np

from qmaps import MinimizeConfig, ball_energy_profile, dirichlet_energy, holder_fit, minimize
from qmaps.grid import Ball
from qmaps.minimizer import classify_regularity
from qmaps.presets import boundary_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128, help="cells per side of [-1, 1]^2")
    args = ap.parse_args()

    n = args.n
    u0, free = boundary_problem("sqrt2", (n + 1, n + 1), 2 / n)
    t0 = time.perf_counter()
    res = minimize(u0, free, MinimizeConfig())
    print(f"{res.sweeps} sweeps in {time.perf_counter() - t0:.1f} s, converged={res.converged}")

    E = dirichlet_energy(res.u, Ball([0, 0], 1.0))
    print(f"energy on the unit disk {E:.5f}  (2 pi = {2 * np.pi:.5f}, ratio {E / (2 * np.pi):.4f})")

    prof = ball_energy_profile(res.u, [0, 0], np.linspace(0.05, 0.5, 10))
    fit = holder_fit(prof)
    print(f"Holder exponent {fit.alpha:.3f}  (fit quality {fit.fit_quality:.5f})")
    for r, e in zip(prof.radii, prof.raw_energy):
        print(f"  r={r:.3f}  E(B_r)={e:.5f}  E/r={e / r:.4f}")

    rep = classify_regularity(res.u, 1.0)
    print(f"singular candidates at eps0=1: {rep.count}")


if __name__ == "__main__":
    main()
