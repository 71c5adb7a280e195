"""Where does a window land when it crosses a mean threshold by chance?

Start from a uniform pmf on {-1, 0, 1}, push the mean up to c, and look at
the closest pmf in KL.  The exponential tilt is the answer; the lattice
search agrees with it up to its own resolution.
"""
import numpy as np

from ipt import Alphabet, Pmf, QFunction, i_project
from ipt.projection import grid_oracle_project

alphabet = Alphabet([-1, 0, 1])
f0 = Pmf.uniform(alphabet)
q = QFunction.mean(alphabet)

print(f"{'c':>5} {'f*(-1)':>8} {'f*(0)':>8} {'f*(1)':>8} {'KL':>9} {'grid KL':>9} {'tilt r':>8}")
for c in np.linspace(0.05, 0.65, 7):
    res = i_project(f0, q, c)
    grid = grid_oracle_project(f0, q, c, 0.005)
    p = res.f_star.probs
    print(f"{c:5.2f} {p[0]:8.5f} {p[1]:8.5f} {p[2]:8.5f} {res.kl_value:9.6f} {grid.kl_value:9.6f} "
          f"{res.multipliers.get('r', float('nan')):8.4f}")

# the lattice can only stand on the constraint when c lands on a grid point,
# so its KL sits slightly above the exact optimum
