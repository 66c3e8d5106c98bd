# Atlas distance and the Hausdorff-Pompeiu deviations between boundaries.

import numpy as np

from spectral_shift.domains import random_side_deviation, square_domain
from spectral_shift.experiments import example_hoelder_shift, example_wedge
from spectral_shift.metrics import atlas_distance, chain_check

# Two random bumps on the sides of the nine-chart square.  The lower deviation
# never exceeds the upper one, which never exceeds the atlas distance.

rng = np.random.default_rng(0x5EED)
a = square_domain(side_deviation=random_side_deviation(rng, 0.05))
b = square_domain(side_deviation=random_side_deviation(rng, 0.05))
c = chain_check(a, b)
print(f"d_HP {c.d_hp_lower:.5f} <= d^HP {c.d_hp:.5f} <= d_A {c.d_atlas:.5f}  (slack {c.slack:.1e}, ok: {c.passed})")

# Shifting a wedge of slope c sideways separates the two one-sided
# boundary deviations by a factor sqrt(c^2 + 1).

for slope in (2.0, 3.0):
    r = example_wedge(slope, 0.1)
    print(f"wedge slope {slope}: d^HP / d_HP = {r['ratio']:.6f}, sqrt(c^2 + 1) = {np.sqrt(slope ** 2 + 1):.6f}")

# A square-root profile shifted by eps moves its boundary by at most eps,
# while the vertical gap at the tip is sqrt(eps).

r = example_hoelder_shift(0.01)
print(f"root profile, eps = 0.01: d_A = {r['d_A']:.4f}, d^HP = {r['d_hp']:.4f}")

# atlas_distance also reports where the sup is attained.

print(atlas_distance(a, b))
