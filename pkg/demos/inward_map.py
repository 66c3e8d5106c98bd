# The inward map T_eps built from a partition of unity on the nine-chart square.

import numpy as np

from spectral_shift.domains import nested_square_pair, square_atlas
from spectral_shift.metrics import atlas_distance
from spectral_shift.perturbation import TransformTEps, inclusion_check, t_eps_certify

atlas = square_atlas()
t = TransformTEps.for_atlas(atlas)
cert = t_eps_certify(t)
print(f"charts s = {t.partition.s}, A1 = {cert.A1:.3f}, A2 = {cert.A2:.3f}, E1 = {cert.E1:.3e}")

# The partition sums to one on the covered region.

pu = t.partition
X = pu.sample_support(5000)
X = X[pu.covered(X)]
print("max |sum psi - 1| =", np.abs(pu(X).sum(axis=0) - 1).max())

# For a nested pair whose atlas distance is below eps / s, T_eps moves the
# outer domain inside the inner one.

eps = 0.9 * cert.E1
rng = np.random.default_rng(1)
outer, inner = nested_square_pair(rng, 0.04, 0.9 * eps / t.partition.s)
r = inclusion_check(outer, inner, eps, t, n_samples=4000)
print(f"d_A = {atlas_distance(outer, inner).value:.2e} < eps / s = {eps / t.partition.s:.2e}; violations: {r.violations}")

# The Jacobian determinant stays within A2 eps of one.

det = t.jacobian_det(X, eps)
print(f"max |det - 1| / (A2 eps) = {np.abs(det - 1).max() / (cert.A2 * eps):.3f}")
