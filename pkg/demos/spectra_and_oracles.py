# Lowest eigenvalues of the Laplacian and the clamped plate on the unit square,
# compared with closed-form values where they exist.

import numpy as np

from spectral_shift import discretize as ds
from spectral_shift.domains import box_domain

# The unit square as a one-chart box.  Its margin rho is 0.25, so the lattice
# spacing must not exceed rho / 4.

square = box_domain()
lap = ds.OperatorSpec.laplacian()

# Dirichlet eigenvalues are pi^2 (p^2 + q^2).  The stencil error shrinks by
# about four each time h is halved.

exact = ds.oracle_rectangle(1, 1, "dirichlet", 3)
for h in (1 / 16, 1 / 32, 1 / 64):
    lam = ds.spectrum(square, lap, "dirichlet", h, k=3).eigenvalues
    print(f"h = 1/{round(1 / h):3d}  Dirichlet {np.round(lam, 4)}  rel err {np.abs(lam - exact).max() / exact[0]:.2e}")

# With natural boundary conditions the constant function is an eigenvector,
# so the first eigenvalue is zero and the next two equal pi^2.

lam = ds.spectrum(square, lap, "neumann", 1 / 64, k=3).eigenvalues
print("Neumann", np.round(lam, 4), " pi^2 =", round(np.pi ** 2, 4))

# Clamped plate: no closed form on the square, but the first eigenvalue
# settles under refinement near 1294.9.

plate = ds.OperatorSpec.biharmonic()
for h in (1 / 24, 1 / 48):
    print(f"clamped plate h = 1/{round(1 / h)}: {ds.spectrum(square, plate, 'dirichlet', h, k=1)[0]:.3f}")
