import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from spectral_shift.discretize import (
    EllipticityError,
    OperatorSpec,
    ResolutionError,
    assemble,
    clamped_interval_matrices,
    clamped_roots,
    dirichlet_interval_matrices,
    dirichlet_interval_oracle,
    dof_points,
    max_rayleigh_on_subspace,
    oracle_clamped_interval,
    oracle_rectangle,
    rasterize,
    rayleigh,
    rayleigh_quotient,
    solve_lowest,
    spectrum,
)
from spectral_shift.domains import box_domain, box_profile, cusp_valley_domain, nested_square_pair, wedge_domain
from spectral_shift.experiments import inscribed_ball
from spectral_shift.geometry import classify

LAP = OperatorSpec.laplacian()


@pytest.fixture(scope="module")
def box_grid():
    return rasterize(box_domain(), 1 / 32)


@pytest.fixture(scope="module")
def box_dirichlet(box_grid):
    K, M = assemble(box_grid, LAP, "dirichlet")
    return K, M, solve_lowest(K, M, 3)


# ---------------------------------------------------------------------------
# OperatorSpec
# ---------------------------------------------------------------------------


def test_laplacian_spec():
    assert LAP.m == 1 and LAP.m_hat == 2
    LAP.check(np.random.default_rng(0).uniform(size=(20, 2)))


def test_plate_family_constants():
    op = OperatorSpec.biharmonic(0.3)
    assert op.theta == pytest.approx(0.7)
    assert op.m_hat == 3
    op.check(np.random.default_rng(0).uniform(size=(20, 2)))
    with pytest.raises(ValueError):
        OperatorSpec.biharmonic(1.0)


def test_ellipticity_failure_has_witness():
    op = OperatorSpec.from_matrix(np.diag([1.0, 0.5]), theta=1.0)
    with pytest.raises(EllipticityError) as info:
        op.check(np.zeros((3, 2)))
    assert info.value.x is not None
    assert abs(info.value.xi[1]) == pytest.approx(1.0)


def test_asymmetric_coefficients_are_refused():
    op = OperatorSpec(1, {((1, 0), (1, 0)): 1.0, ((0, 1), (0, 1)): 1.0,
                          ((1, 0), (0, 1)): 0.1, ((0, 1), (1, 0)): -0.1})
    with pytest.raises(EllipticityError, match="symmetric"):
        op.check(np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# rasterize
# ---------------------------------------------------------------------------


def test_rasterize_unit_square_coarse():
    g = rasterize(box_domain(), 0.25, check_spacing=False)
    assert g.n_interior == 9
    expected = {(x, y) for x in (0.25, 0.5, 0.75) for y in (0.25, 0.5, 0.75)}
    assert {tuple(p) for p in g.interior_points()} == expected


def test_rasterize_spacing_precondition():
    with pytest.raises(ResolutionError):
        rasterize(box_domain(), 0.25)


def test_rasterize_interior_nodes_are_interior(box_grid):
    assert np.all(classify(box_domain(), box_grid.interior_points()) == 1)
    assert box_grid.components == 1


def test_rasterize_shared_lattice():
    h = 1 / 64
    a, b = rasterize(box_domain(), h), rasterize(box_domain(width=0.5), h)
    # node coordinates are integer multiples of h in both
    for g in (a, b):
        k = g.interior_points() / h
        assert np.allclose(k, np.round(k), atol=1e-9)


def test_wedge_is_one_component():
    c = 2.0
    g = rasterize(wedge_domain(c), c / 64)
    assert g.components == 1


@given(st.integers(16, 96))
def test_cusp_nodes_stay_below_profile(n):
    d = cusp_valley_domain()
    g = rasterize(d, 1 / n)
    P = g.interior_points()
    assert np.all(P[:, 1] < d.profiles[0](P[:, 0]))


# ---------------------------------------------------------------------------
# assemble
# ---------------------------------------------------------------------------


def test_dirichlet_stencil_diagonal_and_row_sums(box_grid):
    K, M = assemble(box_grid, LAP, "dirichlet")
    h = box_grid.h
    assert np.allclose(K.diagonal() / M.diagonal(), 4 / h ** 2)
    P = box_grid.interior_points()
    deep = np.all((P > 1.5 * h) & (P < 1 - 1.5 * h), axis=1)
    rows = np.asarray(K.sum(axis=1)).ravel()
    assert deep.any()
    assert np.max(np.abs(rows[deep])) <= 1e-12 * np.max(np.abs(K.diagonal()))
    assert abs(K - K.T).max() == 0


def test_neumann_constants_in_kernel(box_grid):
    K, M = assemble(box_grid, LAP, "neumann")
    u = np.ones(len(dof_points(box_grid, "neumann")))
    assert np.max(np.abs(K @ u)) <= 1e-12 * abs(K).max()
    assert np.all(np.linalg.eigvalsh(M.toarray()) > 0)


def test_neumann_unit_square_dof_count(box_grid):
    assert len(dof_points(box_grid, "neumann")) == 33 * 33


@pytest.mark.parametrize("nu", [None, 0.0, 0.3, 0.7])
def test_plate_neumann_kills_affine_fields(box_grid, nu):
    a = assemble(box_grid, OperatorSpec.biharmonic(nu), "neumann")
    assert not a.validated
    P = dof_points(box_grid, "neumann")
    u = 1 + 2 * P[:, 0] - 3 * P[:, 1]
    assert np.max(np.abs(a.K @ u)) <= 1e-12 * abs(a.K).max()


def test_plate_dirichlet_is_validated(box_grid):
    a = assemble(box_grid, OperatorSpec.biharmonic(), "dirichlet")
    assert a.validated
    assert a.K.shape == (box_grid.n_interior,) * 2


def test_variable_coefficients_keep_symmetry(box_grid):
    op = OperatorSpec.from_matrix(lambda X: np.einsum("n,ij->nij", 1 + X[:, 0] ** 2, np.eye(2)), theta=1.0)
    for bc in ("dirichlet", "neumann"):
        K, _ = assemble(box_grid, op, bc)
        assert abs(K - K.T).max() <= 1e-12 * abs(K).max()


def test_assemble_refuses_non_elliptic(box_grid):
    op = OperatorSpec.from_matrix(np.diag([1.0, -1.0]), theta=0.5)
    with pytest.raises(EllipticityError):
        assemble(box_grid, op, "dirichlet")


# ---------------------------------------------------------------------------
# solve_lowest
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [5, 50, 600])
def test_interval_stencil_eigenvalues(n):
    K, M = dirichlet_interval_matrices(n)
    s = solve_lowest(K, M, 4)
    # closed form of the stencil, written out independently here
    h = 1 / (n + 1)
    j = np.arange(1, 5)
    assert np.allclose(s.eigenvalues, (2 / h ** 2) * (1 - np.cos(j * np.pi / (n + 1))), rtol=1e-10)
    assert np.allclose(dirichlet_interval_oracle(n)[:4], s.eigenvalues, rtol=1e-10)


def test_one_by_one_problem():
    s = solve_lowest(sp.csr_matrix([[3.0]]), sp.identity(1), 1)
    assert s.eigenvalues.tolist() == [3.0]


def test_neumann_lowest_is_zero_with_constant_vector(box_grid):
    K, M = assemble(box_grid, LAP, "neumann")
    s = solve_lowest(K, M, 2)
    assert abs(s[0]) <= 1e-8
    v = s.vectors[:, 0]
    assert np.ptp(v / v[0]) <= 1e-6


def test_solver_is_deterministic(box_dirichlet):
    K, M, s = box_dirichlet
    again = solve_lowest(K, M, 3)
    assert np.array_equal(s.eigenvalues, again.eigenvalues)


def test_solver_contract(box_dirichlet):
    _, _, s = box_dirichlet
    assert np.all(s.residuals <= 1e-8)
    assert np.all(np.diff(s.eigenvalues) >= 0)


def test_solver_rejects_non_positive_k(box_dirichlet):
    K, M, _ = box_dirichlet
    with pytest.raises(ValueError):
        solve_lowest(K, M, 0)


# ---------------------------------------------------------------------------
# rayleigh
# ---------------------------------------------------------------------------


def test_rayleigh_of_eigenvector(box_dirichlet):
    K, M, s = box_dirichlet
    for n in range(3):
        assert rayleigh_quotient(K, M, s.vectors[:, n]) == pytest.approx(s[n], abs=1e-8)


def test_rayleigh_of_constant_neumann(box_grid):
    u = np.ones(len(dof_points(box_grid, "neumann")))
    assert abs(rayleigh(box_grid, LAP, "neumann", u)) <= 1e-12


def test_rayleigh_rejects_zero(box_dirichlet):
    K, M, _ = box_dirichlet
    with pytest.raises(ValueError):
        rayleigh_quotient(K, M, np.zeros(K.shape[0]))


def test_rayleigh_noisy_eigenvector(box_dirichlet):
    K, M, s = box_dirichlet
    u = s.vectors[:, 0]
    e = np.random.default_rng(1).standard_normal(len(u))
    e *= 0.01 * np.linalg.norm(u) / np.linalg.norm(e)
    r = rayleigh_quotient(K, M, u + e)
    assert r >= s[0]
    assert r <= 1.03 * s[0]


@given(st.integers(1, 3), st.integers(0, 10_000))
def test_discrete_min_max(n, seed):
    K, M = dirichlet_interval_matrices(40)
    lam = dirichlet_interval_oracle(40)
    V = np.random.default_rng(seed).standard_normal((40, n))
    assert max_rayleigh_on_subspace(K, M, V) >= lam[n - 1] * (1 - 1e-12)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def test_oracle_unit_square_dirichlet():
    lam = oracle_rectangle(1, 1, "dirichlet", 3)
    assert lam[0] == pytest.approx(2 * np.pi ** 2) and lam[0] == pytest.approx(19.7392, abs=1e-4)
    assert lam[1] == lam[2] == pytest.approx(5 * np.pi ** 2)


def test_oracle_unit_square_neumann():
    lam = oracle_rectangle(1, 1, "neumann", 3)
    assert lam[0] == 0
    assert lam[1] == lam[2] == pytest.approx(np.pi ** 2)


@given(st.floats(0.1, 10))
def test_oracle_square_multiplicity(a):
    for bc in ("dirichlet", "neumann"):
        lam = oracle_rectangle(a, a, bc, 3)
        assert lam[1] == lam[2]


def test_oracle_rectangle_rejects_bad_sides():
    with pytest.raises(ValueError):
        oracle_rectangle(0, 1, "dirichlet", 2)


def test_clamped_first_root():
    k1 = clamped_roots(1)[0]
    assert 4.7 < k1 < 4.8
    assert abs(np.cos(k1) * np.cosh(k1) - 1) <= 1e-12 * np.cosh(k1)


def test_clamped_roots_asymptotics():
    assert abs(clamped_roots(5)[4] - 5.5 * np.pi) < 0.01


@given(st.floats(0.1, 10))
def test_clamped_quartic_scaling(length):
    assert np.allclose(oracle_clamped_interval(2 * length, 4), oracle_clamped_interval(length, 4) / 16, rtol=1e-12)


def test_clamped_stencil_converges_to_oracle():
    K, M = clamped_interval_matrices(400)
    lam = scipy.linalg.eigh(K.toarray(), M.toarray(), eigvals_only=True)[:3]
    assert np.allclose(lam, oracle_clamped_interval(1.0, 3), rtol=0.02)


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


def test_unit_square_matches_oracle():
    for bc, tol in (("dirichlet", 0.005), ("neumann", 0.02)):
        s = spectrum(box_domain(), LAP, bc, 1 / 48, k=4)
        ref = oracle_rectangle(1, 1, bc, 4)
        assert np.allclose(s.eigenvalues, ref, rtol=tol, atol=1e-6)


def test_second_order_convergence():
    err = [abs(spectrum(box_domain(), LAP, "dirichlet", h, k=1)[0] - 2 * np.pi ** 2) for h in (1 / 16, 1 / 32, 1 / 64)]
    for coarse, fine in zip(err, err[1:]):
        assert 3.5 <= coarse / fine <= 4.5


@given(st.integers(0, 10_000))
def test_neumann_below_dirichlet_and_non_negative(seed):
    rng = np.random.default_rng(seed)
    d = box_domain()
    prof = box_profile(d, "trig_series", {"base": 1.0, "terms": [[rng.uniform(-0.1, 0.1), 2 * np.pi, 0.0]]})
    g = rasterize(d.with_profiles({0: prof}), 1 / 24)
    sD = solve_lowest(*assemble(g, LAP, "dirichlet"), 3)
    sN = solve_lowest(*assemble(g, LAP, "neumann"), 3)
    assert np.all(sN.eigenvalues <= sD.eigenvalues + 1e-8 * sD.eigenvalues)
    assert np.all(sN.eigenvalues >= -1e-8 * sN.eigenvalues[-1])


@given(st.integers(0, 10_000))
def test_dirichlet_nesting_on_shared_lattice(seed):
    d1, d2 = nested_square_pair(np.random.default_rng(seed), 0.03, 0.03)
    h = 1 / 80
    l1 = spectrum(d1, LAP, "dirichlet", h, k=3).eigenvalues
    l2 = spectrum(d2, LAP, "dirichlet", h, k=3).eigenvalues
    assert np.all(l1 <= l2 * (1 + 1e-10))


def test_inscribed_ball_bounds_family():
    d = box_domain()
    h = 1 / 64
    ball = spectrum(inscribed_ball(d.atlas), LAP, "dirichlet", h, k=3)
    for amp in (-0.2, -0.1, 0.1, 0.2):
        prof = box_profile(d, "trig_series", {"base": 1.0, "terms": [[amp, 2 * np.pi, 0.0]]})
        lam = spectrum(d.with_profiles({0: prof}), LAP, "dirichlet", h, k=3).eigenvalues
        assert np.all(lam <= ball.eigenvalues)
