import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectral_shift.discretize import OperatorSpec
from spectral_shift.domains import box_domain, box_profile, nested_square_pair, square_atlas
from spectral_shift.geometry import (
    Atlas,
    AtlasDomain,
    BoundaryProfile,
    Cuboid,
    Rotation,
    atlas_eps_sets,
    classify,
    validate_domain,
)
from spectral_shift.metrics import atlas_distance
from spectral_shift.perturbation import (
    CertificationError,
    CoverageError,
    Diffeomorphism,
    InjectivityError,
    PreconditionError,
    TransformTEps,
    build_partition,
    diffeo_transport,
    inclusion_check,
    measure_G,
    patches_for_difference,
    t_eps_apply,
    t_eps_certify,
    vicinity_L,
)

I2 = Rotation(np.eye(2))


@pytest.fixture(scope="module")
def box_transform():
    t = TransformTEps.for_atlas(box_domain().atlas)
    t_eps_certify(t)
    return t


def mirrored_atlas():
    """The box ``(0, 1) x (0, 2)`` seen from above and from below."""
    r = Rotation.from_degrees(180)
    return Atlas(0.25, [Cuboid([0, 0], [1, 2]), Cuboid([-1, -2], [0, 0])], [I2, r], 2)


def lowered_box(delta: float):
    d = box_domain()
    return d.with_profiles({0: d.profiles[0].with_offset(-delta)})


# ---------------------------------------------------------------------------
# partition of unity
# ---------------------------------------------------------------------------


def test_single_chart_partition_is_one_on_core():
    a = box_domain().atlas
    pu = build_partition(a)
    X = np.random.default_rng(0).uniform([0.25, 0.25], [0.75, 1.75], (2000, 2))
    assert np.allclose(pu.evaluate(X), 1.0, atol=1e-15)


def test_identical_charts_share_equally():
    c = Cuboid([0, 0], [1, 2])
    pu = build_partition(Atlas(0.25, [c, c], [I2, I2], 2))
    X = np.random.default_rng(1).uniform([0.25, 0.25], [0.75, 1.75], (2000, 2))
    assert np.allclose(pu.evaluate(X), 0.5, atol=1e-15)


def test_gradient_bound_stable_under_refinement(atlas9):
    pu = build_partition(atlas9)
    g1 = measure_G(pu, atlas9.rho / 16)
    g2 = measure_G(pu, atlas9.rho / 32)
    assert np.isfinite(g1)
    assert abs(g1 - g2) <= 0.05 * g1


def test_partition_coverage_error_has_witness(atlas9):
    with pytest.raises(CoverageError) as info:
        build_partition(atlas9, np.array([[0.5, 0.5], [3.0, 3.0]]))
    assert info.value.witness == (3.0, 3.0)


def test_partition_invariants_on_square_atlas(certified_transform):
    pu = certified_transform.partition
    X = pu.sample_support(10_000, seed=11)
    psi, grad = pu.evaluate(X, gradient=True)
    assert psi.min() >= 0 and psi.max() <= 1 + 1e-12
    cov = pu.covered(X)
    assert cov.sum() > 1000
    assert np.max(np.abs(psi[:, cov].sum(axis=0) - 1)) <= 1e-10
    assert np.max(np.linalg.norm(grad, axis=2)) <= pu.G * (1 + 1e-9)


def test_partition_vanishes_outside_support(atlas9):
    pu = build_partition(atlas9)
    rho = atlas9.rho
    for j, (c, r) in enumerate(zip(atlas9.cuboids, atlas9.rotations)):
        # points on the boundary of the (V_j)_{3 rho / 4} core and slightly beyond
        y = np.linspace(c.lower[1], c.upper[1], 50)
        for x0 in (c.lower[0] + 0.75 * rho, c.lower[0] + 0.7 * rho, c.upper[0] - 0.75 * rho):
            Y = np.stack([np.full_like(y, x0), y], axis=1)
            assert np.all(pu.evaluate(r.to_global(Y))[j] == 0)


# ---------------------------------------------------------------------------
# T_eps
# ---------------------------------------------------------------------------


def test_t_eps_zero_is_identity(certified_transform):
    X = np.random.default_rng(2).uniform(-0.1, 1.1, (100, 2))
    assert np.array_equal(t_eps_apply(certified_transform.with_epsilon(0.0), X), X)


def test_t_eps_single_chart_plateau(box_transform):
    eps = 1e-3
    x = np.array([0.5, 0.9])
    assert np.allclose(t_eps_apply(box_transform.with_epsilon(eps), x), x - eps * np.array([0.0, 1.0]),
                       atol=1e-15)


def test_t_eps_opposite_directions_cancel():
    t = TransformTEps(build_partition(mirrored_atlas()), 0.01)
    assert np.allclose(t.directions, [[0.0, 1.0], [0.0, -1.0]])
    x = np.array([0.5, 1.0])
    assert np.allclose(t_eps_apply(t, x), x, atol=1e-15)


def test_t_eps_directions_are_unit(certified_transform):
    assert np.allclose(np.linalg.norm(certified_transform.directions, axis=1), 1, atol=1e-12)


def test_certify_at_zero_eps(certified_transform):
    assert certified_transform.certificate.det_range == (1.0, 1.0)
    X = np.random.default_rng(3).uniform(0, 1, (200, 2))
    assert np.array_equal(certified_transform.jacobian_det(X, 0.0), np.ones(200))


def test_certify_single_chart_a1_at_least_one(box_transform):
    assert box_transform.certificate.A1 >= 1.0
    eps = 1e-3
    x = np.array([[0.5, 0.9]])
    assert np.linalg.norm(t_eps_apply(box_transform.with_epsilon(eps), x) - x) == pytest.approx(eps)


def test_certify_determinant_band(certified_transform):
    cert = certified_transform.certificate
    X = certified_transform.partition.sample_support(10_000, seed=17)
    for frac in (0.25, 0.5, 0.99):
        eps = frac * cert.E1
        det = certified_transform.jacobian_det(X, eps)
        assert det.min() >= 1 - cert.A2 * eps - 1e-12
        assert det.max() <= 1 + cert.A2 * eps + 1e-12
        assert det.min() >= 0.5


def test_certify_m2_includes_second_derivatives(certified_transform):
    t = TransformTEps(certified_transform.partition)
    c1 = t_eps_certify(t, m=1)
    c2 = t_eps_certify(t, m=2)
    assert c2.A1 >= c1.A1
    assert c2.E1 == c1.E1


def test_certify_detects_folding(certified_transform):
    t = TransformTEps(certified_transform.partition, 0.01)
    with pytest.raises(CertificationError):
        t_eps_certify(t)


@given(st.floats(0.0, 1.0))
def test_t_eps_moves_points_at_most_eps(frac):
    t = _square_transform()
    eps = frac * t.certificate.E1
    X = t.partition.sample_support(2000, seed=5)
    # the displacement is a convex combination of unit vectors
    assert np.all(np.linalg.norm(t.displacement(X), axis=1) <= 1 + 1e-12)
    moved = np.linalg.norm(t_eps_apply(t.with_epsilon(eps), X) - X, axis=1)
    assert np.all(moved <= eps + 1e-15)


@functools.cache
def _square_transform():
    """Certified transform shared by the property tests (fixtures do not mix with given)."""
    t = TransformTEps.for_atlas(square_atlas())
    t_eps_certify(t)
    return t


# ---------------------------------------------------------------------------
# inclusion_check
# ---------------------------------------------------------------------------


def test_inclusion_same_domain(square9, certified_transform):
    eps = 0.5 * certified_transform.certificate.E1
    r = inclusion_check(square9, square9, eps, certified_transform, n_samples=4000)
    assert r.passed and r.violations == 0


def shrunk_square(square, delta: float):
    """The square ``[delta, 1 - delta]^2`` on the same nine-chart atlas."""
    offsets = {j: -delta for j in range(4)} | {k: -np.sqrt(2) * delta for k in range(4, 8)}
    return square.with_profiles({j: square.profiles[j].with_offset(o) for j, o in offsets.items()})


def test_inclusion_flat_shift(square9, certified_transform):
    delta = 3e-5
    inner = shrunk_square(square9, delta)
    assert validate_domain(inner) == []
    d_a = atlas_distance(square9, inner).value
    assert d_a == pytest.approx(np.sqrt(2) * delta, rel=1e-9)
    eps = 2 * certified_transform.partition.s * d_a
    assert eps < certified_transform.certificate.E1
    r = inclusion_check(square9, inner, eps, certified_transform, n_samples=4000)
    assert r.passed and r.violations == 0


def test_inclusion_rejects_large_atlas_distance(box_transform):
    with pytest.raises(PreconditionError):
        inclusion_check(box_domain(), lowered_box(0.003), 0.002, box_transform)


def test_inclusion_rejects_large_eps(box_transform):
    with pytest.raises(PreconditionError):
        inclusion_check(box_domain(), box_domain(), 0.01, box_transform)


def test_inclusion_rejects_non_nested(box_transform):
    with pytest.raises(PreconditionError):
        inclusion_check(lowered_box(0.0005), box_domain(), 0.002, box_transform)


@given(st.integers(0, 10_000))
def test_inclusion_on_generated_pairs(seed):
    t = _square_transform()
    eps = 0.9 * t.certificate.E1
    d1, d2 = nested_square_pair(np.random.default_rng(seed), 0.04, 0.9 * eps / 9)
    assert inclusion_check(d1, d2, eps, t, n_samples=1000, seed=seed).passed


# ---------------------------------------------------------------------------
# vicinity_L
# ---------------------------------------------------------------------------


def test_vicinity_identity(unit_box):
    r = vicinity_L(Diffeomorphism.identity(), OperatorSpec.laplacian(), unit_box)
    assert r.L == 0 and r.L_with_values == 0


def test_vicinity_translation(unit_box):
    delta = 0.01
    r = vicinity_L(Diffeomorphism.translation((delta, 0.0)), OperatorSpec.laplacian(), unit_box)
    assert r.L == 0
    assert r.L_with_values == pytest.approx(delta, abs=1e-15)


def test_vicinity_dilation(unit_box):
    delta = 0.02
    r = vicinity_L(Diffeomorphism.dilation(1 + delta), OperatorSpec.laplacian(), unit_box)
    assert r.L == pytest.approx(delta, abs=1e-15)


def test_vicinity_coefficient_term(unit_box):
    op = OperatorSpec.from_matrix(lambda X: (1 + 0.5 * X[:, 0])[:, None, None] * np.eye(2)[None], theta=1.0)
    delta = 0.01
    r = vicinity_L(Diffeomorphism.translation((delta, 0.0)), op, unit_box)
    assert r.coefficient_term == pytest.approx(0.5 * delta, rel=1e-9)


@given(st.sampled_from(["translation", "dilation", "shear"]), st.floats(1e-3, 0.05), st.floats(1.1, 3.0))
def test_vicinity_monotone_in_size(kind, delta, factor):
    d = box_domain()
    op = OperatorSpec.laplacian()

    def make(s):
        if kind == "translation":
            return Diffeomorphism.translation((s, 0.0))
        if kind == "dilation":
            return Diffeomorphism.dilation(1 + s, (0.5, 0.5))
        return Diffeomorphism.shear(s)

    small = vicinity_L(make(delta), op, d).L_with_values
    large = vicinity_L(make(factor * delta), op, d).L_with_values
    assert large == pytest.approx(factor * small, rel=1e-9)


def test_diffeomorphism_bounds_measured():
    phi = Diffeomorphism.dilation(1.5)
    X = np.random.default_rng(6).uniform(size=(50, 2))
    assert phi.check(X) == (1.5, 2.25)
    assert phi.B1 == 1.5 and phi.B2 == 2.25
    with pytest.raises(ValueError):
        Diffeomorphism.dilation(0.0)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def test_patches_identical_domains(square9):
    r = patches_for_difference(square9, square9)
    assert all(s == 0 for s in r.thinness)
    assert r.max_thinness == 0


def test_patches_flat_shift():
    delta = 0.05
    r = patches_for_difference(box_domain(), lowered_box(delta))
    assert r.thinness == [pytest.approx(delta, abs=1e-15)]
    assert r.max_thinness == pytest.approx(r.d_atlas, abs=r.slack)
    assert r.checks["uncovered_difference_samples"] == 0


def test_patches_wedge_thickness():
    c, depth = 2.0, 2.5
    prof = BoundaryProfile("power_cusp", {"height": 0.0, "scale": -c, "center": 0.0, "exponent": 1.0},
                           Cuboid([-1.0], [1.0]))
    d1 = AtlasDomain(Atlas(0.25, [Cuboid([-1.0, -depth], [1.0, 1.0])], [Rotation.from_degrees(90)], 1), [prof])
    assert validate_domain(d1) == []
    eps = 0.05
    d2 = d1.with_profiles({0: BoundaryProfile("power_cusp", dict(prof.params, height=-eps), prof.base)})
    inner, _ = atlas_eps_sets(d1, eps)
    X = np.random.default_rng(7).uniform(-2.5, 2.5, (4000, 2))
    assert np.array_equal(inner.contains(X), classify(d2, X) == 1)
    r = patches_for_difference(d1, d2)
    # thickness of the outer patch is the smallest gap g_1 - a_N, reached at the base ends
    assert r.thickness_outer[0] == pytest.approx(-c - (-depth))
    assert r.checks["outer_thickness_exceeds_rho"]


def test_patches_reject_non_nested():
    with pytest.raises(PreconditionError):
        patches_for_difference(lowered_box(0.1), box_domain())


@given(st.integers(0, 10_000))
def test_patches_cover_difference(seed):
    d1, d2 = nested_square_pair(np.random.default_rng(seed), 0.03, 0.03)
    r = patches_for_difference(d1, d2, n_samples=2000)
    assert r.checks["uncovered_difference_samples"] == 0
    assert r.checks["inner_in_outer_violations"] == 0
    assert r.checks["outer_in_domain_violations"] == 0
    assert r.max_thinness == pytest.approx(r.d_atlas, abs=r.slack + 1e-9)


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------


def test_transport_identity(unit_box):
    r = diffeo_transport(unit_box, Diffeomorphism.identity())
    from spectral_shift.geometry import boundary_cloud

    assert np.array_equal(r.boundary, boundary_cloud(unit_box, unit_box.atlas.rho / 16).points)
    assert atlas_distance(unit_box, r.domain).value == 0


def test_transport_horizontal_translation():
    d = box_domain(width=1.0, depth=2.0)
    bump = box_profile(d, "power_cusp", {"height": 1.0, "scale": -0.3, "center": 0.5, "exponent": 1.0})
    d = d.with_profiles({0: bump})
    delta = 0.05
    r = diffeo_transport(d, Diffeomorphism.translation((delta, 0.0)))
    x = np.linspace(0.1, 0.9, 81)
    assert np.allclose(r.domain.profiles[0](x), bump(x - delta), atol=1e-12)
    assert atlas_distance(d, r.domain).value == pytest.approx(0.3 * delta, rel=1e-6)


def test_transport_vertical_graph_map(unit_box):
    delta = 0.01

    def eta(x):
        return np.sin(np.pi * x)

    r = diffeo_transport(unit_box, Diffeomorphism.graph_map(eta, delta))
    x = np.linspace(0, 1, 101)
    assert np.allclose(r.domain.profiles[0](x), 1 + delta * eta(x), atol=1e-6)


def test_transport_detects_collapse(unit_box):
    with pytest.raises(InjectivityError):
        diffeo_transport(unit_box, Diffeomorphism.dilation(1e-14))
