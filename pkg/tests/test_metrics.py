import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from spectral_shift.domains import box_domain, box_profile, hoelder_pair, random_side_deviation, square_domain
from spectral_shift.experiments import cusp_family, example_parabolic_cusp, example_wedge
from spectral_shift.geometry import GeometryError, ModulusSpec
from spectral_shift.metrics import (
    IncompatibleAtlas,
    atlas_distance,
    chain_check,
    hp_distance,
    hp_lower_deviation,
    modulus_bound_check,
)


def lowered_box(delta: float):
    d = box_domain()
    return d.with_profiles({0: d.profiles[0].with_offset(-delta)})


def segment(y: float, n: int = 201) -> np.ndarray:
    x = np.linspace(0, 1, n)
    return np.stack([x, np.full(n, y)], axis=1)


# ---------------------------------------------------------------------------
# atlas_distance
# ---------------------------------------------------------------------------


def test_atlas_distance_flat_profiles(unit_box):
    r = atlas_distance(unit_box, lowered_box(0.1))
    assert r.value == pytest.approx(0.1, abs=1e-15)
    assert r.witnesses[0] == 0


def test_atlas_distance_identity(square9):
    assert atlas_distance(square9, square9).value == 0


def test_atlas_distance_hoelder_shift_exceeds_modulus():
    eps = 0.04
    d1, d2 = hoelder_pair(eps, 0.5)
    # the profiles differ at the tip by g(0) - g(eps) = sqrt(eps)
    assert atlas_distance(d1, d2).value >= np.sqrt(eps) * (1 - 1e-12)
    assert np.sqrt(eps) == pytest.approx(0.2)


def test_atlas_distance_incompatible_names_parameter():
    with pytest.raises(IncompatibleAtlas, match="rho"):
        atlas_distance(box_domain(rho=0.25), box_domain(rho=0.3))


@given(st.floats(1e-4, 0.2), st.integers(1, 5))
def test_uniform_profile_gap_is_atlas_distance(delta, k):
    d = box_domain()
    prof = box_profile(d, "trig_series", {"base": 1.0, "terms": [[delta, 2 * np.pi * k, 0.0]]})
    # the cosine attains its maximum at the base end point x = 0
    assert atlas_distance(d, d.with_profiles({0: prof})).value == pytest.approx(delta, rel=1e-12)


@given(st.integers(0, 10_000))
def test_atlas_distance_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    d = [square_domain(side_deviation=random_side_deviation(rng, 0.05)) for _ in range(3)]
    r01, r10 = atlas_distance(d[0], d[1]), atlas_distance(d[1], d[0])
    r12, r02 = atlas_distance(d[1], d[2]), atlas_distance(d[0], d[2])
    assert r01.value == r10.value
    assert r02.value <= r01.value + r12.value + r01.slack + r12.slack + r02.slack
    assert atlas_distance(d[0], d[0]).value <= atlas_distance(d[0], d[0]).slack


# ---------------------------------------------------------------------------
# HP quantities
# ---------------------------------------------------------------------------


def test_hp_of_equal_sets_is_zero():
    A = np.random.default_rng(0).uniform(size=(50, 2))
    assert hp_lower_deviation(A, A).value == 0
    assert hp_distance(A, A).value == 0


def test_hp_lower_of_nested_sets_is_zero():
    B = np.random.default_rng(1).uniform(size=(80, 2))
    assert hp_lower_deviation(B[:20], B).value == 0
    assert hp_distance(B[:20], B).value > 0


def test_hp_parallel_segments():
    h = 0.125
    assert hp_distance(segment(0.0), segment(h)).value == pytest.approx(h)
    assert hp_lower_deviation(segment(0.0), segment(h)).value == pytest.approx(h)


def test_hp_rejects_empty_sets():
    with pytest.raises(GeometryError):
        hp_distance(np.empty((0, 2)), segment(0.0))
    with pytest.raises(GeometryError):
        hp_lower_deviation(segment(0.0), np.empty((0, 2)))


def test_wedge_hp_quantities():
    c, eps = 2.0, 0.1
    r = example_wedge(c, eps)
    assert r["d_hp_lower"] == pytest.approx(eps, abs=r["slack"])
    assert r["d_hp"] == pytest.approx(eps * np.sqrt(c * c + 1), abs=r["slack"])
    assert r["d_hp"] == pytest.approx(0.22360, abs=1e-4)


@given(st.integers(0, 10_000))
def test_hp_lower_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.uniform(size=(30, 2)), rng.uniform(size=(40, 2)) + 0.3
    assert hp_lower_deviation(A, B).value == hp_lower_deviation(B, A).value


@given(st.integers(0, 10_000))
def test_hp_distance_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.uniform(size=(rng.integers(1, 40), 2)) * rng.uniform(0.1, 3) for _ in range(3))
    assert hp_distance(A, C).value <= hp_distance(A, B).value + hp_distance(B, C).value + 1e-12


def test_hp_lower_is_not_a_distance():
    A = segment(0.0, 21)
    B = segment(0.5, 21)
    AB = np.vstack([A, B])
    assert hp_lower_deviation(A, AB).value + hp_lower_deviation(AB, B).value == 0
    assert hp_lower_deviation(A, B).value == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# chain_check
# ---------------------------------------------------------------------------


def test_chain_identical_domains(square9):
    r = chain_check(square9, square9)
    assert r.triple == (0.0, 0.0, 0.0)
    assert r.passed


def test_chain_hoelder_shift_has_strict_gap():
    eps = 0.04
    r = chain_check(*hoelder_pair(eps, 0.5), spacing=eps / 16)
    assert r.passed
    assert r.d_hp <= eps + r.slack
    assert r.d_atlas >= np.sqrt(eps) * (1 - 1e-12)
    assert r.gap > 0.1


@given(st.floats(0.005, 0.2))
def test_chain_vertical_shift_all_equal(delta):
    r = chain_check(box_domain(), lowered_box(delta), spacing=0.01)
    assert r.passed
    assert r.d_atlas == pytest.approx(delta, abs=1e-15)
    assert r.d_hp == pytest.approx(delta, abs=r.slack)
    assert r.d_hp_lower == pytest.approx(delta, abs=r.slack)


@given(st.integers(0, 10_000))
def test_chain_on_random_pairs(seed):
    rng = np.random.default_rng(seed)
    d1 = square_domain(side_deviation=random_side_deviation(rng, 0.05))
    d2 = square_domain(side_deviation=random_side_deviation(rng, 0.05))
    assert chain_check(d1, d2).passed


# ---------------------------------------------------------------------------
# modulus_bound_check
# ---------------------------------------------------------------------------


def test_modulus_bound_vertical_shift_linear():
    r = modulus_bound_check(box_domain(), lowered_box(0.05), ModulusSpec("linear"), spacing=0.005)
    assert r.ratio == pytest.approx(1.0, abs=0.05)


def test_modulus_bound_vertical_shift_square_root():
    delta = 0.04
    r = modulus_bound_check(box_domain(), lowered_box(delta), ModulusSpec("power", alpha=0.5), spacing=0.002)
    assert r.ratio == pytest.approx(delta / np.sqrt(delta), rel=0.05)


def _graph_hp_lower(eps: float, alpha: float = 0.5) -> float:
    """Lower HP deviation of the two bump graphs by brute force on dense samples."""
    t = np.concatenate([-np.geomspace(1e-7, 2, 4000)[::-1], [0.0], np.geomspace(1e-7, 2, 4000)])

    def graph(center):
        x = center + t
        x = x[(x >= -2) & (x <= 2)]
        return np.stack([x, np.maximum(1 - np.abs(x - center) ** alpha, 0)], axis=1)

    A, B = graph(0.0), graph(eps)
    ab = cKDTree(B).query(A)[0].max()
    ba = cKDTree(A).query(B)[0].max()
    return min(ab, ba)


def test_modulus_bound_hoelder_shift_is_bounded():
    omega = ModulusSpec("power", alpha=0.5)
    ratios = []
    for eps in (0.04, 0.02, 0.01, 0.005, 0.0025):
        d1, d2 = hoelder_pair(eps, 0.5)
        r = modulus_bound_check(d1, d2, omega)
        assert r.d_atlas_shrunk == pytest.approx(np.sqrt(eps), rel=1e-9)
        assert r.d_hp_lower == pytest.approx(_graph_hp_lower(eps), abs=0.05 * eps)
        ratios.append(r.ratio)
    assert np.all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) < 2


def test_modulus_bound_cusp_family_bounded():
    f = cusp_family([0.01, 0.02, 0.04, 0.08])
    omega = ModulusSpec("power", alpha=0.5, M=0.4)
    ratios = [modulus_bound_check(f.base, f.domain(t), omega).ratio for t in f.grid]
    assert max(ratios) / min(ratios) < 2


def test_parabolic_cusp_upper_over_lower_diverges():
    rows = [example_parabolic_cusp(eps) for eps in (1e-2, 1e-3, 1e-4)]
    growth = [r["sup_outer_to_inner"] / r["sup_inner_to_outer"] for r in rows]
    for r, g in zip(rows, growth):
        # the ratio tracks omega(eps) / eps = eps^(-1/2)
        assert 0.5 <= g / (np.sqrt(r["eps"]) / r["eps"]) <= 2
    assert growth[0] < growth[1] < growth[2]
