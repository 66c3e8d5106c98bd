"""Distances between atlas domains and between boundary point sets.

The atlas distance compares the profile functions of two domains that share
an atlas.  The Hausdorff-Pompeiu quantities compare boundary clouds: the
one-sided deviations are combined with ``max`` for the usual distance and with
``min`` for the lower deviation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    AtlasDomain,
    BoundaryCloud,
    GeometryError,
    ModulusSpec,
    base_samples,
    boundary_cloud,
)


class IncompatibleAtlas(GeometryError):
    """The two domains are not described on the same atlas."""


class InconsistentSampling(GeometryError):
    """Sampled quantities contradict an exact identity."""


@dataclass(frozen=True)
class DistanceReport:
    """A sampled distance with its error bound.

    Attributes
    ----------
    value : float
    slack : float
        Bound on the sampling error of ``value``.
    witnesses : tuple
        Point pair or ``(chart, base point)`` attaining the extremum.
    """

    value: float
    slack: float
    witnesses: tuple = ()

    def __post_init__(self):
        if self.value < 0 or self.slack < 0:
            raise ValueError("distances and slacks are non-negative")


def _check_compatible(d1: AtlasDomain, d2: AtlasDomain):
    diff = d1.atlas.first_difference(d2.atlas)
    if diff is not None:
        raise IncompatibleAtlas(f"atlases differ in {diff}")


def _sup_gap(p1, p2, spacing: float, max_refine: int = 6) -> tuple[float, float, float]:
    """Sup of ``|p1 - p2|`` over the closed base with refinement.

    Returns the value with its slack, then the maximizing base point.
    """
    prev = None
    for _ in range(max_refine + 1):
        x = np.union1d(base_samples(p1, spacing), base_samples(p2, spacing))
        gap = np.abs(p1(x) - p2(x))
        i = int(np.argmax(gap))
        val = float(gap[i])
        if prev is not None and abs(val - prev) <= 1e-3 * max(val, 1e-300):
            break
        prev = val
        spacing /= 2
    # local zoom around the maximizer
    lo = x[max(i - 1, 0)]
    hi = x[min(i + 1, len(x) - 1)]
    xl = np.linspace(lo, hi, 257)
    gl = np.abs(p1(xl) - p2(xl))
    il = int(np.argmax(gl))
    xm = float(x[i])
    slack = abs(val - prev) if prev is not None else 0.0
    if gl[il] > val:
        slack = max(slack, float(gl[il]) - val)
        val, xm = float(gl[il]), float(xl[il])
    return val, slack, xm


def atlas_distance(d1: AtlasDomain, d2: AtlasDomain, spacing: float | None = None) -> DistanceReport:
    """Largest sup-norm difference between corresponding profiles.

    Parameters
    ----------
    d1, d2 : AtlasDomain
        Domains on the same atlas.
    spacing : float, optional
        Initial sampling spacing, default ``rho / 64``; halved until the
        value changes by less than 0.1 percent (at most six times).

    Returns
    -------
    DistanceReport
        Witnesses are ``(chart, base point)``.
    """
    _check_compatible(d1, d2)
    spacing = spacing or d1.atlas.rho / 64
    best, slack, wit = 0.0, 0.0, (0, float(d1.profiles[0].base.lower[0]))
    for j, (p1, p2) in enumerate(zip(d1.profiles, d2.profiles)):
        if p1 is p2:
            continue
        if p1.kind == "constant" and p2.kind == "constant":
            val, sl, xm = abs(p1.params["value"] - p2.params["value"]), 0.0, float(p1.base.lower[0])
        else:
            val, sl, xm = _sup_gap(p1, p2, spacing)
        slack = max(slack, sl)
        if val > best:
            best, wit = val, (j, xm)
    return DistanceReport(best, slack, wit)


# ---------------------------------------------------------------------------
# Hausdorff-Pompeiu quantities
# ---------------------------------------------------------------------------


def _as_cloud(A) -> BoundaryCloud:
    if isinstance(A, BoundaryCloud):
        return A
    P = np.atleast_2d(np.asarray(A, dtype=float))
    if P.size == 0:
        raise GeometryError("point set is empty")
    return BoundaryCloud(P, np.full(len(P), -1), np.zeros(len(P), dtype=bool), 0.0, 0.0)


def one_sided(A, B) -> tuple[float, tuple]:
    """``sup_{a in A} d(a, B)`` over the samples of ``A`` with its witness pair."""
    A = _as_cloud(A)
    B = _as_cloud(B)
    if len(A) == 0 or len(B) == 0:
        raise GeometryError("point set is empty")
    dist, near = B.distance(A.points)
    i = int(np.argmax(dist))
    return float(dist[i]), (tuple(A.points[i]), tuple(near[i]))


def _pair(A, B):
    A = _as_cloud(A)
    B = _as_cloud(B)
    if len(A) == 0 or len(B) == 0:
        raise GeometryError("point set is empty")
    ab, wab = one_sided(A, B)
    ba, wba = one_sided(B, A)
    slack = A.resolution + B.resolution
    return ab, wab, ba, wba, slack


def hp_lower_deviation(A, B) -> DistanceReport:
    """Smaller of the two one-sided deviations between point sets.

    ``A`` and ``B`` are boundary clouds or plain ``(n, 2)`` arrays; for clouds
    the distance to the other set is measured to its sampled polylines.
    """
    ab, wab, ba, wba, slack = _pair(A, B)
    return DistanceReport(min(ab, ba), slack, wab if ab <= ba else wba)


def hp_distance(A, B) -> DistanceReport:
    """Larger of the two one-sided deviations (Hausdorff-Pompeiu distance)."""
    ab, wab, ba, wba, slack = _pair(A, B)
    return DistanceReport(max(ab, ba), slack, wab if ab >= ba else wba)


@dataclass(frozen=True)
class ChainResult:
    d_hp_lower: float
    d_hp: float
    d_atlas: float
    slack: float
    passed: bool
    witnesses: dict

    @property
    def triple(self):
        return (self.d_hp_lower, self.d_hp, self.d_atlas)

    @property
    def gap(self) -> float:
        """How far ``d_atlas`` exceeds ``d_hp``."""
        return self.d_atlas - self.d_hp


def _default_spacing(d: AtlasDomain) -> float:
    return d.atlas.rho / 16


def boundary_distances(d1, d2, spacing: float | None = None) -> dict:
    """HP quantities between the boundaries of two domains."""
    spacing = spacing or min(_default_spacing(d1), _default_spacing(d2))
    c1 = boundary_cloud(d1, spacing)
    c2 = boundary_cloud(d2, spacing)
    ab, wab, ba, wba, slack = _pair(c1, c2)
    return {
        "sup_1_to_2": ab,
        "sup_2_to_1": ba,
        "d_hp_lower": min(ab, ba),
        "d_hp": max(ab, ba),
        "slack": slack,
        "witness_1_to_2": wab,
        "witness_2_to_1": wba,
    }


def chain_check(d1: AtlasDomain, d2: AtlasDomain, spacing: float | None = None) -> ChainResult:
    """Check ``d_HP <= d^HP <= d_A`` within the combined sampling slack."""
    da = atlas_distance(d1, d2)
    hp = boundary_distances(d1, d2, spacing)
    slack = hp["slack"] + da.slack
    ok = hp["d_hp_lower"] <= hp["d_hp"] and hp["d_hp"] <= da.value + slack
    return ChainResult(hp["d_hp_lower"], hp["d_hp"], da.value, slack, bool(ok), {
        "atlas": da.witnesses,
        "hp_1_to_2": hp["witness_1_to_2"],
        "hp_2_to_1": hp["witness_2_to_1"],
    })


def restrict_to_atlas(d: AtlasDomain, atlas) -> AtlasDomain:
    """Same profiles restricted to the (smaller) bases of another atlas."""
    from .geometry import BoundaryProfile, Cuboid

    profiles = []
    for p, c in zip(d.profiles, atlas.cuboids):
        profiles.append(BoundaryProfile(p.kind, p.params, Cuboid(c.lower[:-1], c.upper[:-1])))
    return AtlasDomain(atlas, profiles)


@dataclass(frozen=True)
class ModulusBound:
    ratio: float
    d_atlas_shrunk: float
    d_hp_lower: float
    d_hp: float
    omega_of_d_hp_lower: float


def modulus_bound_check(d1: AtlasDomain, d2: AtlasDomain, omega: ModulusSpec,
                        spacing: float | None = None) -> ModulusBound:
    """Measure ``d_A~ / omega(d_HP)`` with ``A~`` the shrunk atlas.

    The shrunk atlas has margin ``rho/2`` and every cuboid moved inward by
    ``rho/2``.  The lower deviation is measured on the full boundaries.

    Raises
    ------
    InconsistentSampling
        When the lower deviation vanishes while the atlas distance does not.
    """
    _check_compatible(d1, d2)
    small = d1.atlas.shrunk()
    da = atlas_distance(restrict_to_atlas(d1, small), restrict_to_atlas(d2, small))
    hp = boundary_distances(d1, d2, spacing)
    w = float(omega(hp["d_hp_lower"]))
    if w == 0:
        if da.value > da.slack:
            raise InconsistentSampling("d_HP = 0 while the shrunk atlas distance is positive")
        ratio = 0.0
    else:
        ratio = da.value / w
    return ModulusBound(ratio, da.value, hp["d_hp_lower"], hp["d_hp"], w)
