"""Ready-made domains and domain families shared by experiments and tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Atlas,
    AtlasDomain,
    BoundaryCloud,
    BoundaryProfile,
    Cuboid,
    PolygonDomain,
    Rotation,
    constant_profile,
)

IDENTITY = Rotation(np.eye(2))


def box_domain(width: float = 1.0, height: float = 1.0, depth: float = 2.0,
               rho: float = 0.25, profile: BoundaryProfile | None = None,
               origin=(0.0, 0.0)) -> AtlasDomain:
    """One-chart domain cut out of the cuboid ``(0, width) x (0, depth)``.

    With the default constant profile the domain is the rectangle
    ``(0, width) x (0, height)`` shifted by ``origin``.
    """
    ox, oy = origin
    cub = Cuboid([ox, oy], [ox + width, oy + depth])
    if profile is None:
        profile = constant_profile(oy + height, ox, ox + width)
    atlas = Atlas(rho, [cub], [IDENTITY], 1)
    return AtlasDomain(atlas, [profile])


def box_profile(domain: AtlasDomain, kind: str, params: dict) -> BoundaryProfile:
    """Profile of the given kind over the base of the single chart of ``domain``."""
    return BoundaryProfile(kind, params, domain.profiles[0].base)


# ---------------------------------------------------------------------------
# Unit square covered by nine charts
# ---------------------------------------------------------------------------

SIDE_ANGLES = (90.0, 0.0, -90.0, 180.0)  # top, right, bottom, left (outward normal)
_SIDES = {
    90.0: ((0.0, 1.0), (1.0, 1.0)),
    0.0: ((1.0, 0.0), (1.0, 1.0)),
    -90.0: ((0.0, 0.0), (1.0, 0.0)),
    180.0: ((0.0, 0.0), (0.0, 1.0)),
}
CORNERS = ((1.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0))

SIDE_INSET = 0.1
SIDE_BELOW, SIDE_ABOVE = 0.4, 0.2
CORNER_HALF = 0.2
CORNER_BELOW, CORNER_ABOVE = 0.65, 0.35
CORE = (0.15, 0.85)


def square_atlas(rho: float = 0.05) -> Atlas:
    """Atlas of the unit square: four side charts, four corner charts, one flat chart.

    Charts 0-3 are the sides (top, right, bottom, left), charts 4-7 the
    corners (1,1), (0,1), (0,0), (1,0) with a diagonal vertical axis, and chart
    8 is a flat chart over the core ``(0.15, 0.85)^2``.
    """
    cubs, rots = [], []
    for phi in SIDE_ANGLES:
        r = Rotation.up_direction(phi)
        ends = r.to_chart(np.array(_SIDES[phi]))
        u0, u1 = sorted(ends[:, 0])
        level = ends[0, 1]
        cubs.append(Cuboid([u0 + SIDE_INSET, level - SIDE_BELOW], [u1 - SIDE_INSET, level + SIDE_ABOVE]))
        rots.append(r)
    for p, q in CORNERS:
        phi = np.degrees(np.arctan2(2 * q - 1, 2 * p - 1))
        r = Rotation.up_direction(phi)
        yc = r.to_chart(np.array([p, q]))
        cubs.append(Cuboid([yc[0] - CORNER_HALF, yc[1] - CORNER_BELOW],
                           [yc[0] + CORNER_HALF, yc[1] + CORNER_ABOVE]))
        rots.append(r)
    cubs.append(Cuboid([CORE[0], CORE[0]], [CORE[1], CORE[1]]))
    rots.append(IDENTITY)
    return Atlas(rho, cubs, rots, 8)


def square_domain(atlas: Atlas | None = None, side_deviation: dict | None = None) -> AtlasDomain:
    """Unit square on the nine-chart atlas, optionally with bumped sides.

    Parameters
    ----------
    atlas : Atlas, optional
        Defaults to ``square_atlas()``.
    side_deviation : dict, optional
        Maps a side index (0 top, 1 right, 2 bottom, 3 left) to a pair
        ``(rel_knots, values)``: a piecewise linear outward deviation of the
        side, with knots given as fractions of the chart base.  Deviations
        must vanish outside ``[0.35, 0.65]`` and stay below ``0.06`` in size
        so that the side chart alone sees them.
    """
    atlas = atlas or square_atlas()
    profiles = []
    for j in range(4):
        c = atlas.cuboids[j]
        level = c.lower[1] + SIDE_BELOW
        base = Cuboid([c.lower[0]], [c.upper[0]])
        if side_deviation and j in side_deviation:
            rel, vals = side_deviation[j]
            rel = np.asarray(rel, dtype=float)
            vals = np.asarray(vals, dtype=float)
            if np.any(np.abs(vals[(rel < 0.35) | (rel > 0.65)]) > 0) or np.max(np.abs(vals)) >= 0.06:
                raise ValueError("side deviation must live in [0.35, 0.65] and stay below 0.06")
            knots = c.lower[0] + rel * (c.upper[0] - c.lower[0])
            knots = np.concatenate([[c.lower[0]], knots, [c.upper[0]]])
            values = np.concatenate([[level], level + vals, [level]])
            knots, idx = np.unique(knots, return_index=True)
            profiles.append(BoundaryProfile("piecewise_linear",
                                            {"knots": list(knots), "values": list(values[idx])}, base))
        else:
            profiles.append(BoundaryProfile("constant", {"value": float(level)}, base))
    for k in range(4, 8):
        c = atlas.cuboids[k]
        yc0 = 0.5 * (c.lower[0] + c.upper[0])
        yc1 = c.lower[1] + CORNER_BELOW
        profiles.append(BoundaryProfile(
            "power_cusp",
            {"height": float(yc1), "scale": -1.0, "center": float(yc0), "exponent": 1.0},
            Cuboid([c.lower[0]], [c.upper[0]])))
    c = atlas.cuboids[8]
    profiles.append(constant_profile(c.upper[1], c.lower[0], c.upper[0]))
    return AtlasDomain(atlas, profiles)


def random_side_deviation(rng: np.random.Generator, amplitude: float, sides=(0, 1, 2, 3),
                          n_knots: int = 5, sign: int = 0) -> dict:
    """Random piecewise linear deviations for ``square_domain``.

    ``sign = -1`` gives inward dents only, ``+1`` outward bumps only, ``0``
    either.
    """
    out = {}
    for j in sides:
        rel = np.sort(rng.uniform(0.36, 0.64, n_knots))
        rel = np.concatenate([[0.35], rel, [0.65]])
        vals = rng.uniform(-1, 1, n_knots) * amplitude
        if sign:
            vals = sign * np.abs(vals)
        out[j] = (rel, np.concatenate([[0.0], vals, [0.0]]))
    return out


def dented_deviation(rng: np.random.Generator, deviation: dict, depth: float) -> dict:
    """Push every interior knot of ``deviation`` inward by up to ``depth``.

    The resulting piecewise linear sides lie below the original ones, so the
    domain built from the result is contained in the domain built from
    ``deviation``.  Sides missing from ``deviation`` are treated as flat.
    """
    out = {}
    for j in range(4):
        rel, vals = deviation.get(j, (np.array([0.35, 0.5, 0.65]), np.zeros(3)))
        vals = np.array(vals, dtype=float)
        vals[1:-1] -= rng.uniform(0.0, depth, len(vals) - 2)
        out[j] = (np.asarray(rel, dtype=float), vals)
    return out


def nested_square_pair(rng: np.random.Generator, amplitude: float, depth: float,
                       atlas: Atlas | None = None) -> tuple[AtlasDomain, AtlasDomain]:
    """Random bumped square ``Omega_1`` and a dented copy ``Omega_2`` inside it.

    ``amplitude`` bounds the side deviations of ``Omega_1`` and ``depth`` the
    extra inward dents, so ``d_A(Omega_1, Omega_2) <= depth``.
    """
    atlas = atlas or square_atlas()
    dev = random_side_deviation(rng, amplitude)
    return square_domain(atlas, dev), square_domain(atlas, dented_deviation(rng, dev, depth))


# ---------------------------------------------------------------------------
# Appendix fixtures
# ---------------------------------------------------------------------------


def wedge_domain(c: float, rho: float = 0.25) -> AtlasDomain:
    """Wedge ``{c|x2| < x1 < c}`` as a one-chart domain opening along ``+x1``."""
    rot = Rotation.up_direction(180.0)
    cub = Cuboid([-1.0, -c], [1.0, 1.0])
    prof = BoundaryProfile("power_cusp", {"height": 0.0, "scale": -c, "center": 0.0, "exponent": 1.0},
                           Cuboid([-1.0], [1.0]))
    return AtlasDomain(Atlas(rho, [cub], [rot], 1), [prof])


def wedge_polygon(c: float) -> PolygonDomain:
    return PolygonDomain(np.array([[0.0, 0.0], [c, -1.0], [c, 1.0]]))


def hoelder_pair(eps: float, alpha: float = 0.5, rho: float = 0.5) -> tuple[AtlasDomain, AtlasDomain]:
    """Cusp bump ``1 - |x|^alpha`` (clipped at 0) and its horizontal shift by ``eps``.

    Both live in the chart ``(-2, 2)^2``; the shift moves the boundary by at
    most ``eps`` while the profiles differ by ``eps^alpha`` at the tip.
    """
    cub = Cuboid([-2.0, -2.0], [2.0, 2.0])
    base = Cuboid([-2.0], [2.0])
    atlas = Atlas(rho, [cub], [IDENTITY], 1)

    def prof(center):
        return BoundaryProfile("power_cusp", {"height": 1.0, "scale": -1.0, "center": center,
                                              "exponent": alpha, "floor": 0.0}, base)

    return AtlasDomain(atlas, [prof(0.0)]), AtlasDomain(atlas, [prof(eps)])


def cusp_valley_domain(flat: float = 0.0, height: float = 0.8, scale: float = 0.4,
                       alpha: float = 0.5, rho: float = 0.25) -> AtlasDomain:
    """Unit-width box whose top boundary has an inward Hoelder cusp at ``x1 = 1/2``.

    ``flat > 0`` replaces the tip by a flat segment of width ``2 * flat`` while
    keeping both branches unchanged up to a horizontal shift.
    """
    d = box_domain(rho=rho)
    prof = box_profile(d, "power_cusp", {"height": height, "scale": scale, "center": 0.5,
                                         "exponent": alpha, "flat": flat})
    return d.with_profiles({0: prof})


def parabolic_cusp_boundaries(eps: float, n: int = 1000) -> tuple[PolygonDomain, PolygonDomain, dict]:
    """Cusp ``{|x2| < x1^2, x1 < 1}`` and its inner parallel set at distance ``eps``.

    The inner set is bounded by the offset curves of the two parabolic arcs,
    which meet on the axis at ``P = (xi + 2 xi^3, 0)`` where
    ``xi^2 sqrt(1 + 4 xi^2) = eps``, and by the line ``x1 = 1 - eps``.

    Returns
    -------
    outer, inner : PolygonDomain
        Polygonal approximations with ``n`` geometrically clustered samples
        per arc plus a uniform set of ``20 / sqrt(eps)``; both contain their
        exact corner points.
    info : dict
        ``xi`` and the apex abscissa ``x_apex`` of the inner set.
    """
    from scipy.optimize import brentq

    xi = brentq(lambda t: t * t * np.sqrt(1 + 4 * t * t) - eps, 0.0, 1.0, xtol=1e-15)

    def offset(t):
        s = np.sqrt(1 + 4 * t * t)
        return np.stack([t + 2 * t * eps / s, t * t - eps / s], axis=-1)

    t_end = brentq(lambda t: offset(np.array(t))[0] - (1 - eps), xi, 1.0, xtol=1e-15)
    # geometric clustering resolves the tip, the uniform part keeps the chord
    # sag of the arcs far below eps
    n_uniform = int(np.ceil(20 / np.sqrt(eps)))
    t_out = np.unique(np.concatenate([[0.0], np.geomspace(eps / 100, 1.0, n), np.linspace(0, 1, n_uniform)]))
    upper = np.stack([t_out, t_out ** 2], axis=1)
    outer = np.vstack([upper[::-1] * [1, -1], upper[1:]])
    s_in = np.unique(np.concatenate([[0.0], np.geomspace(eps / 100, 1.0, n), np.linspace(0, 1, n_uniform)]))
    t_in = xi + (t_end - xi) * s_in
    up_in = offset(t_in)
    up_in[0] = [xi + 2 * xi ** 3, 0.0]
    up_in[-1, 0] = 1 - eps
    inner = np.vstack([up_in[::-1] * [1, -1], up_in[1:]])
    return PolygonDomain(outer), PolygonDomain(inner), {"xi": xi, "x_apex": xi + 2 * xi ** 3}


# ---------------------------------------------------------------------------
# Implicit disk (used as the inscribed ball)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiskDomain:
    """Open disk with exact membership; used for the inscribed-ball bound."""

    center: tuple
    radius: float
    tol: float = 1e-12

    @property
    def bbox(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius

    @property
    def rho(self) -> float:
        return self.radius

    def classify(self, X, tol=None) -> np.ndarray:
        tol = self.tol if tol is None else tol
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.linalg.norm(X - np.asarray(self.center), axis=1)
        out = np.where(r < self.radius, 1, -1).astype(np.int8)
        out[np.abs(r - self.radius) <= tol] = 0
        return out

    def cloud(self, spacing: float) -> BoundaryCloud:
        n = max(int(np.ceil(2 * np.pi * self.radius / spacing)), 8)
        t = np.linspace(0, 2 * np.pi, n + 1)
        P = np.asarray(self.center) + self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)
        linked = np.ones(len(P), dtype=bool)
        linked[-1] = False
        res = float(np.max(np.linalg.norm(np.diff(P, axis=0), axis=1)))
        return BoundaryCloud(P, np.full(len(P), -1), linked, res, spacing)
