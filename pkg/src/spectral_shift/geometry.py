"""Atlas domains in the plane.

A domain is described through a finite atlas: a list of rotated open cuboids
and, for each cuboid, a profile function whose subgraph is the part of the
domain seen through that cuboid.  The routines here evaluate profiles and answer
membership queries.  They also sample boundaries and build the
epsilon-interior and epsilon-neighbourhood regions used elsewhere.

Chart coordinates are ``y = R @ x`` where ``R`` is the rotation of the chart.
The last chart coordinate is the "vertical" one; the domain lies below the
profile graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

INTERIOR = "interior"
BOUNDARY = "boundary_band"
EXTERIOR = "exterior"

_CODE = {1: INTERIOR, 0: BOUNDARY, -1: EXTERIOR}

PROFILE_KINDS = (
    "constant",
    "polynomial",
    "trig_series",
    "power_cusp",
    "piecewise_linear",
    "sampled",
)


class GeometryError(ValueError):
    """Raised for malformed geometric input."""


class StructuralError(GeometryError):
    """A domain description whose parts do not fit together."""


class ChartDomainError(GeometryError):
    """A point was passed to a chart whose cuboid does not contain it."""


class UnsupportedDimension(GeometryError):
    """Raised by operations that are only implemented in the plane."""


# ---------------------------------------------------------------------------
# Basic types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rotation:
    """Proper rotation matrix.

    Parameters
    ----------
    matrix : array_like, shape (N, N)
        Orthogonal matrix with determinant +1.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise GeometryError("rotation matrix must be square")
        if np.max(np.abs(m @ m.T - np.eye(m.shape[0]))) > 1e-12:
            raise GeometryError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise GeometryError("only proper rotations (det = +1) are accepted")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_degrees(cls, angle: float) -> "Rotation":
        """Counter-clockwise planar rotation by ``angle`` degrees."""
        t = np.deg2rad(angle)
        c, s = np.cos(t), np.sin(t)
        # snap to exact values for multiples of 90 degrees
        c = 0.0 if abs(c) < 1e-15 else c
        s = 0.0 if abs(s) < 1e-15 else s
        return cls(np.array([[c, -s], [s, c]]))

    @classmethod
    def up_direction(cls, phi_degrees: float) -> "Rotation":
        """Rotation whose chart "up" axis points along angle ``phi``."""
        return cls.from_degrees(90.0 - phi_degrees)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def xi(self) -> np.ndarray:
        """Global direction of the chart's vertical axis, ``R^{-1} e_N``."""
        return self.matrix[-1].copy()

    def to_chart(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.matrix.T

    def to_global(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.matrix

    def __eq__(self, other) -> bool:
        return isinstance(other, Rotation) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


@dataclass(frozen=True, eq=False)
class Cuboid:
    """Open axis-aligned box ``lower < y < upper`` (chart coordinates)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise GeometryError("cuboid corners have different dimensions")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise GeometryError("cuboid corners must be finite")
        if np.any(lo >= hi):
            raise GeometryError(f"cuboid requires lower < upper, got {lo} and {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def shrink(self, delta: float) -> "Cuboid":
        """The cuboid ``(V)_delta`` obtained by moving every face inward."""
        return Cuboid(self.lower + delta, self.upper - delta)

    def contains(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        return np.all((y > self.lower) & (y < self.upper), axis=1)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Cuboid)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


@dataclass(frozen=True)
class Atlas:
    """Atlas parameters.

    Parameters
    ----------
    rho : float
        Margin parameter.
    cuboids : sequence of Cuboid
        The boxes ``r_j(V_j)`` in chart coordinates.
    rotations : sequence of Rotation
        One rotation per cuboid.
    s_prime : int
        Number of boundary charts; charts with index ``>= s_prime`` are flat.
    """

    rho: float
    cuboids: tuple
    rotations: tuple
    s_prime: int

    def __post_init__(self):
        object.__setattr__(self, "cuboids", tuple(self.cuboids))
        object.__setattr__(self, "rotations", tuple(self.rotations))
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise GeometryError("rho must be a positive finite number")
        if len(self.cuboids) != len(self.rotations):
            raise GeometryError("need one rotation per cuboid")
        if not 0 < self.s_prime <= len(self.cuboids):
            raise GeometryError("require 0 < s' <= s")
        dims = {c.dim for c in self.cuboids} | {r.dim for r in self.rotations}
        if len(dims) != 1:
            raise GeometryError("cuboids and rotations disagree on the dimension")
        for j, c in enumerate(self.cuboids):
            if c.upper[-1] - c.lower[-1] <= 2 * self.rho:
                raise GeometryError(f"chart {j}: cuboid height must exceed 2*rho")

    @property
    def s(self) -> int:
        return len(self.cuboids)

    @property
    def dim(self) -> int:
        return self.cuboids[0].dim

    def shrunk(self) -> "Atlas":
        """Atlas with margin ``rho/2`` and every cuboid shrunk by ``rho/2``."""
        half = self.rho / 2
        return Atlas(half, [c.shrink(half) for c in self.cuboids], self.rotations, self.s_prime)

    def in_chart(self, x: np.ndarray, j: int, shrink: float = 0.0) -> np.ndarray:
        y = self.rotations[j].to_chart(np.atleast_2d(x))
        c = self.cuboids[j]
        return np.all((y > c.lower + shrink) & (y < c.upper - shrink), axis=1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned global box containing every chart cuboid."""
        corners = []
        for c, r in zip(self.cuboids, self.rotations):
            grids = np.meshgrid(*[[lo, hi] for lo, hi in zip(c.lower, c.upper)], indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=1)
            corners.append(r.to_global(pts))
        allc = np.vstack(corners)
        return allc.min(axis=0), allc.max(axis=0)

    def first_difference(self, other: "Atlas") -> str | None:
        """Name of the first parameter that differs from ``other``, if any."""
        if self.rho != other.rho:
            return "rho"
        if self.s != other.s:
            return "s"
        if self.s_prime != other.s_prime:
            return "s_prime"
        for j in range(self.s):
            if self.cuboids[j] != other.cuboids[j]:
                return f"cuboids[{j}]"
            # rotations read back from angles in degrees differ in the last bits
            if not np.allclose(self.rotations[j].matrix, other.rotations[j].matrix, rtol=0.0, atol=1e-12):
                return f"rotations[{j}]"
        return None


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryProfile:
    """Boundary function ``g_j`` over the base interval of a chart.

    Parameters
    ----------
    kind : str
        One of ``PROFILE_KINDS``.
    params : dict
        Kind-specific parameters:

        * ``constant``: ``value``
        * ``polynomial``: ``coefficients`` (increasing powers)
        * ``trig_series``: ``base`` and ``terms`` as ``[amplitude, wavenumber, phase]``
          triples; value ``base + sum(a * cos(k * x + p))``
        * ``power_cusp``: ``height``, ``scale``, ``center``, ``exponent`` and
          optional ``flat``, ``floor``, ``ceiling``; value
          ``clip(height + scale * max(|x - center| - flat, 0) ** exponent)``
        * ``piecewise_linear``: ``knots`` and ``values``
        * ``sampled``: ``x0``, ``dx``, ``values`` and optional ``jump_bound``
    base : Cuboid
        Closure of the base interval ``W_j``.
    """

    kind: str
    params: dict
    base: Cuboid

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise GeometryError(f"unknown profile kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "piecewise_linear":
            k = np.asarray(p["knots"], dtype=float)
            v = np.asarray(p["values"], dtype=float)
            if k.shape != v.shape or k.size < 2 or np.any(np.diff(k) <= 0):
                raise GeometryError("piecewise_linear needs increasing knots matching values")
        if self.kind == "sampled":
            if float(p["dx"]) <= 0 or len(p["values"]) < 2:
                raise GeometryError("sampled profile needs dx > 0 and two values")
        object.__setattr__(self, "params", p)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        p = self.params
        k = self.kind
        if k == "constant":
            return np.full(x.shape, float(p["value"]))
        if k == "polynomial":
            return np.polynomial.polynomial.polyval(x, np.asarray(p["coefficients"], dtype=float))
        if k == "trig_series":
            out = np.full(x.shape, float(p.get("base", 0.0)))
            for a, w, ph in p.get("terms", []):
                out = out + a * np.cos(w * x + ph)
            return out
        if k == "power_cusp":
            u = np.maximum(np.abs(x - p["center"]) - p.get("flat", 0.0), 0.0)
            out = p["height"] + p["scale"] * u ** p["exponent"]
            lo = p.get("floor")
            hi = p.get("ceiling")
            if lo is not None:
                out = np.maximum(out, lo)
            if hi is not None:
                out = np.minimum(out, hi)
            return out
        if k == "piecewise_linear":
            return np.interp(x, p["knots"], p["values"])
        v = np.asarray(p["values"], dtype=float)
        grid = p["x0"] + p["dx"] * np.arange(v.size)
        return np.interp(x, grid, v)

    def kinks(self) -> np.ndarray:
        """Points of the base where the profile may fail to be smooth."""
        p = self.params
        lo, hi = self.base.lower[0], self.base.upper[0]
        if self.kind == "power_cusp":
            c, f = p["center"], p.get("flat", 0.0)
            pts = [c - f, c + f]
            if p.get("floor") is not None or p.get("ceiling") is not None:
                # clipping creates corners where the cusp branch meets the clip level
                for level in (p.get("floor"), p.get("ceiling")):
                    if level is None or p["scale"] == 0:
                        continue
                    r = (level - p["height"]) / p["scale"]
                    if r > 0:
                        u = r ** (1.0 / p["exponent"])
                        pts += [c - f - u, c + f + u]
            k = np.array(pts)
        elif self.kind == "piecewise_linear":
            k = np.asarray(p["knots"], dtype=float)
        elif self.kind == "sampled":
            k = p["x0"] + p["dx"] * np.arange(len(p["values"]))
        else:
            k = np.empty(0)
        k = np.concatenate([k, [lo, hi]])
        return np.unique(k[(k >= lo) & (k <= hi)])

    def with_offset(self, c: float) -> "BoundaryProfile":
        """Profile ``g + c`` of the same kind."""
        p = dict(self.params)
        if self.kind == "constant":
            p["value"] = p["value"] + c
        elif self.kind == "polynomial":
            coef = list(p["coefficients"])
            coef[0] = coef[0] + c
            p["coefficients"] = coef
        elif self.kind == "trig_series":
            p["base"] = p.get("base", 0.0) + c
        elif self.kind == "power_cusp":
            p["height"] = p["height"] + c
            for key in ("floor", "ceiling"):
                if p.get(key) is not None:
                    p[key] = p[key] + c
        else:
            p["values"] = list(np.asarray(p["values"], dtype=float) + c)
        return BoundaryProfile(self.kind, p, self.base)

    def lipschitz_estimate(self, spacing: float) -> float:
        """Largest difference quotient over a grid of the given spacing."""
        x = base_samples(self, spacing)
        g = self(x)
        return float(np.max(np.abs(np.diff(g)) / np.diff(x))) if x.size > 1 else 0.0

    def to_json(self) -> dict:
        p = {}
        for key, val in self.params.items():
            p[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return {"kind": self.kind, "params": p}


def constant_profile(value: float, lo: float, hi: float) -> BoundaryProfile:
    return BoundaryProfile("constant", {"value": float(value)}, Cuboid([lo], [hi]))


def base_samples(profile: BoundaryProfile, spacing: float) -> np.ndarray:
    """Uniform grid over the closed base merged with the profile's kinks."""
    lo, hi = profile.base.lower[0], profile.base.upper[0]
    n = max(int(np.ceil((hi - lo) / spacing)), 1)
    return np.union1d(np.linspace(lo, hi, n + 1), profile.kinks())


@dataclass(frozen=True)
class AtlasDomain:
    """An atlas together with one profile per chart."""

    atlas: Atlas
    profiles: tuple

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if len(self.profiles) != self.atlas.s:
            raise StructuralError(
                f"expected {self.atlas.s} profiles, got {len(self.profiles)}"
            )
        for j, (p, c) in enumerate(zip(self.profiles, self.atlas.cuboids)):
            if p.base.dim != c.dim - 1:
                raise StructuralError(
                    f"chart {j}: profile base has dimension {p.base.dim}, expected {c.dim - 1}"
                )

    def with_profiles(self, updates: dict) -> "AtlasDomain":
        profiles = list(self.profiles)
        for j, p in updates.items():
            profiles[j] = p
        return AtlasDomain(self.atlas, profiles)

    # convenience wrappers so that domains can be used duck-typed
    def classify(self, X, tol=None) -> np.ndarray:
        return classify(self, X, tol)

    def cloud(self, spacing: float) -> "BoundaryCloud":
        return boundary_cloud(self, spacing)


def _require_plane(d: AtlasDomain):
    if d.atlas.dim != 2:
        raise UnsupportedDimension("only N = 2 is implemented for this operation")


def default_tol(d) -> float:
    return 1e-9 * d.atlas.rho


# ---------------------------------------------------------------------------
# Membership
# ---------------------------------------------------------------------------


def chart_margins(d: AtlasDomain, X: np.ndarray, j: int) -> np.ndarray:
    """Signed distance-like margin of points with respect to chart ``j``.

    Positive inside the chart subgraph, zero on its relative boundary,
    negative outside; the value is the smallest of the vertical gap to the
    profile and the gaps to the cuboid faces.
    """
    a = d.atlas
    Y = a.rotations[j].to_chart(np.atleast_2d(X))
    c = a.cuboids[j]
    prof = d.profiles[j]
    ybar = np.clip(Y[:, 0], c.lower[0], c.upper[0])
    g = prof(ybar)
    m = np.minimum(g - Y[:, 1], Y[:, 1] - c.lower[1])
    m = np.minimum(m, Y[:, 0] - c.lower[0])
    m = np.minimum(m, c.upper[0] - Y[:, 0])
    return m


def classify(d, X, tol: float | None = None) -> np.ndarray:
    """Vectorized membership codes: 1 interior, 0 boundary band, -1 exterior."""
    if not isinstance(d, AtlasDomain):
        return d.classify(X, tol)
    _require_plane(d)
    tol = default_tol(d) if tol is None else tol
    X = np.atleast_2d(np.asarray(X, dtype=float))
    inside = np.zeros(len(X), dtype=bool)
    band = np.zeros(len(X), dtype=bool)
    for j in range(d.atlas.s):
        m = chart_margins(d, X, j)
        inside |= m > tol
        band |= np.abs(m) <= tol
    out = np.full(len(X), -1, dtype=np.int8)
    out[band] = 0
    out[inside] = 1
    return out


def membership(d, x, tol: float | None = None) -> str:
    """Membership verdict for a single point.

    Returns one of ``"interior"``, ``"boundary_band"`` or ``"exterior"``.
    """
    return _CODE[int(classify(d, np.asarray(x, dtype=float)[None, :], tol)[0])]


def directional_distance(d: AtlasDomain, x, j: int) -> float:
    """Vertical gap ``|g_j(ybar) - y_N|`` of ``x`` in chart ``j``."""
    x = np.asarray(x, dtype=float)
    if not d.atlas.in_chart(x, j)[0]:
        raise ChartDomainError(f"point {x.tolist()} is not in chart {j}")
    return float(directional_distances(d, x[None, :], j)[0])


def directional_distances(d: AtlasDomain, X: np.ndarray, j: int) -> np.ndarray:
    Y = d.atlas.rotations[j].to_chart(np.atleast_2d(X))
    return np.abs(d.profiles[j](Y[:, 0]) - Y[:, 1])


def atlas_point_distance(d: AtlasDomain, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max of the directional distances over boundary charts containing each point.

    Returns
    -------
    dist : ndarray
        ``d_A(x, boundary)``; ``nan`` where no boundary chart contains ``x``.
    covered : ndarray of bool
        Whether ``x`` lies in some boundary chart.
    """
    X = np.atleast_2d(X)
    dist = np.full(len(X), -np.inf)
    covered = np.zeros(len(X), dtype=bool)
    for j in range(d.atlas.s_prime):
        inj = d.atlas.in_chart(X, j)
        if np.any(inj):
            dj = directional_distances(d, X[inj], j)
            dist[inj] = np.maximum(dist[inj], dj)
            covered |= inj
    dist[~covered] = np.nan
    return dist, covered


# ---------------------------------------------------------------------------
# Boundary sampling
# ---------------------------------------------------------------------------


@dataclass
class BoundaryCloud:
    """Ordered boundary samples.

    Attributes
    ----------
    points : ndarray, shape (n, 2)
    charts : ndarray, shape (n,)
        Chart that produced each sample (``-1`` for external polygons).
    linked : ndarray of bool, shape (n,)
        ``linked[i]`` is true when ``points[i]`` and ``points[i + 1]`` are
        joined by a boundary segment.
    resolution : float
        Longest segment; every boundary point covered by the cloud lies
        within this distance of a sample.
    spacing : float
        Requested base spacing.
    """

    points: np.ndarray
    charts: np.ndarray
    linked: np.ndarray
    resolution: float
    spacing: float
    _tree: cKDTree | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.nonzero(self.linked)[0]
        return self.points[idx], self.points[idx + 1]

    def distance(self, X: np.ndarray, chunk: int = 4096,
                 max_candidates: int = 2_000_000) -> tuple[np.ndarray, np.ndarray]:
        """Distance from each query point to the sampled polyline set.

        Returns the distances and the nearest points on the polylines.
        Chunks whose candidate segment count exceeds ``max_candidates`` are
        split, which bounds memory for densely sampled boundaries.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dist = np.empty(len(X))
        near = np.empty_like(X)
        pending = [(s0, min(s0 + chunk, len(X))) for s0 in range(0, len(X), chunk)]
        while pending:
            a, b = pending.pop()
            res = self._distance_block(X[a:b], max_candidates if b - a > 1 else None)
            if res is None:
                m = (a + b) // 2
                pending += [(a, m), (m, b)]
                continue
            dist[a:b], near[a:b] = res
        return dist, near

    def _distance_block(self, Q: np.ndarray, limit: int | None):
        n = len(self.points)
        half = 0.5 * self.resolution + 1e-14
        d0, i0 = self.tree.query(Q)
        best = d0.copy()
        bestp = self.points[i0].copy()
        if not self.linked.any():
            return best, bestp
        lists = self.tree.query_ball_point(Q, d0 + half)
        counts = np.fromiter((len(v) for v in lists), dtype=np.int64, count=len(lists))
        if limit is not None and counts.sum() > limit:
            return None
        qi = np.repeat(np.arange(len(Q)), counts)
        vi = np.fromiter((i for v in lists for i in v), dtype=np.int64, count=counts.sum())
        # candidate segments: the ones starting at v and ending at v
        ok = self.linked[vi]
        prev = vi - 1
        okp = (prev >= 0) & self.linked[np.maximum(prev, 0)]
        seg = np.concatenate([vi[ok], prev[okp]])
        q = np.concatenate([qi[ok], qi[okp]])
        if seg.size:
            A = self.points[seg]
            B = self.points[np.minimum(seg + 1, n - 1)]
            P = Q[q]
            AB = B - A
            L2 = np.einsum("ij,ij->i", AB, AB)
            t = np.where(L2 > 0, np.einsum("ij,ij->i", P - A, AB) / np.where(L2 > 0, L2, 1), 0)
            t = np.clip(t, 0.0, 1.0)
            C = A + t[:, None] * AB
            dd = np.linalg.norm(P - C, axis=1)
            order = np.lexsort((dd, q))
            q_sorted = q[order]
            first = np.ones(len(order), dtype=bool)
            first[1:] = q_sorted[1:] != q_sorted[:-1]
            sel = order[first]
            better = dd[sel] < best[q[sel]]
            best[q[sel][better]] = dd[sel][better]
            bestp[q[sel][better]] = C[sel][better]
        return best, bestp


def _refine_polyline(fn: Callable[[np.ndarray], np.ndarray], t: np.ndarray, spacing: float,
                     max_passes: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Insert parameter midpoints until every chord is at most ``spacing``."""
    P = fn(t)
    for _ in range(max_passes):
        chord = np.linalg.norm(np.diff(P, axis=0), axis=1)
        bad = np.nonzero(chord > spacing)[0]
        if bad.size == 0:
            break
        mids = 0.5 * (t[bad] + t[bad + 1])
        t = np.insert(t, bad + 1, mids)
        P = fn(t)
    return t, P


def _chart_faces(d: AtlasDomain, j: int, spacing: float) -> list[np.ndarray]:
    """Polylines (global coordinates) along the relative boundary of a chart subgraph."""
    c = d.atlas.cuboids[j]
    rot = d.atlas.rotations[j]
    g = d.profiles[j]
    a0, b0 = c.lower[0], c.upper[0]
    aN = c.lower[1]
    faces = []

    def graph(t):
        return rot.to_global(np.stack([t, g(t)], axis=1))

    _, P = _refine_polyline(graph, base_samples(g, spacing), spacing)
    faces.append(P)
    nb = max(int(np.ceil((b0 - a0) / spacing)), 1)
    tb = np.linspace(a0, b0, nb + 1)
    faces.append(rot.to_global(np.stack([tb, np.full_like(tb, aN)], axis=1)))
    for side in (a0, b0):
        top = float(g(np.array([side]))[0])
        top = max(min(top, c.upper[1]), aN)
        ns = max(int(np.ceil((top - aN) / spacing)), 1)
        ts = np.linspace(aN, top, ns + 1)
        faces.append(rot.to_global(np.stack([np.full_like(ts, side), ts], axis=1)))
    return faces


def boundary_cloud(d, spacing: float, tol: float | None = None) -> BoundaryCloud:
    """Sample the boundary of a domain.

    Every chart contributes its profile graph and the faces of its cuboid; a
    sample is kept only when the global membership verdict is
    ``boundary_band``.  Graph polylines are refined until consecutive samples
    are at most ``spacing`` apart.

    Parameters
    ----------
    d : AtlasDomain or PolygonDomain
    spacing : float
        Target distance between consecutive samples.
    tol : float, optional
        Membership tolerance, default ``1e-9 * rho``.
    """
    if spacing <= 0:
        raise GeometryError("spacing must be positive")
    if not isinstance(d, AtlasDomain):
        return d.cloud(spacing)
    _require_plane(d)
    pts, charts, linked = [], [], []
    for j in range(d.atlas.s):
        for face in _chart_faces(d, j, spacing):
            keep = classify(d, face, tol) == 0
            if not keep.any():
                continue
            idx = np.nonzero(keep)[0]
            P = face[idx]
            link = np.zeros(len(idx), dtype=bool)
            link[:-1] = np.diff(idx) == 1
            pts.append(P)
            charts.append(np.full(len(idx), j))
            linked.append(link)
    if not pts:
        raise GeometryError("no boundary samples found")
    P = np.vstack(pts)
    L = np.concatenate(linked)
    res = _resolution(P, L)
    return BoundaryCloud(P, np.concatenate(charts), L, res, spacing)


def _resolution(P: np.ndarray, linked: np.ndarray) -> float:
    if not linked.any():
        return 0.0
    idx = np.nonzero(linked)[0]
    return float(np.max(np.linalg.norm(P[idx + 1] - P[idx], axis=1)))


# ---------------------------------------------------------------------------
# Polygons (used for fixtures that are not atlas domains)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolygonDomain:
    """Open simple polygon given by its vertices in order.

    Supports the same ``classify`` and ``cloud`` protocol as atlas domains so
    that the distance routines accept it.
    """

    vertices: np.ndarray
    tol: float = 1e-12

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least three planar vertices")
        object.__setattr__(self, "vertices", v)

    def _edges(self):
        A = self.vertices
        B = np.roll(A, -1, axis=0)
        return A, B

    def _outline(self) -> BoundaryCloud:
        P = np.vstack([self.vertices, self.vertices[:1]])
        linked = np.ones(len(P), dtype=bool)
        linked[-1] = False
        return BoundaryCloud(P, np.full(len(P), -1), linked, _resolution(P, linked), 0.0)

    def boundary_distance(self, X: np.ndarray) -> np.ndarray:
        if "_outline_cache" not in self.__dict__:
            object.__setattr__(self, "_outline_cache", self._outline())
        return self.__dict__["_outline_cache"].distance(np.atleast_2d(X))[0]

    def contains(self, X: np.ndarray, chunk: int = 256) -> np.ndarray:
        X = np.atleast_2d(X)
        A, B = self._edges()
        out = np.empty(len(X), dtype=bool)
        for s0 in range(0, len(X), chunk):
            x, y = X[s0:s0 + chunk, 0:1], X[s0:s0 + chunk, 1:2]
            cond = (A[None, :, 1] > y) != (B[None, :, 1] > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = A[None, :, 0] + (y - A[None, :, 1]) * (B[None, :, 0] - A[None, :, 0]) / (
                    B[None, :, 1] - A[None, :, 1]
                )
            hits = cond & (x < xi)
            out[s0:s0 + chunk] = (np.count_nonzero(hits, axis=1) % 2) == 1
        return out

    def classify(self, X, tol=None) -> np.ndarray:
        tol = self.tol if tol is None else tol
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.where(self.contains(X), 1, -1).astype(np.int8)
        out[self.boundary_distance(X) <= tol] = 0
        return out

    def cloud(self, spacing: float) -> BoundaryCloud:
        A, B = self._edges()
        pts = []
        for a, b in zip(A, B):
            n = max(int(np.ceil(np.linalg.norm(b - a) / spacing)), 1)
            t = np.linspace(0, 1, n + 1)[:-1]
            pts.append(a + t[:, None] * (b - a))
        pts.append(A[:1])
        P = np.vstack(pts)
        linked = np.ones(len(P), dtype=bool)
        linked[-1] = False
        return BoundaryCloud(P, np.full(len(P), -1), linked, _resolution(P, linked), spacing)

    @property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def convex_inset(vertices: np.ndarray, eps: float) -> np.ndarray:
    """Vertices of the inner parallel polygon of a convex polygon.

    Each edge line is moved inward by ``eps`` and consecutive lines are
    intersected.  The input must be convex and counter-clockwise, and ``eps``
    small enough that no edge disappears.
    """
    V = np.asarray(vertices, dtype=float)
    n = len(V)
    normals = []
    offsets = []
    for i in range(n):
        e = V[(i + 1) % n] - V[i]
        nrm = np.array([-e[1], e[0]]) / np.linalg.norm(e)  # inward for CCW
        normals.append(nrm)
        offsets.append(nrm @ V[i] + eps)
    out = []
    for i in range(n):
        M = np.array([normals[i - 1], normals[i]])
        out.append(np.linalg.solve(M, [offsets[i - 1], offsets[i]]))
    return np.array(out)


# ---------------------------------------------------------------------------
# Implicit regions
# ---------------------------------------------------------------------------


@dataclass
class ImplicitRegion:
    """Region given by a vectorized membership predicate."""

    predicate: Callable[[np.ndarray], np.ndarray]
    bbox: tuple
    description: str = ""

    def contains(self, X) -> np.ndarray:
        return self.predicate(np.atleast_2d(np.asarray(X, dtype=float)))

    def __call__(self, x) -> bool:
        return bool(self.contains(np.asarray(x, dtype=float)[None, :])[0])

    def is_empty(self, spacing: float) -> bool:
        """True when no node of a grid with the given spacing is in the region."""
        lo, hi = self.bbox
        axes = [np.arange(l, h + spacing / 2, spacing) for l, h in zip(lo, hi)]
        G = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        return not bool(self.contains(G).any())


def _domain_bbox(d):
    if isinstance(d, AtlasDomain):
        return d.atlas.bounding_box()
    return d.bbox


def _default_cloud_spacing(d, eps: float) -> float:
    rho = d.atlas.rho if isinstance(d, AtlasDomain) else 1.0
    return min(eps / 16, rho / 16) if eps > 0 else rho / 16


def eps_interior(d, eps: float, spacing: float | None = None) -> ImplicitRegion:
    """The set of interior points farther than ``eps`` from the boundary.

    Membership is certified: a point is accepted only when its distance to
    the boundary samples exceeds ``eps`` plus the sampling resolution.
    """
    if eps < 0:
        raise GeometryError("eps must be non-negative")
    bbox = _domain_bbox(d)
    if eps == 0:
        return ImplicitRegion(lambda X: classify(d, X) == 1, bbox, "interior")
    cloud = boundary_cloud(d, spacing or _default_cloud_spacing(d, eps))
    slack = cloud.resolution

    def pred(X):
        inside = classify(d, X) == 1
        out = np.zeros(len(X), dtype=bool)
        if inside.any():
            dist, _ = cloud.distance(X[inside])
            out[inside] = dist > eps + slack
        return out

    return ImplicitRegion(pred, bbox, f"eps-interior eps={eps}")


def eps_neighborhood(d, eps: float, spacing: float | None = None) -> ImplicitRegion:
    """Points whose distance to the domain is below ``eps`` (certified)."""
    if eps < 0:
        raise GeometryError("eps must be non-negative")
    lo, hi = _domain_bbox(d)
    bbox = (lo - eps, hi + eps)
    if eps == 0:
        return ImplicitRegion(lambda X: classify(d, X) >= 0, bbox, "closure")
    cloud = boundary_cloud(d, spacing or _default_cloud_spacing(d, eps))
    slack = cloud.resolution

    def pred(X):
        code = classify(d, X)
        out = code >= 0
        rest = ~out
        if rest.any():
            dist, _ = cloud.distance(X[rest])
            out[rest] = dist + slack < eps
        return out

    return ImplicitRegion(pred, bbox, f"eps-neighbourhood eps={eps}")


def atlas_eps_sets(d: AtlasDomain, eps: float) -> tuple[ImplicitRegion, ImplicitRegion]:
    """Atlas versions of the epsilon-interior and epsilon-neighbourhood.

    The inner set removes the points of the boundary charts whose atlas
    distance to the boundary is at most ``eps``; the outer set adds the points
    of the boundary charts whose atlas distance is below ``eps``.
    """
    if eps <= 0:
        raise GeometryError("eps must be positive")
    _require_plane(d)
    bbox = d.atlas.bounding_box()

    def inner(X):
        inside = classify(d, X) == 1
        dist, cov = atlas_point_distance(d, X)
        drop = cov & (dist <= eps)
        return inside & ~drop

    def outer(X):
        inside = classify(d, X) == 1
        dist, cov = atlas_point_distance(d, X)
        return inside | (cov & (dist < eps))

    return (
        ImplicitRegion(inner, bbox, f"atlas eps-interior eps={eps}"),
        ImplicitRegion(outer, bbox, f"atlas eps-neighbourhood eps={eps}"),
    )


# ---------------------------------------------------------------------------
# Validation and modulus checks
# ---------------------------------------------------------------------------

CLAUSE_MARGIN = "a_Nj+rho <= g_j <= b_Nj-rho"
CLAUSE_FLAT = "flat chart profile equals b_Nj"
CLAUSE_CONSISTENCY = "chart consistency"
CLAUSE_JUMP = "sampled jump bound"
CLAUSE_COVER = "domain inside union of rho-shrunk cuboids"
CLAUSE_TOUCH = "boundary charts meet the boundary, flat charts do not"


@dataclass(frozen=True)
class Violation:
    clause: str
    chart: int
    witness: tuple
    detail: str = ""


def validate_domain(d: AtlasDomain, strict: bool = False, tol: float | None = None) -> list[Violation]:
    """Check the defining clauses of an atlas domain on a sample grid.

    Parameters
    ----------
    d : AtlasDomain
    strict : bool
        Also check that the domain lies in the union of the ``rho``-shrunk
        cuboids and that boundary charts meet the boundary.  Off by default
        because single-chart domains truncated by their own cuboid violate it.
    tol : float, optional
        Tolerance, default ``1e-9 * rho``.

    Returns
    -------
    list of Violation
        Empty when every clause holds at the samples.

    Raises
    ------
    StructuralError
        When profiles and atlas do not match in count or dimension.
    """
    a = d.atlas
    if not np.isfinite(a.rho):
        raise StructuralError("atlas fields must be finite")
    _require_plane(d)
    tol = default_tol(d) if tol is None else tol
    spacing = a.rho / 16
    out: list[Violation] = []
    for j in range(a.s):
        c, rot, g = a.cuboids[j], a.rotations[j], d.profiles[j]
        t = base_samples(g, spacing)
        gv = g(t)
        if j < a.s_prime:
            bad = (gv < c.lower[1] + a.rho - tol) | (gv > c.upper[1] - a.rho + tol)
            if bad.any():
                i = int(np.argmax(np.where(bad, np.abs(gv - np.clip(gv, c.lower[1] + a.rho, c.upper[1] - a.rho)), -1)))
                w = rot.to_global(np.array([[t[i], gv[i]]]))[0]
                out.append(Violation(CLAUSE_MARGIN, j, tuple(w), f"g={gv[i]:.6g}"))
        else:
            if g.kind != "constant" or abs(g.params["value"] - c.upper[1]) > tol:
                i = int(np.argmax(np.abs(gv - c.upper[1])))
                w = rot.to_global(np.array([[t[i], gv[i]]]))[0]
                out.append(Violation(CLAUSE_FLAT, j, tuple(w)))
        if g.kind == "sampled" and g.params.get("jump_bound") is not None:
            v = np.asarray(g.params["values"], dtype=float)
            jumps = np.abs(np.diff(v))
            if jumps.max() > g.params["jump_bound"]:
                i = int(np.argmax(jumps))
                x0 = g.params["x0"] + g.params["dx"] * i
                w = rot.to_global(np.array([[x0, v[i]]]))[0]
                out.append(Violation(CLAUSE_JUMP, j, tuple(w)))
    out.extend(_consistency_violations(d, spacing, tol))
    if strict:
        out.extend(_strict_violations(d, spacing, tol))
    return out


def _chart_grid(a: Atlas, j: int, spacing: float) -> np.ndarray:
    c = a.cuboids[j]
    axes = [np.arange(lo + spacing / 2, hi, spacing) for lo, hi in zip(c.lower, c.upper)]
    Y = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return a.rotations[j].to_global(Y)


def _consistency_violations(d: AtlasDomain, spacing: float, tol: float) -> list[Violation]:
    a = d.atlas
    out = []
    for j in range(a.s):
        X = _chart_grid(a, j, spacing)
        # add points on the graph of chart j
        t = base_samples(d.profiles[j], spacing)
        G = a.rotations[j].to_global(np.stack([t, d.profiles[j](t)], axis=1))
        G = G[a.in_chart(G, j)]
        mj_grid = chart_margins(d, X, j)
        for k in range(j + 1, a.s):
            ink = a.in_chart(X, k)
            if ink.any():
                mk = chart_margins(d, X[ink], k)
                mj = mj_grid[ink]
                bad = ((mj > tol) & (mk < -tol)) | ((mj < -tol) & (mk > tol))
                if bad.any():
                    i = int(np.argmax(np.where(bad, np.abs(mj - mk), -1)))
                    out.append(Violation(CLAUSE_CONSISTENCY, j, tuple(X[ink][i]), f"charts {j} and {k} disagree"))
                    continue
            ing = a.in_chart(G, k)
            if ing.any():
                mk = chart_margins(d, G[ing], k)
                bad = np.abs(mk) > max(tol, 1e-9)
                if bad.any():
                    i = int(np.argmax(np.abs(mk)))
                    out.append(Violation(CLAUSE_CONSISTENCY, j, tuple(G[ing][i]),
                                         f"graph of chart {j} is off the graph of chart {k}"))
    return out


def _strict_violations(d: AtlasDomain, spacing: float, tol: float) -> list[Violation]:
    a = d.atlas
    out = []
    lo, hi = a.bounding_box()
    axes = [np.arange(l + spacing / 3, h, spacing) for l, h in zip(lo, hi)]
    X = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    X = X[classify(d, X, tol) == 1]
    covered = np.zeros(len(X), dtype=bool)
    for j in range(a.s):
        covered |= a.in_chart(X, j, shrink=a.rho)
    if not covered.all():
        out.append(Violation(CLAUSE_COVER, -1, tuple(X[~covered][0])))
    cloud = boundary_cloud(d, spacing, tol)
    for j in range(a.s):
        touches = a.in_chart(cloud.points, j).any()
        if (j < a.s_prime) != touches:
            out.append(Violation(CLAUSE_TOUCH, j, tuple(a.rotations[j].to_global(
                0.5 * (a.cuboids[j].lower + a.cuboids[j].upper)))))
    return out


@dataclass(frozen=True)
class ModulusSpec:
    """Modulus of continuity with lower slope ``k`` and scale ``M``.

    Parameters
    ----------
    kind : {"power", "linear", "custom_table"}
    alpha : float
        Exponent for the power kind.
    k : float
        Lower slope, ``omega(t) >= k t`` on ``[0, 1]``.
    M : float
        Scale in ``|g(x) - g(y)| <= M omega(|x - y|)``.
    table : tuple of (t, omega) pairs
        Breakpoints for the custom kind (linear interpolation, flat beyond).
    """

    kind: str = "power"
    alpha: float = 1.0
    k: float = 1.0
    M: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power", "linear", "custom_table"):
            raise GeometryError(f"unknown modulus kind {self.kind!r}")
        if self.kind == "power" and not 0 < self.alpha <= 1:
            raise GeometryError("power modulus needs 0 < alpha <= 1")
        if self.k <= 0 or self.M <= 0:
            raise GeometryError("k and M must be positive")
        if self.kind == "custom_table":
            t = np.array([p[0] for p in self.table], dtype=float)
            if t.size < 2 or np.any(np.diff(t) <= 0) or t[0] != 0:
                raise GeometryError("custom table needs increasing abscissae starting at 0")
        bad = self.violations()
        if bad:
            raise GeometryError("invalid modulus: " + "; ".join(bad))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return t.copy()
        if self.kind == "power":
            return np.power(np.maximum(t, 0.0), self.alpha)
        tt = np.array([p[0] for p in self.table], dtype=float)
        ww = np.array([p[1] for p in self.table], dtype=float)
        return np.interp(t, tt, ww)

    def violations(self, samples: int = 1001) -> list[str]:
        t = np.linspace(0, 1, samples)
        w = self(t)
        out = []
        if abs(float(w[0])) > 0:
            out.append("omega(0) != 0")
        if np.any(np.diff(w) < -1e-15):
            out.append("omega is decreasing somewhere")
        if np.any(w < self.k * t - 1e-12):
            out.append("omega(t) < k t somewhere on [0, 1]")
        return out


@dataclass(frozen=True)
class ModulusResult:
    ok: bool
    worst_ratio: float
    witness: tuple | None


def modulus_check(d: AtlasDomain, omega: ModulusSpec, spacing: float | None = None) -> ModulusResult:
    """Check ``|g_j(x) - g_j(y)| <= M omega(|x - y|)`` on all sampled pairs.

    Pairs are taken from a grid of spacing ``rho/64`` (merged with the profile
    kinks) on every boundary chart.  The worst ratio is
    ``max |g(x) - g(y)| / omega(|x - y|)``.
    """
    _require_plane(d)
    spacing = spacing or d.atlas.rho / 64
    worst, wit = 0.0, None
    for j in range(d.atlas.s_prime):
        g = d.profiles[j]
        if g.kind == "constant":
            continue
        x = base_samples(g, spacing)
        v = g(x)
        for s0 in range(0, len(x), 512):
            xa = x[s0 : s0 + 512, None]
            dv = np.abs(v[s0 : s0 + 512, None] - v[None, :])
            dx = np.abs(xa - x[None, :])
            w = omega(dx)
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(dx > 0, dv / w, 0.0)
            i = np.unravel_index(np.argmax(r), r.shape)
            if r[i] > worst:
                worst = float(r[i])
                wit = (j, float(xa[i[0], 0]), float(x[i[1]]))
    return ModulusResult(worst <= omega.M * (1 + 1e-12), worst, wit)


# ---------------------------------------------------------------------------
# Misc helpers
# ---------------------------------------------------------------------------


def intersect_domains(d1: AtlasDomain, d2: AtlasDomain, spacing: float | None = None) -> AtlasDomain:
    """Domain whose profiles are the pointwise minimum of the two inputs.

    The minimum is stored as a sampled profile on a grid of the given spacing
    merged with the kinks of both inputs; this is exact for piecewise linear
    inputs when all kinks fall on the grid and otherwise an interpolation.
    """
    diff = d1.atlas.first_difference(d2.atlas)
    if diff is not None:
        raise GeometryError(f"incompatible atlases: {diff} differs")
    spacing = spacing or d1.atlas.rho / 64
    profiles = []
    for p1, p2 in zip(d1.profiles, d2.profiles):
        x = np.union1d(base_samples(p1, spacing), base_samples(p2, spacing))
        v = np.minimum(p1(x), p2(x))
        profiles.append(BoundaryProfile("piecewise_linear", {"knots": list(x), "values": list(v)}, p1.base))
    return AtlasDomain(d1.atlas, profiles)


def sample_interior(d, spacing: float, offset: float = 0.37) -> np.ndarray:
    """Interior points of a lattice covering the domain."""
    lo, hi = _domain_bbox(d)
    axes = [np.arange(l + offset * spacing, h, spacing) for l, h in zip(lo, hi)]
    X = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return X[classify(d, X) == 1]


def as_points(x: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))
