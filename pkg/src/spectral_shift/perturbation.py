"""Partition of unity, the transformation ``T_eps``, smooth maps and patches.

``T_eps(x) = x - eps * sum_j xi_j psi_j(x)`` pushes points of a domain down
every chart's vertical axis at once.  Its constants are measured on samples,
so every certified quantity here is an empirical bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .geometry import (
    AtlasDomain,
    BoundaryProfile,
    GeometryError,
    Rotation,
    base_samples,
    boundary_cloud,
    classify,
    sample_interior,
)
from .metrics import atlas_distance

DEFAULT_SEED = 0x5EED


class CoverageError(GeometryError):
    """Evaluation points not covered by any chart core."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class CertificationError(GeometryError):
    """A sampled bound of ``T_eps`` fails."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class PreconditionError(GeometryError):
    """The hypotheses of a check do not hold; the check was not attempted."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class DomainError(GeometryError):
    """A map leaves the region where the coefficients are defined."""


class InjectivityError(GeometryError):
    """Two distinct samples are mapped to the same point."""


# ---------------------------------------------------------------------------
# Smooth step and plateau
# ---------------------------------------------------------------------------


def _f(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _df(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smoothstep(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    a, b = _f(t), _f(1 - np.asarray(t, dtype=float))
    return a / (a + b)


def smoothstep_prime(t):
    t = np.asarray(t, dtype=float)
    a, b = _f(t), _f(1 - t)
    da, db = _df(t), _df(1 - t)
    return (da * b + a * db) / (a + b) ** 2


def plateau(t, lo: float, hi: float, ramp: float):
    """1-D bump: zero below ``lo`` and above ``hi``, one on ``[lo + ramp, hi - ramp]``.

    Returns the value and the derivative.
    """
    u = (t - lo) / ramp
    v = (hi - t) / ramp
    su, sv = smoothstep(u), smoothstep(v)
    return su * sv, (smoothstep_prime(u) * sv - su * smoothstep_prime(v)) / ramp


# ---------------------------------------------------------------------------
# Partition of unity
# ---------------------------------------------------------------------------


@dataclass
class PartitionOfUnity:
    """Normalized tensor-product plateaus, one per chart.

    Each raw bump vanishes outside ``(V_j)_{3 rho/4}`` and equals one on
    ``(V_j)_{7 rho/8}``.  With ``sigma`` the sum of the bumps, the partition is
    ``psi_j = bump_j / n(sigma)`` where ``n`` blends smoothly from ``1`` (for
    ``sigma <= 1/2``) to ``sigma`` (for ``sigma >= 1``).  Hence the functions
    sum to one wherever some core contains the point, stay in ``[0, 1]``
    and remain smooth.

    Attributes
    ----------
    atlas : Atlas
    G : float
        Largest measured gradient norm of any ``psi_j``.
    """

    atlas: object
    G: float = float("nan")

    @property
    def s(self) -> int:
        return self.atlas.s

    @property
    def rho(self) -> float:
        return self.atlas.rho

    def _bumps(self, X: np.ndarray):
        """Raw bumps and their global gradients, shapes ``(s, n)`` and ``(s, n, 2)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = self.atlas
        rho = a.rho
        B = np.empty((a.s, len(X)))
        dB = np.empty((a.s, len(X), X.shape[1]))
        for j, (c, r) in enumerate(zip(a.cuboids, a.rotations)):
            Y = r.to_chart(X)
            vals, ders = [], []
            for i in range(Y.shape[1]):
                v, dv = plateau(Y[:, i], c.lower[i] + 0.75 * rho, c.upper[i] - 0.75 * rho, rho / 8)
                vals.append(v)
                ders.append(dv)
            vals = np.array(vals)
            B[j] = np.prod(vals, axis=0)
            gy = np.empty((len(X), Y.shape[1]))
            for i in range(Y.shape[1]):
                others = np.prod(np.delete(vals, i, axis=0), axis=0)
                gy[:, i] = ders[i] * others
            dB[j] = gy @ r.matrix
        return B, dB

    def evaluate(self, X: np.ndarray, gradient: bool = False):
        """Values ``psi_j(x)`` (shape ``(s, n)``) and optionally gradients ``(s, n, 2)``."""
        B, dB = self._bumps(X)
        sig = B.sum(axis=0)
        S = smoothstep(2 * sig - 1)
        N = S * (sig - 1) + 1
        psi = B / N
        if not gradient:
            return psi
        dN = 2 * smoothstep_prime(2 * sig - 1) * (sig - 1) + S
        dsig = dB.sum(axis=0)
        grad = dB / N[None, :, None] - (B * dN / N ** 2)[:, :, None] * dsig[None, :, :]
        return psi, grad

    def __call__(self, X):
        return self.evaluate(X)

    def hessian_fd(self, X: np.ndarray, step: float | None = None) -> np.ndarray:
        """Second derivatives of every ``psi_j`` by central differences of the gradient.

        One Richardson step combines steps ``k`` and ``k/2``.  Shape ``(s, n, 2, 2)``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = step or 1e-4 * self.rho

        def central(hh):
            out = np.empty((self.s, len(X), 2, 2))
            for i in range(2):
                e = np.zeros(2)
                e[i] = hh
                _, gp = self.evaluate(X + e, gradient=True)
                _, gm = self.evaluate(X - e, gradient=True)
                out[:, :, :, i] = (gp - gm) / (2 * hh)
            return out

        c1, c2 = central(k), central(k / 2)
        H = (4 * c2 - c1) / 3
        return 0.5 * (H + np.swapaxes(H, 2, 3))

    def covered(self, X: np.ndarray) -> np.ndarray:
        """Points inside some ``(V_j)_rho``."""
        X = np.atleast_2d(X)
        out = np.zeros(len(X), dtype=bool)
        for j in range(self.s):
            out |= self.atlas.in_chart(X, j, shrink=self.rho)
        return out

    def sample_support(self, n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
        """Uniform samples of the union of the ``(V_j)_{3 rho/4}``."""
        rng = np.random.default_rng(seed)
        out = []
        per = int(np.ceil(n / self.s))
        for c, r in zip(self.atlas.cuboids, self.atlas.rotations):
            lo = c.lower + 0.75 * self.rho
            hi = c.upper - 0.75 * self.rho
            Y = rng.uniform(lo, hi, size=(per, len(lo)))
            out.append(r.to_global(Y))
        return np.vstack(out)[:n]


def _grid_over_cores(a, spacing: float, margin: float) -> np.ndarray:
    pts = []
    for c, r in zip(a.cuboids, a.rotations):
        axes = [np.arange(lo + margin, hi - margin + spacing / 2, spacing) for lo, hi in zip(c.lower, c.upper)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts.append(r.to_global(np.stack([g.ravel() for g in grids], axis=1)))
    return np.vstack(pts)


def measure_G(pu: PartitionOfUnity, spacing: float, max_points: int = 1_000_000,
              n_polish: int = 8) -> float:
    """Largest gradient norm of any ``psi_j``.

    A grid search over the chart supports at the given spacing is followed
    by local maximization from the best ``n_polish`` grid points, which
    makes the value insensitive to the grid spacing.
    """
    X = _grid_over_cores(pu.atlas, spacing, 0.75 * pu.rho)
    if len(X) > max_points:
        X = X[np.random.default_rng(DEFAULT_SEED).choice(len(X), max_points, replace=False)]

    def gnorm(P):
        _, g = pu.evaluate(P, gradient=True)
        return np.max(np.linalg.norm(g, axis=2), axis=0)

    vals = np.concatenate([gnorm(c) for c in np.array_split(X, max(1, len(X) // 50_000))])
    best = float(vals.max())
    for i in np.argsort(vals)[::-1][:n_polish]:
        res = minimize(lambda z: -gnorm(z[None, :])[0], X[i], method="Nelder-Mead",
                       options={"xatol": 1e-9 * pu.rho, "fatol": 1e-12, "maxiter": 200})
        best = max(best, -float(res.fun))
    return best


def build_partition(a, points: np.ndarray | None = None, n_check: int = 10_000,
                    seed: int = DEFAULT_SEED) -> PartitionOfUnity:
    """Partition of unity subordinate to the atlas, with sampled certification.

    Parameters
    ----------
    a : Atlas
    points : ndarray, optional
        Evaluation points that must be covered by the union of the
        ``(V_j)_rho``.
    n_check : int
        Number of random samples used for the invariants.

    Returns
    -------
    PartitionOfUnity
        With ``G`` measured by ``measure_G`` from a grid of spacing ``rho/16``.

    Raises
    ------
    CoverageError
        When a requested point lies outside every ``(V_j)_rho``.
    CertificationError
        When a sampled invariant fails.
    """
    pu = PartitionOfUnity(a)
    if points is not None:
        P = np.atleast_2d(points)
        cov = pu.covered(P)
        if not cov.all():
            raise CoverageError("point outside every chart core", witness=tuple(P[~cov][0]))
    X = pu.sample_support(n_check, seed)
    psi = pu.evaluate(X)
    if psi.min() < -1e-15 or psi.max() > 1 + 1e-12:
        raise CertificationError("partition leaves [0, 1]")
    cov = pu.covered(X)
    if cov.any():
        err = np.abs(psi[:, cov].sum(axis=0) - 1)
        if err.max() > 1e-10:
            raise CertificationError("partition does not sum to one on the chart cores",
                                     witness=tuple(X[cov][int(np.argmax(err))]))
    pu.G = measure_G(pu, a.rho / 16)
    return pu


# ---------------------------------------------------------------------------
# T_eps
# ---------------------------------------------------------------------------


@dataclass
class TEpsCertificate:
    A1: float
    A2: float
    E1: float
    G: float
    det_range: tuple
    n_samples: int


@dataclass
class TransformTEps:
    """``T_eps(x) = x - eps * sum_j xi_j psi_j(x)`` with ``xi_j`` the chart up directions."""

    partition: PartitionOfUnity
    epsilon: float = 0.0
    certificate: TEpsCertificate | None = None
    directions: np.ndarray = field(init=False)

    def __post_init__(self):
        self.directions = np.array([r.xi for r in self.partition.atlas.rotations])
        if np.max(np.abs(np.linalg.norm(self.directions, axis=1) - 1)) > 1e-12:
            raise GeometryError("chart directions are not unit vectors")

    @classmethod
    def for_atlas(cls, a, epsilon: float = 0.0) -> "TransformTEps":
        return cls(build_partition(a), epsilon)

    def with_epsilon(self, epsilon: float) -> "TransformTEps":
        t = TransformTEps(self.partition, epsilon, self.certificate)
        return t

    def displacement(self, X) -> np.ndarray:
        """``sum_j xi_j psi_j(x)``, so that ``T_eps(x) = x - eps * displacement``."""
        psi = self.partition.evaluate(X)
        return psi.T @ self.directions

    def B(self, X) -> np.ndarray:
        """``sum_j xi_j grad(psi_j)^T``, shape ``(n, 2, 2)``; ``grad T_eps = I - eps B``."""
        _, g = self.partition.evaluate(X, gradient=True)
        return np.einsum("ja,jnb->nab", self.directions, g)

    def second(self, X) -> np.ndarray:
        """``sum_j xi_j D^2 psi_j``, shape ``(n, 2, 2, 2)`` (component, then derivative pair)."""
        H = self.partition.hessian_fd(X)
        return np.einsum("ja,jnbc->nabc", self.directions, H)

    def __call__(self, X) -> np.ndarray:
        return t_eps_apply(self, X)

    def jacobian_det(self, X, eps: float | None = None) -> np.ndarray:
        eps = self.epsilon if eps is None else eps
        J = np.eye(2)[None] - eps * self.B(X)
        return np.linalg.det(J)


def t_eps_apply(t: TransformTEps, x) -> np.ndarray:
    """Evaluate ``T_eps`` at a point or an ``(n, 2)`` array."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    out = X - t.epsilon * t.displacement(X)
    return out[0] if single else out


def t_eps_samples(t: TransformTEps, n: int = 10_000, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Random samples over the supports plus a grid across the plateau edges."""
    pu = t.partition
    X = pu.sample_support(n, seed)
    G = _grid_over_cores(pu.atlas, pu.rho / 8, 0.75 * pu.rho)
    return np.vstack([X, G])


def t_eps_certify(t: TransformTEps, m: int = 1, eps_max: float | None = None,
                  n_samples: int = 10_000, seed: int = DEFAULT_SEED) -> TEpsCertificate:
    """Measure the certificate constants ``A1, A2, E1`` on samples.

    ``A1`` is the largest sampled entry of ``sum_j xi_j D^alpha psi_j`` over
    ``0 <= |alpha| <= m``, so that ``|D^alpha (T_eps - Id)| <= A1 eps``.
    With ``B = sum_j xi_j grad(psi_j)^T`` the determinant is
    ``1 - eps tr B + eps^2 det B``, hence ``A2(e) = max (|tr B| + e |det B|)``
    bounds ``|det grad T_eps - 1| / eps`` for all ``eps <= e``.  ``E1`` is the
    largest ``e <= min(eps_max, rho/4)`` with ``A2(e) e <= 1/2``.

    Raises
    ------
    CertificationError
        When ``det grad T_eps <= 0`` at a sample for the transform's own ``eps``.
    """
    pu = t.partition
    X = t_eps_samples(t, n_samples, seed)
    disp = t.displacement(X)
    B = t.B(X)
    a1 = [float(np.max(np.abs(disp))), float(np.max(np.abs(B)))]
    if m >= 2:
        H = np.vstack([t.second(c) for c in np.array_split(X, max(1, len(X) // 20_000))])
        a1.append(float(np.max(np.abs(H))))
    if m >= 3:
        raise NotImplementedError("derivatives above second order are not certified")
    A1 = max(a1)
    tr = np.abs(np.trace(B, axis1=1, axis2=2))
    dt = np.abs(np.linalg.det(B))
    cap = pu.rho / 4 if eps_max is None else min(eps_max, pu.rho / 4)

    def excess(e):
        return float(np.max(tr + e * dt)) * e - 0.5

    if excess(cap) <= 0:
        E1 = cap
    else:
        lo, hi = 0.0, cap
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if excess(mid) <= 0:
                lo = mid
            else:
                hi = mid
        E1 = lo
    A2 = float(np.max(tr + E1 * dt))
    det = np.linalg.det(np.eye(2)[None] - t.epsilon * B)
    if np.any(det <= 0):
        i = int(np.argmin(det))
        raise CertificationError(f"det grad T_eps = {det[i]:.3g} at a sample", witness=tuple(X[i]))
    cert = TEpsCertificate(A1, A2, E1, pu.G, (float(det.min()), float(det.max())), len(X))
    t.certificate = cert
    return cert


def sample_domain(d: AtlasDomain, n: int, seed: int = DEFAULT_SEED,
                  near_boundary: bool = True) -> np.ndarray:
    """About ``n`` points of the domain, half uniform and half close to the boundary.

    Near-boundary points sit below each chart's graph at depths from
    ``1e-3 rho`` to ``rho``.
    """
    rng = np.random.default_rng(seed)
    a = d.atlas
    lo, hi = a.bounding_box()
    n_uniform = n // 2 if near_boundary else n
    out = []
    got = 0
    while got < n_uniform:
        Y = rng.uniform(lo, hi, size=(4 * n_uniform, 2))
        Y = Y[classify(d, Y) == 1]
        out.append(Y)
        got += len(Y)
    U = np.vstack(out)[:n_uniform]
    if not near_boundary:
        return U
    pts = []
    per = int(np.ceil((n - n_uniform) / a.s_prime)) * 2
    for j in range(a.s_prime):
        c, r, p = a.cuboids[j], a.rotations[j], d.profiles[j]
        xb = rng.uniform(c.lower[0], c.upper[0], per)
        depth = a.rho * 10 ** rng.uniform(-3, 0, per)
        Y = np.stack([xb, p(xb) - depth], axis=1)
        pts.append(r.to_global(Y))
    P = np.vstack(pts)
    P = P[classify(d, P) == 1]
    P = P[rng.permutation(len(P))[: n - n_uniform]]
    return np.vstack([U, P])


@dataclass
class InclusionResult:
    passed: bool
    n_samples: int
    violations: int
    witness: tuple | None
    epsilon: float
    d_atlas: float
    E1: float


def inclusion_check(d1: AtlasDomain, d2: AtlasDomain, eps: float, t: TransformTEps | None = None,
                    n_samples: int = 10_000, seed: int = DEFAULT_SEED) -> InclusionResult:
    """Check ``T_eps(Omega_1) subset Omega_2`` on samples.

    Raises
    ------
    PreconditionError
        When ``Omega_2`` is not inside ``Omega_1`` on samples, when
        ``d_A(Omega_1, Omega_2) >= eps / s`` or when ``eps >= E1``.
    """
    s = d1.atlas.s
    da = atlas_distance(d1, d2)
    if da.value >= eps / s:
        raise PreconditionError(f"d_A = {da.value:.6g} is not below eps/s = {eps / s:.6g}")
    t = t or TransformTEps.for_atlas(d1.atlas)
    cert = t.certificate or t_eps_certify(t)
    if eps >= cert.E1:
        raise PreconditionError(f"eps = {eps} is not below E1 = {cert.E1:.6g}")
    X2 = sample_domain(d2, max(n_samples // 4, 100), seed + 1)
    outside = classify(d1, X2) == -1
    if outside.any():
        raise PreconditionError("Omega_2 is not contained in Omega_1", witness=tuple(X2[outside][0]))
    X = sample_domain(d1, n_samples, seed)
    Y = t.with_epsilon(eps)(X)
    bad = classify(d2, Y) != 1
    wit = tuple(X[bad][0]) if bad.any() else None
    return InclusionResult(not bad.any(), len(X), int(bad.sum()), wit, eps, da.value, cert.E1)


# ---------------------------------------------------------------------------
# Diffeomorphisms
# ---------------------------------------------------------------------------

DIFFEO_KINDS = ("translation", "dilation", "shear", "profile_graph_map", "composite")


def _fd_jacobian(f, X, k):
    cols = []
    for i in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[i] = k
        cols.append((f(X + e) - f(X - e)) / (2 * k))
    return np.stack(cols, axis=2)


@dataclass
class Diffeomorphism:
    """Smooth map of the plane.

    Kinds and parameters

    * ``translation``: ``shift``
    * ``dilation``: ``factor`` and optional ``center``
    * ``shear``: ``k``; ``(x1, x2) -> (x1 + k x2, x2)``
    * ``profile_graph_map``: ``rotation``, ``eta`` (callable of the base
      coordinate) and ``delta``; in chart coordinates
      ``(y1, y2) -> (y1, y2 + delta * eta(y1))``
    * ``composite``: ``maps``, applied first to last

    ``B1`` and ``B2`` are the declared bounds on derivatives and on
    ``|det grad phi|``; ``None`` means measure on first use.
    """

    kind: str
    params: dict
    B1: float | None = None
    B2: float | None = None

    def __post_init__(self):
        if self.kind not in DIFFEO_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")

    # constructors
    @classmethod
    def identity(cls) -> "Diffeomorphism":
        return cls("translation", {"shift": (0.0, 0.0)})

    @classmethod
    def translation(cls, shift) -> "Diffeomorphism":
        return cls("translation", {"shift": tuple(float(v) for v in shift)})

    @classmethod
    def dilation(cls, factor: float, center=(0.0, 0.0)) -> "Diffeomorphism":
        if factor <= 0:
            raise ValueError("dilation factor must be positive")
        return cls("dilation", {"factor": float(factor), "center": tuple(center)})

    @classmethod
    def shear(cls, k: float) -> "Diffeomorphism":
        return cls("shear", {"k": float(k)})

    @classmethod
    def graph_map(cls, eta: Callable, delta: float, rotation: Rotation | None = None) -> "Diffeomorphism":
        return cls("profile_graph_map", {"eta": eta, "delta": float(delta),
                                         "rotation": rotation or Rotation(np.eye(2))})

    @classmethod
    def composite(cls, maps: Sequence["Diffeomorphism"]) -> "Diffeomorphism":
        return cls("composite", {"maps": list(maps)})

    @property
    def is_affine(self) -> bool:
        if self.kind == "composite":
            return all(p.is_affine for p in self.params["maps"])
        return self.kind != "profile_graph_map"

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        p = self.params
        if self.kind == "translation":
            Y = X + np.asarray(p["shift"])
        elif self.kind == "dilation":
            c = np.asarray(p.get("center", (0.0, 0.0)))
            Y = c + p["factor"] * (X - c)
        elif self.kind == "shear":
            Y = X.copy()
            Y[:, 0] = X[:, 0] + p["k"] * X[:, 1]
        elif self.kind == "profile_graph_map":
            r = p["rotation"]
            Z = r.to_chart(X)
            Z[:, 1] = Z[:, 1] + p["delta"] * np.asarray(p["eta"](Z[:, 0]), dtype=float)
            Y = r.to_global(Z)
        else:
            Y = X
            for f in p["maps"]:
                Y = f(Y)
        return Y[0] if single else Y

    def jacobian(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self.params
        n = len(X)
        if self.kind == "translation":
            return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
        if self.kind == "dilation":
            return np.broadcast_to(p["factor"] * np.eye(2), (n, 2, 2)).copy()
        if self.kind == "shear":
            return np.broadcast_to(np.array([[1.0, p["k"]], [0.0, 1.0]]), (n, 2, 2)).copy()
        if self.kind == "composite":
            J = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
            Y = X
            for f in p["maps"]:
                J = f.jacobian(Y) @ J
                Y = f(Y)
            return J
        k = 1e-6
        return _fd_jacobian(self, X, k)

    def second_derivatives(self, X) -> np.ndarray:
        """``D^2 phi`` with shape ``(n, 2, 2, 2)`` (component, then derivative pair)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_affine:
            return np.zeros((len(X), 2, 2, 2))
        k = 1e-4
        H = (_fd_jacobian(self.jacobian, X, k))
        return 0.5 * (H + np.swapaxes(H, 2, 3))

    def bounds(self, X, m: int = 1) -> tuple[float, float]:
        """Sampled ``max |D^alpha phi|`` for ``1 <= |alpha| <= m`` and ``min |det grad phi|``."""
        J = self.jacobian(X)
        b1 = float(np.max(np.abs(J)))
        if m >= 2:
            b1 = max(b1, float(np.max(np.abs(self.second_derivatives(X)))))
        b2 = float(np.min(np.abs(np.linalg.det(J))))
        return b1, b2

    def check(self, X, m: int = 1):
        """Verify the declared bounds on samples, measuring any that are missing."""
        b1, b2 = self.bounds(X, m)
        if b2 <= 0:
            raise GeometryError("map is singular at a sample")
        if self.B1 is None:
            self.B1 = b1
        if self.B2 is None:
            self.B2 = b2
        if b1 > self.B1 * (1 + 1e-9) or b2 < self.B2 * (1 - 1e-9):
            raise GeometryError(f"declared bounds violated: sampled B1 = {b1}, B2 = {b2}")
        return b1, b2


@dataclass
class VicinityResult:
    """``L`` uses derivative orders from 1, ``L_with_values`` adds the order-0 term."""

    L: float
    L_with_values: float
    derivative_term: float
    value_term: float
    coefficient_term: float
    n_samples: int


def _vicinity_terms(phi: Diffeomorphism, op, X: np.ndarray, coefficient_domain=None):
    Y = phi(X)
    if coefficient_domain is not None:
        out = classify(coefficient_domain, Y) == -1
        if out.any():
            raise DomainError(f"phi maps {tuple(X[out][0])} outside the coefficient domain")
    J = phi.jacobian(X)
    der = float(np.max(np.abs(J - np.eye(2)[None])))
    if op.m >= 2:
        der = max(der, float(np.max(np.abs(phi.second_derivatives(X)))))
    if op.m >= 3:
        raise NotImplementedError("only m <= 2")
    val = float(np.max(np.abs(Y - X)))
    coef = 0.0
    for a in op.indices:
        for b in op.indices:
            coef = max(coef, float(np.max(np.abs(op.coefficient(a, b, Y) - op.coefficient(a, b, X)))))
    return der, val, coef


def vicinity_L(phi: Diffeomorphism, op, d, spacing: float | None = None,
               coefficient_domain=None, rel_tol: float = 0.01) -> VicinityResult:
    """Distance of ``phi`` from the identity measured on the domain.

    Derivative and coefficient maxima are sampled on interior grids whose
    spacing halves until the result changes by less than ``rel_tol``.
    Derivatives are compared entrywise.

    Raises
    ------
    DomainError
        When ``phi`` sends a sample outside ``coefficient_domain``.
    """
    rho = d.atlas.rho if isinstance(d, AtlasDomain) else getattr(d, "rho", 0.1)
    spacing = spacing or rho / 8
    prev = None
    for _ in range(5):
        X = sample_interior(d, spacing)
        terms = _vicinity_terms(phi, op, X, coefficient_domain)
        total = terms[0] + terms[2]
        if prev is not None and abs(total - prev) <= rel_tol * max(total, 1e-300):
            break
        prev = total
        spacing /= 2
    der, val, coef = terms
    return VicinityResult(der + coef, max(der, val) + coef, der, val, coef, len(X))


# ---------------------------------------------------------------------------
# rho-patches
# ---------------------------------------------------------------------------


@dataclass
class RhoPatch:
    """Set ``{lower(y1) < y2 < upper(y1), y1 in base}`` in the chart coordinates of ``rotation``."""

    rotation: Rotation
    base: tuple
    lower: Callable
    upper: Callable
    kinks: tuple = ()

    def samples(self, spacing: float) -> np.ndarray:
        """Uniform base grid merged with the kinks of both profiles."""
        lo, hi = self.base
        n = max(int(np.ceil((hi - lo) / spacing)), 2)
        k = np.asarray(self.kinks, dtype=float)
        return np.union1d(np.linspace(lo, hi, n + 1), k[(k >= lo) & (k <= hi)])

    def thickness(self, spacing: float) -> float:
        """``R_U``: sampled infimum of ``upper - lower``."""
        x = self.samples(spacing)
        return float(np.min(self.upper(x) - self.lower(x)))

    def thinness(self, spacing: float) -> float:
        """``S_U``: sampled supremum of ``upper - lower``."""
        x = self.samples(spacing)
        return float(np.max(self.upper(x) - self.lower(x)))

    def contains(self, X) -> np.ndarray:
        Y = self.rotation.to_chart(np.atleast_2d(X))
        lo, hi = self.base
        inb = (Y[:, 0] > lo) & (Y[:, 0] < hi)
        return inb & (Y[:, 1] > self.lower(Y[:, 0])) & (Y[:, 1] < self.upper(Y[:, 0]))

    def sample_points(self, n: int, rng) -> np.ndarray:
        lo, hi = self.base
        y1 = rng.uniform(lo, hi, n)
        a, b = self.lower(y1), self.upper(y1)
        y2 = a + rng.uniform(0, 1, n) * (b - a)
        keep = b > a
        return self.rotation.to_global(np.stack([y1[keep], y2[keep]], axis=1))


@dataclass
class PatchReport:
    pairs: list
    thinness: list
    thickness_outer: list
    max_thinness: float
    d_atlas: float
    slack: float
    checks: dict


def _const(v):
    return lambda x: np.full(np.shape(x), float(v))


def patches_for_difference(d1: AtlasDomain, d2: AtlasDomain, spacing: float | None = None,
                           n_samples: int = 4000, seed: int = DEFAULT_SEED) -> PatchReport:
    """Chart-aligned patches covering ``Omega_1 \\ Omega_2`` for nested domains.

    For every chart the outer patch lies between the cuboid floor and
    ``g_1``, the inner one between ``g_2`` and ``g_1``.  Patches may be
    degenerate where the two profiles coincide.

    Raises
    ------
    PreconditionError
        When ``Omega_2`` is not contained in ``Omega_1``.
    """
    a = d1.atlas
    spacing = spacing or a.rho / 64
    for j, (p1, p2) in enumerate(zip(d1.profiles, d2.profiles)):
        x = np.union1d(base_samples(p1, spacing), base_samples(p2, spacing))
        gap = p1(x) - p2(x)
        if gap.min() < -1e-12:
            i = int(np.argmin(gap))
            y = np.array([[x[i], p2(x[i:i + 1])[0] - 1e-9]])
            raise PreconditionError(f"chart {j}: g_2 exceeds g_1", witness=tuple(a.rotations[j].to_global(y)[0]))
    rng = np.random.default_rng(seed)
    X2 = sample_domain(d2, n_samples, seed + 7, near_boundary=False)
    out = classify(d1, X2) == -1
    if out.any():
        raise PreconditionError("Omega_2 is not contained in Omega_1", witness=tuple(X2[out][0]))
    pairs, S, R = [], [], []
    nested_bad = inside_bad = 0
    for j in range(a.s):
        c, r = a.cuboids[j], a.rotations[j]
        base = (float(c.lower[0]), float(c.upper[0]))
        g1, g2 = d1.profiles[j], d2.profiles[j]
        kinks = tuple(np.union1d(g1.kinks(), g2.kinks()))
        outer = RhoPatch(r, base, _const(c.lower[1]), g1, tuple(g1.kinks()))
        inner = RhoPatch(r, base, g2, g1, kinks)
        pairs.append((inner, outer))
        S.append(inner.thinness(spacing))
        R.append(outer.thickness(spacing))
        P = inner.sample_points(200, rng)
        if len(P):
            nested_bad += int((~outer.contains(P)).sum())
        Q = outer.sample_points(200, rng)
        inside_bad += int((classify(d1, Q) == -1).sum())
    X1 = sample_domain(d1, n_samples, seed + 11)
    diff = X1[classify(d2, X1) == -1]
    covered = np.zeros(len(diff), dtype=bool)
    for inner, _ in pairs:
        Y = inner.rotation.to_chart(diff)
        lo, hi = inner.base
        inb = (Y[:, 0] > lo) & (Y[:, 0] < hi)
        covered |= inb & (Y[:, 1] >= inner.lower(Y[:, 0])) & (Y[:, 1] < inner.upper(Y[:, 0]))
    da = atlas_distance(d1, d2)
    checks = {
        "inner_in_outer_violations": nested_bad,
        "outer_in_domain_violations": inside_bad,
        "outer_thickness_exceeds_rho": bool(min(R) > a.rho),
        "uncovered_difference_samples": int((~covered).sum()),
        "difference_samples": int(len(diff)),
    }
    return PatchReport(pairs, S, R, max(S), da.value, da.slack + 1e-12, checks)


# ---------------------------------------------------------------------------
# Transport of domains by maps
# ---------------------------------------------------------------------------


@dataclass
class TransportResult:
    boundary: np.ndarray
    interior: np.ndarray
    domain: AtlasDomain | None


def _resample_profile(p: BoundaryProfile, fn: Callable, spacing: float, kinks=()) -> BoundaryProfile:
    lo, hi = p.base.lower[0], p.base.upper[0]
    k = np.asarray(kinks, dtype=float)
    x = np.union1d(base_samples(p, spacing), k[(k >= lo) & (k <= hi)])
    return BoundaryProfile("piecewise_linear", {"knots": list(x), "values": list(fn(x))}, p.base)


def diffeo_transport(d: AtlasDomain, phi: Diffeomorphism, spacing: float | None = None) -> TransportResult:
    """Images of the boundary cloud and of interior samples under ``phi``.

    For a one-chart domain and a map that keeps the chart structure
    (translation, or a graph map in the chart's own frame) the image is also
    returned as a domain on the same atlas.

    Raises
    ------
    InjectivityError
        When two distinct samples land within ``1e-12`` of each other.
    """
    spacing = spacing or d.atlas.rho / 16
    cloud = boundary_cloud(d, spacing)
    Xi = sample_interior(d, spacing)
    allX = np.vstack([cloud.points, Xi])
    allX = np.unique(allX, axis=0)
    Y = phi(allX)
    pairs = cKDTree(Y).query_pairs(1e-12, output_type="ndarray")
    if len(pairs):
        i, k = pairs[0]
        raise InjectivityError(f"samples {tuple(allX[i])} and {tuple(allX[k])} have the same image")
    dom = None
    if d.atlas.s == 1:
        r = d.atlas.rotations[0]
        p = d.profiles[0]
        fine = d.atlas.rho / 256
        if phi.kind == "translation":
            sh = r.to_chart(np.asarray(phi.params["shift"], dtype=float))
            if sh[0] == 0:
                dom = d.with_profiles({0: p.with_offset(float(sh[1]))})
            else:
                dom = d.with_profiles({0: _resample_profile(p, lambda x: p(x - sh[0]) + sh[1], fine,
                                                            p.kinks() + sh[0])})
        elif phi.kind == "profile_graph_map" and phi.params["rotation"] == r:
            eta, delta = phi.params["eta"], phi.params["delta"]
            dom = d.with_profiles({0: _resample_profile(p, lambda x: p(x) + delta * np.asarray(eta(x)), fine)})
    return TransportResult(phi(cloud.points), phi(Xi), dom)
