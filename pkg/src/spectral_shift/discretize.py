"""Lattice discretization of order-2m quadratic forms and their lowest eigenvalues.

Supported discretizations

* second order, Dirichlet: edge form on the interior lattice nodes with zero
  exterior values; an edge that leaves the domain is shortened to the
  boundary crossing (weight ``1/theta``), which reduces to the 5-point stencil
  when the boundary runs through lattice nodes.
* second order, Neumann: bilinear elements on every cell that meets the
  domain, each weighted by the fraction of the cell inside the domain.
* fourth order, Dirichlet (clamped): squared second differences at interior
  nodes plus half-weighted reflected differences on the first exterior layer,
  and mixed differences on cells; this is the 13-point stencil in the
  interior.
* fourth order, Neumann: assembled on the cells meeting the domain but not
  validated.

Stencil mass matrices are ``h^2`` times the identity (times the density), so
stiffness matrices carry the matching ``h^2`` factor.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.optimize import brentq

from .geometry import AtlasDomain, boundary_cloud, classify

DEFAULT_SEED = 0x5EED


class NumericalError(RuntimeError):
    """Eigensolver or assembly failure."""


class ResolutionError(ValueError):
    """The lattice is too coarse for the domain."""


class EllipticityError(ValueError):
    """Coefficients fail the ellipticity condition at a sampled point."""

    def __init__(self, msg, x=None, xi=None):
        super().__init__(msg)
        self.x = x
        self.xi = xi


def _bc(bc: str) -> str:
    b = str(bc).lower()
    if b in ("d", "dirichlet"):
        return "dirichlet"
    if b in ("n", "neumann"):
        return "neumann"
    raise ValueError(f"unknown boundary condition {bc!r}")


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def multi_indices(m: int, N: int = 2) -> list[tuple]:
    """Multi-indices of length ``m`` in ``N`` variables, in decreasing lexicographic order."""
    out = [a for a in itertools.product(range(m + 1), repeat=N) if sum(a) == m]
    return sorted(out, reverse=True)


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients of the quadratic form ``sum A_ab D^a u D^b u``.

    Parameters
    ----------
    m : int
        Half the order of the operator.
    coefficients : dict
        Maps ``(alpha, beta)`` multi-index pairs to constants or callables of
        an ``(n, 2)`` point array.  Missing pairs are zero; ``(beta, alpha)``
        defaults to ``(alpha, beta)``.
    theta : float
        Ellipticity constant.
    L : float
        Coefficient bound.
    nu : float, optional
        Poisson ratio when the operator is the plate family.
    density : callable, optional
        Weight of the mass form (used for pulled-back problems).
    """

    m: int
    coefficients: dict
    theta: float = 1.0
    L: float = 1.0
    nu: float | None = None
    density: Callable | None = None

    @property
    def indices(self) -> list[tuple]:
        return multi_indices(self.m)

    @property
    def m_hat(self) -> int:
        return len(self.indices)

    def coefficient(self, a, b, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        c = self.coefficients.get((a, b), self.coefficients.get((b, a), 0.0))
        if callable(c):
            return np.broadcast_to(np.asarray(c(X), dtype=float), (len(X),)).copy()
        return np.full(len(X), float(c))

    def matrix_field(self, X: np.ndarray) -> np.ndarray:
        """Coefficient matrices at points, shape ``(n, m_hat, m_hat)``."""
        idx = self.indices
        X = np.atleast_2d(X)
        out = np.empty((len(X), len(idx), len(idx)))
        for i, a in enumerate(idx):
            for j, b in enumerate(idx):
                out[:, i, j] = self.coefficient(a, b, X)
        return out

    def mass_density(self, X: np.ndarray) -> np.ndarray:
        if self.density is None:
            return np.ones(len(np.atleast_2d(X)))
        return np.asarray(self.density(np.atleast_2d(X)), dtype=float)

    def check(self, X: np.ndarray, n_dirs: int = 8, seed: int = DEFAULT_SEED):
        """Verify symmetry and ellipticity at the given points.

        Raises
        ------
        EllipticityError
            With the first violating point and direction.
        """
        A = self.matrix_field(X)
        if np.max(np.abs(A - np.swapaxes(A, 1, 2))) > 1e-12 * max(1.0, np.max(np.abs(A))):
            raise EllipticityError("coefficients are not symmetric")
        w = np.linalg.eigvalsh(A)[:, 0]
        i = int(np.argmin(w))
        if w[i] < self.theta * (1 - 1e-12) - 1e-14:
            vals, vecs = np.linalg.eigh(A[i])
            raise EllipticityError(
                f"ellipticity fails: smallest eigenvalue {w[i]:.6g} < theta = {self.theta}",
                x=tuple(np.atleast_2d(X)[i]), xi=tuple(vecs[:, 0]))
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((n_dirs, self.m_hat))
        q = np.einsum("ka,nab,kb->nk", xi, A, xi)
        if np.any(q < self.theta * np.sum(xi ** 2, axis=1)[None, :] * (1 - 1e-9)):
            raise EllipticityError("ellipticity fails on a random direction")

    # constructors ---------------------------------------------------------

    @classmethod
    def laplacian(cls) -> "OperatorSpec":
        return cls(1, {((1, 0), (1, 0)): 1.0, ((0, 1), (0, 1)): 1.0}, theta=1.0, L=1.0)

    @classmethod
    def from_matrix(cls, A, theta: float | None = None, density=None) -> "OperatorSpec":
        """Second-order operator with coefficient matrix ``A`` (constant or callable).

        A callable must return an array of shape ``(n, 2, 2)``.
        """
        e1, e2 = (1, 0), (0, 1)
        if callable(A):
            coeffs = {
                (e1, e1): lambda X: A(X)[:, 0, 0],
                (e1, e2): lambda X: A(X)[:, 0, 1],
                (e2, e2): lambda X: A(X)[:, 1, 1],
            }
            return cls(1, coeffs, theta=theta if theta is not None else 1.0, L=1.0, density=density)
        A = np.asarray(A, dtype=float)
        th = float(np.linalg.eigvalsh(A)[0]) if theta is None else theta
        coeffs = {(e1, e1): A[0, 0], (e1, e2): A[0, 1], (e2, e2): A[1, 1]}
        return cls(1, coeffs, theta=th, L=float(np.max(np.abs(A))), density=density)

    @classmethod
    def biharmonic(cls, nu: float | None = None) -> "OperatorSpec":
        """Plate form ``u11^2 + 2 u12^2 + u22^2``, or its Poisson-ratio mix.

        With ``nu`` the form is ``nu (Delta u)^2 + (1 - nu)(u11^2 + 2 u12^2 + u22^2)``
        whose ellipticity constant is ``1 - nu``.
        """
        a, b, c = (2, 0), (1, 1), (0, 2)
        if nu is None:
            return cls(2, {(a, a): 1.0, (b, b): 2.0, (c, c): 1.0}, theta=1.0, L=2.0)
        if not 0 <= nu < 1:
            raise ValueError("nu must lie in [0, 1)")
        coeffs = {(a, a): 1.0, (c, c): 1.0, (a, c): nu, (b, b): 2 * (1 - nu)}
        return cls(2, coeffs, theta=1 - nu, L=2.0, nu=nu)


# ---------------------------------------------------------------------------
# Lattices
# ---------------------------------------------------------------------------


@dataclass
class GridDomain:
    """Rasterization of a domain.

    Attributes
    ----------
    h : float
        Lattice spacing.
    index0 : ndarray of int
        Integer lattice coordinates of the first node; node ``(i, j)`` sits at
        ``(index0 + (i, j)) * h``, so lattices of different domains with the
        same ``h`` coincide.
    mask : ndarray of bool, shape (nx, ny)
        Interior nodes.
    codes : ndarray of int8
        Membership codes of all nodes.
    source : object
        The rasterized domain.
    components : int
        Number of 4-connected components of the interior mask.
    """

    h: float
    index0: np.ndarray
    mask: np.ndarray
    codes: np.ndarray
    source: object
    components: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    def coords(self, ij: np.ndarray) -> np.ndarray:
        return (self.index0[None, :] + np.asarray(ij)) * self.h

    def node_coords(self) -> np.ndarray:
        I, J = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]), indexing="ij")
        return self.coords(np.stack([I.ravel(), J.ravel()], axis=1)).reshape(self.shape + (2,))

    def interior_points(self) -> np.ndarray:
        return self.node_coords()[self.mask]

    def classify(self, X):
        return classify(self.source, X)


def _source_rho(d) -> float:
    if isinstance(d, AtlasDomain):
        return d.atlas.rho
    return float(getattr(d, "rho", np.inf))


def _source_bbox(d):
    if isinstance(d, AtlasDomain):
        return d.atlas.bounding_box()
    return d.bbox


def rasterize(d, h: float, check_spacing: bool = True) -> GridDomain:
    """Mark lattice nodes of spacing ``h`` that lie inside the domain.

    Raises
    ------
    ResolutionError
        When ``h > rho/4`` or no node is interior.
    """
    if check_spacing and h > _source_rho(d) / 4 * (1 + 1e-12):
        raise ResolutionError(f"h = {h} exceeds rho/4 = {_source_rho(d) / 4}")
    lo, hi = _source_bbox(d)
    i0 = np.floor(np.asarray(lo) / h + 1e-9).astype(int) - 1
    i1 = np.ceil(np.asarray(hi) / h - 1e-9).astype(int) + 1
    shape = tuple(int(v) for v in (i1 - i0 + 1))
    I, J = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    X = (i0[None, :] + np.stack([I.ravel(), J.ravel()], axis=1)) * h
    codes = classify(d, X).reshape(shape)
    mask = codes == 1
    if not mask.any():
        raise ResolutionError("no interior lattice node; decrease h")
    _, ncomp = ndimage.label(mask)
    return GridDomain(h, i0, mask, codes, d, int(ncomp))


# ---------------------------------------------------------------------------
# Assembly helpers
# ---------------------------------------------------------------------------


def _numbering(mask: np.ndarray) -> np.ndarray:
    num = np.full(mask.shape, -1, dtype=np.int64)
    num[mask] = np.arange(int(mask.sum()))
    return num


def _crossing(g: GridDomain, P: np.ndarray, Q: np.ndarray, iters: int = 48) -> np.ndarray:
    """Fraction ``theta`` of the segment ``P -> Q`` at which it leaves the domain."""
    lo = np.zeros(len(P))
    hi = np.ones(len(P))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = classify(g.source, P + mid[:, None] * (Q - P)) == 1
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


THETA_MIN = 1e-6


def _edges(g: GridDomain, axis: int):
    """Lattice edges along ``axis`` with at least one interior endpoint.

    Returns index pairs ``(p, q)`` (flattened lattice indices).
    """
    nx, ny = g.shape
    flat = np.arange(nx * ny).reshape(nx, ny)
    if axis == 0:
        a, b = flat[:-1, :], flat[1:, :]
    else:
        a, b = flat[:, :-1], flat[:, 1:]
    a, b = a.ravel(), b.ravel()
    m = g.mask.ravel()
    keep = m[a] | m[b]
    return a[keep], b[keep]


def _assemble_m1_dirichlet(g: GridDomain, op: OperatorSpec):
    h = g.h
    m = g.mask.ravel()
    num = _numbering(g.mask).ravel()
    n = int(m.sum())
    XY = g.node_coords().reshape(-1, 2)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    idx = op.indices  # [(1,0), (0,1)]
    for axis in (0, 1):
        e = idx[axis]
        p, q = _edges(g, axis)
        both = m[p] & m[q]
        pp, qq = p[both], q[both]
        a = op.coefficient(e, e, 0.5 * (XY[pp] + XY[qq]))
        ip, iq = num[pp], num[qq]
        np.add.at(diag, ip, a)
        np.add.at(diag, iq, a)
        rows += [ip, iq]
        cols += [iq, ip]
        vals += [-a, -a]
        # cut edges: one endpoint interior
        one = ~both
        pi = np.where(m[p[one]], p[one], q[one])
        po = np.where(m[p[one]], q[one], p[one])
        theta = _crossing(g, XY[pi], XY[po])
        theta = np.maximum(theta, THETA_MIN)
        a = op.coefficient(e, e, XY[pi] + 0.5 * theta[:, None] * (XY[po] - XY[pi]))
        np.add.at(diag, num[pi], a / theta)
    # mixed term 2 A12 D1u D2u on cells, values outside the domain are zero
    e1, e2 = idx
    nx, ny = g.shape
    flat = np.arange(nx * ny).reshape(nx, ny)
    c00, c10 = flat[:-1, :-1].ravel(), flat[1:, :-1].ravel()
    c01, c11 = flat[:-1, 1:].ravel(), flat[1:, 1:].ravel()
    centers = 0.5 * (XY[c00] + XY[c11])
    a12 = op.coefficient(e1, e2, centers)
    touch = (m[c00] | m[c10] | m[c01] | m[c11]) & (a12 != 0)
    if touch.any():
        corners = [c00[touch], c10[touch], c01[touch], c11[touch]]
        d1 = np.array([-1.0, 1.0, -1.0, 1.0]) / 2.0
        d2 = np.array([-1.0, -1.0, 1.0, 1.0]) / 2.0
        a = a12[touch]
        for r in range(4):
            for c in range(4):
                w = a * (d1[r] * d2[c] + d2[r] * d1[c])
                ok = m[corners[r]] & m[corners[c]]
                rows.append(num[corners[r][ok]])
                cols.append(num[corners[c][ok]])
                vals.append(w[ok])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M = sp.diags(h * h * op.mass_density(XY[m])).tocsr()
    return K, M


_KXX = np.array([[2, -2, 1, -1], [-2, 2, -1, 1], [1, -1, 2, -2], [-1, 1, -2, 2]]) / 6.0
# local order: (0,0), (1,0), (0,1), (1,1)
_KYY = np.array([[2, 1, -2, -1], [1, 2, -1, -2], [-2, -1, 2, 1], [-1, -2, 1, 2]]) / 6.0
_KXY = np.array([[1, -1, 1, -1], [1, -1, 1, -1], [-1, 1, -1, 1], [-1, 1, -1, 1]]) / 4.0
_MASS = np.array([[4, 2, 2, 1], [2, 4, 1, 2], [2, 1, 4, 2], [1, 2, 2, 4]]) / 36.0


def cell_fractions(g: GridDomain, sub: int = 16) -> np.ndarray:
    """Fraction of each lattice cell inside the domain, by ``sub x sub`` midpoint sampling.

    Cells whose four corners are interior and which contain no boundary
    sample count as full.
    """
    if ("frac", sub) in g._cache:
        return g._cache[("frac", sub)]
    nx, ny = g.shape
    inner = g.mask
    full = inner[:-1, :-1] & inner[1:, :-1] & inner[:-1, 1:] & inner[1:, 1:]
    anyc = ((g.codes[:-1, :-1] >= 0) | (g.codes[1:, :-1] >= 0) | (g.codes[:-1, 1:] >= 0)
            | (g.codes[1:, 1:] >= 0))
    cand = anyc & ~full
    # cells crossed by thin boundary features
    try:
        cloud = boundary_cloud(g.source, g.h / 4)
        ij = np.floor(cloud.points / g.h - g.index0[None, :] + 1e-12).astype(int)
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < nx - 1) & (ij[:, 1] >= 0) & (ij[:, 1] < ny - 1)
        cand[ij[ok, 0], ij[ok, 1]] = True
    except Exception:  # clouds are an optimisation hint only
        pass
    # cells with no interior corner may still meet the domain through a thin part
    frac = full.astype(float)
    ci, cj = np.nonzero(cand)
    if ci.size:
        s = (np.arange(sub) + 0.5) / sub
        SX, SY = np.meshgrid(s, s, indexing="ij")
        off = np.stack([SX.ravel(), SY.ravel()], axis=1)
        base = g.coords(np.stack([ci, cj], axis=1))
        P = (base[:, None, :] + g.h * off[None, :, :]).reshape(-1, 2)
        inside = (classify(g.source, P) == 1).reshape(len(ci), -1)
        frac[ci, cj] = inside.mean(axis=1)
    g._cache[("frac", sub)] = frac
    return frac


def neumann_nodes(g: GridDomain) -> np.ndarray:
    """Mask of the Neumann unknowns: corners of cells with positive volume fraction."""
    ci, cj = np.nonzero(cell_fractions(g) > 0)
    active = np.zeros(g.shape, dtype=bool)
    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
        active[ci + di, cj + dj] = True
    return active


def dof_points(g: GridDomain, bc: str) -> np.ndarray:
    """Coordinates of the unknowns in assembly order."""
    mask = g.mask if _bc(bc) == "dirichlet" else neumann_nodes(g)
    return g.node_coords()[mask]


def _assemble_m1_neumann(g: GridDomain, op: OperatorSpec):
    h = g.h
    frac = cell_fractions(g)
    ci, cj = np.nonzero(frac > 0)
    active = neumann_nodes(g)
    num = _numbering(active)
    n = int(active.sum())
    loc = np.stack([num[ci, cj], num[ci + 1, cj], num[ci, cj + 1], num[ci + 1, cj + 1]], axis=1)
    centers = g.coords(np.stack([ci, cj], axis=1)) + 0.5 * h
    e1, e2 = op.indices
    a11 = op.coefficient(e1, e1, centers)
    a22 = op.coefficient(e2, e2, centers)
    a12 = op.coefficient(e1, e2, centers)
    f = frac[ci, cj]
    rho = op.mass_density(centers)
    Ke = (a11[:, None, None] * _KXX + a22[:, None, None] * _KYY
          + a12[:, None, None] * (_KXY + _KXY.T)) * f[:, None, None]
    Me = (h * h) * _MASS[None] * (f * rho)[:, None, None]
    R = np.repeat(loc, 4, axis=1).ravel()
    C = np.tile(loc, (1, 4)).ravel()
    K = sp.csr_matrix((Ke.ravel(), (R, C)), shape=(n, n))
    M = sp.csr_matrix((Me.ravel(), (R, C)), shape=(n, n))
    return K, M


def _second_differences_dirichlet(g: GridDomain):
    """Difference operators for the clamped fourth-order form.

    Returns ``(B11, B22, w, B12, node_pts, cell_pts)`` where ``B11``/``B22``
    act at interior nodes and first-layer exterior nodes (weights ``w``) and
    ``B12`` at cells.  Exterior layer nodes use the reflected value of their
    interior neighbour.
    """
    h = g.h
    mask = g.mask
    nx, ny = g.shape
    num = _numbering(mask)
    n = int(mask.sum())
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = mask
    nb = pad[:-2, 1:-1] | pad[2:, 1:-1] | pad[1:-1, :-2] | pad[1:-1, 2:]
    layer = nb & ~mask
    rows_nodes = np.argwhere(mask | layer)
    rid = np.full((nx, ny), -1, dtype=np.int64)
    rid[rows_nodes[:, 0], rows_nodes[:, 1]] = np.arange(len(rows_nodes))
    w = np.where(mask[rows_nodes[:, 0], rows_nodes[:, 1]], 1.0, 0.5)
    inv = 1.0 / (h * h)

    def build(axis):
        R, C, V = [], [], []
        step = np.array([1, 0]) if axis == 0 else np.array([0, 1])
        for k, (i, j) in enumerate(rows_nodes):
            pm = (i - step[0], j - step[1])
            pp = (i + step[0], j + step[1])

            def val(p):
                if 0 <= p[0] < nx and 0 <= p[1] < ny and mask[p]:
                    return num[p]
                return -1

            a, b = val(pm), val(pp)
            if mask[i, j]:
                R.append(k); C.append(num[i, j]); V.append(-2 * inv)
                if a >= 0:
                    R.append(k); C.append(a); V.append(inv)
                if b >= 0:
                    R.append(k); C.append(b); V.append(inv)
            else:
                if a >= 0 and b < 0:
                    R.append(k); C.append(a); V.append(2 * inv)
                elif b >= 0 and a < 0:
                    R.append(k); C.append(b); V.append(2 * inv)
                elif a >= 0 and b >= 0:
                    R += [k, k]; C += [a, b]; V += [inv, inv]
        return sp.csr_matrix((V, (R, C)), shape=(len(rows_nodes), n))

    B11 = build(0)
    B22 = build(1)
    c = np.argwhere(mask[:-1, :-1] | mask[1:, :-1] | mask[:-1, 1:] | mask[1:, 1:])
    R, C, V = [], [], []
    for k, (i, j) in enumerate(c):
        for (di, dj), s in (((0, 0), 1), ((1, 0), -1), ((0, 1), -1), ((1, 1), 1)):
            if mask[i + di, j + dj]:
                R.append(k); C.append(num[i + di, j + dj]); V.append(s * inv)
    B12 = sp.csr_matrix((V, (R, C)), shape=(len(c), n))
    node_pts = g.coords(rows_nodes)
    cell_pts = g.coords(c) + 0.5 * h
    return B11, B22, w, B12, node_pts, cell_pts


def _fourth_order_form(op: OperatorSpec, B11, B22, w, B12, node_pts, cell_pts, h):
    a, b, c = (2, 0), (1, 1), (0, 2)
    for pair in ((a, b), (c, b)):
        if np.any(op.coefficient(*pair, node_pts) != 0):
            raise NotImplementedError("coupling between mixed and pure second derivatives is not supported")
    Aaa = sp.diags(w * op.coefficient(a, a, node_pts))
    Acc = sp.diags(w * op.coefficient(c, c, node_pts))
    Aac = sp.diags(w * op.coefficient(a, c, node_pts))
    Abb = sp.diags(op.coefficient(b, b, cell_pts))
    K = B11.T @ Aaa @ B11 + B22.T @ Acc @ B22 + B11.T @ Aac @ B22 + B22.T @ Aac @ B11 + B12.T @ Abb @ B12
    return (h * h) * K


def _assemble_m2_dirichlet(g: GridDomain, op: OperatorSpec):
    B11, B22, w, B12, node_pts, cell_pts = _second_differences_dirichlet(g)
    K = _fourth_order_form(op, B11, B22, w, B12, node_pts, cell_pts, g.h).tocsr()
    M = sp.diags(g.h ** 2 * op.mass_density(g.interior_points())).tocsr()
    return K, M


def _assemble_m2_neumann(g: GridDomain, op: OperatorSpec):
    h = g.h
    nx, ny = g.shape
    frac = cell_fractions(g)
    cells = frac > 0
    ci, cj = np.nonzero(cells)
    active = neumann_nodes(g)
    num = _numbering(active)
    n = int(active.sum())
    inv = 1.0 / (h * h)

    def build(axis):
        R, C, V = [], [], []
        pts = []
        k = 0
        for i, j in np.argwhere(active):
            di, dj = (1, 0) if axis == 0 else (0, 1)
            a = (i - di, j - dj)
            b = (i + di, j + dj)
            if min(a) < 0 or b[0] >= nx or b[1] >= ny or not (active[a] and active[b]):
                continue
            R += [k, k, k]
            C += [num[a], num[i, j], num[b]]
            V += [inv, -2 * inv, inv]
            pts.append((i, j))
            k += 1
        return sp.csr_matrix((V, (R, C)), shape=(k, n)), np.array(pts).reshape(-1, 2)

    B11, p11 = build(0)
    B22, p22 = build(1)
    # use the nodes where both second differences exist for the coupled terms
    s11 = {tuple(p): r for r, p in enumerate(p11)}
    both = [(s11[tuple(p)], r) for r, p in enumerate(p22) if tuple(p) in s11]
    if both:
        r11, r22 = np.array(both).T
        B11c, B22c = B11[r11], B22[r22]
        ptsc = g.coords(p22[r22])
    else:
        B11c = B22c = sp.csr_matrix((0, n))
        ptsc = np.empty((0, 2))
    cc = np.argwhere(cells)
    R, C, V = [], [], []
    for k, (i, j) in enumerate(cc):
        for (di, dj), s in (((0, 0), 1), ((1, 0), -1), ((0, 1), -1), ((1, 1), 1)):
            R.append(k); C.append(num[i + di, j + dj]); V.append(s * inv)
    B12 = sp.csr_matrix((V, (R, C)), shape=(len(cc), n))
    a, b, c = (2, 0), (1, 1), (0, 2)
    K = (B11.T @ sp.diags(op.coefficient(a, a, g.coords(p11))) @ B11
         + B22.T @ sp.diags(op.coefficient(c, c, g.coords(p22))) @ B22
         + B11c.T @ sp.diags(op.coefficient(a, c, ptsc)) @ B22c
         + B22c.T @ sp.diags(op.coefficient(a, c, ptsc)) @ B11c
         + B12.T @ sp.diags(op.coefficient(b, b, g.coords(cc) + 0.5 * h) * frac[cells]) @ B12)
    K = (h * h) * K
    f = frac[ci, cj]
    loc = np.stack([num[ci, cj], num[ci + 1, cj], num[ci, cj + 1], num[ci + 1, cj + 1]], axis=1)
    Me = (h * h) * _MASS[None] * f[:, None, None]
    M = sp.csr_matrix((Me.ravel(), (np.repeat(loc, 4, axis=1).ravel(), np.tile(loc, (1, 4)).ravel())),
                      shape=(n, n))
    return K.tocsr(), M


@dataclass
class Assembly:
    K: sp.csr_matrix
    M: sp.csr_matrix
    bc: str
    validated: bool = True

    def __iter__(self):
        return iter((self.K, self.M))


def assemble(g: GridDomain, op: OperatorSpec, bc: str) -> Assembly:
    """Stiffness and mass matrices of the quadratic form on the lattice.

    Parameters
    ----------
    g : GridDomain
    op : OperatorSpec
        ``m`` must be 1 or 2.
    bc : {"dirichlet", "neumann"}

    Returns
    -------
    Assembly
        Unpacks as ``K, M``; ``validated`` is false for fourth-order Neumann.

    Raises
    ------
    EllipticityError
        When the coefficients fail the ellipticity check at a lattice point.
    """
    bc = _bc(bc)
    op.check(g.interior_points())
    if op.m == 1:
        K, M = _assemble_m1_dirichlet(g, op) if bc == "dirichlet" else _assemble_m1_neumann(g, op)
        validated = True
    elif op.m == 2:
        if bc == "dirichlet":
            K, M = _assemble_m2_dirichlet(g, op)
            validated = True
        else:
            K, M = _assemble_m2_neumann(g, op)
            validated = False
    else:
        raise NotImplementedError("only m = 1 and m = 2 are assembled")
    K = 0.5 * (K + K.T)
    return Assembly(K.tocsr(), M.tocsr(), bc, validated)


# ---------------------------------------------------------------------------
# Eigensolver
# ---------------------------------------------------------------------------


@dataclass
class Spectrum:
    """Lowest eigenvalues of a discretized problem."""

    eigenvalues: np.ndarray
    bc: str
    op: OperatorSpec | None
    h: float | None
    residuals: np.ndarray
    vectors: np.ndarray | None = None
    n_dof: int = 0
    method: str = ""

    def __getitem__(self, i):
        return self.eigenvalues[i]

    def __len__(self):
        return len(self.eigenvalues)


RESIDUAL_TOL = 1e-8


def _residuals(K, M, vals, vecs):
    R = K @ vecs - (M @ vecs) * vals[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(vecs, axis=0)


def _polish(K, M, vals, vecs, steps: int = 2):
    """Block inverse iteration near the lowest eigenvalue followed by Rayleigh-Ritz."""
    scale = max(abs(float(vals[-1])), 1.0)
    sigma = float(vals[0]) - 1e-3 * scale
    lu = spla.splu((K - sigma * M).tocsc())
    V = vecs
    for _ in range(steps):
        V = lu.solve(np.asarray(M @ V))
        V, _ = np.linalg.qr(V)
        w, Z = scipy.linalg.eigh(V.T @ (K @ V), V.T @ (M @ V))
        V = V @ Z
        vals = w
    return vals, V


def solve_lowest(K, M, k: int, seed: int = DEFAULT_SEED, bc: str = "", op=None, h=None,
                 keep_vectors: bool = True) -> Spectrum:
    """The ``k`` smallest eigenpairs of ``K u = lambda M u``.

    Shift-invert Lanczos with a sparse LU factorization at a small negative
    shift; the starting vector is drawn from a generator seeded with
    ``seed``.  Small problems are solved densely.  When the factorization
    fails or the residual contract is missed, LOBPCG is tried, and pairs
    that still miss it get two steps of block inverse iteration.

    Raises
    ------
    NumericalError
        When no method reaches ``||K u - lambda M u|| / ||u|| <= 1e-8``.
    """
    K = sp.csr_matrix(K)
    M = sp.csr_matrix(M)
    n = K.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    k = min(k, n)
    if n <= 400:
        vals, vecs = scipy.linalg.eigh(K.toarray(), M.toarray())
        vals, vecs = vals[:k], vecs[:, :k]
        method = "dense"
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n)
        scale = float(np.max(K.diagonal() / M.diagonal()))
        sigma = -1e-6 * scale
        try:
            vals, vecs = spla.eigsh(K, k=k, M=M, sigma=sigma, which="LM", v0=v0, tol=0)
            method = "shift-invert"
        except (RuntimeError, spla.ArpackError, ValueError):
            vals, vecs, method = None, None, ""
        if vals is None or np.max(_residuals(K, M, vals, vecs)) > RESIDUAL_TOL:
            X0 = rng.standard_normal((n, k + 2))
            vals2, vecs2 = spla.lobpcg(K, X0, B=M, largest=False, tol=1e-12, maxiter=5000)
            vals2, vecs2 = vals2[:k], vecs2[:, :k]
            if vals is None or np.max(_residuals(K, M, vals2, vecs2)) < np.max(_residuals(K, M, vals, vecs)):
                vals, vecs, method = vals2, vecs2, "lobpcg"
    order = np.argsort(vals)
    vals = np.asarray(vals)[order]
    vecs = np.asarray(vecs)[:, order]
    res = _residuals(K, M, vals, vecs)
    if np.max(res) > RESIDUAL_TOL:
        pv, pV = _polish(K, M, vals, vecs)
        pres = _residuals(K, M, pv, pV)
        if np.max(pres) < np.max(res):
            vals, vecs, res = pv, pV, pres
    if np.max(res) > RESIDUAL_TOL:
        raise NumericalError(f"eigensolver did not converge; residuals {res}")
    return Spectrum(vals, bc, op, h, res, vecs if keep_vectors else None, n, method)


def spectrum(d, op: OperatorSpec, bc: str, h: float, k: int = 6, seed: int = DEFAULT_SEED,
             grid: GridDomain | None = None) -> Spectrum:
    """Lowest eigenvalues of an operator on a domain, from lattice to solve."""
    g = grid or rasterize(d, h)
    K, M = assemble(g, op, bc)
    s = solve_lowest(K, M, k, seed=seed, bc=_bc(bc), op=op, h=h)
    return s


def rayleigh_quotient(K, M, u) -> float:
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ValueError("the Rayleigh quotient of the zero vector is undefined")
    return float(u @ (K @ u) / (u @ (M @ u)))


def rayleigh(g: GridDomain, op: OperatorSpec, bc: str, u) -> float:
    """``u^T K u / u^T M u`` for a vector over the degrees of freedom."""
    K, M = assemble(g, op, bc)
    return rayleigh_quotient(K, M, u)


def max_rayleigh_on_subspace(K, M, V) -> float:
    """Largest Rayleigh quotient over the span of the columns of ``V``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    Kr = V.T @ (K @ V)
    Mr = V.T @ (M @ V)
    return float(scipy.linalg.eigh(Kr, Mr, eigvals_only=True)[-1])


# ---------------------------------------------------------------------------
# Closed-form references
# ---------------------------------------------------------------------------


def oracle_rectangle(a: float, b: float, bc: str, k: int) -> np.ndarray:
    """Lowest ``k`` Laplacian eigenvalues of the ``a x b`` rectangle."""
    if a <= 0 or b <= 0:
        raise ValueError("side lengths must be positive")
    start = 1 if _bc(bc) == "dirichlet" else 0
    top = start + k + 1
    p = np.arange(start, top)
    vals = np.pi ** 2 * (p[:, None] ** 2 / a ** 2 + p[None, :] ** 2 / b ** 2)
    return np.sort(vals.ravel())[:k]


def clamped_roots(k: int) -> np.ndarray:
    """First ``k`` positive roots of ``cos(x) cosh(x) = 1``."""
    f = lambda x: np.cos(x) - 1.0 / np.cosh(x)
    out = []
    for j in range(1, k + 1):
        c = (j + 0.5) * np.pi
        out.append(brentq(f, c - 0.5, c + 0.5, xtol=1e-14, rtol=1e-15))
    return np.array(out)


def oracle_clamped_interval(length: float, k: int) -> np.ndarray:
    """Lowest ``k`` eigenvalues of ``u'''' = lambda u`` with clamped ends."""
    if length <= 0:
        raise ValueError("length must be positive")
    return (clamped_roots(k) / length) ** 4


def dirichlet_interval_matrices(n: int, length: float = 1.0):
    """Three-point Laplacian on ``n`` interior nodes, mass ``h I``."""
    h = length / (n + 1)
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h
    M = sp.identity(n) * h
    return K.tocsr(), M.tocsr()


def dirichlet_interval_oracle(n: int, length: float = 1.0) -> np.ndarray:
    """Exact eigenvalues of ``dirichlet_interval_matrices``."""
    h = length / (n + 1)
    j = np.arange(1, n + 1)
    return 2.0 / h ** 2 * (1 - np.cos(j * np.pi / (n + 1)))


def clamped_interval_matrices(n: int, length: float = 1.0):
    """Clamped beam on ``n`` interior nodes.

    The form is the trapezoidal sum of squared second differences over all
    nodes including both boundary nodes, where the boundary difference uses
    the reflected ghost value (zero slope).  The resulting matrix is the
    5-point beam stencil with 7 on the first and last diagonal entries.
    """
    h = length / (n + 1)
    main = 6.0 * np.ones(n)
    main[0] = main[-1] = 7.0
    K = sp.diags([np.ones(n - 2), -4 * np.ones(n - 1), main, -4 * np.ones(n - 1), np.ones(n - 2)],
                 [-2, -1, 0, 1, 2]) / h ** 3
    M = sp.identity(n) * h
    return K.tocsr(), M.tocsr()
