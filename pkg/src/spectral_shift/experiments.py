"""Perturbation sweeps with their stability fits, plus distance fixtures.

A sweep solves the lowest eigenvalues of every domain of a one-parameter
family on one shared lattice and records them next to the distances of each
domain to the base domain.  Fits are ordinary least squares on log-log data.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import discretize as ds
from .domains import (
    DiskDomain,
    box_domain,
    cusp_valley_domain,
    hoelder_pair,
    parabolic_cusp_boundaries,
    wedge_polygon,
)
from .geometry import (
    AtlasDomain,
    Atlas,
    BoundaryProfile,
    Cuboid,
    GeometryError,
    ModulusSpec,
    PolygonDomain,
    base_samples,
    boundary_cloud,
    classify,
    convex_inset,
    modulus_check,
    validate_domain,
)
from .metrics import atlas_distance, boundary_distances, hp_distance, hp_lower_deviation, one_sided
from .perturbation import (
    Diffeomorphism,
    PreconditionError,
    TransformTEps,
    inclusion_check,
    t_eps_certify,
    vicinity_L,
)

GENERATORS = ("vertical_shift", "oscillation", "cusp_sharpen", "t_eps", "diffeo")


class FitError(ValueError):
    """Too few usable rows for a fit."""


class FixtureError(AssertionError):
    """A fixture quantity differs from its expected value."""


def worker_count(n_jobs: int) -> int:
    """Number of threads: ``SPECTRAL_SHIFT_THREADS`` caps the CPU count."""
    cap = os.environ.get("SPECTRAL_SHIFT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, min(n, n_jobs))


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


def dilate_domain(d: AtlasDomain, factor: float, center=(0.0, 0.0), spacing: float | None = None) -> AtlasDomain:
    """Image of an atlas domain under ``x -> center + factor (x - center)``.

    The whole atlas is scaled, profiles included; constant and piecewise
    linear profiles are mapped exactly, other kinds are resampled at the
    given spacing together with their kinks.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    c = np.asarray(center, dtype=float)
    a = d.atlas
    spacing = spacing or a.rho / 256
    cubs, profs = [], []
    for cub, r, p in zip(a.cuboids, a.rotations, d.profiles):
        rc = r.to_chart(c)
        lo = rc + factor * (cub.lower - rc)
        hi = rc + factor * (cub.upper - rc)
        cubs.append(Cuboid(lo, hi))
        base = Cuboid(rc[:1] + factor * (p.base.lower - rc[:1]), rc[:1] + factor * (p.base.upper - rc[:1]))
        if p.kind == "constant":
            profs.append(BoundaryProfile("constant", {"value": float(rc[1] + factor * (p.params["value"] - rc[1]))}, base))
            continue
        if p.kind == "piecewise_linear":
            x = np.asarray(p.params["knots"], dtype=float)
        else:
            x = base_samples(p, spacing)
        v = p(x)
        profs.append(BoundaryProfile("piecewise_linear", {
            "knots": list(rc[0] + factor * (x - rc[0])),
            "values": list(rc[1] + factor * (v - rc[1]))}, base))
    return AtlasDomain(Atlas(a.rho * factor, cubs, a.rotations, a.s_prime), profs)


def t_eps_image(d: AtlasDomain, t: TransformTEps, eps: float, spacing: float | None = None) -> AtlasDomain:
    """Atlas domain approximating ``T_eps(Omega)``.

    Every chart graph is pushed forward by ``T_eps`` and read back as a
    piecewise linear profile over the same base.
    """
    a = d.atlas
    spacing = spacing or a.rho / 64
    T = t.with_epsilon(eps)
    profs = []
    for j, (c, r, p) in enumerate(zip(a.cuboids, a.rotations, d.profiles)):
        if j >= a.s_prime:
            profs.append(p)
            continue
        x = base_samples(p, spacing)
        G = r.to_global(np.stack([x, p(x)], axis=1))
        Y = r.to_chart(T(G))
        order = np.argsort(Y[:, 0])
        xs, ys = Y[order, 0], Y[order, 1]
        if np.any(np.diff(xs) <= 0):
            raise GeometryError(f"chart {j}: the image of the graph is not a graph")
        profs.append(BoundaryProfile("piecewise_linear", {
            "knots": list(x), "values": list(np.interp(x, xs, ys))}, p.base))
    return AtlasDomain(a, profs)


@dataclass
class PerturbationFamily:
    """One-parameter family of domains sharing the atlas of ``base``.

    Generators

    * ``vertical_shift``: every boundary profile lowered by ``t``.
    * ``oscillation``: profile ``g - t/2 + (t/2) cos(2 pi k x)`` on chart
      ``chart`` (parameter ``wavenumber``, default 1).
    * ``cusp_sharpen``: the cusp-valley box whose valley floor has width
      ``2 t`` (``t = 0`` is the sharp cusp).
    * ``t_eps``: the image of ``base`` under ``T_t``.
    * ``diffeo``: the image of ``base`` under a map of kind ``kind`` with
      size ``t``; needs a one-chart base.
    """

    base: AtlasDomain
    generator: str
    grid: tuple
    modulus: ModulusSpec | None = None
    params: dict = field(default_factory=dict)
    _transform: TransformTEps | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        g = tuple(float(t) for t in self.grid)
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("parameter grid must be strictly increasing")
        self.grid = g

    def domain(self, t: float) -> AtlasDomain:
        d = self.base
        a = d.atlas
        if t == 0:
            return d
        if self.generator == "vertical_shift":
            return d.with_profiles({j: d.profiles[j].with_offset(-t) for j in range(a.s_prime)})
        if self.generator == "oscillation":
            j = self.params.get("chart", 0)
            k = self.params.get("wavenumber", 1)
            p = d.profiles[j]
            lo = p.base.lower[0]
            width = p.base.upper[0] - lo
            if p.kind == "constant":
                q = BoundaryProfile("trig_series", {
                    "base": p.params["value"] - t / 2,
                    "terms": [[t / 2, 2 * np.pi * k / width, -2 * np.pi * k * lo / width]]}, p.base)
            else:
                x = base_samples(p, a.rho / 256)
                v = p(x) - t / 2 + t / 2 * np.cos(2 * np.pi * k * (x - lo) / width)
                q = BoundaryProfile("piecewise_linear", {"knots": list(x), "values": list(v)}, p.base)
            return d.with_profiles({j: q})
        if self.generator == "cusp_sharpen":
            p = d.profiles[0]
            if p.kind != "power_cusp":
                raise GeometryError("cusp_sharpen needs a power_cusp profile on chart 0")
            prm = dict(p.params)
            prm["flat"] = prm.get("flat", 0.0) + t
            return d.with_profiles({0: BoundaryProfile("power_cusp", prm, p.base)})
        if self.generator == "t_eps":
            if self._transform is None:
                self._transform = TransformTEps.for_atlas(a)
                t_eps_certify(self._transform)
            return t_eps_image(d, self._transform, t)
        kind = self.params.get("kind", "translation")
        from .perturbation import diffeo_transport

        if kind == "translation":
            phi = Diffeomorphism.translation(np.asarray(self.params.get("direction", (1.0, 0.0))) * t)
        elif kind == "profile_graph_map":
            phi = Diffeomorphism.graph_map(self.params["eta"], t, a.rotations[0])
        elif kind == "dilation":
            return dilate_domain(d, 1 + t, self.params.get("center", (0.0, 0.0)))
        else:
            raise GeometryError(f"diffeo family of kind {kind!r} has no atlas image")
        out = diffeo_transport(d, phi).domain
        if out is None:
            raise GeometryError("map does not preserve the chart structure")
        return out

    def check(self, t: float) -> list:
        """Validation and modulus violations of the domain at parameter ``t``."""
        d = self.domain(t)
        bad = [v.clause for v in validate_domain(d)]
        if self.modulus is not None:
            m = modulus_check(d, self.modulus)
            if not m.ok:
                bad.append(f"modulus ratio {m.worst_ratio:.4g} > M")
        return bad


def vertical_shift_family(grid, rho: float = 0.25) -> PerturbationFamily:
    """Unit square (as a one-chart box) lowered by ``t`` at the top."""
    return PerturbationFamily(box_domain(rho=rho), "vertical_shift", tuple(grid), ModulusSpec("linear", M=1.0))


def oscillation_family(grid, wavenumber: int = 1, rho: float = 0.25) -> PerturbationFamily:
    """Unit square whose top follows ``1 - t/2 + (t/2) cos(2 pi k x)``."""
    m = max(np.pi * wavenumber * max(grid), 1e-12)
    return PerturbationFamily(box_domain(rho=rho), "oscillation", tuple(grid),
                              ModulusSpec("linear", M=m), {"wavenumber": wavenumber})


def cusp_family(grid, alpha: float = 0.5, scale: float = 0.4) -> PerturbationFamily:
    """Cusp-valley box with a widening flat valley floor."""
    base = cusp_valley_domain(flat=0.0, alpha=alpha, scale=scale)
    return PerturbationFamily(base, "cusp_sharpen", tuple(grid), ModulusSpec("power", alpha=alpha, M=scale))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class StabilityReport:
    """Rows of a sweep; one row per parameter value, ``t = 0`` first."""

    family: str
    h: float
    k: int
    bcs: tuple
    rows: list
    base_error: dict
    warnings: list = field(default_factory=list)

    COLUMNS = ("t", "d_A", "d_A_slack", "d_hp_lower", "d_hp", "hp_slack", "chain_ok")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def eigenvalues(self, bc: str) -> np.ndarray:
        return np.array([r["lambda"][bc] for r in self.rows])

    def delta(self, bc: str, n: int) -> np.ndarray:
        """``|lambda_n(t) - lambda_n(0)|`` per row (``n`` is 1-based)."""
        lam = self.eigenvalues(bc)
        return np.abs(lam[:, n - 1] - lam[0, n - 1])

    def usable(self, bc: str, n: int) -> np.ndarray:
        """Rows whose eigenvalue change exceeds five times the base discretization error."""
        return self.delta(bc, n) > 5 * self.base_error[bc][n - 1]

    def observed_bound(self, n: int) -> float:
        """Largest Dirichlet ``lambda_n`` over the family."""
        return float(np.max(self.eigenvalues("dirichlet")[:, n - 1]))

    def table(self) -> tuple[list, list]:
        header = list(self.COLUMNS)
        for bc in self.bcs:
            header += [f"lambda_{i + 1}_{bc}" for i in range(self.k)]
        body = []
        for r in self.rows:
            line = [r[c] for c in self.COLUMNS]
            for bc in self.bcs:
                line += list(r["lambda"][bc])
            body.append(line)
        return header, body


def _solve(d, op, bc, h, k, seed):
    g = ds.rasterize(d, h)
    K, M = ds.assemble(g, op, bc)
    return ds.solve_lowest(K, M, k, seed=seed, bc=bc, op=op, h=h).eigenvalues


def _distances(base: AtlasDomain, d: AtlasDomain, spacing: float) -> dict:
    if d is base:
        return {"d_A": 0.0, "d_A_slack": 0.0, "d_hp_lower": 0.0, "d_hp": 0.0, "hp_slack": 0.0, "chain_ok": True}
    da = atlas_distance(base, d)
    hp = boundary_distances(base, d, spacing)
    slack = hp["slack"] + da.slack
    ok = hp["d_hp_lower"] <= hp["d_hp"] <= da.value + slack
    return {"d_A": da.value, "d_A_slack": da.slack, "d_hp_lower": hp["d_hp_lower"], "d_hp": hp["d_hp"],
            "hp_slack": hp["slack"], "chain_ok": bool(ok)}


def stability_sweep(f: PerturbationFamily, op: ds.OperatorSpec, bc="both", k: int = 3, h: float | None = None,
                    seed: int = ds.DEFAULT_SEED, threads: int | None = None,
                    cloud_spacing: float | None = None, check_family: bool = True) -> StabilityReport:
    """Distances and spectra of every family member on one lattice.

    The discretization error of the base spectrum is estimated as
    ``|lambda(h) - lambda(h/2)|``; rows whose eigenvalue change is below five
    times that estimate are marked unusable for fits.

    Parameters
    ----------
    bc : str or sequence
        ``"dirichlet"``, ``"neumann"`` or ``"both"``.
    threads : int, optional
        Worker count; defaults to ``worker_count``.
    """
    if len(f.grid) < 4:
        raise ValueError("a sweep needs at least four parameter values")
    bcs = ("dirichlet", "neumann") if bc == "both" else tuple(ds._bc(b) for b in np.atleast_1d(bc))
    h = h or f.base.atlas.rho / 64
    spacing = cloud_spacing or min(h / 4, f.base.atlas.rho / 16)
    ts = (0.0,) + tuple(f.grid)
    domains = {t: f.domain(t) for t in ts}
    warnings = []
    if check_family:
        for t in f.grid:
            bad = f.check(t)
            if bad:
                raise GeometryError(f"family member t = {t} fails: {bad}")
    if f.generator == "t_eps":
        t_obj = f._transform
        for t in f.grid:
            r = inclusion_check(f.base, f.base, t, t_obj, n_samples=2000)
            if not r.passed:
                raise GeometryError(f"T_eps inclusion fails at t = {t}")
    jobs = [(t, b) for t in ts for b in bcs] + [("half", b) for b in bcs]

    def run(job):
        t, b = job
        if t == "half":
            return job, _solve(f.base, op, b, h / 2, k, seed)
        return job, _solve(domains[t], op, b, h, k, seed)

    n = threads or worker_count(len(jobs))
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            results = dict(ex.map(run, jobs))
    else:
        results = dict(run(j) for j in jobs)
    base_error = {b: np.abs(results[(0.0, b)] - results[("half", b)]) for b in bcs}
    rows = []
    for t in ts:
        row = {"t": t}
        row.update(_distances(f.base, domains[t], spacing))
        row["lambda"] = {b: results[(t, b)] for b in bcs}
        rows.append(row)
    for b in bcs:
        lam = results[(0.0, b)]
        gaps = np.diff(lam)
        pos = gaps[gaps > 1e-8 * max(1.0, lam[-1])]
        if pos.size and np.max(base_error[b]) > 0.2 * np.min(pos):
            warnings.append(f"{b}: discretization error exceeds 20% of the smallest eigenvalue gap")
    return StabilityReport(f.generator, h, k, bcs, rows, base_error, warnings)


@dataclass
class FitResult:
    exponent: float
    constant: float
    residual: float
    n_rows: int
    degenerate: bool = False

    @property
    def exact_zero(self) -> bool:
        return self.degenerate


def fit_stability(r: StabilityReport, n: int, distance_column: str = "d_A", bc: str = "dirichlet",
                  modulus: ModulusSpec | None = None, zero_tol: float = 1e-9) -> FitResult:
    """Fit ``log |d lambda_n| = p log(distance) + c`` over the usable rows.

    With ``modulus`` the abscissa is ``omega(distance)``.  A family whose
    eigenvalue changes all vanish (relative to ``zero_tol``) is reported as a
    degenerate exact-zero fit.  ``constant`` is the largest ratio of the
    change to the distance term.

    Raises
    ------
    FitError
        When fewer than four rows are usable.
    """
    bc = ds._bc(bc)
    dl = r.delta(bc, n)[1:]
    lam = r.eigenvalues(bc)[:, n - 1]
    scale = max(1.0, float(np.max(np.abs(lam))))
    if np.all(dl <= zero_tol * scale):
        return FitResult(float("nan"), 0.0, 0.0, len(dl), degenerate=True)
    x = r.column(distance_column)[1:]
    if modulus is not None:
        x = np.asarray(modulus(x), dtype=float)
    use = r.usable(bc, n)[1:] & (x > 0)
    if use.sum() < 4:
        raise FitError(f"only {int(use.sum())} usable rows for n = {n}, {bc}")
    lx, ly = np.log(x[use]), np.log(dl[use])
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (p, c), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([p, c]) - ly)))
    const = float(np.max(dl[use] / x[use]))
    return FitResult(float(p), const, resid, int(use.sum()))


def inscribed_ball(a: Atlas, chart: int = 0) -> DiskDomain:
    """Disk of radius ``rho/2`` inside every domain of the class.

    It sits above the floor of the chart's cuboid, where every subgraph
    contains the slab ``a_N < y_N < a_N + rho``.
    """
    c, r = a.cuboids[chart], a.rotations[chart]
    y = np.array([0.5 * (c.lower[0] + c.upper[0]), c.lower[1] + a.rho / 2])
    return DiskDomain(tuple(r.to_global(y)), a.rho / 2)


@dataclass
class MonotonicityResult:
    passed: bool
    failures: list
    observed_bound: np.ndarray
    ball_bound: np.ndarray


def check_monotonicity(r: StabilityReport, atlas: Atlas | None = None, tol: float = 1e-8,
                       op: ds.OperatorSpec | None = None) -> MonotonicityResult:
    """``lambda_{n,N} <= lambda_{n,D} + tol`` per row and the inscribed-ball bound.

    ``tol`` is relative to ``max(1, lambda_{n,D})``.  With ``atlas`` the
    Dirichlet spectrum of the inscribed disk is solved at the report's
    lattice spacing and every row must stay below it.
    """
    if "dirichlet" not in r.bcs or "neumann" not in r.bcs:
        raise ValueError("both boundary conditions are needed")
    lamD = r.eigenvalues("dirichlet")
    lamN = r.eigenvalues("neumann")
    fails = []
    for i, row in enumerate(r.rows):
        for n in range(r.k):
            if lamN[i, n] > lamD[i, n] + tol * max(1.0, lamD[i, n]):
                fails.append(("neumann<=dirichlet", row["t"], n + 1, lamN[i, n], lamD[i, n]))
    obs = lamD.max(axis=0)
    ball = np.full(r.k, np.nan)
    if atlas is not None:
        disk = inscribed_ball(atlas)
        ball = _solve(disk, op or ds.OperatorSpec.laplacian(), "dirichlet", r.h, r.k, ds.DEFAULT_SEED)
        for n in range(r.k):
            if obs[n] > ball[n] * (1 + tol):
                fails.append(("ball bound", None, n + 1, obs[n], ball[n]))
    return MonotonicityResult(not fails, fails, obs, ball)


# ---------------------------------------------------------------------------
# Distance fixtures
# ---------------------------------------------------------------------------


def example_wedge(c: float, eps: float, spacing: float | None = None) -> dict:
    """Wedge and its inner parallel set: both HP quantities and both inclusions."""
    outer = wedge_polygon(c)
    inner = PolygonDomain(convex_inset(outer.vertices, eps))
    spacing = spacing or eps / 64
    A, B = outer.cloud(spacing), inner.cloud(spacing)
    lower = hp_lower_deviation(A, B)
    upper = hp_distance(A, B)
    # inclusions tested on a grid of the outer wedge
    lo, hi = outer.bbox
    ax = [np.linspace(l, h_, 161) for l, h_ in zip(lo, hi)]
    X = np.stack([g.ravel() for g in np.meshgrid(*ax, indexing="ij")], axis=1)
    in1 = classify(outer, X) == 1
    in2 = classify(inner, X) == 1
    d1 = outer.boundary_distance(X)
    d2 = inner.boundary_distance(X)
    # (Omega_1)_eps inside Omega_2 inside (Omega_1)^eps
    first = (not np.any(in1 & (d1 > eps + spacing) & ~in2)) and (not np.any(in2 & ~in1))
    # (Omega_2)_eps inside Omega_1 inside (Omega_2)^eps fails if some point of
    # Omega_1 is farther than eps from Omega_2
    far = in1 & ~in2 & (d2 > eps + spacing)
    return {
        "c": c, "eps": eps, "d_hp_lower": lower.value, "d_hp": upper.value, "slack": upper.slack,
        "ratio": upper.value / lower.value, "expected_ratio": float(np.sqrt(c * c + 1)),
        "first_inclusion_holds": bool(first), "second_inclusion_fails": bool(far.any()),
    }


def example_parabolic_cusp(eps: float) -> dict:
    """Cusp ``|x2| < x1^2`` and its inner parallel set: the two one-sided deviations."""
    outer, inner, info = parabolic_cusp_boundaries(eps)
    # the arcs are sampled geometrically towards the tip, so subdividing
    # only the long edges keeps the cusp resolved
    A, B = outer.cloud(1e-3), inner.cloud(1e-3)
    s12, w12 = one_sided(A, B)
    s21, _ = one_sided(B, A)
    return {"eps": eps, "sup_outer_to_inner": s12, "sup_inner_to_outer": s21, "omega": float(np.sqrt(eps)),
            "ratio": s12 / np.sqrt(eps), "x_apex": info["x_apex"], "witness": w12,
            "slack": A.resolution + B.resolution}


def example_hoelder_shift(eps: float, alpha: float = 0.5) -> dict:
    """Hoelder bump and its horizontal shift: atlas distance against HP distance."""
    d1, d2 = hoelder_pair(eps, alpha)
    da = atlas_distance(d1, d2)
    hp = boundary_distances(d1, d2, min(eps / 16, d1.atlas.rho / 16))
    return {"eps": eps, "d_A": da.value, "omega": eps ** alpha, "d_hp": hp["d_hp"], "slack": hp["slack"],
            "d_hp_lower": hp["d_hp_lower"]}


def fixture_examples(raise_on_failure: bool = False) -> dict:
    """Run the three distance fixtures and collect their pass flags."""
    out = {"wedge": [], "parabolic_cusp": [], "hoelder_shift": []}
    fails = []
    for c in (2.0, 3.0):
        for eps in (0.05, 0.1):
            r = example_wedge(c, eps)
            r["passed"] = (abs(r["ratio"] - r["expected_ratio"]) <= 1e-3 and abs(r["d_hp_lower"] - eps) <= 1e-3 * eps
                           and r["first_inclusion_holds"] and r["second_inclusion_fails"])
            out["wedge"].append(r)
            if not r["passed"]:
                fails.append(f"wedge c={c} eps={eps}: ratio {r['ratio']:.6g} vs {r['expected_ratio']:.6g}")
    for eps in (1e-2, 1e-3, 1e-4, 1e-5):
        r = example_parabolic_cusp(eps)
        r["passed"] = 0.5 <= r["ratio"] <= 2 and abs(r["sup_inner_to_outer"] - eps) <= 0.05 * eps
        out["parabolic_cusp"].append(r)
        if not r["passed"]:
            fails.append(f"parabolic cusp eps={eps}: ratio {r['ratio']:.6g}, other side {r['sup_inner_to_outer']:.6g}")
    for eps in (0.04, 0.01):
        r = example_hoelder_shift(eps)
        r["passed"] = r["d_A"] >= r["omega"] * (1 - 1e-12) and r["d_hp"] <= eps + r["slack"]
        out["hoelder_shift"].append(r)
        if not r["passed"]:
            fails.append(f"hoelder shift eps={eps}: d_A {r['d_A']:.6g}, d_hp {r['d_hp']:.6g}")
    out["passed"] = not fails
    out["failures"] = fails
    if fails and raise_on_failure:
        raise FixtureError("; ".join(fails))
    return out


# ---------------------------------------------------------------------------
# Diffeomorphism experiment
# ---------------------------------------------------------------------------


def pullback_operator(op: ds.OperatorSpec, phi: Diffeomorphism) -> ds.OperatorSpec:
    """Second-order operator on ``Omega`` whose spectrum is that of ``op`` on ``phi(Omega)``.

    Coefficients ``|det J| J^{-1} A(phi) J^{-T}`` and mass density ``|det J|``.
    """
    if op.m != 1:
        raise NotImplementedError("pull-back is implemented for second-order operators")

    def A(X):
        J = phi.jacobian(X)
        Ji = np.linalg.inv(J)
        det = np.abs(np.linalg.det(J))
        Af = op.matrix_field(phi(X))
        return det[:, None, None] * (Ji @ Af @ np.swapaxes(Ji, 1, 2))

    def dens(X):
        return np.abs(np.linalg.det(phi.jacobian(X))) * op.mass_density(phi(X))

    return ds.OperatorSpec.from_matrix(A, theta=op.theta, density=dens)


def _image_domain(d: AtlasDomain, phi: Diffeomorphism):
    if phi.kind == "dilation":
        return dilate_domain(d, phi.params["factor"], phi.params.get("center", (0.0, 0.0)))
    if phi.kind in ("translation", "profile_graph_map") and d.atlas.s == 1:
        from .perturbation import diffeo_transport

        return diffeo_transport(d, phi).domain
    return None


@dataclass
class DiffeoReport:
    rows: list
    bc: str
    base: np.ndarray

    def ratios(self, n: int) -> np.ndarray:
        return np.array([r["ratio"][n - 1] for r in self.rows])


def diffeo_experiment(d: AtlasDomain, maps, op: ds.OperatorSpec, bc: str = "dirichlet", k: int = 3,
                      h: float | None = None, method: str = "auto", seed: int = ds.DEFAULT_SEED) -> DiffeoReport:
    """Eigenvalue change under maps against their distance from the identity.

    The measure is ``max_{0 <= |alpha| <= m} |D^alpha (phi - Id)|`` plus the
    coefficient oscillation.  With ``method="rasterize"`` the image domain is
    solved directly on the shared lattice; with ``"pullback"`` the operator is
    pulled back to ``Omega``; ``"auto"`` rasterizes when the image is an
    atlas domain.

    Raises
    ------
    PreconditionError
        When a map sends the domain outside the union of the chart cuboids.
    """
    bc = ds._bc(bc)
    h = h or d.atlas.rho / 64
    base = _solve(d, op, bc, h, k, seed)
    rows = []
    cloud = boundary_cloud(d, d.atlas.rho / 16)
    for phi in maps:
        P = phi(cloud.points)
        inside = np.zeros(len(P), dtype=bool)
        # the cloud samples the closure of Omega, so the cuboids are closed here
        for j in range(d.atlas.s):
            inside |= d.atlas.in_chart(P, j, shrink=-1e-9 * d.atlas.rho)
        if not inside.all():
            raise PreconditionError("phi(Omega) leaves the union of the cuboids", witness=tuple(P[~inside][0]))
        meas = vicinity_L(phi, op, d).L_with_values
        img = _image_domain(d, phi) if method in ("auto", "rasterize") else None
        if method == "rasterize" and img is None:
            raise GeometryError(f"no atlas image for a map of kind {phi.kind!r}")
        if img is not None:
            lam = _solve(img, op, bc, h, k, seed)
            used = "rasterize"
        else:
            lam = _solve(d, pullback_operator(op, phi), bc, h, k, seed)
            used = "pullback"
        dl = np.abs(lam - base)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(meas > 0, dl / ((1 + base) * meas), np.nan)
        rows.append({"map": phi.kind, "measure": meas, "lambda": lam, "delta": dl, "ratio": ratio,
                     "degenerate": meas == 0, "method": used})
    return DiffeoReport(rows, bc, base)


# ---------------------------------------------------------------------------
# Quick verification suite
# ---------------------------------------------------------------------------


def _check_oracle(bc: str, h: float, k: int) -> tuple[bool, dict]:
    lam = _solve(box_domain(), ds.OperatorSpec.laplacian(), bc, h, k, ds.DEFAULT_SEED)
    ref = ds.oracle_rectangle(1.0, 1.0, bc, k)
    if bc == "dirichlet":
        ok = bool(np.all(np.abs(lam - ref) <= 0.02 * ref))
    else:
        ok = bool(abs(lam[0]) <= 1e-6 * lam[1] and np.all(np.abs(lam[1:3] - ref[1:3]) <= 0.03 * ref[1:3]))
    return ok, {"eigenvalues": lam, "reference": ref, "h": h}


def _check_chain(rng, n_pairs: int) -> tuple[bool, dict]:
    from .domains import random_side_deviation, square_atlas, square_domain
    from .metrics import chain_check

    a = square_atlas()
    bad = []
    for i in range(n_pairs):
        d1 = square_domain(a, random_side_deviation(rng, 0.05))
        d2 = square_domain(a, random_side_deviation(rng, 0.05))
        c = chain_check(d1, d2)
        if not c.passed:
            bad.append({"pair": i, "triple": c.triple, "slack": c.slack})
    return not bad, {"pairs": n_pairs, "violations": bad}


def _check_metric(rng, n_triples: int) -> tuple[bool, dict]:
    from .domains import random_side_deviation, square_atlas, square_domain

    a = square_atlas()
    bad = []
    for i in range(n_triples):
        d = [square_domain(a, random_side_deviation(rng, 0.05)) for _ in range(3)]
        r01, r12, r02 = atlas_distance(d[0], d[1]), atlas_distance(d[1], d[2]), atlas_distance(d[0], d[2])
        if atlas_distance(d[1], d[0]).value != r01.value:
            bad.append({"triple": i, "axiom": "symmetry"})
        if r02.value > r01.value + r12.value + r01.slack + r12.slack + r02.slack:
            bad.append({"triple": i, "axiom": "triangle"})
    return not bad, {"triples": n_triples, "violations": bad}


def _check_inclusion(rng, n_pairs: int, seed: int) -> tuple[bool, dict]:
    from .domains import nested_square_pair, square_atlas

    a = square_atlas()
    t = TransformTEps.for_atlas(a)
    cert = t_eps_certify(t, seed=seed)
    t = TransformTEps(t.partition, 0.0, cert)
    eps = 0.9 * cert.E1
    viol = 0
    for i in range(n_pairs):
        d1, d2 = nested_square_pair(rng, 0.04, 0.9 * eps / a.s)
        viol += inclusion_check(d1, d2, eps, t, n_samples=2000, seed=seed + i).violations
    return viol == 0, {"pairs": n_pairs, "violations": viol, "epsilon": eps, "A2": cert.A2, "E1": cert.E1}


def _check_nesting(rng, n_pairs: int, h: float, tol: float) -> tuple[bool, dict]:
    from .domains import nested_square_pair

    op = ds.OperatorSpec.laplacian()
    bad = []
    for i in range(n_pairs):
        d1, d2 = nested_square_pair(rng, 0.02, 0.03)
        l1 = _solve(d1, op, "dirichlet", h, 3, ds.DEFAULT_SEED)
        l2 = _solve(d2, op, "dirichlet", h, 3, ds.DEFAULT_SEED)
        if np.any(l2 < l1 - tol * np.maximum(1.0, l1)):
            bad.append({"pair": i, "outer": l1, "inner": l2})
    return not bad, {"pairs": n_pairs, "h": h, "violations": bad}


def _check_monotonicity(h: float, tol: float) -> tuple[bool, dict]:
    f = vertical_shift_family([1 / 32, 1 / 16, 1 / 8, 1 / 4])
    r = stability_sweep(f, ds.OperatorSpec.laplacian(), "both", 3, h)
    m = check_monotonicity(r, f.base.atlas, tol=tol)
    return m.passed, {"failures": m.failures, "observed_bound": m.observed_bound, "ball_bound": m.ball_bound}


def verification_suite(seed: int = ds.DEFAULT_SEED, tol: float = 1e-8) -> dict:
    """Small-scale run of the fixtures and invariants, about half a minute.

    Every check reports ``passed`` and its measurements; a check that raises
    is recorded as failed with the exception text.
    """
    rng = np.random.default_rng(seed)
    checks = {
        "oracle_dirichlet": lambda: _check_oracle("dirichlet", 1 / 32, 5),
        "oracle_neumann": lambda: _check_oracle("neumann", 1 / 32, 3),
        "fixtures": lambda: (lambda r: (r["passed"], {"failures": r["failures"]}))(fixture_examples()),
        "distance_chain": lambda: _check_chain(rng, 20),
        "atlas_metric": lambda: _check_metric(rng, 10),
        "t_eps_inclusion": lambda: _check_inclusion(rng, 3, seed),
        "dirichlet_nesting": lambda: _check_nesting(rng, 3, 1 / 96, tol),
        "monotonicity": lambda: _check_monotonicity(1 / 32, tol),
    }
    out = {}
    for name, fn in checks.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash counts as a failed check, the suite goes on
            ok, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        out[name] = {"passed": bool(ok), **detail}
    return {"passed": all(c["passed"] for c in out.values()), "checks": out}
