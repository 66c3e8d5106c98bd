"""Command line front end from configuration files to written reports.

Subcommands
-----------
distance DOMAIN1 DOMAIN2
    JSON with the atlas distance and both boundary deviations, each with slack.
spectrum DOMAIN [REQUEST]
    JSON spectrum; ``--dump PREFIX`` also writes the stiffness and mass
    matrices as ``row col value`` text.
perturb DOMAIN REQUEST
    CSV of the mapped boundary cloud and a JSON summary.
stability EXPERIMENT
    CSV sweep table and a JSON summary with fits and pass flags.
verify
    Runs the quick fixture and invariant suite.

Exit codes are 0 on success, 1 when a verification fails, 2 for
configuration and I/O errors and 3 for numerical or geometric failures.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import discretize as ds
from .geometry import (
    Atlas,
    AtlasDomain,
    BoundaryProfile,
    Cuboid,
    GeometryError,
    Rotation,
    boundary_cloud,
)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_K = 6
DEFAULT_SEED = 0x5EED
SUBCOMMANDS = ("distance", "spectrum", "perturb", "stability", "verify")
SIG_DIGITS = 12


class ConfigError(Exception):
    """Problem with the command line or an input file.

    Attributes
    ----------
    path : str or None
        Offending file.
    line, column : int or None
        1-based position inside the file when known.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None,
                 column: int | None = None):
        self.path, self.line, self.column = path, line, column
        where = ""
        if path is not None:
            where = f"{path}:{line}:{column}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ConfigWarning(UserWarning):
    """A command line flag overrides a value given in a file."""


# ---------------------------------------------------------------------------
# JSON ingestion
# ---------------------------------------------------------------------------


@dataclass
class _Source:
    path: str
    text: str

    def position(self, key: str) -> tuple[int | None, int | None]:
        m = re.search(r'"' + re.escape(key) + r'"\s*:', self.text)
        if m is None:
            return None, None
        before = self.text[:m.start()]
        return before.count("\n") + 1, m.start() - (before.rfind("\n") + 1) + 1

    def error(self, message: str, key: str | None = None) -> ConfigError:
        line, col = self.position(key) if key is not None else (None, None)
        return ConfigError(message, self.path, line, col)


def _read(path: str, files: dict | None) -> _Source:
    if files is not None and path in files:
        return _Source(path, files[path])
    try:
        return _Source(path, Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("file not found", path) from None
    except OSError as exc:
        raise ConfigError(f"cannot read file ({exc.strerror})", path) from None


def _load(src: _Source):
    try:
        return json.loads(src.text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", src.path, exc.lineno, exc.colno) from None


def _keys(obj, allowed, src: _Source, where: str, required=()):
    if not isinstance(obj, dict):
        raise src.error(f"{where} must be a JSON object")
    for key in obj:
        if key not in allowed:
            raise src.error(f"unknown key {key!r} in {where}", key)
    for key in required:
        if key not in obj:
            raise src.error(f"missing key {key!r} in {where}")


def _cuboid(obj, src, where) -> Cuboid:
    _keys(obj, ("lower", "upper"), src, where, required=("lower", "upper"))
    return Cuboid(obj["lower"], obj["upper"])


def parse_domain(src: _Source) -> AtlasDomain:
    """Build an ``AtlasDomain`` from a domain document."""
    doc = _load(src)
    _keys(doc, ("atlas", "profiles"), src, "domain", required=("atlas", "profiles"))
    a = doc["atlas"]
    _keys(a, ("rho", "s", "s_prime", "cuboids", "rotations_deg"), src, "atlas",
          required=("rho", "cuboids", "rotations_deg"))
    try:
        cubs = [_cuboid(c, src, f"atlas.cuboids[{i}]") for i, c in enumerate(a["cuboids"])]
        if "s" in a and a["s"] != len(cubs):
            raise src.error(f"atlas.s = {a['s']} but {len(cubs)} cuboids are given", "s")
        rots = [Rotation.from_degrees(float(t)) for t in a["rotations_deg"]]
        atlas = Atlas(float(a["rho"]), cubs, rots, int(a.get("s_prime", len(cubs))))
        profs = doc["profiles"]
        if not isinstance(profs, list) or len(profs) != atlas.s:
            raise src.error(f"need one profile per chart ({atlas.s})", "profiles")
        out = []
        for j, p in enumerate(profs):
            where = f"profiles[{j}]"
            _keys(p, ("kind", "params", "base"), src, where, required=("kind",))
            c = atlas.cuboids[j]
            base = _cuboid(p["base"], src, where + ".base") if "base" in p else Cuboid(c.lower[:-1], c.upper[:-1])
            out.append(BoundaryProfile(p["kind"], p.get("params", {}), base))
        return AtlasDomain(atlas, out)
    except ConfigError:
        raise
    except (GeometryError, TypeError, ValueError, KeyError) as exc:
        raise src.error(f"invalid domain: {exc}") from None


def domain_to_spec(d: AtlasDomain) -> dict:
    """Domain document for ``d`` (inverse of ``parse_domain``)."""
    a = d.atlas
    angles = [math.degrees(math.atan2(r.matrix[1, 0], r.matrix[0, 0])) for r in a.rotations]
    return {
        "atlas": {
            "rho": a.rho,
            "s": a.s,
            "s_prime": a.s_prime,
            "cuboids": [{"lower": list(map(float, c.lower)), "upper": list(map(float, c.upper))}
                        for c in a.cuboids],
            "rotations_deg": angles,
        },
        "profiles": [dict(p.to_json(), base={"lower": list(map(float, p.base.lower)),
                                              "upper": list(map(float, p.base.upper))})
                     for p in d.profiles],
    }


def parse_operator(obj, src: _Source) -> ds.OperatorSpec:
    """Operator from ``{"m", "nu", "coefficients", "theta", "L"}``.

    Without coefficients ``m = 1`` gives the Laplacian and ``m = 2`` the plate
    form (with Poisson ratio ``nu`` when given).  Coefficients are constants
    listed as ``{"alpha": [..], "beta": [..], "value": c}`` with
    ``|alpha| = |beta| = m``.
    """
    _keys(obj, ("m", "nu", "coefficients", "theta", "L"), src, "operator")
    m = obj.get("m", 1)
    if m not in (1, 2):
        raise src.error(f"operator order m = {m} is not supported", "m")
    nu = obj.get("nu")
    coeffs = obj.get("coefficients")
    try:
        if coeffs is None:
            if m == 1:
                return ds.OperatorSpec.laplacian()
            return ds.OperatorSpec.biharmonic(nu)
        table = {}
        for i, c in enumerate(coeffs):
            _keys(c, ("alpha", "beta", "value"), src, f"operator.coefficients[{i}]",
                  required=("alpha", "beta", "value"))
            a, b = tuple(int(v) for v in c["alpha"]), tuple(int(v) for v in c["beta"])
            if len(a) != 2 or len(b) != 2 or sum(a) != m or sum(b) != m:
                raise src.error(f"coefficient {i}: multi-indices must have length 2 and order {m}", "alpha")
            table[(a, b)] = float(c["value"])
        L = float(obj.get("L", max(abs(v) for v in table.values())))
        return ds.OperatorSpec(m, table, theta=float(obj.get("theta", 1.0)), L=L, nu=nu)
    except (TypeError, ValueError) as exc:
        raise src.error(f"invalid operator: {exc}", "operator") from None


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Fully resolved run configuration.

    ``h`` stays ``None`` until a domain fixes ``rho``; ``resolved_h`` then
    applies the default ``rho / 64``.
    """

    subcommand: str
    inputs: tuple = ()
    output: str | None = None
    summary: str | None = None
    h: float | None = None
    k: int = DEFAULT_K
    seed: int = DEFAULT_SEED
    tol: float = 1e-8
    spacing: float | None = None
    dump: str | None = None
    request: dict = field(default_factory=dict)
    domains: tuple = ()
    operator: ds.OperatorSpec | None = None

    def resolved_h(self, d=None) -> float:
        if self.h is not None:
            return self.h
        if d is None:
            raise ConfigError("no lattice spacing given and no domain to derive it from")
        return d.atlas.rho / 64


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-shift", description="Domain perturbation and eigenvalue tools.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(q, numeric=True):
        q.add_argument("--output", "-o", help="main output file (default: standard output)")
        q.add_argument("--seed", type=lambda s: int(s, 0), help="random seed (default 0x5EED)")
        if numeric:
            q.add_argument("--h", type=float, help="lattice spacing (default rho/64)")
            q.add_argument("--k", type=int, help="number of eigenvalues (default 6)")
        q.add_argument("--tol", type=float, help="comparison tolerance for pass flags")

    q = sub.add_parser("distance", help="distances between two domains")
    q.add_argument("domains", nargs=2)
    q.add_argument("--spacing", type=float, help="boundary sampling spacing")
    common(q, numeric=False)
    q = sub.add_parser("spectrum", help="lowest eigenvalues on a domain")
    q.add_argument("domain")
    q.add_argument("request", nargs="?")
    q.add_argument("--dump", help="write PREFIX_K.txt and PREFIX_M.txt")
    common(q)
    q = sub.add_parser("perturb", help="map a boundary cloud")
    q.add_argument("domain")
    q.add_argument("request")
    q.add_argument("--summary", help="JSON summary file (default: standard output)")
    q.add_argument("--spacing", type=float, help="boundary sampling spacing")
    common(q, numeric=False)
    q = sub.add_parser("stability", help="perturbation sweep")
    q.add_argument("experiment")
    q.add_argument("--summary", help="JSON summary file (default: standard output)")
    common(q)
    q = sub.add_parser("verify", help="quick fixture and invariant suite")
    common(q, numeric=False)
    return p


def _override(cfg: RunConfig, name: str, flag, request: dict, src: _Source | None, cast):
    if name in request:
        try:
            setattr(cfg, name, cast(request[name]))
        except (TypeError, ValueError):
            raise src.error(f"{name} must be a number", name) from None
    if flag is not None:
        if name in request and cast(request[name]) != flag:
            warnings.warn(f"--{name} {flag} overrides {name} = {request[name]} from {src.path}",
                          ConfigWarning, stacklevel=3)
        setattr(cfg, name, flag)


_REQUEST_KEYS = {
    "spectrum": ("operator", "bc", "h", "k", "seed"),
    "perturb": ("map", "epsilon", "shift", "factor", "center", "shear", "m", "spacing", "seed"),
    "stability": ("family", "operator", "bc", "k", "h", "grid", "seed", "tol"),
}


def parse_config(argv, files: dict | None = None) -> RunConfig:
    """Parse the command line and load every referenced file.

    Parameters
    ----------
    argv : sequence of str
        Arguments without the program name.
    files : dict, optional
        In-memory file contents keyed by path, consulted before the disk.

    Raises
    ------
    ConfigError
        For unusable arguments or files, unknown keys included.
    """
    parser = _parser()
    err = io.StringIO()
    try:
        from contextlib import redirect_stderr

        with redirect_stderr(err):
            ns = parser.parse_args(list(argv))
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise ConfigError(err.getvalue().strip().splitlines()[-1] if err.getvalue() else "bad arguments") from None
    cfg = RunConfig(ns.subcommand, output=ns.output, summary=getattr(ns, "summary", None),
                    dump=getattr(ns, "dump", None), spacing=getattr(ns, "spacing", None))
    req_src = None
    if ns.subcommand == "distance":
        cfg.inputs = tuple(ns.domains)
        cfg.domains = tuple(parse_domain(_read(p, files)) for p in ns.domains)
    elif ns.subcommand in ("spectrum", "perturb"):
        cfg.inputs = (ns.domain,) + ((ns.request,) if ns.request else ())
        cfg.domains = (parse_domain(_read(ns.domain, files)),)
    elif ns.subcommand == "stability":
        cfg.inputs = (ns.experiment,)
    if ns.subcommand in _REQUEST_KEYS and len(cfg.inputs) > len(cfg.domains):
        req_src = _read(cfg.inputs[-1], files)
        cfg.request = _load(req_src)
        _keys(cfg.request, _REQUEST_KEYS[ns.subcommand], req_src, ns.subcommand + " request")
    req = cfg.request
    if "operator" in req:
        cfg.operator = parse_operator(req["operator"], req_src)
    elif ns.subcommand in ("spectrum", "stability"):
        cfg.operator = ds.OperatorSpec.laplacian()
    numeric = {"h": float, "k": int, "seed": int, "tol": float}
    for name, cast in numeric.items():
        _override(cfg, name, getattr(ns, name, None), req if name in _REQUEST_KEYS.get(ns.subcommand, ()) else {},
                  req_src, cast)
    if cfg.h is not None and not cfg.h > 0:
        raise ConfigError(f"h must be positive, got {cfg.h}")
    if cfg.k < 1:
        raise ConfigError(f"k must be at least 1, got {cfg.k}")
    if ns.subcommand == "stability":
        _stability_request(cfg, req_src)
    if ns.subcommand == "perturb":
        if "map" not in req:
            raise req_src.error("missing key 'map' in perturb request")
        if req["map"] not in ("t_eps", "translation", "dilation", "shear"):
            raise req_src.error(f"unknown map {req['map']!r}", "map")
    return cfg


_FAMILY_KEYS = {
    "vertical_shift": ("generator", "rho"),
    "oscillation": ("generator", "rho", "wavenumber"),
    "cusp_sharpen": ("generator", "alpha", "scale"),
}


def _stability_request(cfg: RunConfig, src: _Source):
    req = cfg.request
    if "family" not in req or "grid" not in req:
        raise src.error("stability request needs 'family' and 'grid'")
    fam = req["family"]
    if isinstance(fam, str):
        fam = {"generator": fam}
    _keys(fam, ("generator", "rho", "wavenumber", "alpha", "scale"), src, "family", required=("generator",))
    if fam["generator"] not in _FAMILY_KEYS:
        raise src.error(f"unknown family {fam['generator']!r}", "generator")
    _keys(fam, _FAMILY_KEYS[fam["generator"]], src, "family")
    grid = req["grid"]
    if not isinstance(grid, list) or len(grid) < 4 or any(not isinstance(t, (int, float)) for t in grid):
        raise src.error("grid must list at least four numbers", "grid")
    if list(grid) != sorted(grid) or grid[0] <= 0:
        raise src.error("grid must be sorted and positive", "grid")
    req["family"] = fam
    if "k" not in req and cfg.k == DEFAULT_K:
        cfg.k = 3


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class Table:
    """Rows for CSV output with one documented column per entry."""

    columns: list
    rows: list
    doc: dict = field(default_factory=dict)


def _fmt(x: float) -> float | None:
    if not math.isfinite(x):
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


def _clean(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _clean({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else f"{float(v):.{SIG_DIGITS}g}"
    return str(v)


def emit_report(report, fmt: str = "json") -> bytes:
    """Serialize a report.

    Parameters
    ----------
    report : dict, dataclass or Table
        JSON reports keep their key order; floats carry twelve significant
        digits and non-finite values become ``null``.
    fmt : {"json", "csv"}
        CSV needs a ``Table`` and starts with a ``#`` line documenting every
        column.
    """
    if fmt == "json":
        return (json.dumps(_clean(report), indent=2) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if not isinstance(report, Table):
        raise TypeError("CSV output needs a Table")
    buf = io.StringIO()
    buf.write("# columns: " + "; ".join(f"{c} = {report.doc.get(c, c)}" for c in report.columns) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for row in report.rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue().encode()


def write_output(data: bytes, path: str | None):
    """Write to ``path`` or to standard output when ``path`` is ``None``."""
    if path is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    Path(path).write_bytes(data)


def _write_pair(cfg: RunConfig, table: Table, summary: dict):
    """CSV to ``--output`` and JSON to ``--summary``.

    With neither given the CSV goes to standard output and the summary to
    standard error; with only ``--output`` the summary goes to standard output.
    """
    write_output(emit_report(table, "csv"), cfg.output)
    data = emit_report(summary)
    if cfg.summary is None and cfg.output is None:
        sys.stderr.write(data.decode())
    else:
        write_output(data, cfg.summary)


def dump_matrix(A, path: str):
    """Coordinate text dump, one ``row col value`` triple per nonzero (0-based)."""
    C = A.tocoo()
    order = np.lexsort((C.col, C.row))
    lines = [f"{C.row[i]} {C.col[i]} {C.data[i]:.{SIG_DIGITS}g}" for i in order]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def run_distance(cfg: RunConfig) -> dict:
    from .metrics import atlas_distance, boundary_distances

    d1, d2 = cfg.domains
    da = atlas_distance(d1, d2)
    hp = boundary_distances(d1, d2, cfg.spacing)
    return {
        "d_atlas": da.value,
        "d_hp_lower": hp["d_hp_lower"],
        "d_hp": hp["d_hp"],
        "slack": {"atlas": da.slack, "hp": hp["slack"]},
        "witnesses": {
            "atlas": {"chart": da.witnesses[0], "base_point": da.witnesses[1]},
            "hp_1_to_2": hp["witness_1_to_2"],
            "hp_2_to_1": hp["witness_2_to_1"],
        },
    }


def run_spectrum(cfg: RunConfig) -> dict:
    d = cfg.domains[0]
    bc = ds._bc(cfg.request.get("bc", "dirichlet"))
    h = cfg.resolved_h(d)
    g = ds.rasterize(d, h)
    if cfg.dump:
        K, M = ds.assemble(g, cfg.operator, bc)
        dump_matrix(K, f"{cfg.dump}_K.txt")
        dump_matrix(M, f"{cfg.dump}_M.txt")
    sp = ds.spectrum(d, cfg.operator, bc, h, cfg.k, seed=cfg.seed, grid=g)
    return {
        "eigenvalues": sp.eigenvalues,
        "bc": sp.bc,
        "m": cfg.operator.m,
        "nu": cfg.operator.nu,
        "h": h,
        "k": cfg.k,
        "n_dof": sp.n_dof,
        "method": sp.method,
        "residuals": sp.residuals,
        "validated": not (bc == "neumann" and cfg.operator.m > 1),
    }


def run_perturb(cfg: RunConfig) -> tuple[Table, dict]:
    from .perturbation import Diffeomorphism, TransformTEps, t_eps_certify

    d = cfg.domains[0]
    req = cfg.request
    spacing = cfg.spacing or req.get("spacing") or d.atlas.rho / 16
    cloud = boundary_cloud(d, spacing)
    kind = req["map"]
    summary = {"map": kind}
    if kind == "t_eps":
        eps = float(req.get("epsilon", 0.0))
        t = TransformTEps.for_atlas(d.atlas, eps)
        cert = t_eps_certify(t, m=int(req.get("m", 1)), seed=cfg.seed)
        P = t(cloud.points)
        summary.update(epsilon=eps, A1=cert.A1, A2=cert.A2, E1=cert.E1, G=cert.G,
                       det_range=cert.det_range, below_E1=eps < cert.E1)
    else:
        if kind == "translation":
            phi = Diffeomorphism.translation(req.get("shift", (0.0, 0.0)))
        elif kind == "dilation":
            phi = Diffeomorphism.dilation(float(req.get("factor", 1.0)), req.get("center", (0.0, 0.0)))
        else:
            phi = Diffeomorphism.shear(float(req.get("shear", 0.0)))
        P = phi(cloud.points)
        b1, b2 = phi.bounds(cloud.points, int(req.get("m", 1)))
        summary.update(params={k: v for k, v in phi.params.items()}, B1=b1, B2=b2)
    summary["n_points"] = len(P)
    table = Table(["x", "y", "chart"], [[p[0], p[1], int(c)] for p, c in zip(P, cloud.charts)],
                  {"x": "first coordinate of the mapped point", "y": "second coordinate",
                   "chart": "chart that produced the sample"})
    return table, summary


_STAB_DOC = {
    "t": "family parameter",
    "d_A": "atlas distance to the base domain",
    "d_A_slack": "sampling error bound of d_A",
    "d_hp_lower": "lower Hausdorff-Pompeiu deviation",
    "d_hp": "Hausdorff-Pompeiu distance",
    "hp_slack": "sampling error bound of both deviations",
    "chain_ok": "1 when d_hp_lower <= d_hp <= d_A + slack",
}


def _family(fam: dict, grid):
    from . import experiments as ex

    params = {k: v for k, v in fam.items() if k != "generator"}
    maker = {"vertical_shift": ex.vertical_shift_family, "oscillation": ex.oscillation_family,
             "cusp_sharpen": ex.cusp_family}[fam["generator"]]
    return maker(grid, **params)


def run_stability(cfg: RunConfig) -> tuple[Table, dict]:
    from . import experiments as ex

    req = cfg.request
    f = _family(req["family"], [float(t) for t in req["grid"]])
    h = cfg.resolved_h(f.base)
    r = ex.stability_sweep(f, cfg.operator, req.get("bc", "both"), cfg.k, h, seed=cfg.seed)
    header, body = r.table()
    doc = dict(_STAB_DOC)
    for bc in r.bcs:
        for n in range(1, r.k + 1):
            doc[f"lambda_{n}_{bc}"] = f"eigenvalue {n} with {bc} conditions"
            header.append(f"usable_{n}_{bc}")
            doc[f"usable_{n}_{bc}"] = f"1 when the change of eigenvalue {n} ({bc}) enters the fit"
    for i, line in enumerate(body):
        for bc in r.bcs:
            line += [bool(r.usable(bc, n)[i]) for n in range(1, r.k + 1)]
    holder = f.generator == "cusp_sharpen"
    fits, passed = {}, {}
    for bc in r.bcs:
        fits[bc], passed[bc] = {}, {}
        for n in range(1, r.k + 1):
            try:
                if holder:
                    fr = ex.fit_stability(r, n, "d_hp_lower", bc)
                    ok = fr.degenerate or fr.exponent >= f.modulus.alpha - 0.1
                else:
                    fr = ex.fit_stability(r, n, "d_A", bc)
                    ok = fr.degenerate or 0.9 <= fr.exponent <= 1.3
                fits[bc][str(n)] = fr
                passed[bc][str(n)] = bool(ok)
            except ex.FitError as exc:
                fits[bc][str(n)] = {"error": str(exc)}
                passed[bc][str(n)] = False
    summary = {"family": f.generator, "h": h, "k": r.k, "grid": list(f.grid),
               "distance_column": "d_hp_lower" if holder else "d_A",
               "base_error": r.base_error, "fits": fits, "pass": passed,
               "chain_ok": bool(all(row["chain_ok"] for row in r.rows)),
               "warnings": r.warnings}
    if set(r.bcs) == {"dirichlet", "neumann"}:
        mono = ex.check_monotonicity(r, f.base.atlas, tol=cfg.tol, op=cfg.operator)
        summary["monotonicity"] = {"passed": mono.passed, "failures": mono.failures,
                                   "observed_bound": mono.observed_bound, "ball_bound": mono.ball_bound}
    summary["passed"] = bool(summary["chain_ok"] and all(v for p in passed.values() for v in p.values())
                             and summary.get("monotonicity", {}).get("passed", True))
    return Table(header, body, doc), summary


def run_verify(cfg: RunConfig) -> dict:
    from .experiments import verification_suite

    return verification_suite(seed=cfg.seed, tol=cfg.tol)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _numeric_errors():
    from .perturbation import CertificationError, CoverageError, PreconditionError

    return (ds.NumericalError, ds.ResolutionError, ds.EllipticityError, GeometryError,
            CertificationError, CoverageError, PreconditionError, NotImplementedError)


def main(argv=None) -> int:
    """Run the command line interface and return the exit code."""
    argv = sys.argv[1:] if argv is None else argv
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConfigWarning)
            cfg = parse_config(argv)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.subcommand == "distance":
            write_output(emit_report(run_distance(cfg)), cfg.output)
        elif cfg.subcommand == "spectrum":
            write_output(emit_report(run_spectrum(cfg)), cfg.output)
        elif cfg.subcommand == "perturb":
            table, summary = run_perturb(cfg)
            _write_pair(cfg, table, summary)
        elif cfg.subcommand == "stability":
            table, summary = run_stability(cfg)
            _write_pair(cfg, table, summary)
            return EXIT_OK if summary["passed"] else EXIT_FAILED
        else:
            report = run_verify(cfg)
            write_output(emit_report(report), cfg.output)
            return EXIT_OK if report["passed"] else EXIT_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _numeric_errors() as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
