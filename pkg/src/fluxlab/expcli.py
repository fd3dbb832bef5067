"""Configuration-driven studies and the ``fluxnorm-lab`` command.

Configs are INI files::

    [study]
    kind = convergence            ; convergence|contrast|weyl|checks|eigs|harmonic|mesh-export
    problem = scalar              ; scalar|elastic
    coarse = 8, 16, 32            ; powers of two
    fine_factor = 4               ; >= 4, power of two
    basis = transfer              ; transfer|raw-p1|spectral|harmonic
    rhs_family_size = 16
    N = 4, 16, 64                 ; weyl / eigs only

    [coefficient]
    family = checkerboard         ; see make_scalar / make_elastic
    kappa = 1e4
    cells = 8
    seed = 1                      ; mandatory for random families

    [sweep]                       ; contrast only
    param = kappa
    values = 1, 1e2, 1e4, 1e6

    [tolerances]                  ; optional overrides of DEFAULT_TOLERANCES
    rate_min = 0.75

    [output]
    dir = out                     ; FLUXNORM_LAB_OUT overrides

Each study writes ``<kind>.csv`` (first line ``# schema: ...``, every row
carrying ``config_hash``) and ``<kind>.meta.json``.  Exit status: 0 when all
configured checks pass, 2 on a failed check, 1 on any runtime error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bases import (
    build_elastic_basis,
    build_harmonic_basis,
    build_spectral_basis,
    build_transfer_basis,
    galerkin_in_span,
    raw_p1_basis,
    worst_case_flux_error,
)
from .coeff import ELASTIC_FAMILIES, SCALAR_FAMILIES, export_sampled_csv, make_elastic, make_scalar, sample_on_mesh
from .elasticity import ElasticOperator, cordes_beta_tensor, vector_load
from .fem import DirichletOperator, DiscreteField, assemble_mass, assemble_stiffness, coefficient_array
from .fluxnorm import flux_distance, flux_norm_elastic
from .harmonic import (
    cordes_beta_scalar,
    harmonic_coordinates,
    kappa_V,
    nonconforming_space,
    q_matrix,
    weak_divergence_residual,
)
from .mesh import build_structured, export_mesh
from .sparsela import write_matrix_market
from .spectral import eigs_table, laplace_eigs_numeric, nwidth_constant, square_eigenvalues

log = logging.getLogger("fluxlab.expcli")

SCHEMA_VERSION = 1
STUDIES = ("convergence", "contrast", "weyl", "checks", "eigs", "harmonic", "mesh-export")
BASES = ("transfer", "raw-p1", "spectral", "harmonic")
RANDOM_FAMILIES = {"inclusions", "multiscale_trig", "rough_isotropic"}

DEFAULT_TOLERANCES = {
    "rate_min": 0.75,
    "rate_max": 1.25,
    "flux_variation": 0.10,
    "alpha_rel": 1e-6,
    "discrete_ratio": 0.02,
    "nwidth_ratio": 0.15,
    "nwidth_min_N": 256,
    "numeric_max_N": 64,
    "residual": 1e-6,
    "kv_conforming": 1e-8,
    "q11": 1e-6,
}


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_parse_value(t) for t in text.split(",") if t.strip()]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _as_list(v) -> list:
    return v if isinstance(v, list) else [v]


def _power_of_two(n) -> bool:
    return isinstance(n, int) and n >= 1 and (n & (n - 1)) == 0


@dataclass
class StudyConfig:
    kind: str
    coarse: list
    fine_factor: int = 4
    problem: str = "scalar"
    family: str = "constant"
    params: dict = field(default_factory=dict)
    seed: int | None = None
    basis: str = "transfer"
    rhs_family_size: int = 16
    N: list = field(default_factory=lambda: [4, 16, 64])
    sweep_param: str | None = None
    sweep_values: list = field(default_factory=list)
    harmonic_boundary: str = "full"
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    out_dir: Path = Path("out")
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in STUDIES:
            raise ConfigError(f"unknown study {self.kind!r}; expected one of {STUDIES}")
        if self.problem not in ("scalar", "elastic"):
            raise ConfigError("problem must be 'scalar' or 'elastic'")
        families = SCALAR_FAMILIES if self.problem == "scalar" else ELASTIC_FAMILIES
        if self.family not in families:
            raise ConfigError(f"unknown {self.problem} family {self.family!r}")
        if not self.coarse or not all(_power_of_two(n) for n in self.coarse):
            raise ConfigError(f"coarse n_div values must be powers of two, got {self.coarse}")
        if not _power_of_two(self.fine_factor) or self.fine_factor < 4:
            raise ConfigError(f"fine_factor must be a power of two >= 4, got {self.fine_factor}")
        if self.family in RANDOM_FAMILIES and self.seed is None:
            raise ConfigError(f"family {self.family!r} is random and needs a seed")
        if self.basis not in BASES:
            raise ConfigError(f"unknown basis {self.basis!r}")
        if self.problem == "elastic" and self.basis not in ("transfer", "spectral"):
            raise ConfigError("elastic studies support transfer and spectral bases only")
        if self.kind == "contrast" and (not self.sweep_param or not self.sweep_values):
            raise ConfigError("contrast study needs [sweep] param and values")
        if self.rhs_family_size < 1:
            raise ConfigError("rhs_family_size must be >= 1")
        if self.harmonic_boundary not in ("full", "faces"):
            raise ConfigError("harmonic_boundary must be 'full' or 'faces'")

    # ------------------------------------------------------------ helpers
    def coefficient(self, **override):
        params = {**self.params, **override}
        if self.seed is not None and self.family in RANDOM_FAMILIES:
            params["seed"] = self.seed
        make = make_scalar if self.problem == "scalar" else make_elastic
        return make(self.family, **params)

    def canonical(self) -> dict:
        """Everything that influences results (not output location or worker count)."""
        return {
            "kind": self.kind,
            "problem": self.problem,
            "coarse": list(self.coarse),
            "fine_factor": self.fine_factor,
            "family": self.family,
            "params": {k: self.params[k] for k in sorted(self.params)},
            "seed": self.seed,
            "basis": self.basis,
            "rhs_family_size": self.rhs_family_size,
            "N": list(self.N),
            "sweep_param": self.sweep_param,
            "sweep_values": list(self.sweep_values),
            "harmonic_boundary": self.harmonic_boundary,
            "tolerances": {k: self.tolerances[k] for k in sorted(self.tolerances)},
        }

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path, kind: str | None = None, out: str | None = None, workers: int | None = None) -> StudyConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    study = {k: _parse_value(v) for k, v in cp["study"].items()} if cp.has_section("study") else {}
    coef = {k: _parse_value(v) for k, v in cp["coefficient"].items()} if cp.has_section("coefficient") else {}
    tol = dict(DEFAULT_TOLERANCES)
    if cp.has_section("tolerances"):
        unknown = set(cp["tolerances"]) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys {sorted(unknown)}")
        tol.update({k: _parse_value(v) for k, v in cp["tolerances"].items()})
    sweep = {k: _parse_value(v) for k, v in cp["sweep"].items()} if cp.has_section("sweep") else {}
    out_dir = os.environ.get("FLUXNORM_LAB_OUT") or (cp.get("output", "dir", fallback="out"))
    if out:
        out_dir = out

    family = coef.pop("family", "constant")
    seed = coef.pop("seed", None)
    cfg_kind = kind or study.get("kind")
    if cfg_kind is None:
        raise ConfigError("study kind missing (CLI argument or [study] kind)")
    if kind and study.get("kind") and study["kind"] != kind:
        raise ConfigError(f"config is for study {study['kind']!r}, not {kind!r}")
    try:
        return StudyConfig(
            kind=cfg_kind,
            coarse=[int(n) for n in _as_list(study.get("coarse", [8]))],
            fine_factor=int(study.get("fine_factor", 4)),
            problem=study.get("problem", "scalar"),
            family=family,
            params=coef,
            seed=None if seed is None else int(seed),
            basis=study.get("basis", "transfer"),
            rhs_family_size=int(study.get("rhs_family_size", 16)),
            N=[int(n) for n in _as_list(study.get("n", [4, 16, 64]))],
            sweep_param=sweep.get("param"),
            sweep_values=[float(v) for v in _as_list(sweep.get("values", []))],
            harmonic_boundary=study.get("harmonic_boundary", "full"),
            tolerances=tol,
            out_dir=Path(out_dir),
            workers=int(workers if workers is not None else study.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- reports
@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class StudyReport:
    study: str
    columns: list
    rows: list
    checks: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    extra_tables: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_table(path: Path, study: str, columns, rows, config_hash: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: fluxnorm-lab/{study}/v{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_hash", *columns])
        for r in rows:
            w.writerow([config_hash, *(_fmt(r.get(c, "")) for c in columns)])


def write_report(report: StudyReport, cfg: StudyConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    main = out / f"{report.study}.csv"
    _write_table(main, report.study, report.columns, report.rows, cfg.config_hash)
    for name, (cols, rows) in report.extra_tables.items():
        _write_table(out / f"{report.study}_{name}.csv", f"{report.study}-{name}", cols, rows, cfg.config_hash)
    meta = {
        "study": report.study,
        "config_hash": cfg.config_hash,
        "config": cfg.canonical(),
        "versions": {
            "fluxlab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": cfg.seed,
        "checks": [{"name": c.name, "passed": bool(c.passed), "detail": c.detail} for c in report.checks],
        "passed": report.passed,
        **report.metadata,
    }
    (out / f"{report.study}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return main


def _pmap(fn, items, workers: int):
    """Order-preserving map, optionally over worker processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _rates(errors) -> list:
    out = [float("nan")]
    for e0, e1 in zip(errors[:-1], errors[1:]):
        out.append(math.log2(e0 / e1) if e0 > 0 and e1 > 0 else float("nan"))
    return out


# ---------------------------------------------------------------- studies
def _psi1(mesh):
    from .spectral import laplace_eigs_square

    return laplace_eigs_square(1)[0].nodal(mesh)


def _make_basis(cfg: StudyConfig, fine, coarse, coef, op=None):
    if cfg.problem == "elastic":
        N = len(coarse.interior) if cfg.basis == "spectral" else None
        return build_elastic_basis(fine, coef, cfg.basis, N=N, coarse=coarse, op=op)
    if cfg.basis == "transfer":
        return build_transfer_basis(fine, coef, coarse, op=op)
    if cfg.basis == "raw-p1":
        return raw_p1_basis(coarse, fine, coef)
    if cfg.basis == "spectral":
        return build_spectral_basis(fine, coef, N=len(coarse.interior), op=op)
    Fmap = harmonic_coordinates(fine, coef, boundary=cfg.harmonic_boundary)
    return build_harmonic_basis(fine, Fmap, coarse, coef)


def _galerkin_errors(cfg, fine, coef, basis, op):
    """H1 seminorm and energy errors of the in-span Galerkin solution for ``f = Psi_1``."""
    if cfg.problem == "scalar":
        f = _psi1(fine)
        u = op.solve(assemble_mass(fine) @ f)
        ug = galerkin_in_span(basis, coef, f).values
        e = u - ug
        K_I = assemble_stiffness(fine)
        h1 = math.sqrt(max(e @ (K_I @ e), 0.0))
        energy = math.sqrt(max(e @ (op.K @ e), 0.0))
        flux = flux_distance(DiscreteField(fine, u, True), DiscreteField(fine, ug, True), op.a)
        return h1, energy, flux
    psi = _psi1(fine)
    fv = np.column_stack([psi, psi])
    u = op.solve(vector_load(fine, fv))
    ug = galerkin_in_span(basis, coef, fv).values.ravel()
    e = u - ug
    from scipy import sparse

    K_I = sparse.kron(assemble_stiffness(fine), sparse.identity(2), format="csr")
    h1 = math.sqrt(max(e @ (K_I @ e), 0.0))
    energy = math.sqrt(max(e @ (op.K @ e), 0.0))
    from .elasticity import VectorField2

    flux = flux_norm_elastic(VectorField2(fine, e), op.C)
    return h1, energy, flux


def _level(cfg: StudyConfig, n: int, coef_override: dict | None = None) -> dict:
    coarse = build_structured(n)
    fine = build_structured(n * cfg.fine_factor)
    coef = cfg.coefficient(**(coef_override or {}))
    op = DirichletOperator(fine, coef) if cfg.problem == "scalar" else ElasticOperator(fine, coef)
    basis = _make_basis(cfg, fine, coarse, coef, op=op)
    worst = worst_case_flux_error(basis, coef, cfg.rhs_family_size)
    h1, energy, flux = _galerkin_errors(cfg, fine, coef, basis, op)
    return {
        "coarse_n_div": n,
        "fine_n_div": fine.n_div,
        "h": coarse.h,
        "basis_size": basis.size,
        "flux_error": worst,
        "galerkin_flux_error": flux,
        "h1_error": h1,
        "energy_error": energy,
        "lam_min": coef.lam_min,
        "lam_min_h1": coef.lam_min * h1,
    }


def _convergence_job(args):
    cfg, n = args
    return _level(cfg, n)


def run_convergence(cfg: StudyConfig) -> StudyReport:
    """Rows ``(h, flux_error, h1_error, rate_flux, rate_h1)`` over the coarse levels."""
    levels = sorted(cfg.coarse)
    rows = _pmap(_convergence_job, [(cfg, n) for n in levels], cfg.workers)
    for r, rf, rh in zip(rows, _rates([r["flux_error"] for r in rows]), _rates([r["h1_error"] for r in rows])):
        r["rate_flux"], r["rate_h1"] = rf, rh
    lo, hi = cfg.tolerances["rate_min"], cfg.tolerances["rate_max"]
    checks = [
        Check(f"rate_flux[{r['coarse_n_div']}]", lo <= r["rate_flux"] <= hi, f"{r['rate_flux']:.4f} in [{lo}, {hi}]")
        for r in rows[1:]
    ]
    cols = ["coarse_n_div", "fine_n_div", "h", "basis_size", "flux_error", "h1_error", "rate_flux",
            "rate_h1", "lam_min_h1", "energy_error"]
    return StudyReport("convergence", cols, rows, checks)


def _contrast_job(args):
    cfg, value = args
    row = _level(cfg, cfg.coarse[0], {cfg.sweep_param: value})
    row["value"] = value
    return row


def run_contrast(cfg: StudyConfig) -> StudyReport:
    """Rows ``(value, worst_case_flux_error, energy_error)`` at fixed ``h`` over a contrast sweep."""
    rows = _pmap(_contrast_job, [(cfg, v) for v in cfg.sweep_values], cfg.workers)
    worst = np.array([r["flux_error"] for r in rows])
    galerkin = np.array([r["galerkin_flux_error"] for r in rows])
    variation = float(worst.max() / worst.min() - 1.0)
    checks = [Check("worst_case_variation", variation < cfg.tolerances["flux_variation"],
                    f"{variation:.3e} < {cfg.tolerances['flux_variation']}")]
    if cfg.family == "constant":
        rel = float(np.max(np.abs(galerkin - galerkin[0])) / galerkin[0])
        checks.append(Check("galerkin_flux_constant", rel <= cfg.tolerances["alpha_rel"],
                            f"{rel:.3e} <= {cfg.tolerances['alpha_rel']}"))
    for r in rows:
        r["param"] = cfg.sweep_param
    cols = ["param", "value", "flux_error", "galerkin_flux_error", "energy_error", "lam_min"]
    return StudyReport("contrast", cols, rows, checks, {"worst_case_variation": variation})


def run_weyl_nwidth(cfg: StudyConfig) -> StudyReport:
    """Rows ``(N, discrete_worst_case, 1/sqrt(lam_{N+1}), nwidth_constant(N), ratios)``."""
    tol = cfg.tolerances
    Ns = sorted(cfg.N)
    exact = square_eigenvalues(max(Ns) + 1)
    numeric_Ns = [N for N in Ns if N <= tol["numeric_max_N"]]
    rows, checks = [], []
    pairs = []
    fine = build_structured(cfg.coarse[0] * cfg.fine_factor)
    if numeric_Ns:
        M = min(2 * max(numeric_Ns) + 1, len(fine.interior))
        pairs = laplace_eigs_numeric(fine, M)
        coef = cfg.coefficient()
        op = DirichletOperator(fine, coef)
    for N in Ns:
        row = {
            "N": N,
            "inv_sqrt_lam_exact": 1.0 / math.sqrt(exact[N]),
            "nwidth_constant": nwidth_constant(N),
        }
        row["ratio_nwidth"] = row["inv_sqrt_lam_exact"] / row["nwidth_constant"]
        if N in numeric_Ns:
            basis = build_spectral_basis(fine, coef, pairs=pairs[:N], op=op)
            family = pairs[: min(2 * N + 1, len(pairs))]
            row["discrete_worst_case"] = worst_case_flux_error(basis, coef, family)
            row["inv_sqrt_lam_h"] = 1.0 / math.sqrt(pairs[N].lam)
            row["ratio_discrete"] = row["discrete_worst_case"] / row["inv_sqrt_lam_h"]
            checks.append(Check(f"ratio_discrete[{N}]", abs(row["ratio_discrete"] - 1) <= tol["discrete_ratio"],
                                f"{row['ratio_discrete']:.6f}"))
        else:
            row["discrete_worst_case"] = row["inv_sqrt_lam_h"] = row["ratio_discrete"] = float("nan")
        if N >= tol["nwidth_min_N"]:
            checks.append(Check(f"ratio_nwidth[{N}]", abs(row["ratio_nwidth"] - 1) <= tol["nwidth_ratio"],
                                f"{row['ratio_nwidth']:.6f}"))
        rows.append(row)
    cols = ["N", "discrete_worst_case", "inv_sqrt_lam_h", "ratio_discrete", "inv_sqrt_lam_exact",
            "nwidth_constant", "ratio_nwidth"]
    return StudyReport("weyl", cols, rows, checks, {"fine_n_div": fine.n_div})


def _laminate_q11(params) -> float | None:
    values = np.asarray(params.get("values", []), dtype=float)
    breaks = np.concatenate([[0.0], np.sort(np.asarray(_as_list(params.get("breaks", [])), float)), [1.0]])
    if len(values) != len(breaks) - 1:
        return None
    return float(1.0 / np.sum(np.diff(breaks) / values))


def run_checks(cfg: StudyConfig) -> StudyReport:
    """Cordes measures, divergence residual of ``Q``, ``K_V``, ``det grad F`` and quarantine count."""
    tol = cfg.tolerances
    coarse = build_structured(cfg.coarse[0])
    fine = build_structured(cfg.coarse[0] * cfg.fine_factor)
    coef = cfg.coefficient()
    rows, checks = [], []

    def add(name, value, expected="", tolerance="", passed=None):
        rows.append({"check": name, "value": value, "expected": expected, "tolerance": tolerance,
                     "passed": "" if passed is None else bool(passed)})
        if passed is not None:
            checks.append(Check(name, bool(passed), f"{_fmt(value)} vs {expected}"))

    if cfg.problem == "elastic":
        C = sample_on_mesh(coef, fine)
        add("beta_C", cordes_beta_tensor(C))
        add("lam_min", coef.lam_min)
        add("lam_max", coef.lam_max)
        return StudyReport("checks", ["check", "value", "expected", "tolerance", "passed"], rows, checks)

    A = coefficient_array(fine, coef)
    beta = cordes_beta_scalar(A)
    add("beta_a", beta, "< 1", "", beta < 1)
    Fmap = harmonic_coordinates(fine, coef, boundary=cfg.harmonic_boundary)
    qf = q_matrix(Fmap, quarantine=True)
    add("det_gradF_min", qf.min_det, "> 0", "", None)
    add("quarantine_count", len(qf.quarantine))
    res = weak_divergence_residual(qf.Q, qf.mesh, valid=qf.valid)
    constant = cfg.family in ("constant", "diag")
    closed_form = constant or cfg.family == "laminate"
    add("Q_divergence_residual", res, "0" if closed_form else "", tol["residual"] if closed_form else "",
        res <= tol["residual"] if closed_form else None)
    add("a_divergence_residual", weak_divergence_residual(A, fine))
    try:
        kv = kappa_V(nonconforming_space(Fmap, coarse))
    except ValueError as exc:
        log.warning("K_V unavailable: %s", exc)
        kv = float("nan")
    add("K_V", kv, "0" if constant else "", tol["kv_conforming"] if constant else "",
        kv <= tol["kv_conforming"] if constant else None)
    if cfg.family == "laminate":
        expected = _laminate_q11(cfg.params)
        if expected is not None:
            q11 = qf.Q[qf.valid, 0, 0]
            dev = float(np.max(np.abs(q11 - expected)))
            add("Q11_max_deviation", dev, expected, tol["q11"], dev <= tol["q11"])
    return StudyReport("checks", ["check", "value", "expected", "tolerance", "passed"], rows, checks)


def run_eigs(cfg: StudyConfig) -> StudyReport:
    mesh = build_structured(cfg.coarse[0] * cfg.fine_factor)
    rows = eigs_table(mesh, max(cfg.N))
    return StudyReport("eigs", ["k", "lambda_exact", "lambda_numeric", "weyl", "ratio"], rows, [],
                       {"mesh_n_div": mesh.n_div})


def run_harmonic(cfg: StudyConfig) -> StudyReport:
    """Summary of ``F``, ``det grad F``, ``Q``, ``beta_a`` and ``K_V``; per-vertex and per-triangle tables."""
    coarse = build_structured(cfg.coarse[0])
    fine = build_structured(cfg.coarse[0] * cfg.fine_factor)
    coef = cfg.coefficient()
    Fmap = harmonic_coordinates(fine, coef, boundary=cfg.harmonic_boundary)
    qf = q_matrix(Fmap, quarantine=True)
    det = Fmap.det
    v = qf.valid
    try:
        kv = kappa_V(nonconforming_space(Fmap, coarse))
    except ValueError:
        kv = float("nan")
    Qv = qf.Q[v]
    eig = np.linalg.eigvalsh(Qv)
    summary = [
        {"quantity": "det_gradF_min", "value": float(det.min())},
        {"quantity": "det_gradF_max", "value": float(det.max())},
        {"quantity": "quarantine_count", "value": int(len(qf.quarantine))},
        {"quantity": "Q_lam_min", "value": float(eig[:, 0].min())},
        {"quantity": "Q_lam_max", "value": float(eig[:, 1].max())},
        {"quantity": "Q11_mean", "value": float(np.average(Qv[:, 0, 0], weights=qf.mesh.areas[v]))},
        {"quantity": "Q_divergence_residual", "value": weak_divergence_residual(qf.Q, qf.mesh, valid=v)},
        {"quantity": "beta_a", "value": cordes_beta_scalar(coef, fine)},
        {"quantity": "beta_Q", "value": cordes_beta_scalar(Qv)},
        {"quantity": "K_V", "value": kv},
    ]
    verts = [
        {"vertex": i, "x": x, "y": y, "F1": f1, "F2": f2}
        for i, ((x, y), f1, f2) in enumerate(zip(fine.vertices, Fmap.F1.values, Fmap.F2.values))
    ]
    tris = [
        {"triangle": t, "det": det[t], "Q11": qf.Q[t, 0, 0], "Q12": qf.Q[t, 0, 1], "Q22": qf.Q[t, 1, 1],
         "quarantined": not v[t]}
        for t in range(fine.n_triangles)
    ]
    return StudyReport(
        "harmonic", ["quantity", "value"], summary, [],
        extra_tables={"vertices": (["vertex", "x", "y", "F1", "F2"], verts),
                      "triangles": (["triangle", "det", "Q11", "Q12", "Q22", "quarantined"], tris)},
    )


def run_mesh_export(cfg: StudyConfig) -> StudyReport:
    """Mesh files, stiffness matrices (Matrix Market) and sampled coefficients per level."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    coef = cfg.coefficient()
    rows = []
    for n in sorted(set(cfg.coarse) | {n * cfg.fine_factor for n in cfg.coarse}):
        mesh = build_structured(n)
        mesh_path = out / f"mesh_{n}.txt"
        export_mesh(mesh, mesh_path)
        if cfg.problem == "scalar":
            K = assemble_stiffness(mesh, coef)
        else:
            from .elasticity import assemble_elastic

            K = assemble_elastic(mesh, coef)
        mtx = out / f"stiffness_{n}.mtx"
        write_matrix_market(K, mtx, comment=f"config_hash {cfg.config_hash}")
        coef_path = out / f"coefficient_{n}.csv"
        export_sampled_csv(sample_on_mesh(coef, mesh), coef_path)
        rows.append({"n_div": n, "vertices": mesh.n_vertices, "triangles": mesh.n_triangles,
                     "nnz": K.nnz, "mesh_file": mesh_path.name, "matrix_file": mtx.name,
                     "coefficient_file": coef_path.name})
    cols = ["n_div", "vertices", "triangles", "nnz", "mesh_file", "matrix_file", "coefficient_file"]
    return StudyReport("mesh-export", cols, rows, [])


RUNNERS = {
    "convergence": run_convergence,
    "contrast": run_contrast,
    "weyl": run_weyl_nwidth,
    "checks": run_checks,
    "eigs": run_eigs,
    "harmonic": run_harmonic,
    "mesh-export": run_mesh_export,
}


def run_study(cfg: StudyConfig) -> StudyReport:
    t0 = time.perf_counter()
    report = RUNNERS[cfg.kind](cfg)
    report.metadata["wall_time_s"] = time.perf_counter() - t0
    report.metadata["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluxnorm-lab", description="Flux-norm homogenization studies.")
    p.add_argument("study", choices=STUDIES)
    p.add_argument("--config", required=True, help="INI study configuration")
    p.add_argument("--out", help="output directory (overrides config and FLUXNORM_LAB_OUT)")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, kind=args.study, out=args.out, workers=args.workers)
        report = run_study(cfg)
        path = write_report(report, cfg)
    except Exception as exc:  # runtime errors map to exit status 1
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    print(f"wrote {path}")
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
