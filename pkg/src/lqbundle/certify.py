"""Scenario ingestion, pipeline orchestration and certificate emission.

A scenario file describes either a stationary system (matrices) or a
spatial-averaging configuration; the pipeline runs every check of the
corresponding route and emits a deterministic certificate with one record
per check (pass iff margin >= 0), plus CSV tables for plotting.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import spatial as sa
from .dichotomy import dichotomy_split
from .errors import (
    LqBundleError,
    MissingField,
    Oscillating,
    ParseError,
    ValidationError,
)
from .frequency import QuadraticFormTriple, frequency_condition_margin
from .sampling import bump_control, m0_sample
from .spectral import eigenvalue_generator, make_spectral_model
from .stationary import (
    assemble_hamiltonian,
    coercivity_check,
    extract_nonoscillation,
    fit_decay_rate,
    hamiltonian_trajectory,
    integrate_control_trajectory,
    l2_controllability,
    lyapunov_inequality_check,
    pairing_drift,
    stable_lagrange_lp,
    stable_lagrange_schur,
)
from .symplectic import (
    grassmann_distance,
    intersection_dimension,
    isotropy_defect,
    vertical_subspace,
)

SCHEMA_VERSION = 1

DEFAULT_TOLERANCES = {
    "oracle": 1e-6,
    "isotropy": 1e-8,
    "riccati": 1e-8,
    "margin": 0.0,
    "invariance": 1e-8,
}


@dataclass(frozen=True)
class Scenario:
    """Validated scenario description."""

    name: str
    mode: str
    seed: int
    tolerances: dict
    payload: dict = field(repr=False)


@dataclass
class CheckRecord:
    name: str
    value: float
    bound: float
    margin: float
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": _jsonable(self.value),
            "bound": _jsonable(self.bound),
            "margin": _jsonable(self.margin),
            "pass": bool(self.passed),
            "detail": self.detail,
        }


@dataclass
class Certificate:
    name: str
    mode: str
    seed: int
    records: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def add_upper(self, name, value, bound, detail=""):
        """Record a check of the form value <= bound."""
        value = float(value)
        bound = float(bound)
        margin = bound - value
        self.records.append(
            CheckRecord(name, value, bound, margin, bool(margin >= 0.0), detail)
        )

    def add_lower(self, name, value, bound, detail=""):
        """Record a check of the form value >= bound."""
        value = float(value)
        bound = float(bound)
        margin = value - bound
        self.records.append(
            CheckRecord(name, value, bound, margin, bool(margin >= 0.0), detail)
        )

    def add_flag(self, name, passed, detail=""):
        val = 1.0 if passed else 0.0
        self.records.append(
            CheckRecord(name, val, 1.0, val - 1.0, bool(passed), detail)
        )

    def add_failure(self, name, exc):
        self.records.append(
            CheckRecord(name, float("nan"), 0.0, -1.0, False, f"{type(exc).__name__}: {exc}")
        )

    def to_json(self) -> str:
        doc = {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "mode": self.mode,
            "seed": self.seed,
            "pass": self.passed,
            "checks": [r.as_dict() for r in self.records],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _jsonable(x):
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _require(doc: dict, key: str):
    if key not in doc:
        raise MissingField(f"scenario is missing required field {key!r}")
    return doc[key]


def load_scenario(path: str) -> Scenario:
    """Parse and validate a scenario JSON file.

    Matrix shapes and the form triple are validated eagerly so schema errors
    surface here rather than deep in the pipeline.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario is not valid JSON: {exc}") from exc
    name = str(doc.get("name", os.path.basename(path)))
    mode = str(_require(doc, "mode"))
    seed = int(doc.get("seed", 42))
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(doc.get("tolerances", {}))
    if mode == "stationary":
        for key in ("A", "B", "F1", "F2", "F3"):
            _require(doc, key)
        # eager validation of shapes and symmetry
        form = QuadraticFormTriple(f1=doc["F1"], f2=doc["F2"], f3=doc["F3"])
        a = np.atleast_2d(np.asarray(doc["A"], dtype=float))
        b = np.atleast_2d(np.asarray(doc["B"], dtype=float))
        if a.shape != (form.state_dim, form.state_dim):
            raise MissingField(
                f"A must be {form.state_dim} x {form.state_dim}, got {a.shape}"
            )
        if b.shape != (form.state_dim, form.control_dim):
            raise MissingField(
                f"B must be {form.state_dim} x {form.control_dim}, got {b.shape}"
            )
    elif mode == "spatial-averaging":
        for key in ("eigenvalues", "Lambda", "delta", "driver"):
            _require(doc, key)
        _sa_model(doc)
    else:
        raise MissingField(f"unknown mode {mode!r}")
    return Scenario(name=name, mode=mode, seed=seed, tolerances=tolerances, payload=doc)


def _sa_model(doc):
    ev_doc = doc["eigenvalues"]
    if isinstance(ev_doc, dict):
        kind = _require(ev_doc, "generator")
        n = int(_require(ev_doc, "n"))
        params = {k: v for k, v in ev_doc.items() if k not in ("generator", "n")}
        return make_spectral_model(eigenvalue_generator(kind, n, **params))
    return make_spectral_model(ev_doc)


def _sa_config(scenario: Scenario):
    doc = scenario.payload
    model = _sa_model(doc)
    lam = float(doc["Lambda"])
    delta = float(doc["delta"])
    k = doc.get("k", "search")
    n_split = doc.get("N", "search")
    condition_set = doc.get("condition_set", "bundle")
    searched = None
    if k == "search" or n_split == "search":
        found = sa.gap_search(model, lam, delta, condition_set)
        searched = min(found, key=lambda r: (r["N"], r["k"]))
        k, n_split = searched["k"], searched["N"]
    cfg = sa.SAConfig(model=model, lam=lam, delta=delta, k=int(k), N=int(n_split))
    drv_doc = doc["driver"]
    driver = sa.driver_make(
        drv_doc.get("kind", "periodic"),
        {kk: vv for kk, vv in drv_doc.items() if kk != "kind"},
        a_bound=cfg.a_bound,
    )
    return cfg, driver, condition_set, searched


# -- stationary pipeline ------------------------------------------------------


def run_stationary_pipeline(scenario: Scenario) -> Certificate:
    doc = scenario.payload
    tol = scenario.tolerances
    cert = Certificate(name=scenario.name, mode=scenario.mode, seed=scenario.seed)
    a = np.atleast_2d(np.asarray(doc["A"], dtype=float))
    b = np.atleast_2d(np.asarray(doc["B"], dtype=float))
    form = QuadraticFormTriple(f1=doc["F1"], f2=doc["F2"], f3=doc["F3"])
    rng = np.random.default_rng(scenario.seed)
    n = a.shape[0]
    split = None
    try:
        split = dichotomy_split(a)
        cert.add_lower(
            "dichotomy-gap", split.eps_rate, 1e-10,
            detail=f"rank j = {split.rank_j}, fitted M = {split.m_const:.6g}",
        )
    except LqBundleError as exc:
        cert.add_failure("dichotomy-gap", exc)
        return cert
    scan = None
    try:
        scan = frequency_condition_margin(a, b, form, full_scan=True)
        cert.add_lower(
            "frequency-margin", scan.margin, tol["margin"],
            detail="min_w eig(sym(F3(I - M(w)))) > 0",
        )
        cert.add_flag("frequency-tail-certified", scan.tail_certified,
                      detail=f"tail floor {scan.tail_floor:.6g}")
        cert.add_upper("transfer-selfadjoint-defect", scan.skew_defect, 1e-10,
                       detail="||F3 M - (F3 M)*||")
        cert.tables["freq_margin"] = [
            {"omega": float(w), "min_eig": float(mg), "inv_norm": float(iv)}
            for w, mg, iv in zip(scan.omegas, scan.margins, scan.inverse_norms)
        ]
        if scan.margin > 0:
            bound = np.linalg.norm(form.f3, 2) / scan.margin
            cert.add_upper(
                "inverse-norm-bound", float(np.max(scan.inverse_norms)), bound,
                detail="||(I - M(w))^-1|| <= ||F3|| / margin",
            )
    except LqBundleError as exc:
        cert.add_failure("frequency-margin", exc)
    lp_res = None
    schur_sub = None
    if scan is not None and scan.margin > 0:
        try:
            lp_res = stable_lagrange_lp(a, b, form, split=split, margin=scan.margin)
            cert.add_upper("lp-isotropy", isotropy_defect(lp_res.l_plus),
                           tol["isotropy"])
            cert.add_upper("lp-invariance",
                           lp_res.diagnostics["invariance_defect"], tol["invariance"],
                           detail="relative H-invariance; LP tail bound "
                           f"{lp_res.diagnostics['tail_bound']:.3e}")
        except LqBundleError as exc:
            cert.add_failure("lp-construction", exc)
    try:
        ham = assemble_hamiltonian(a, b, form)
        cert.add_upper("symplectic-defect", ham.symplectic_defect(), 1e-10,
                       detail="||J H + H^T J||")
        schur_sub = stable_lagrange_schur(ham)
        if lp_res is not None:
            cert.add_upper(
                "oracle-equivalence",
                grassmann_distance(lp_res.l_plus, schur_sub),
                tol["oracle"],
                detail="grassmann distance LP construction vs ordered-Schur oracle",
            )
    except LqBundleError as exc:
        cert.add_failure("schur-oracle", exc)
    if schur_sub is not None:
        vert_dim = intersection_dimension(schur_sub, vertical_subspace(n))
        cert.add_upper("vertical-intersection", vert_dim, split.rank_j,
                       detail="dim(L+ cap vertical) <= j")
        try:
            no = extract_nonoscillation(schur_sub, a, b, form)
            cert.add_upper("riccati-residual", no.riccati_residual, tol["riccati"],
                           detail="||-P H3 P + P H1 + H1^T P + H2||")
            cert.add_upper("p-symmetry-defect", no.symmetry_defect, 1e-8)
            cert.tables["riccati"] = [
                {"entry": f"P[{i}][{j}]", "value": float(no.p[i, j])}
                for i in range(n)
                for j in range(n)
            ]
        except Oscillating as exc:
            cert.add_failure("nonoscillation", exc)
            no = None
        cert.add_flag("l2-controllability", l2_controllability(a, b),
                      detail="Hautus rank test on nonstable modes")
        if lp_res is not None:
            cert.add_lower("eps0", lp_res.eps0, 0.0,
                           detail=f"fitted M_eps = {lp_res.m_eps:.6g}")
            traj = hamiltonian_trajectory(
                ham, lp_res.l_plus.basis @ rng.standard_normal(n),
                np.linspace(0.0, 8.0 / max(lp_res.diagnostics["eps_h"], 1e-6), 400),
            )
            rate, _ = fit_decay_rate(traj)
            cert.add_lower("decay-rate", rate, lp_res.eps0 - 1e-3,
                           detail="fitted trajectory rate >= eps0 - 1e-3")
            cert.tables["decay"] = [
                {"label": "stationary", "rate": float(rate),
                 "prefactor": float(lp_res.m_eps)}
            ]
            drift, pair0 = pairing_drift(
                ham, lp_res.l_plus.basis[:, 0], lp_res.l_plus.basis[:, -1],
                np.linspace(0.0, 5.0, 200),
            )
            cert.add_upper("pairing-drift", drift, 1e-10,
                           detail=f"initial pairing {pair0:.3e}")
        if no is not None and split.rank_j == 0 and scan is not None:
            times = np.linspace(0.0, 18.0 / split.eps_rate, 1500)
            samples = []
            for _ in range(4):
                v, xi = m0_sample(rng, a, b, times)
                samples.append((v, xi))
            try:
                worst = coercivity_check(a, b, form, samples, margin=scan.margin)
                cert.add_lower("coercivity-ratio", worst, 1.0 - 1e-6,
                               detail="J_F / coercive lower bound over M0 samples")
            except ValidationError as exc:
                cert.add_failure("coercivity-ratio", exc)
            eps_try = min(0.05, 0.25 * scan.margin)
            trajectories = []
            for _ in range(3):
                xi = bump_control(rng, times, form.control_dim)
                v = integrate_control_trajectory(
                    a, b, xi, rng.standard_normal(n)
                )
                trajectories.append((v, xi))
            try:
                ok = lyapunov_inequality_check(a, b, form, eps_try, trajectories)
            except LqBundleError as exc:
                cert.add_failure("lyapunov-inequality", exc)
            else:
                cert.add_flag("lyapunov-inequality", ok,
                              detail=f"eps = {eps_try:.3g}")
    return cert


# -- spatial-averaging pipeline ----------------------------------------------


def run_sa_pipeline(scenario: Scenario) -> Certificate:
    doc = scenario.payload
    tol = scenario.tolerances
    cert = Certificate(name=scenario.name, mode=scenario.mode, seed=scenario.seed)
    try:
        cfg, driver, condition_set, searched = _sa_config(scenario)
    except LqBundleError as exc:
        cert.add_failure("gap-search", exc)
        return cert
    m1, m2 = sa.condition_margins(
        condition_set, cfg.lam, cfg.delta, cfg.mu_bar, cfg.k
    )
    detail = f"set={condition_set}, k={cfg.k}, N={cfg.N}, mu_bar={cfg.mu_bar:.6g}"
    if searched is not None:
        detail += " (searched)"
    cert.add_lower("gap-margin-1", m1, 0.0, detail=detail)
    cert.add_lower("gap-margin-2", m2, 0.0, detail=detail)
    try:
        all_rows = sa.gap_search(cfg.model, cfg.lam, cfg.delta, condition_set)
        cert.tables["gap_margins"] = [
            {"k": r["k"], "N": r["N"], "margin1": r["margins"][0],
             "margin2": r["margins"][1]}
            for r in all_rows
        ]
    except LqBundleError:
        cert.tables["gap_margins"] = []
    try:
        con = sa.contraction_certificate(cfg, driver=None)
        cert.add_upper("contraction-mid", con["measured_mid"],
                       con["bound_mid"] + 1e-6,
                       detail="discretized ||I T|| vs 1/2 + 2 delta^2/mu^2")
        cert.add_upper("contraction-pq", con["measured_pq"],
                       con["bound_pq"] + 1e-6,
                       detail="discretized ||(P+Q) T|| vs analytic bound")
        cert.add_upper("lp-norm-all", con["lp_measured_all"],
                       con["lp_bound_all"] + 1e-6, detail="||L_A|| <= 1/mu_bar")
        cert.add_upper("lp-norm-pq", con["lp_measured_pq"],
                       con["lp_bound_pq"] + 1e-6,
                       detail="||(P+Q) L_A|| <= 1/(mu_bar + k)")
    except LqBundleError as exc:
        cert.add_failure("contraction-certificate", exc)
        return cert
    n_phases = int(doc.get("phase_samples", 16))
    phases = np.linspace(0.0, 2.0 * np.pi, n_phases, endpoint=False)
    horizon = doc.get("horizon")
    try:
        fibers = sa.build_fibers(cfg, driver, phases, horizon=horizon)
    except LqBundleError as exc:
        cert.add_failure("fibers", exc)
        return cert
    iso = max(isotropy_defect(f.l_plus_q) for f in fibers)
    cert.add_upper("fiber-isotropy", iso, tol["isotropy"])
    cert.add_upper("picard-iterations", fibers[0].n_iterations, 200)
    vert = max(
        intersection_dimension(f.l_plus_q, vertical_subspace(cfg.n)) for f in fibers
    )
    cert.add_upper("fiber-vertical-intersection", vert, cfg.N,
                   detail="dim(L+(q) cap vertical) <= N")
    frozen_val = driver.value(phases[0])
    frozen = sa.build_fiber(cfg, sa.constant_driver(frozen_val), 0.0, horizon=horizon)
    oracle = stable_lagrange_schur(sa.assemble_nonaut_hamiltonian(cfg, frozen_val))
    cert.add_upper("frozen-oracle", grassmann_distance(frozen.l_plus_q, oracle),
                   tol["oracle"],
                   detail=f"constant driver a = {frozen_val:.6g} vs Schur")
    rows = sa.fiber_continuity(
        cfg, driver, phases[0],
        [phases[0] + 2.0 ** (-m) for m in range(1, 7)], horizon=horizon,
    )
    cert.tables["continuity"] = rows
    mono = all(
        rows[i + 1]["grassmann"] <= 1.1 * rows[i]["grassmann"] + 1e-14
        for i in range(len(rows) - 1)
    )
    cert.add_flag("continuity-monotone", mono,
                  detail="grassmann moduli decreasing (10% jitter allowed)")
    try:
        vres = sa.v_form_certificate(cfg)
        cert.add_lower("delta-v", vres["delta_v"], 0.0)
        cert.add_lower("bracket-mid", vres["brackets"][0], 0.0)
        cert.add_lower("bracket-pq", vres["brackets"][1], 0.0)
    except LqBundleError as exc:
        cert.add_failure("delta-v", exc)
        return cert
    oscillating = [f for f in fibers if f.oscillating]
    cert.add_flag("nonoscillation-all-phases", not oscillating,
                  detail=f"{len(oscillating)} oscillating fibers")
    fiber_rows = []
    p_max = 0.0
    for f in fibers:
        p_norm = float(np.linalg.norm(f.p_q, 2)) if f.p_q is not None else float("nan")
        p_max = max(p_max, p_norm)
        fiber_rows.append(
            {
                "phase": float(np.atleast_1d(f.q)[0]),
                "grassmann_to_ref": grassmann_distance(f.l_plus_q, fibers[0].l_plus_q),
                "norm_Pq": p_norm,
            }
        )
    cert.tables["fibers"] = fiber_rows
    if not oscillating:
        cert.add_upper("uniform-p-bound", p_max, 1.0 / vres["delta_v"] + 1e-6,
                       detail="max ||P(q)|| <= 1/delta_V + 1e-6")
        lo, hi = sa.p_sign_structure(fibers[0].p_q, cfg)
        cert.add_lower("p-sign-low-block", lo, 0.0,
                       detail="min eig of P on modes 1..N")
        cert.add_upper("p-sign-high-block", hi, 0.0,
                       detail="max eig of P on modes N+1..n")
    eps0 = sa.sa_eps0_estimate(cfg)
    rates, prefs = [], []
    decay_rows = []
    for f in fibers[:: max(1, len(fibers) // 8)]:
        z0 = f.l_plus_q.basis @ np.ones(cfg.n)
        rate, pref = sa.exp_decay_fit(cfg, driver, f.q, z0, fiber=f)
        rates.append(rate)
        prefs.append(pref)
        decay_rows.append(
            {"label": f"phase={float(np.atleast_1d(f.q)[0]):.4f}",
             "rate": rate, "prefactor": pref}
        )
    cert.tables["decay"] = decay_rows
    cert.add_lower("decay-rate", min(rates), eps0 - 1e-3,
                   detail=f"shifted-construction eps0 estimate {eps0:.6g}")
    cert.add_upper("decay-prefactor-spread", max(prefs) / max(min(prefs), 1e-300),
                   2.0, detail="fitted prefactor uniformity across phases")
    return cert


def run_pipeline(scenario: Scenario) -> Certificate:
    """Dispatch on the scenario mode; records failures instead of raising."""
    if scenario.mode == "stationary":
        return run_stationary_pipeline(scenario)
    return run_sa_pipeline(scenario)


# -- exports -------------------------------------------------------------------

_CSV_SCHEMAS = {
    "freq_margin": ("omega", "min_eig", "inv_norm"),
    "fibers": ("phase", "grassmann_to_ref", "norm_Pq"),
    "decay": ("label", "rate", "prefactor"),
    "gap_margins": ("k", "N", "margin1", "margin2"),
    "continuity": ("phase_distance", "m_norm", "grassmann"),
}


def export_plots(cert: Certificate, out_dir: str) -> list[str]:
    """Write the certificate's plot tables as CSV files; always emits every
    schema (empty tables produce header-only files)."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for table, columns in _CSV_SCHEMAS.items():
        path = os.path.join(out_dir, f"{table}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in cert.tables.get(table, []):
                writer.writerow([row.get(c, "") for c in columns])
        written.append(path)
    return written


def write_certificate(cert: Certificate, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "certificate.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cert.to_json())
        fh.write("\n")
    return path
