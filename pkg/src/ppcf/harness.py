"""Simulation scenarios, Monte Carlo tables, and file-based fitting.

The scenario engine draws covariate fields and a point pattern, runs the
cross-fitting estimator (plus optional parametric and oracle baselines),
estimates the asymptotic variance under the requested pair-correlation mode,
and aggregates replications into table rows (bias x100, rMSE, mean SE,
CP90/CP95).  Replication r uses seed ``base_seed + r``; records are reduced in
replication order, so results are independent of the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .crossfit import CrossFitConfig, cross_fit
from .errors import (
    BoundViolationError,
    InsufficientPointsError,
    NonConvergenceError,
    NonpositiveIntensityError,
    ScenarioInfeasibleError,
    SingularHessianError,
    SingularSensitivityError,
    WindowMismatchError,
    ZeroDenominatorError,
    ZeroMassError,
)
from .fields import GrfSpec, Window, field_product, read_grid_file, simulate_grf, write_grid_file
from .inference import (
    FitReport,
    PcfModel,
    estimate_pcf,
    lfd_values,
    pcf_correction,
    wald_report,
)
from .model import (
    ModelSpec,
    build_quadrature,
    fit_parametric_baseline_full,
    log_linear_model,
)
from .nuisance import KernelSpec, NuisanceFit, default_bandwidth
from .process import (
    IntensitySurface,
    PointPattern,
    read_pattern_file,
    simulate_lgcp,
    simulate_poisson,
    write_pattern_file,
)

THETA_STAR = 0.3
BASE_RATE = 400.0
COVARIATE_GRF = GrfSpec(variance=1.0, corr_range=0.05, mean=0.0)
LGCP_GRF = GrfSpec(variance=0.2, corr_range=0.2, mean=0.0)
LATTICE_PER_UNIT = 128
WINDOWS = {"W1": Window(0.0, 0.0, 1.0, 1.0), "W2": Window(0.0, 0.0, 2.0, 2.0)}
GRID_N = {"W1": 64, "W2": 128}
HARNESS_BANDWIDTH_C0 = 0.45

NUISANCE_FNS = {
    "linear": lambda z: 0.3 * z,
    "poly": lambda z: -0.09 * z ** 2,
}


@dataclass(frozen=True)
class Scenario:
    """One cell of the simulation studies."""

    window: str = "W1"
    process: str = "poisson"
    covariates: str = "ind"
    nuisance: str = "linear"
    pcf_mode: str = "none"
    reps: int = 200
    base_seed: int = 2024
    estimators: Tuple[str, ...] = ("semi",)
    folds: int = 2
    grid_n: Optional[int] = None
    bandwidth: Optional[float] = None
    bandwidth_c0: float = HARNESS_BANDWIDTH_C0
    kernel_order: int = 2
    approximation: str = "quadrature"
    skip_thinning: bool = False

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {sorted(WINDOWS)}")
        if self.process not in ("poisson", "lgcp"):
            raise ValueError("process must be poisson or lgcp")
        if self.covariates not in ("ind", "dep"):
            raise ValueError("covariates must be ind or dep")
        if self.nuisance not in NUISANCE_FNS:
            raise ValueError(f"nuisance must be one of {sorted(NUISANCE_FNS)}")
        if self.pcf_mode not in ("none", "known", "estimated"):
            raise ValueError("pcf_mode must be none, known or estimated")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        bad = set(self.estimators) - {"semi", "para", "oracle"}
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}")

    def the_window(self) -> Window:
        return WINDOWS[self.window]

    def the_grid_n(self) -> int:
        return self.grid_n if self.grid_n is not None else GRID_N[self.window]

    def kernel(self) -> KernelSpec:
        base = "gaussian" if self.kernel_order == 2 else "quartic"
        h = self.bandwidth
        if h is None:
            h = default_bandwidth(self.the_window().area(), q=1, k=1,
                                  l=self.kernel_order, m=2, c0=self.bandwidth_c0)
        return KernelSpec(order=self.kernel_order, bandwidth=h, base=base)


@dataclass
class TableRow:
    bias_x100: float
    rmse: float
    mean_se: float
    cp90: float
    cp95: float
    mean_se_star: Optional[float] = None
    cp90_star: Optional[float] = None
    cp95_star: Optional[float] = None
    reps_converged: int = 0


def simulate_scenario_inputs(s: Scenario, rep: int):
    """Fields, model spec, truth curve and the simulated pattern for one replication."""
    w = s.the_window()
    n_lat = int(round(LATTICE_PER_UNIT * w.width))
    ss = np.random.SeedSequence(s.base_seed + rep)
    seeds = [int(c.generate_state(1)[0]) for c in ss.spawn(4)]
    f1 = simulate_grf(w, n_lat, n_lat, COVARIATE_GRF, seeds[0])
    f2 = simulate_grf(w, n_lat, n_lat, COVARIATE_GRF, seeds[1])
    y_field = f1
    z_field = f2 if s.covariates == "ind" else field_product(f1, f2)
    spec = log_linear_model([y_field], [z_field])
    base_fn = NUISANCE_FNS[s.nuisance]

    def eta_full(Z):
        Z = np.asarray(Z, dtype=float)
        return math.log(BASE_RATE) + base_fn(Z[:, 0] if Z.ndim > 1 else Z)

    surface = scenario_truth_surface(spec, np.array([THETA_STAR]), eta_full)
    if s.process == "poisson":
        pattern = simulate_poisson(surface, seeds[2])
    else:
        sigma2 = LGCP_GRF.variance
        # compensate the -2/sigma^2 offset so the conditional intensity is
        # lambda * exp(G - sigma^2 / 2), i.e. unconditional intensity lambda
        factor = math.exp(2.0 / sigma2 - sigma2 / 2.0)
        base = IntensitySurface(w, lambda pts, _f=surface.func: factor * np.asarray(_f(pts)),
                                surface.sup_bound * factor)
        pattern = simulate_lgcp(base, LGCP_GRF, n_lat, n_lat, seeds[3])
    return spec, eta_full, surface, pattern, seeds


def scenario_truth_surface(spec: ModelSpec, theta, eta_fn) -> IntensitySurface:
    """Log-linear truth surface with an exact interpolation-hull intensity bound.

    Bilinear covariates stay inside the hull of their lattice values, so
    exp(tau_max + eta_max) bounds the interpolated intensity even when eta is
    nonlinear in z (a lattice-node maximum does not: -0.09 z^2 peaks between
    nodes wherever z changes sign).
    """
    theta = np.asarray(theta, dtype=float)
    w = spec.window

    def func(pts):
        Y, Z = spec.covariates_at(pts)
        return spec.lambda_values(theta, Y, np.asarray(eta_fn(Z), dtype=float))

    tau_max = 0.0
    for t_i, f in zip(theta, spec.target_fields):
        tau_max += t_i * (f.values.max() if t_i >= 0 else f.values.min())
    z_field = spec.nuisance_fields[0]
    z_grid = np.linspace(z_field.values.min(), z_field.values.max(), 4097)
    eta_max = float(np.max(eta_fn(z_grid[:, None])))
    sup = math.exp(tau_max + eta_max) * 1.05
    return IntensitySurface(w, func, sup)


def _variants_for(s: Scenario) -> List[str]:
    if s.process == "poisson":
        # the true PCF of a Poisson process is g = 1, so "known" means "none"
        return ["estimated"] if s.pcf_mode == "estimated" else ["none"]
    if s.pcf_mode == "known":
        return ["known"]
    if s.pcf_mode == "estimated":
        return ["estimated", "known"]
    return ["none"]


def _resolve_pcf(name: str, pcf_estimated: Optional[PcfModel]) -> PcfModel:
    if name == "none":
        return PcfModel("poisson")
    if name == "known":
        return PcfModel("lgcp-exponential", sigma2=LGCP_GRF.variance, phi=LGCP_GRF.corr_range)
    if name == "estimated":
        return pcf_estimated if pcf_estimated is not None else PcfModel("poisson")
    raise ValueError(name)


def _variant_summary(se_reports: Dict[str, FitReport]) -> Dict[str, Dict]:
    out = {}
    for name, rep in se_reports.items():
        lo90, hi90 = rep.ci[0.9][0]
        lo95, hi95 = rep.ci[0.95][0]
        out[name] = {
            "se": float(rep.se[0]),
            "hit90": bool(lo90 <= THETA_STAR <= hi90),
            "hit95": bool(lo95 <= THETA_STAR <= hi95),
            "pcf_sigma2": rep.pcf.sigma2,
            "pcf_phi": rep.pcf.phi,
            "pcf_family": rep.pcf.family,
        }
    return out


def run_replication(s: Scenario, rep: int) -> Dict:
    """All requested estimators on one simulated replication."""
    try:
        spec, eta_full, surface, pattern, seeds = simulate_scenario_inputs(s, rep)
        if pattern.count() == 0:
            return {"rep": rep, "ok": False, "error": "empty pattern"}
        w = s.the_window()
        area = w.area()
        grid_n = s.the_grid_n()
        kernel = s.kernel()
        variants = _variants_for(s)
        quad = build_quadrature(pattern, grid_n)
        Y, Z = spec.covariates_at(quad.nodes)
        record = {"rep": rep, "ok": True, "n_points": pattern.count(), "estimators": {}}

        pcf_estimated = None
        # per estimator: (full coefficient vector, S over all coords, a vectors)
        results: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

        if "semi" in s.estimators:
            cfg = CrossFitConfig(
                n_folds=s.folds, seed=seeds[2] ^ 0x9E3779B9, kernel=kernel,
                grid_n=grid_n, approximation=s.approximation,
                skip_thinning=s.skip_thinning)
            res = cross_fit(spec, pattern, cfg)
            theta = res.theta_hat
            eta_fn = res.eta_hat
            gamma = eta_fn(Z)
            lam = spec.lambda_values(theta, Y, gamma)
            inf_nf = NuisanceFit(spec, pattern, quad, kernel, scale=1.0)
            nu = lfd_values(inf_nf, theta, eta_fn, Z)
            vec = Y + nu
            S = np.einsum("j,ja,jb->ab", quad.weights * lam, vec, vec)
            S = 0.5 * (S + S.T)
            a = (quad.weights * lam)[:, None] * vec
            if "estimated" in variants:
                def semi_lam_fn(pts, _theta=theta, _eta=eta_fn, _spec=spec):
                    Yp, Zp = _spec.covariates_at(pts)
                    return _spec.lambda_values(_theta, Yp, _eta(Zp))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pcf_estimated = estimate_pcf(pattern, semi_lam_fn)
            results["semi"] = (theta, S, a)
            record["fold_convergence"] = {"semi": sum(f.converged for f in res.per_fold)}

        for name, form in (("para", "linear"), ("oracle", ("oracle", eta_full))):
            if name not in s.estimators:
                continue
            pf = fit_parametric_baseline_full(spec, pattern, quad, form)
            lam = pf.lambda_nodes
            X = pf.design
            S_full = np.einsum("j,ja,jb->ab", quad.weights * lam, X, X)
            S_full = 0.5 * (S_full + S_full.T)
            a_full = (quad.weights * lam)[:, None] * X
            results[name] = (pf.coef, S_full, a_full)
            if pcf_estimated is None and "estimated" in variants:
                def para_lam_fn(pts, _pf=pf, _spec=spec, _form=form, _eta=eta_full):
                    Yp, Zp = _spec.covariates_at(pts)
                    if _form == "linear":
                        Xp = np.column_stack([Yp, np.ones(Yp.shape[0]), Zp])
                        return np.exp(Xp @ _pf.coef)
                    return np.exp(Yp @ _pf.coef + _eta(Zp))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pcf_estimated = estimate_pcf(pattern, para_lam_fn)

        k = spec.k
        for name, (coef, S_full, a_full) in results.items():
            reports = {}
            for vname in variants:
                pcf = _resolve_pcf(vname, pcf_estimated)
                Sigma_full = S_full + pcf_correction(quad, a_full, pcf)
                rep_full = wald_report(coef, S_full, Sigma_full, area, pcf=pcf)
                # keep only the target-parameter block
                reports[vname] = _project_report(rep_full, k, pcf)
            record["estimators"][name] = {
                "theta": float(np.atleast_1d(coef)[0]),
                "variants": _variant_summary(reports),
            }
        return record
    except (NonConvergenceError, SingularHessianError, SingularSensitivityError,
            BoundViolationError, InsufficientPointsError, NonpositiveIntensityError,
            ZeroMassError, ZeroDenominatorError) as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _project_report(rep_full: FitReport, k: int, pcf: PcfModel) -> FitReport:
    ci = {lvl: arr[:k] for lvl, arr in rep_full.ci.items()}
    return FitReport(theta_hat=rep_full.theta_hat[:k], S_hat=rep_full.S_hat,
                     Sigma_hat=rep_full.Sigma_hat, se=rep_full.se[:k], ci=ci,
                     pcf=pcf, diagnostics=rep_full.diagnostics)


def _worker(args):
    s_dict, rep = args
    s = Scenario(**s_dict)
    return run_replication(s, rep)


def run_scenario_records(s: Scenario, parallelism: int = 1) -> Tuple[Dict[str, TableRow], List[Dict]]:
    """Run all replications and aggregate; returns (rows per estimator, raw records)."""
    tasks = [(asdict(s), r) for r in range(s.reps)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            records = list(ex.map(_worker, tasks, chunksize=1))
    else:
        records = [run_replication(s, r) for r in range(s.reps)]

    rows: Dict[str, TableRow] = {}
    variants = _variants_for(s)
    primary = variants[0]
    for est in s.estimators:
        good = [r for r in records
                if r.get("ok") and est in r.get("estimators", {})]
        if len(good) < max(1, s.reps // 2):
            raise ScenarioInfeasibleError(
                f"{est}: only {len(good)} of {s.reps} replications usable")
        thetas = np.array([r["estimators"][est]["theta"] for r in good])
        bias = float(np.mean(thetas) - THETA_STAR)
        rmse = float(np.sqrt(np.mean((thetas - THETA_STAR) ** 2)))
        vprim = [r["estimators"][est]["variants"][primary] for r in good]
        row = TableRow(
            bias_x100=100.0 * bias,
            rmse=rmse,
            mean_se=float(np.mean([v["se"] for v in vprim])),
            cp90=100.0 * float(np.mean([v["hit90"] for v in vprim])),
            cp95=100.0 * float(np.mean([v["hit95"] for v in vprim])),
            reps_converged=len(good),
        )
        if "known" in variants:
            vstar = [r["estimators"][est]["variants"]["known"] for r in good]
            row.mean_se_star = float(np.mean([v["se"] for v in vstar]))
            row.cp90_star = 100.0 * float(np.mean([v["hit90"] for v in vstar]))
            row.cp95_star = 100.0 * float(np.mean([v["hit95"] for v in vstar]))
        rows[est] = row
    return rows, records


def run_scenario(s: Scenario, parallelism: int = 1) -> Dict[str, TableRow]:
    rows, _ = run_scenario_records(s, parallelism)
    return rows


# -- tables ---------------------------------------------------------------------


def _table_scenarios(table_id: int, reps: int, base_seed: int) -> List[Tuple[Dict, Scenario]]:
    out = []
    if table_id == 2:
        for window in ("W1", "W2"):
            for covar in ("ind", "dep"):
                for nuis in ("linear", "poly"):
                    meta = {"window": window, "covar": covar, "nuisance": nuis}
                    out.append((meta, Scenario(window=window, covariates=covar,
                                               nuisance=nuis, process="poisson",
                                               pcf_mode="none", reps=reps,
                                               base_seed=base_seed,
                                               estimators=("semi",))))
    elif table_id == 3:
        for window in ("W1", "W2"):
            for covar in ("ind", "dep"):
                for nuis in ("linear", "poly"):
                    meta = {"window": window, "covar": covar, "nuisance": nuis}
                    out.append((meta, Scenario(window=window, covariates=covar,
                                               nuisance=nuis, process="lgcp",
                                               pcf_mode="estimated", reps=reps,
                                               base_seed=base_seed,
                                               estimators=("semi",))))
    elif table_id == 4:
        for window in ("W1", "W2"):
            for process in ("poisson", "lgcp"):
                meta = {"window": window, "process": process}
                out.append((meta, Scenario(window=window, covariates="dep",
                                           nuisance="poly", process=process,
                                           pcf_mode="none" if process == "poisson" else "estimated",
                                           reps=reps, base_seed=base_seed,
                                           estimators=("semi", "para", "oracle"))))
    else:
        raise ValueError(f"table_id must be 2, 3 or 4, got {table_id}")
    return out


_EST_LABEL = {"semi": "Semi", "para": "Para", "oracle": "Oracle"}


def run_table(table_id: int, reps: int, parallelism: int, out_path,
              base_seed: int = 2024) -> List[Dict]:
    """Reproduce one of the simulation tables at the requested replication count.

    Writes a CSV at ``out_path`` and a JSON-lines sidecar of per-replication
    records at ``out_path + '.jsonl'``; returns the rows as dictionaries.
    """
    out_path = Path(out_path)
    scenarios = _table_scenarios(table_id, reps, base_seed)
    rows_out: List[Dict] = []
    sidecar = []
    for meta, scen in scenarios:
        rows, records = run_scenario_records(scen, parallelism)
        for est in scen.estimators:
            row = rows[est]
            entry = dict(meta)
            if table_id == 4:
                entry["estimator"] = _EST_LABEL[est]
            entry.update(bias_x100=row.bias_x100, rmse=row.rmse, mean_se=row.mean_se)
            if table_id == 3:
                entry.update(mean_se_star=row.mean_se_star)
            entry.update(cp90=row.cp90)
            if table_id == 3:
                entry.update(cp90_star=row.cp90_star)
            entry.update(cp95=row.cp95)
            if table_id == 3:
                entry.update(cp95_star=row.cp95_star)
            entry.update(reps_converged=row.reps_converged)
            rows_out.append(entry)
        for rec in records:
            sidecar.append({"table": table_id, **meta, **rec})
    _write_csv(rows_out, out_path)
    with open(str(out_path) + ".jsonl", "w") as fh:
        for rec in sidecar:
            fh.write(json.dumps(rec) + "\n")
    return rows_out


def _write_csv(rows: List[Dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})


def read_table_csv(path) -> List[Dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            parsed = {}
            for k, v in row.items():
                if v in ("", "None"):
                    parsed[k] = None
                else:
                    try:
                        parsed[k] = int(v)
                    except ValueError:
                        try:
                            parsed[k] = float(v)
                        except ValueError:
                            parsed[k] = v
            out.append(parsed)
        return out


# -- file-based fitting -----------------------------------------------------------


_FIT_DEFAULTS = {
    "folds": 2,
    "seed": 2024,
    "bandwidth": None,
    "bandwidth_c0": 1.0,
    "kernel_order": 2,
    "approx": "quadrature",
    "skip_thinning": False,
    "grid_n": 64,
    "pcf": "none",
    "pcf_sigma2": None,
    "pcf_phi": None,
    "levels": [0.9, 0.95],
    "eta_dump_points": 200,
}


def load_fit_config(config_path=None, overrides: Optional[Dict] = None) -> Dict:
    cfg = dict(_FIT_DEFAULTS)
    if config_path is not None:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh) or {}
        unknown = set(loaded) - set(_FIT_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    return cfg


def fit_file(pattern_path, y_grid_paths: Sequence, z_grid_paths: Sequence,
             config_path=None, out_prefix=None, overrides: Optional[Dict] = None) -> FitReport:
    """Full pipeline on user files: parse, cross-fit, variance, Wald intervals.

    Writes a one-row summary CSV, a JSON-line record, and a 1-d lattice dump of
    the fitted nuisance curve when ``out_prefix`` is given.
    """
    cfg = load_fit_config(config_path, overrides)
    pattern = read_pattern_file(pattern_path)
    y_fields = [read_grid_file(p) for p in y_grid_paths]
    z_fields = [read_grid_file(p) for p in z_grid_paths]
    all_fields = y_fields + z_fields
    win = all_fields[0].window
    if any(f.window != win for f in all_fields):
        raise WindowMismatchError("covariate grids do not share a window")
    if pattern.window != win:
        inside = win.contains(pattern.points[:, 0], pattern.points[:, 1])
        if not np.all(inside):
            raise WindowMismatchError("pattern points fall outside the grid window")
        pattern = PointPattern(win, pattern.points, pattern.marks)
    if pattern.count() == 0:
        from .errors import InsufficientPointsError
        raise InsufficientPointsError("pattern file contains no points")

    spec = log_linear_model(y_fields, z_fields)
    kernel = None
    if cfg["bandwidth"] is not None:
        base = "gaussian" if cfg["kernel_order"] == 2 else "quartic"
        kernel = KernelSpec(order=cfg["kernel_order"], bandwidth=float(cfg["bandwidth"]),
                            base=base)
    run_cfg = CrossFitConfig(
        n_folds=int(cfg["folds"]), seed=int(cfg["seed"]), kernel=kernel,
        kernel_order=int(cfg["kernel_order"]), bandwidth_c0=float(cfg["bandwidth_c0"]),
        grid_n=int(cfg["grid_n"]), approximation=cfg["approx"],
        skip_thinning=bool(cfg["skip_thinning"]))
    result = cross_fit(spec, pattern, run_cfg)
    theta = result.theta_hat
    eta_fn = result.eta_hat

    quad = build_quadrature(pattern, int(cfg["grid_n"]))
    Y, Z = spec.covariates_at(quad.nodes)
    gamma = eta_fn(Z)
    lam = spec.lambda_values(theta, Y, gamma)
    inf_nf = NuisanceFit(spec, pattern, quad, run_cfg.resolve_kernel(spec), scale=1.0)
    nu = lfd_values(inf_nf, theta, eta_fn, Z)
    vec = Y + nu
    S = np.einsum("j,ja,jb->ab", quad.weights * lam, vec, vec)
    S = 0.5 * (S + S.T)

    def lam_fn(pts):
        Yp, Zp = spec.covariates_at(pts)
        return spec.lambda_values(theta, Yp, eta_fn(Zp))

    if cfg["pcf"] == "none":
        pcf = PcfModel("poisson")
    elif cfg["pcf"] == "known":
        if cfg["pcf_sigma2"] is None or cfg["pcf_phi"] is None:
            raise ValueError("pcf=known requires pcf_sigma2 and pcf_phi")
        pcf = PcfModel("lgcp-exponential", sigma2=float(cfg["pcf_sigma2"]),
                       phi=float(cfg["pcf_phi"]))
    elif cfg["pcf"] == "estimated":
        pcf = estimate_pcf(pattern, lam_fn)
    else:
        raise ValueError(f"unknown pcf mode {cfg['pcf']!r}")
    a = (quad.weights * lam)[:, None] * vec
    Sigma = S + pcf_correction(quad, a, pcf)

    diagnostics = {
        "fold_convergence": [f.converged for f in result.per_fold],
        "n_points": pattern.count(),
        "clip_counts": [f.nuisance.diagnostics["clip_count"] for f in result.per_fold
                        if f.nuisance is not None],
    }
    report = wald_report(theta, S, Sigma, win.area(), levels=tuple(cfg["levels"]),
                         pcf=pcf, diagnostics=diagnostics)

    if out_prefix is not None:
        out_prefix = str(out_prefix)
        _write_fit_outputs(report, spec, pattern, eta_fn, cfg, out_prefix)
    return report


def _write_fit_outputs(report: FitReport, spec: ModelSpec, pattern: PointPattern,
                       eta_fn, cfg: Dict, out_prefix: str) -> None:
    k = report.theta_hat.shape[0]
    row = {}
    for i in range(k):
        row[f"theta_{i}"] = repr(float(report.theta_hat[i]))
        row[f"se_{i}"] = repr(float(report.se[i]))
        for level, arr in report.ci.items():
            pct = int(round(level * 100))
            row[f"ci{pct}_lo_{i}"] = repr(float(arr[i, 0]))
            row[f"ci{pct}_hi_{i}"] = repr(float(arr[i, 1]))
    row["pcf_family"] = report.pcf.family
    row["pcf_sigma2"] = repr(float(report.pcf.sigma2))
    row["pcf_phi"] = repr(float(report.pcf.phi))
    with open(out_prefix + "_summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row.keys()))
        writer.writeheader()
        writer.writerow(row)
    with open(out_prefix + "_summary.jsonl", "w") as fh:
        fh.write(json.dumps({
            "theta": report.theta_hat.tolist(),
            "se": report.se.tolist(),
            "ci": {str(lvl): arr.tolist() for lvl, arr in report.ci.items()},
            "pcf": {"family": report.pcf.family, "sigma2": report.pcf.sigma2,
                    "phi": report.pcf.phi},
            "diagnostics": report.diagnostics,
        }) + "\n")
    if spec.q == 1:
        _, Zd = spec.covariates_at(pattern.points)
        z_lo, z_hi = float(Zd.min()), float(Zd.max())
        zs = np.linspace(z_lo, z_hi, int(cfg["eta_dump_points"]))
        etas = eta_fn(zs[:, None])
        with open(out_prefix + "_eta.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "eta_hat"])
            for zv, ev in zip(zs, etas):
                writer.writerow([repr(float(zv)), repr(float(ev))])


def emit_scenario_files(s: Scenario, rep: int, out_dir) -> Dict[str, str]:
    """Simulate one replication and write its pattern and covariate grids."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec, _, _, pattern, _ = simulate_scenario_inputs(s, rep)
    paths = {}
    pattern_path = out_dir / "pattern.txt"
    write_pattern_file(pattern, pattern_path)
    paths["pattern"] = str(pattern_path)
    for i, f in enumerate(spec.target_fields):
        p = out_dir / f"y{i}.txt"
        write_grid_file(f, p)
        paths[f"y{i}"] = str(p)
    for i, f in enumerate(spec.nuisance_fields):
        p = out_dir / f"z{i}.txt"
        write_grid_file(f, p)
        paths[f"z{i}"] = str(p)
    return paths
