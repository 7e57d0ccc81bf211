"""Stage functions shared by the command line and the in-memory tests.

Each stage consumes plain Python objects and returns them; the CLI adds
the on-disk artifacts between stages.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .ccs import CAUSES, CcsCause
from .covariates import MeteoGrid, ZipMeteoSeries, aggregate_meteo_series, read_meteo
from .design import (STUDY_YEARS, ClaimsIndex, ClaimsTable, CountSubset, Design, build_design,
                     check_control_contamination, read_claims, read_demographics, read_enrollment,
                     zip_pct_black)
from .errors import ConfigurationError, ConvergenceError, MissingDataError, ProjectionError, ValidationError
from .exposure import (ALL_CAUSES, PRIMARY_CAUSES, ExposureRule, FloodCause, exposure_rule,
                       filter_events, read_catalog, summarize, zip_day_exposures)
from .geodata import read_flood_raster, read_polygons, select_vintage
from .model import N_LAGS, FitResult, ModelSpec, fit_conditional_quasipoisson, holm_alphas, split_strata
from .model.inference import N_CAUSES, wald_pvalue

log = logging.getLogger(__name__)

ANALYSES = ("overall", "severity", "pct_black", "emergency")
_PARTITION = {"severity": "severity", "pct_black": "pct_black_median", "emergency": "emergency"}


@dataclass
class RunConfig:
    catalog: Path | None = None
    rasters: dict = field(default_factory=dict)
    polygons: Path | None = None
    meteo: Path | None = None
    claims: Path | None = None
    enrollment: Path | None = None
    demographics: Path | None = None
    study_years: tuple = STUDY_YEARS
    exposure_rule: ExposureRule = field(default_factory=lambda: exposure_rule("primary"))
    causes: tuple = tuple(sorted(c.value for c in PRIMARY_CAUSES))
    outcomes: tuple = tuple(c.value for c in CAUSES)
    analyses: tuple = ("overall",)
    alpha: float = 0.05
    n_causes: int = N_CAUSES
    output_dir: Path = Path("out")
    seed: int = 0
    holm: bool = False
    synth: dict | None = None

    def __post_init__(self):
        if not self.analyses:
            raise ConfigurationError("analyses must not be empty")
        bad = [a for a in self.analyses if a not in ANALYSES]
        if bad:
            raise ConfigurationError(f"unknown analyses {bad}; choose from {list(ANALYSES)}")
        for c in self.causes:
            try:
                FloodCause(c)
            except ValueError:
                raise ConfigurationError(f"unknown flood cause {c!r}") from None
        for c in self.outcomes:
            try:
                CcsCause(c)
            except ValueError:
                raise ConfigurationError(f"unknown outcome cause {c!r}") from None
        if not 0 < self.alpha < 1 or self.n_causes < 1:
            raise ConfigurationError("alpha must lie in (0, 1) and n_causes be positive")

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "RunConfig":
        base = Path(base_dir)
        data = dict(data)

        def path(key):
            v = data.pop(key, None)
            return None if v is None else (base / v)

        kw = {k: path(k) for k in ("catalog", "polygons", "meteo", "claims", "enrollment", "demographics")}
        rasters = data.pop("rasters", {})
        if isinstance(rasters, str):
            folder = base / rasters
            rasters = {p.stem.split("_")[-1]: p for p in sorted(folder.glob("event_*.grid*"))}
            rasters = {k.split(".")[0]: v for k, v in rasters.items()}
        else:
            rasters = {str(k): base / v for k, v in rasters.items()}
        kw["rasters"] = rasters
        rule = data.pop("exposure_rule", "primary")
        if isinstance(rule, dict):
            kw["exposure_rule"] = ExposureRule(float(rule["min_pct_area"]), float(rule["min_area_km2"]),
                                               rule.get("name", "custom"))
        else:
            kw["exposure_rule"] = exposure_rule(rule)
        if "causes" in data:
            causes = data.pop("causes")
            kw["causes"] = tuple(sorted(c.value for c in ALL_CAUSES)) if causes == "all" else tuple(causes)
        for key in ("outcomes", "analyses", "study_years"):
            if key in data:
                kw[key] = tuple(data.pop(key))
        kw["output_dir"] = base / data.pop("output_dir", "out")
        for key, cast in (("alpha", float), ("n_causes", int), ("seed", int), ("holm", bool)):
            if key in data:
                kw[key] = cast(data.pop(key))
        kw["synth"] = data.pop("synth", None)
        data.pop("threads", None)
        if data:
            raise ConfigurationError(f"unknown config keys {sorted(data)}")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        return cls.from_dict(data, path.parent)

    def check_paths(self, keys=("catalog", "polygons", "meteo", "claims", "enrollment")):
        missing = []
        for key in keys:
            p = getattr(self, key)
            if p is None or not Path(p).exists():
                missing.append(f"{key}: {p}")
        for eid, p in self.rasters.items():
            if not Path(p).exists():
                missing.append(f"raster {eid}: {p}")
        if self.demographics is not None and not Path(self.demographics).exists():
            missing.append(f"demographics: {self.demographics}")
        if missing:
            raise ConfigurationError("missing input files: " + "; ".join(missing))


@dataclass(eq=False)
class Inputs:
    catalog: tuple
    rasters: dict
    polygons: dict
    meteo: MeteoGrid
    claims: ClaimsTable
    enrollment: dict
    demographics: dict | None = None

    @classmethod
    def from_world(cls, world):
        return cls(world.catalog, world.rasters, world.polygons, world.meteo, world.claims,
                   world.enrollment, world.demographics)


def load_inputs(config: RunConfig) -> Inputs:
    """Read every input and validate it before any computation starts."""
    config.check_paths()
    catalog = read_catalog(config.catalog)
    missing = [e.event_id for e in catalog if e.event_id not in config.rasters]
    if missing:
        raise ValidationError(f"no raster configured for events {missing}")
    rasters = {e.event_id: read_flood_raster(config.rasters[e.event_id]) for e in catalog}
    for eid, r in rasters.items():
        if r.event_id != eid:
            raise ValidationError(f"raster for event {eid} is labelled {r.event_id}")
    polygons = read_polygons(config.polygons)
    meteo = read_meteo(config.meteo)
    claims = read_claims(config.claims)
    enrollment = read_enrollment(config.enrollment)
    demographics = read_demographics(config.demographics) if config.demographics else None
    inputs = Inputs(catalog, rasters, polygons, meteo, claims, enrollment, demographics)
    validate_inputs(inputs, config.study_years)
    return inputs


def validate_inputs(inputs: Inputs, study_years=STUDY_YEARS):
    crs = {p.crs for v in inputs.polygons.values() for p in v.values()}
    crs |= {r.geometry.crs for r in inputs.rasters.values()} | {inputs.meteo.geometry.crs}
    if len(crs) > 1:
        raise ProjectionError(f"inputs use more than one projection: {sorted(crs)}")
    first = dt.date(study_years[0], 1, 1)
    last = dt.date(study_years[1], 12, 31)
    m_last = inputs.meteo.first_date + dt.timedelta(days=inputs.meteo.n_days - 1)
    if inputs.meteo.first_date > first or m_last < last:
        raise MissingDataError(f"meteorology covers {inputs.meteo.first_date}..{m_last}, "
                               f"study needs {first}..{last}")
    for e in inputs.catalog:
        if e.start < first or e.end > last:
            raise ValidationError(f"event {e.event_id} ({e.start}..{e.end}) lies outside the study years")
    if len(inputs.claims):
        lo, hi = inputs.claims.admission.min(), inputs.claims.admission.max()
        if lo < np.datetime64(first) or hi > np.datetime64(last):
            raise ValidationError(f"claims dated {lo}..{hi} fall outside the study years")
    unknown = set(map(str, inputs.claims.zip_categories)) - set(inputs.polygons)
    if unknown:
        warnings.warn(f"{len(unknown)} claim ZIP codes have no polygon", stacklevel=2)


# ---------------------------------------------------------------- exposure

@dataclass(eq=False)
class ExposureStage:
    rows: list
    analysis_event_ids: frozenset
    summary: object

    def frame(self):
        from .exposure import exposures_to_frame
        f = exposures_to_frame(self.rows)
        f["in_analysis"] = [r.event_id in self.analysis_event_ids for r in self.rows]
        return f


def run_exposure(inputs: Inputs, config: RunConfig, coverage_cache=None) -> ExposureStage:
    """Classify ZIP-days for every catalog event; analysis events follow the cause filter.

    Days exposed by events outside the filter still block control years.
    """
    if not inputs.catalog:
        warnings.warn("flood catalog is empty", stacklevel=2)
    kept = filter_events(inputs.catalog, config.causes) if inputs.catalog else ()
    rows = zip_day_exposures(inputs.catalog, inputs.rasters, inputs.polygons, config.exposure_rule,
                             coverage_cache)
    ids = frozenset(e.event_id for e in kept)
    return ExposureStage(rows, ids, summarize(rows, ids))


# ---------------------------------------------------------------- design

def meteo_series(inputs: Inputs, study_years=STUDY_YEARS) -> ZipMeteoSeries:
    """Per-ZIP daily meteorology using the vintage in force at the end of the study."""
    series = {}
    for z, vintages in inputs.polygons.items():
        series[z] = aggregate_meteo_series(inputs.meteo, select_vintage(vintages, study_years[1]))
    return ZipMeteoSeries(inputs.meteo.first_date, series)


def run_design(inputs: Inputs, config: RunConfig, exposure: ExposureStage) -> Design:
    events = {e.event_id: e for e in inputs.catalog}
    pct = zip_pct_black(inputs.demographics) if inputs.demographics else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        series = meteo_series(inputs, config.study_years)
    return build_design(exposure.rows, ClaimsIndex(inputs.claims), inputs.enrollment, series, events,
                        exposure.analysis_event_ids, pct, config.study_years)


# ---------------------------------------------------------------- fitting

@dataclass(eq=False)
class FitRecord:
    analysis: str
    subgroup: str
    result: FitResult


def _fit_tasks(strata, config: RunConfig, analyses):
    tasks, failures = [], []
    for analysis in analyses:
        if analysis == "overall":
            groups = {"all": (strata, CountSubset.ALL)}
        else:
            try:
                groups = split_strata(strata, _PARTITION[analysis])
            except ValidationError as exc:
                failures.append({"analysis": analysis, "reason": str(exc)})
                log.warning("analysis %s skipped: %s", analysis, exc)
                continue
        for label, (group, subset) in groups.items():
            for cause in config.outcomes:
                tasks.append((analysis, label, group, ModelSpec(cause, subset)))
    return tasks, failures


def run_fit(strata, config: RunConfig, analyses=None, threads: int = 1):
    """Fit every (analysis, subgroup, cause); returns ``(records, failures)``.

    A cell whose model cannot be identified becomes a non-estimable record;
    Newton failures propagate as :class:`ConvergenceError`.
    """
    analyses = tuple(analyses or config.analyses)
    if not strata:
        raise ValidationError("no strata to fit")
    tasks, failures = _fit_tasks(strata, config, analyses)

    def work(task):
        analysis, label, group, spec = task
        try:
            res = fit_conditional_quasipoisson(group, spec, config.alpha, config.n_causes)
        except ConvergenceError as exc:
            raise ConvergenceError(f"{analysis}/{label}/{spec.cause.value}: {exc}", exc.last_iterate,
                                   exc.n_iter, exc.grad_norm) from exc
        except ValidationError as exc:
            res = FitResult.not_estimable(spec.cause, spec.subset, str(exc), len(group), config.alpha,
                                          config.n_causes)
        return FitRecord(analysis, label, res)

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, tasks))
    else:
        records = [work(t) for t in tasks]
    return records, failures


RESULT_COLUMNS = ["analysis", "subgroup", "cause", "subset", "lag", "beta", "se", "pct", "ci_lo", "ci_hi",
                  "beta_lo95", "beta_hi95", "pvalue", "cumulative", "phi", "n_strata", "n_obs", "estimable",
                  "converged", "status"]


def results_frame(records, holm=False, alpha=0.05) -> pd.DataFrame:
    """One row per (analysis, subgroup, cause, lag)."""
    rows = []
    for rec in records:
        r = rec.result
        se = r.se
        nominal = r.nominal_ci() if r.estimable else np.full((N_LAGS, 2), np.nan)
        for lag in range(N_LAGS):
            b, s = float(r.beta[lag]), float(se[lag])
            ok = bool(r.estimable and np.isfinite(b))
            pc = r.pct_changes[lag]
            rows.append([rec.analysis, rec.subgroup, r.cause.value, r.subset.value, lag, b, s, pc.pct,
                         pc.ci_lo, pc.ci_hi, nominal[lag, 0], nominal[lag, 1],
                         wald_pvalue(b, s) if ok else np.nan, r.cumulative, r.dispersion, r.n_strata, r.n_obs,
                         ok, bool(r.converged), r.status])
    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    if holm:
        frame["holm_alpha"] = np.nan
        for _, idx in frame[frame["estimable"]].groupby(["analysis", "subgroup", "lag"]).groups.items():
            frame.loc[idx, "holm_alpha"] = holm_alphas(frame.loc[idx, "pvalue"].to_numpy(), alpha)
        frame["holm_reject"] = frame["pvalue"] <= frame["holm_alpha"]
    return frame


def _num(x):
    x = float(x)
    return None if math.isnan(x) or math.isinf(x) else x


def results_document(records) -> dict:
    fits = []
    for rec in records:
        r = rec.result
        fits.append({
            "analysis": rec.analysis, "subgroup": rec.subgroup, "cause": r.cause.value,
            "subset": r.subset.value, "status": r.status, "reason": r.reason,
            "names": list(r.names), "beta": [_num(v) for v in r.beta], "se": [_num(v) for v in r.se],
            "pct": [[_num(v) for v in pc] for pc in r.pct_changes], "cumulative": _num(r.cumulative),
            "phi": _num(r.dispersion), "n_strata": int(r.n_strata), "n_obs": int(r.n_obs),
            "converged": bool(r.converged), "n_iter": int(r.n_iter), "grad_norm": _num(r.grad_norm),
            "loglik": _num(r.loglik), "non_estimable": list(r.non_estimable),
            "alpha": r.alpha, "n_causes": r.n_causes,
        })
    return {"fits": fits}


def fit_audit(records, failures, design_audit: dict | None = None) -> dict:
    cells = []
    for rec in records:
        r = rec.result
        if not r.estimable:
            cells.append({"analysis": rec.analysis, "subgroup": rec.subgroup, "cause": r.cause.value,
                          "lags": "all", "reason": r.reason})
        elif r.non_estimable:
            cells.append({"analysis": rec.analysis, "subgroup": rec.subgroup, "cause": r.cause.value,
                          "lags": list(r.non_estimable), "reason": "separated lag indicator"})
    out = {"non_estimable": cells, "skipped_analyses": failures, "n_fits": len(records)}
    if design_audit is not None:
        out["dropped_strata"] = design_audit.get("dropped", [])
        out["unmapped_codes"] = design_audit.get("unmapped_total", 0)
        out["excluded_codes"] = design_audit.get("excluded_total", 0)
        out["conservation_balanced"] = design_audit.get("balanced")
    return out


REPORT_COLUMNS = ["analysis", "cause", "subgroup", "lag", "pct", "lo", "hi"]


def run_report(results: pd.DataFrame) -> pd.DataFrame:
    """Tidy figure-ready rows; non-estimable cells keep NaN values."""
    if results is None or len(results) == 0:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    out = results[["analysis", "cause", "subgroup", "lag", "pct", "ci_lo", "ci_hi"]].copy()
    out.columns = REPORT_COLUMNS
    return out.reset_index(drop=True)


# ---------------------------------------------------------------- all stages

@dataclass(eq=False)
class PipelineResult:
    exposure: ExposureStage
    design: Design
    records: list
    failures: list
    results: pd.DataFrame
    report: pd.DataFrame

    def contamination(self):
        return check_control_contamination(self.design.strata, self.design.history)


def run_pipeline(inputs: Inputs, config: RunConfig, threads: int = 1) -> PipelineResult:
    exposure = run_exposure(inputs, config)
    design = run_design(inputs, config, exposure)
    records, failures = run_fit(design.strata, config, threads=threads)
    results = results_frame(records, config.holm, config.alpha)
    return PipelineResult(exposure, design, records, failures, results, run_report(results))
