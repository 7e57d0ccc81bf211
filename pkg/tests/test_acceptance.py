"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary)
before asserting. The simulation studies are marked ``slow``; run only
this file with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""
import datetime as dt
import math
import sys
import time
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
import shapely
from scipy.stats import norm

from _shapes import random_polygon, random_raster, shapely_coverage
from conftest import record_acceptance
from floodlag import cli, pipeline
from floodlag.design import check_control_contamination
from floodlag.exposure import (KM2_PER_SQ_MI, RULE_PRESETS, ExposureRule, FloodEvent, SeverityGroup,
                               classify_exposed, severity_split)
from floodlag.geodata import ZonalFloodStats, mask_permanent_water, zonal_flood_stats
from floodlag.model import (ci_halfwidth_ratio, equivalence_check_fixed_effects, fit_conditional,
                            separated_columns, Panel)
from floodlag.synth import DgpConfig, generate_world, simulate_panel

RECOVERY_BETA = (math.log(1.05), math.log(1.03), 0.0, 0.0, math.log(1.02))
N_SEEDS = 100

# every pipeline run in this module: (label, design audit balanced, contaminated controls)
DESIGN_RUNS = []


def _run_world(config: DgpConfig, **run_kw):
    world = generate_world(config)
    run = pipeline.RunConfig(study_years=world.config.study_years, **run_kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = pipeline.run_pipeline(pipeline.Inputs.from_world(world), run)
    DESIGN_RUNS.append((f"seed {config.seed}", res.design.audit.balanced, res.contamination()))
    return res


def _light(res):
    # strata are large; keep only what the criteria read
    return SimpleNamespace(records=res.records, results=res.results)


@pytest.fixture(scope="module")
def recovery_runs():
    """The criterion-1 study: 100 seeds at 200 ZIPs and 5 events."""
    runs, seconds = [], []
    for seed in range(1000, 1000 + N_SEEDS):
        t0 = time.perf_counter()
        res = _run_world(DgpConfig(seed=seed, n_zips=200, n_events=5, true_beta=RECOVERY_BETA))
        seconds.append(time.perf_counter() - t0)
        runs.append(_light(res))
    return runs, seconds


# ---------------------------------------------------------------- 1

@pytest.mark.slow
def test_01_parameter_recovery(recovery_runs, tmp_path):
    runs, seconds = recovery_runs
    truth = np.array(RECOVERY_BETA)
    hits = np.zeros((13, 5), dtype=int)
    for res in runs:
        for k, rec in enumerate(r for r in res.records if r.analysis == "overall"):
            r = rec.result
            if r.estimable:
                hits[k] += np.abs(r.beta - truth) <= 3 * r.se
    worst = int(hits.min())
    # one complete command-line run, synth through report, on a criterion-1 world
    cfg = tmp_path / "synth.json"
    cfg.write_text('{"synth": {"seed": 1000, "n_zips": 200, "n_events": 5, "true_beta": %s}}'
                   % list(RECOVERY_BETA))
    t0 = time.perf_counter()
    codes = [cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "w")])]
    for stage in ("exposure", "design", "fit", "report"):
        codes.append(cli.main([stage, "--config", str(tmp_path / "w" / "config.json")]))
    cli_seconds = time.perf_counter() - t0
    ok = worst >= 95 and max(seconds) < 60 and cli_seconds < 60 and codes == [0] * 5
    record_acceptance(1, "parameter recovery", ok,
                      f"min hits over 65 (cause, lag) cells {worst}/100, mean {hits.mean():.1f}; "
                      f"max {max(seconds):.1f} s/seed in memory, {cli_seconds:.1f} s via CLI")
    assert ok


# ---------------------------------------------------------------- 2

def test_02_fixed_effects_equivalence():
    rng = np.random.default_rng(2)
    worst, n = 0.0, 0
    while n < 100:
        n_strata = int(rng.integers(3, 51))
        beta = rng.normal(0, 0.2, 5)
        panel, _ = simulate_panel(n_strata, beta, seed=int(rng.integers(2**31)),
                                  baseline=float(rng.uniform(0.5, 5)), n_covariates=int(rng.integers(0, 3)))
        panel = panel.without_zero_strata()
        if panel.n_strata == 0 or separated_columns(panel):
            continue  # both fits diverge; draw again
        worst = max(worst, equivalence_check_fixed_effects(panel))
        n += 1
    ok = worst < 1e-6
    record_acceptance(2, "conditional / fixed-effects equivalence", ok, f"max discrepancy {worst:.2e} over 100")
    assert ok


# ---------------------------------------------------------------- 3

def _cond_loglik(beta, x, y, off, ptr):
    """Multinomial log-likelihood on a vector of candidate coefficients."""
    total = np.zeros_like(beta)
    for a, b in zip(ptr[:-1], ptr[1:]):
        eta = np.outer(beta, x[a:b]) + off[a:b]
        m = eta.max(axis=1, keepdims=True)
        total += (eta - m - np.log(np.exp(eta - m).sum(axis=1, keepdims=True))) @ y[a:b]
    return total


def test_03_brute_force_grid():
    rng = np.random.default_rng(3)
    worst, n = 0.0, 0
    while n < 100:
        sizes = rng.integers(2, 6, 2)
        ptr = np.r_[0, np.cumsum(sizes)]
        x = np.zeros(ptr[-1])
        x[ptr[:-1]] = 1.0
        x[ptr[:-1] + 1] = rng.integers(0, 2, 2)
        y = rng.integers(0, 6, ptr[-1]).astype(float)
        off = np.log(rng.uniform(1, 10, ptr[-1]))
        panel = Panel(x[:, None], y, off, ptr, ("exposure",)).without_zero_strata()
        if panel.n_strata == 0 or separated_columns(panel):
            continue
        grid = np.linspace(-10, 10, 20001)  # 1e-3 spacing, then refine to 1e-4 around the best point
        best = grid[np.argmax(_cond_loglik(grid, x, y, off, ptr))]
        fine = np.arange(best - 2e-3, best + 2e-3 + 5e-5, 1e-4)
        best = fine[np.argmax(_cond_loglik(fine, x, y, off, ptr))]
        got = fit_conditional(panel, tol=1e-10).params[0]
        worst = max(worst, abs(got - best))
        n += 1
    ok = worst <= 1e-4
    record_acceptance(3, "brute-force likelihood oracle", ok, f"max |beta - grid| {worst:.1e} over 100 instances")
    assert ok


# ---------------------------------------------------------------- 4

def _jittered_flood_area(raster, polygon, rng, n_side=1000):
    """Stratified Monte Carlo: one uniform point per cell of an n_side x n_side lattice."""
    xmin, ymin, xmax, ymax = polygon.to_shapely().bounds
    u = (np.arange(n_side)[None, :] + rng.random((n_side, n_side))) / n_side
    v = (np.arange(n_side)[:, None] + rng.random((n_side, n_side))) / n_side
    px = xmin + u.ravel() * (xmax - xmin)
    py = ymin + v.ravel() * (ymax - ymin)
    g = raster.geometry
    col = np.floor((px - g.origin_x) / g.pixel_size).astype(int)
    row = np.floor((g.origin_y - py) / g.pixel_size).astype(int)
    inside = shapely.contains_xy(polygon.to_shapely(), px, py)
    flooded = np.zeros_like(inside)
    flooded[inside] = raster.flooded[row[inside], col[inside]] == 1
    return flooded.mean() * (xmax - xmin) * (ymax - ymin) / 1e6


def test_04_zonal_statistics():
    rng = np.random.default_rng(4)
    worst_abs = worst_rel = 0.0
    for k in range(50):
        raster = mask_permanent_water(random_raster(rng, 24, 24, p_flood=rng.uniform(0.2, 0.8)))
        poly = random_polygon(rng, raster.geometry, parts=int(rng.integers(1, 3)))
        got = zonal_flood_stats(raster, poly).flooded_area
        enum = float(np.sum(shapely_coverage(raster.geometry, poly) * (raster.flooded == 1))
                     * raster.geometry.pixel_area_km2)
        mc = _jittered_flood_area(raster, poly, rng)
        worst_abs = max(worst_abs, abs(got - enum))
        worst_rel = max(worst_rel, abs(got - mc) / got)
    ok = worst_abs <= 1e-9 and worst_rel <= 1e-3
    record_acceptance(4, "zonal statistics", ok,
                      f"enumeration max abs {worst_abs:.1e} km2, Monte Carlo max rel {worst_rel:.1e}")
    assert ok


# ---------------------------------------------------------------- 5

def test_05_exposure_rule():
    rng = np.random.default_rng(5)
    rules = list(RULE_PRESETS.values()) + [ExposureRule(float(a), float(b)) for a, b in
                                           rng.uniform(0, 5, (20, 2))]
    mismatches = 0
    for rule in rules:
        pct = np.r_[rng.uniform(0, 3, 2000), [0.0, rule.min_pct_area, 0.5, 1.0]]
        area = np.r_[rng.exponential(15, 2000), [0.0, 0.0, rule.min_area_km2, 25.89988]]
        area[rng.random(len(area)) < 0.1] = 0.0
        for p, a in zip(pct, area):
            p = 0.0 if a == 0 else p
            want = a > 0 and (p >= rule.min_pct_area or a >= rule.min_area_km2)
            mismatches += classify_exposed(ZonalFloodStats("00001", "0001", a, p, 1, 1), rule) != want
    primary, strict = RULE_PRESETS["primary"], RULE_PRESETS["strict"]
    consts = (primary.min_pct_area == 0.5 and abs(primary.min_area_km2 - 12.94994) < 5e-6
              and abs(5 * 1.609344 ** 2 - primary.min_area_km2) < 1e-12
              and strict.min_pct_area == 1.0 and abs(strict.min_area_km2 - 25.89988) < 5e-6
              and abs(10 * KM2_PER_SQ_MI - strict.min_area_km2) < 1e-12)
    ok = mismatches == 0 and consts
    record_acceptance(5, "exposure rule truth table and presets", ok,
                      f"{mismatches} mismatches over {len(rules)} rules; preset constants {'ok' if consts else 'wrong'}")
    assert ok


# ---------------------------------------------------------------- 6

@pytest.mark.slow
def test_06_correction_factor(recovery_runs):
    runs, _ = recovery_runs
    target = norm.ppf(1 - 0.05 / 26) / norm.ppf(0.975)
    worst, n = 0.0, 0
    for res in runs:
        t = res.results[res.results.estimable]
        lo, hi = np.log1p(t.ci_lo / 100), np.log1p(t.ci_hi / 100)
        ratio = (hi - lo) / (t.beta_hi95 - t.beta_lo95)
        worst = max(worst, float(np.max(np.abs(ratio - target))))
        n += len(t)
    ok = worst < 1e-6 and abs(ci_halfwidth_ratio() - target) < 1e-12
    record_acceptance(6, "Bonferroni half-width ratio", ok,
                      f"target {target:.6f}; max deviation {worst:.1e} over {n} coefficients")
    assert ok


# ---------------------------------------------------------------- 7

@pytest.mark.slow
def test_07_dispersion_calibration(recovery_runs):
    runs, _ = recovery_runs
    phi_poisson = np.array([[rec.result.dispersion for rec in res.records if rec.analysis == "overall"]
                            for res in runs])
    mean_by_cause = np.nanmean(phi_poisson, axis=0)
    phi_nb = []
    for seed in range(3000, 3000 + N_SEEDS):
        res = _run_world(DgpConfig(seed=seed, n_zips=200, n_events=5, overdispersion=2.0),
                         outcomes=("circulatory", "respiratory", "nervous"))
        phi_nb += [rec.result.dispersion for rec in res.records]
    mean_nb = float(np.nanmean(phi_nb))
    ok = bool(np.all((mean_by_cause >= 0.8) & (mean_by_cause <= 1.2))) and mean_nb > 1.5
    record_acceptance(7, "dispersion calibration", ok,
                      f"Poisson mean phi per cause {mean_by_cause.min():.3f}..{mean_by_cause.max():.3f}; "
                      f"inflation-2 mean phi {mean_nb:.3f}")
    assert ok


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_08_null_calibration():
    excl = total = skipped = 0
    for seed in range(2000, 2200):
        res = _run_world(DgpConfig(seed=seed, n_zips=100, n_events=5))
        t = res.results
        est = t[t.estimable]
        skipped += int((~t.estimable).sum())
        excl += int(((est.beta_lo95 > 0) | (est.beta_hi95 < 0)).sum())
        total += len(est)
    rate = excl / total
    ok = abs(rate - 0.05) <= 0.02
    record_acceptance(8, "null calibration", ok,
                      f"{100 * rate:.2f}% of {total} (cause, lag) cells exclude 0; {skipped} cells not estimable")
    assert ok


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_09_design_integrity():
    for seed, rule in ((4000, "loose"), (4001, "strict"), (4002, "primary")):
        _run_world(DgpConfig(seed=seed, n_zips=150, n_events=6, frac_zips_flooded=0.8),
                   exposure_rule=RULE_PRESETS[rule], outcomes=("circulatory",))
    res = _run_world(DgpConfig(seed=4003, n_zips=100, n_events=5), causes=("heavy_rain",),
                     outcomes=("circulatory",))
    n_contaminated = sum(len(c) for _, _, c in DESIGN_RUNS)
    n_unbalanced = sum(not b for _, b, _ in DESIGN_RUNS)
    ok = n_contaminated == 0 and n_unbalanced == 0 and res.design.strata
    record_acceptance(9, "design integrity", ok,
                      f"{len(DESIGN_RUNS)} runs: {n_contaminated} contaminated control windows, "
                      f"{n_unbalanced} unbalanced audits")
    assert ok
    assert check_control_contamination(res.design.strata, res.design.history) == []


# ---------------------------------------------------------------- 10

def test_10_severity_partition():
    sev = [1.0] * 40 + [1.5] * 10 + [2.0] * 25
    base = dt.date(2001, 1, 1)
    catalog = [FloodEvent(f"{5000 + k}", "heavy_rain", s, base + dt.timedelta(days=80 * k),
                          base + dt.timedelta(days=80 * k + 3)) for k, s in enumerate(sev)]
    groups = [severity_split(e.severity) for e in catalog]
    n_mod = groups.count(SeverityGroup.MODERATE)
    n_high = groups.count(SeverityGroup.HIGH_EXTREME)
    ok = (n_mod, n_high) == (40, 35)
    record_acceptance(10, "severity partition", ok, f"group sizes {n_mod} / {n_high}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
