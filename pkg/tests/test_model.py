import numpy as np
import pytest
from scipy.stats import norm

from floodlag.errors import ConfigurationError, ConvergenceError, RankDeficiencyError, ValidationError
from floodlag.model import (LAG_NAMES, Panel, bonferroni_z, ci_halfwidth_ratio, cumulative_effect,
                            equivalence_check_fixed_effects, fit_conditional, fit_fixed_effects_poisson,
                            fit_panel, holm_alphas, natural_spline_basis, pearson_dispersion,
                            percent_change, split_strata, stratified_fit)
from floodlag.synth import simulate_panel


# ---------------------------------------------------------------- splines

def test_spline_needs_distinct_values():
    with pytest.raises(ConfigurationError):
        natural_spline_basis(np.full(30, 3.0))
    with pytest.raises(ConfigurationError):
        natural_spline_basis([1, 2, 3, 4])


def test_spline_linear_outside_boundary(rng):
    basis = natural_spline_basis(rng.uniform(0, 10, 200))
    assert basis.matrix.shape == (200, 4)
    for x in (np.linspace(10.5, 30, 9), np.linspace(-20, -0.5, 9)):
        second = np.diff(basis.evaluate(x), 2, axis=0)
        np.testing.assert_allclose(second, 0, atol=1e-10)


def _truncated_power_ns(x, knots):
    """Natural cubic spline basis from truncated powers (K knots -> K columns)."""
    k = np.sort(knots)
    K = len(k)

    def d(j):
        return (np.clip(x - k[j], 0, None) ** 3 - np.clip(x - k[-1], 0, None) ** 3) / (k[-1] - k[j])
    cols = [np.ones_like(x), x] + [d(j) - d(K - 2) for j in range(K - 2)]
    return np.column_stack(cols)


def test_spline_spans_reference_natural_splines(rng):
    x = rng.uniform(-3, 7, 50)
    basis = natural_spline_basis(x)
    knots = np.r_[basis.boundary_knots[0], basis.interior_knots, basis.boundary_knots[1]]
    np.testing.assert_allclose(basis.interior_knots, np.quantile(x, [0.25, 0.5, 0.75]))
    coef = rng.normal(size=5)
    ours = np.column_stack([np.ones_like(x), basis.matrix])
    fit, *_ = np.linalg.lstsq(ours, _truncated_power_ns(x, knots) @ coef, rcond=None)
    held = np.r_[rng.uniform(-3, 7, 40), [-5.0, 9.0]]
    pred = np.column_stack([np.ones_like(held), basis.evaluate(held)]) @ fit
    np.testing.assert_allclose(pred, _truncated_power_ns(held, knots) @ coef, atol=1e-8)


# ---------------------------------------------------------------- conditional fitting

def _panel(X, y, off, ptr, names=None):
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    return Panel(X, y, off, ptr, names or tuple(f"x{j}" for j in range(X.shape[1])))


def test_symmetry_gives_zero():
    fit = fit_conditional(_panel([1, 0], [5, 5], [0, 0], [0, 2]))
    assert fit.params[0] == pytest.approx(0, abs=1e-12)


def _grid_loglik(beta, x, y, off, ptr):
    out = np.zeros_like(beta)
    for a, b in zip(ptr[:-1], ptr[1:]):
        eta = np.outer(beta, x[a:b]) + off[a:b]
        logp = eta - np.log(np.exp(eta).sum(axis=1, keepdims=True))
        out += logp @ y[a:b]
    return out


def test_matches_one_dimensional_grid_search(rng):
    for _ in range(20):
        n = 3
        x = np.array([1.0, 0, 0, 1, 0, 0])
        y = rng.integers(0, 6, 6).astype(float)
        y[[0, 1, 3, 4]] += 1  # both sides of the indicator see counts in each stratum
        off = np.log(rng.uniform(1, 5, 6))
        ptr = np.array([0, n, 2 * n])
        grid = np.linspace(-6, 6, 120001)  # 1e-4 spacing
        best = grid[np.argmax(_grid_loglik(grid, x, y, off, ptr))]
        fine = np.linspace(best - 1e-4, best + 1e-4, 2001)
        best = fine[np.argmax(_grid_loglik(fine, x, y, off, ptr))]
        fit = fit_conditional(_panel(x, y, off, ptr))
        assert abs(fit.params[0] - best) < 1e-4


def test_recovers_injected_effect():
    beta = np.array([np.log(1.05), 0, 0, 0, 0])
    panel, truth = simulate_panel(500, beta, seed=3, baseline=40.0)
    res = fit_panel(panel, "circulatory")
    assert res.converged
    assert np.all(np.abs(res.beta - truth[:5]) < 3 * res.se)
    assert 0.8 < res.dispersion < 1.2


def test_fixed_effects_equivalence_hand_built():
    X = np.array([[1, 0.3], [0, -0.2], [0, 0.5], [1, 0.1], [0, 0.0], [0, -0.4], [1, 0.7], [0, 0.2], [0, -0.1]])
    y = np.array([7, 3, 4, 2, 5, 1, 6, 6, 2], dtype=float)
    off = np.log([10, 12, 9, 20, 18, 22, 5, 6, 5])
    panel = _panel(X, y, off, [0, 3, 6, 9])
    assert equivalence_check_fixed_effects(panel) < 1e-6


def test_identical_periods_give_zero():
    y = np.array([4.0, 4, 4, 9, 9, 9])
    panel = _panel([1, 0, 0, 1, 0, 0], y, np.zeros(6), [0, 3, 6])
    assert fit_conditional(panel).params[0] == pytest.approx(0, abs=1e-10)
    fe, _ = fit_fixed_effects_poisson(panel)
    assert fe[0] == pytest.approx(0, abs=1e-10)


def test_equivalence_limit():
    panel, _ = simulate_panel(51, np.zeros(5), seed=1)
    with pytest.raises(ValidationError):
        equivalence_check_fixed_effects(panel)


def test_offset_invariance_within_stratum(rng):
    panel, _ = simulate_panel(40, np.array([0.1, 0, 0.05, 0, 0]), seed=8)
    shift = np.repeat(rng.normal(0, 2, panel.n_strata), np.diff(panel.ptr))
    moved = Panel(panel.X, panel.y, panel.offset + shift, panel.ptr, panel.names)
    a = fit_conditional(panel, tol=1e-10).params
    b = fit_conditional(moved, tol=1e-10).params
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_loglik_never_decreases():
    panel, _ = simulate_panel(60, np.array([0.3, -0.2, 0, 0, 0.1]), seed=4, baseline=0.5)
    fit = fit_conditional(panel)
    assert np.all(np.diff(fit.loglik_path) >= -1e-12)


def test_separated_lag_is_non_estimable():
    panel, _ = simulate_panel(80, np.zeros(5), seed=2, baseline=5.0)
    y = panel.y.copy()
    y[panel.X[:, 2] == 1] = 0  # no admissions ever fall in lag 2
    res = fit_panel(Panel(panel.X, y, panel.offset, panel.ptr, panel.names), "respiratory")
    assert res.non_estimable == ("lag2",)
    assert np.isnan(res.beta[2]) and np.all(np.isfinite(np.delete(res.beta, 2)))
    assert np.isnan(res.pct_changes[2].pct)


def test_rank_deficiency_names_columns():
    panel, _ = simulate_panel(30, np.zeros(5), seed=2)
    X = np.hstack([panel.X, 2 * panel.X[:, [5]]])
    bad = Panel(X, panel.y, panel.offset, panel.ptr, panel.names + ("z0_copy",))
    with pytest.raises(RankDeficiencyError) as info:
        fit_panel(bad, "circulatory")
    assert set(info.value.columns) & {"z0", "z0_copy"}
    const = Panel(np.hstack([panel.X, np.ones((len(panel.y), 1))]), panel.y, panel.offset, panel.ptr,
                  panel.names + ("const",))
    with pytest.raises(RankDeficiencyError, match="const"):
        fit_panel(const, "circulatory")


def test_non_convergence_reports_last_iterate():
    panel, _ = simulate_panel(30, np.full(5, 0.5), seed=2)
    with pytest.raises(ConvergenceError) as info:
        fit_conditional(panel, max_iter=1)
    assert info.value.last_iterate is not None


def test_pearson_dispersion_degrees_of_freedom():
    y = np.array([1.0, 2, 3, 4, 5, 6])
    mu = np.array([2.0, 2, 2, 4, 4, 4])
    chi2 = np.sum((y - mu) ** 2 / mu)
    assert pearson_dispersion(y, mu, 1, 2) == pytest.approx(chi2 / 3)
    with pytest.raises(ValidationError):
        pearson_dispersion(y, mu, 4, 2)


def test_covariance_is_dispersion_scaled():
    panel, _ = simulate_panel(200, np.zeros(5), seed=9, overdispersion=3.0, baseline=20)
    res = fit_panel(panel, "circulatory")
    fit = fit_conditional(panel)
    np.testing.assert_allclose(res.covariance, res.dispersion * np.linalg.inv(fit.information), rtol=1e-6)
    assert res.dispersion > 2
    assert np.all(np.linalg.eigvalsh(res.covariance) > 0)


# ---------------------------------------------------------------- inference

def test_bonferroni_critical_value():
    assert bonferroni_z() == pytest.approx(2.891, abs=5e-4)
    assert bonferroni_z() == pytest.approx(norm.isf(0.05 / 26), rel=1e-14)
    assert ci_halfwidth_ratio() == pytest.approx(norm.isf(0.05 / 26) / norm.isf(0.025), rel=1e-12)


def test_percent_change_examples():
    pc = percent_change(0.0, 0.1)
    assert pc.pct == 0 and np.log1p(pc.ci_lo / 100) == pytest.approx(-np.log1p(pc.ci_hi / 100))
    assert percent_change(np.log(1.035), 0.01).pct == pytest.approx(3.5, abs=1e-10)
    z = norm.isf(0.025 / 13)
    pc = percent_change(0.05, 0.01)
    assert pc.ci_lo == pytest.approx(100 * (np.exp(0.05 - z * 0.01) - 1), abs=1e-10)
    assert pc.ci_hi == pytest.approx(100 * (np.exp(0.05 + z * 0.01) - 1), abs=1e-10)
    with pytest.raises(ValidationError):
        percent_change(0.1, 0)


def test_cumulative_examples(rng):
    assert cumulative_effect(np.zeros(5)) == 0
    assert cumulative_effect(np.full(5, np.log(1.01))) == pytest.approx(0.05, abs=1e-12)
    b = rng.normal(0, 0.1, 5)
    total = 0.0
    for v in b:
        total += np.exp(v) - 1
    assert cumulative_effect(b) == pytest.approx(total, rel=1e-13)


def test_holm_matches_statsmodels(rng):
    from statsmodels.stats.multitest import multipletests
    for _ in range(50):
        p = rng.uniform(0, 0.02, 13) ** rng.uniform(0.5, 2)
        reject = p <= holm_alphas(p)
        np.testing.assert_array_equal(reject, multipletests(p, 0.05, "holm")[0])


# ---------------------------------------------------------------- stratified

def test_empty_partition_side(small_world, tmp_path):
    from floodlag import pipeline
    config = pipeline.RunConfig.load(small_world.write(tmp_path))
    inputs = pipeline.Inputs.from_world(small_world)
    design = pipeline.run_design(inputs, config, pipeline.run_exposure(inputs, config))
    moderate = [s for s in design.strata if s.severity == 1.0]
    if moderate:
        with pytest.raises(ValidationError):
            split_strata(moderate, "severity")
    groups = split_strata(design.strata, "emergency")
    assert set(groups) == {"emergency", "non_emergency"}


def test_subgroup_effects_recovered(tmp_path):
    from floodlag import pipeline
    from floodlag.synth import DgpConfig, generate_world
    lo, hi = np.log(1.0), np.log(1.25)
    cfg = DgpConfig(seed=6, n_zips=200, n_events=8, max_event_days=5, true_beta=(lo,) * 5, true_beta_high_severity=(hi,) * 5,
                    severity_weights=((1.0, 0.5), (2.0, 0.5)))
    world = generate_world(cfg)
    config = pipeline.RunConfig.load(world.write(tmp_path))
    inputs = pipeline.Inputs.from_world(world)
    design = pipeline.run_design(inputs, config, pipeline.run_exposure(inputs, config))
    fits = stratified_fit(design.strata, "severity", "circulatory")
    assert set(fits) == {"moderate_group", "high_extreme_group"}
    for label, truth in (("moderate_group", lo), ("high_extreme_group", hi)):
        res = fits[label]
        if not res.estimable:
            pytest.fail(f"{label}: {res.reason}")
        assert np.all(np.abs(res.beta - truth) < 3 * res.se), (label, res.beta, res.se)
    assert LAG_NAMES == ("lag0", "lag1", "lag2", "lag3", "lag4")
