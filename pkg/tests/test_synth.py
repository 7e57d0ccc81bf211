import dataclasses
import datetime as dt
import filecmp
import json
import math

import numpy as np
import pytest

from floodlag import pipeline
from floodlag.ccs import CAUSES
from floodlag.design import Anchor, exposure_periods
from floodlag.errors import ValidationError
from floodlag.model import percent_change
from floodlag.synth import (DgpConfig, daily_means, dgp_truth, draw_counts, generate_world,
                            load_dgp_config, simulate_panel)


def _files(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_same_seed_same_bytes(tmp_path):
    cfg = DgpConfig(seed=3, n_zips=12, n_events=3, study_years=(2004, 2010))
    a, b = tmp_path / "a", tmp_path / "b"
    generate_world(cfg).write(a)
    generate_world(cfg, n_threads=3).write(b)
    assert _files(a) == _files(b)
    for f in _files(a):
        assert filecmp.cmp(a / f, b / f, shallow=False), f
    other = generate_world(dataclasses.replace(cfg, seed=4))
    assert not np.array_equal(other.claims.admission, generate_world(cfg).claims.admission)


def test_config_round_trip(tmp_path):
    cfg = DgpConfig(seed=9, n_zips=20, true_beta=(0.1, 0, 0, 0, 0.02))
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg
    by_cause = DgpConfig(true_beta={"nervous": [0.1, 0, 0, 0, 0]})
    assert DgpConfig.from_dict(json.loads(json.dumps(by_cause.to_dict()))) == by_cause
    path = tmp_path / "dgp.json"
    path.write_text(json.dumps({"synth": cfg.to_dict()}))
    assert load_dgp_config(path) == cfg


def test_infeasible_configs():
    with pytest.raises(ValidationError):
        generate_world(DgpConfig(n_zips=10, n_events=12, max_event_days=10))
    with pytest.raises(ValidationError):
        DgpConfig(overdispersion=0.5)
    with pytest.raises(ValidationError):
        DgpConfig(total_rate=0)
    with pytest.raises(ValidationError):
        DgpConfig(study_years=(2010, 2011))


def test_truth_examples(rng):
    t = dgp_truth(DgpConfig(true_beta=(math.log(1.05), 0, 0, 0, 0)))
    assert len(t) == 13 * 5
    assert t.loc[t.lag == 0, "pct"].to_numpy() == pytest.approx(5.0, abs=1e-12)
    assert dgp_truth(DgpConfig()).cumulative.abs().max() == 0
    beta = rng.normal(0, 0.05, (13, 5))
    t = dgp_truth(DgpConfig(true_beta={c.value: beta[k] for k, c in enumerate(CAUSES)}))
    for row in t.itertuples():
        assert row.pct == pytest.approx(percent_change(row.beta, 0.01).pct, abs=1e-12)
    split = dgp_truth(DgpConfig(true_beta_high_severity=(0.1,) * 5))
    assert set(split.subgroup) == {"moderate_group", "high_extreme_group"}


def test_draw_counts_law_of_large_numbers(rng):
    for c in (1.0, 2.0):
        x = draw_counts(np.full(10_000, 50.0), c, rng)
        assert abs(x.mean() / 50.0 - 1) < 0.01
        assert abs(x.var() / (c * 50.0) - 1) < 0.1


def test_daily_means_hand_formula(small_world):
    w = small_world
    cfg = w.config
    (zip_id, eid), (start, n_days) = next(iter(sorted(w.exposures.items())))
    mu = daily_means(w, zip_id, t_max=np.full(_n_days(cfg), 20.0))
    k = (start - dt.date(cfg.study_years[0], 1, 1)).days
    doy = start.timetuple().tm_yday
    season = math.exp(cfg.seasonal_amplitude * math.cos(2 * math.pi * (doy - 15) / 365.25)
                      + cfg.year_trend * (start.year - sum(cfg.study_years) / 2))
    enr = w.enrollment[(zip_id, start.year)]
    sev = next(e.severity for e in w.catalog if e.event_id == eid)
    beta = cfg.beta_high if sev > 1 else cfg.beta
    expect = enr * season * cfg.baseline_rates * np.exp(beta[:, 0])
    np.testing.assert_allclose(mu[k, :13], expect, rtol=1e-12)
    np.testing.assert_allclose(mu[k, 13:], enr * cfg.total_rate * np.array([cfg.excluded_share, cfg.unmapped_share]))


def _n_days(cfg):
    return (dt.date(cfg.study_years[1], 12, 31) - dt.date(cfg.study_years[0], 1, 1)).days + 1


def test_baseline_rates_follow_shares():
    cfg = DgpConfig()
    assert cfg.baseline_rates.sum() == pytest.approx(cfg.total_rate)
    assert len(cfg.baseline_rates) == len(CAUSES) and np.all(cfg.baseline_rates > 0)


def _design(world, tmp_path):
    config = pipeline.RunConfig.load(world.write(tmp_path))
    inputs = pipeline.Inputs.from_world(world)
    stage = pipeline.run_exposure(inputs, config)
    return stage, pipeline.run_design(inputs, config, stage)


def test_pipeline_sees_the_planted_exposures(small_world, tmp_path):
    stage, _ = _design(small_world, tmp_path)
    got = {(p.zip_id, p.event_id): (p.start, len(p.exposed_dates)) for p in exposure_periods(stage.rows)}
    assert got == small_world.exposures


def test_null_rate_ratio_near_one(tmp_path):
    world = generate_world(DgpConfig(seed=21, n_zips=200, temperature_effect=0.0))
    _, design = _design(world, tmp_path)
    rates = {a: [0.0, 0.0] for a in Anchor}
    for s in design.strata:
        for p in s.periods:
            rates[p.anchor][0] += p.counts.sum()
            rates[p.anchor][1] += p.person_days
    exposed = rates[Anchor.EXPOSURE][0] / rates[Anchor.EXPOSURE][1]
    control = (rates[Anchor.CONTROL_1][0] + rates[Anchor.CONTROL_2][0]) / \
              (rates[Anchor.CONTROL_1][1] + rates[Anchor.CONTROL_2][1])
    assert abs(exposed / control - 1) < 0.03


def test_simulate_panel_validation():
    with pytest.raises(ValidationError):
        simulate_panel(5, [0.1, 0.2])
    panel, truth = simulate_panel(5, np.zeros(5), n_covariates=3)
    assert panel.X.shape == (75, 8) and truth.shape == (8,)
