import numpy as np
import pytest
from scipy.stats import norm

from v2blab.core import ConfigError
from v2blab.datagen import (
    SampleSet,
    ScenarioSpec,
    desk_scale_spec,
    downsample,
    estimate_peak,
    kmeans,
    peak_lower_bound,
    sample_month,
    split_daily,
    weekend_session_count,
)


def test_zero_rate_has_no_sessions():
    assert sample_month(ScenarioSpec(arrival_rate=0.0, n_days=5), 1).sessions == ()


def test_seeded_sampling_is_reproducible():
    spec = ScenarioSpec(n_days=3)
    a, b = sample_month(spec, 9), sample_month(spec, 9)
    assert a.sessions == b.sessions
    assert np.array_equal(a.building_load, b.building_load)
    assert sample_month(spec, 10).sessions != a.sessions


def test_mean_arrivals_close_to_rate():
    spec = ScenarioSpec(n_days=1, history_days=0)
    counts = [len(sample_month(spec, s).sessions) for s in range(200)]
    assert np.mean(counts) == pytest.approx(spec.arrival_rate, rel=0.05)


def test_sessions_are_valid():
    ep = sample_month(ScenarioSpec(n_days=7, weekend_rate=2.0), 5)
    spd = ep.tariff.slots_per_day
    for s in ep.sessions:
        assert s.arrival_slot // spd == (s.departure_slot - 1) // spd
        assert 0.0 <= s.soc_init <= 0.9 and s.capacity_kwh in (40.0, 62.0)
    assert ep.n_slots == 7 * spd
    assert len(ep.history_peaks) == 7


def test_twenty_two_weekdays():
    spec = ScenarioSpec(n_days=31, start_dow=6, weekend_rate=1.0, arrival_rate=2.0)
    month = sample_month(spec, 0)
    days = split_daily(month)
    assert spec.n_weekdays == 22
    assert len(days) == 22
    weekday_load = np.concatenate([month.building_load[d * 96:(d + 1) * 96]
                                   for d in range(31) if month.day_of_week[d] < 5])
    assert np.array_equal(np.concatenate([d.building_load for d in days]), weekday_load)
    kept = sum(len(d.sessions) for d in days)
    assert kept == len(month.sessions) - weekend_session_count(month)


def test_daily_history_is_rolling():
    month = sample_month(ScenarioSpec(n_days=8, start_dow=0), 2)
    days = split_daily(month)
    assert days[0].history_peaks == month.history_peaks[-7:]
    assert days[1].history_peaks[-1] == pytest.approx(month.building_load[:96].max())


def test_peak_lower_bound():
    assert peak_lower_bound([150.0] * 5) == pytest.approx(150.0)
    assert peak_lower_bound([133.0]) == 133.0
    rng = np.random.default_rng(0)
    peaks = rng.normal(180.0, 12.0, 40)
    closed = peaks.mean() - norm.ppf(0.995) * peaks.std(ddof=1) / np.sqrt(40)
    assert peak_lower_bound(peaks) == pytest.approx(closed, abs=1e-9)
    with pytest.raises(ConfigError):
        peak_lower_bound([])


def test_estimate_peak_adjustment():
    spec = desk_scale_spec(n_days=1, start_dow=0)
    months = [sample_month(spec, s) for s in range(3)]
    base = estimate_peak(months, spec.chargers())
    assert estimate_peak(months, spec.chargers(), adjustment=0.05) == pytest.approx(1.05 * base)


def test_kmeans_objective_monotone():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(c, 1.0, 30) for c in (0, 8, 20)])
    res = kmeans(x, 3, seed=2)
    assert all(b <= a + 1e-9 for a, b in zip(res.objective_history, res.objective_history[1:]))
    assert sorted(np.round(res.centers[:, 0])) == pytest.approx([0, 8, 20], abs=1.0)
    with pytest.raises(ConfigError):
        kmeans(x, 0)


def _samples(values):
    return SampleSet(list(range(len(values))), np.asarray(values, dtype=float))


def test_downsample_two_clumps():
    rng = np.random.default_rng(3)
    values = np.concatenate([rng.normal(100, 1, 60), rng.normal(120, 1, 40)])
    train, test = downsample(_samples(values), k=2, n_train=30, n_test=20, seed=1)
    assert len(train.episodes) == 30 and len(test.episodes) == 20
    assert not set(train.indices) & set(test.indices)
    for part in (train, test):
        assert (part.demand_charges < 110).any() and (part.demand_charges > 110).any()
    again = downsample(_samples(values), k=2, n_train=30, n_test=20, seed=1)
    assert np.array_equal(again[0].indices, train.indices)


def test_downsample_single_cluster_and_errors():
    train, test = downsample(_samples(np.arange(20.0)), k=1, n_train=5, n_test=5)
    assert len(train.indices) == 5 and len(test.indices) == 5
    with pytest.raises(ConfigError):
        downsample(_samples(np.arange(10.0)), n_train=8, n_test=5)


def test_spec_from_dict():
    spec = ScenarioSpec.from_dict({"n_days": 3, "tariff": {"peak_window": [7, 21]}})
    assert spec.tariff.peak_window == (7.0, 21.0)
    with pytest.raises(ConfigError):
        ScenarioSpec.from_dict({"arrivals": 3})
    with pytest.raises(ConfigError):
        ScenarioSpec(soc_req_range=(0.5, 1.0))
