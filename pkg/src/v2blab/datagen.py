"""Synthetic billing periods, daily splitting, peak estimation and k-means downsampling.

The generative model is deliberately simple and fully configurable: Poisson
arrival counts per weekday, normally distributed arrival hour and stay length,
uniform SoC draws, a choice of two battery sizes, and an hourly office-style
building curve with multiplicative Gaussian noise.  None of these families are
canonical; they only have to produce plausible, reproducible instances.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .core import ChargerSpec, ConfigError, Episode, EvSession, Tariff, default_chargers

log = logging.getLogger(__name__)

# kW, hour 0..23; weekday office profile
OFFICE_CURVE = (
    40, 38, 37, 37, 38, 42, 52, 68, 82, 90, 96, 100,
    103, 106, 105, 100, 92, 80, 68, 58, 50, 46, 43, 41,
)


@dataclass
class ScenarioSpec:
    arrival_rate: float = 12.0          # mean EV arrivals per weekday
    weekend_rate: float = 0.0
    arrival_hour_mean: float = 9.0
    arrival_hour_std: float = 1.5
    stay_hours_mean: float = 7.5
    stay_hours_std: float = 2.0
    min_stay_hours: float = 1.0
    soc_init_range: tuple = (0.1, 0.5)
    soc_req_range: tuple = (0.6, 0.9)
    capacities_kwh: tuple = (40.0, 62.0)
    building_curve_kw: tuple = OFFICE_CURVE
    building_scale: float = 1.0
    building_noise: float = 0.02        # relative std per slot
    building_day_noise: float = 0.08    # relative std of a per-day load factor
    weekend_building_factor: float = 0.6
    n_days: int = 30
    start_dow: int = 0                  # 0 = Monday
    history_days: int = 7
    n_bidirectional: int = 5
    n_unidirectional: int = 10
    tariff: Tariff = field(default_factory=Tariff)

    def __post_init__(self):
        if isinstance(self.tariff, dict):
            self.tariff = Tariff(**{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in self.tariff.items()})
        for name in ("soc_init_range", "soc_req_range", "capacities_kwh", "building_curve_kw"):
            setattr(self, name, tuple(float(x) for x in getattr(self, name)))
        if self.arrival_rate < 0 or self.weekend_rate < 0:
            raise ConfigError("arrival rates must be non-negative")
        if min(self.arrival_hour_std, self.stay_hours_std, self.building_noise,
               self.building_day_noise) < 0:
            raise ConfigError("standard deviations must be non-negative")
        if not 0 < self.min_stay_hours < 24:
            raise ConfigError("min_stay_hours must lie in (0, 24)")
        lo, hi = self.soc_init_range
        rlo, rhi = self.soc_req_range
        if not (0 <= lo <= hi <= 0.9 and 0 <= rlo <= rhi <= 0.9):
            raise ConfigError("SoC ranges must lie inside [0, 0.9]")
        if not self.capacities_kwh or min(self.capacities_kwh) <= 0:
            raise ConfigError("capacities must be positive")
        if len(self.building_curve_kw) != 24 or min(self.building_curve_kw) < 0:
            raise ConfigError("building curve needs 24 non-negative hourly values")
        if self.n_days < 1 or not 0 <= self.start_dow <= 6 or self.history_days < 0:
            raise ConfigError("invalid calendar settings")
        if self.n_bidirectional < 0 or self.n_unidirectional < 0 or \
                self.n_bidirectional + self.n_unidirectional < 1:
            raise ConfigError("need at least one charger")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["tariff"] = asdict(self.tariff)
        return out

    def chargers(self) -> list:
        return default_chargers(self.n_bidirectional, self.n_unidirectional)

    @property
    def n_weekdays(self) -> int:
        return sum((self.start_dow + d) % 7 < 5 for d in range(self.n_days))


def desk_scale_spec(**overrides) -> ScenarioSpec:
    """One-week billing period on six chargers (2 bidirectional), small enough for quick LPs.

    Charger power relative to building load and arrivals per charger are kept
    close to a 15-charger site with a 120-220 kW building; arriving EVs often
    hold more charge than they need.
    """
    base = dict(arrival_rate=3.0, n_days=7, n_bidirectional=2, n_unidirectional=4,
                building_scale=1.4, soc_init_range=(0.4, 0.9), soc_req_range=(0.5, 0.8),
                stay_hours_mean=8.5, stay_hours_std=1.5)
    base.update(overrides)
    return ScenarioSpec(**base)


def _building_day(spec: ScenarioSpec, weekend: bool, rng: np.random.Generator) -> np.ndarray:
    per_hour = int(round(1.0 / spec.tariff.delta))
    curve = np.repeat(np.asarray(spec.building_curve_kw), per_hour) * spec.building_scale
    if weekend:
        curve = curve * spec.weekend_building_factor
    curve = curve * max(0.0, 1.0 + rng.normal(0.0, spec.building_day_noise))
    noise = rng.normal(0.0, spec.building_noise, curve.size)
    return np.maximum(curve * (1.0 + noise), 0.0)


def sample_month(spec: ScenarioSpec, seed: int) -> Episode:
    """One billing period of ``spec.n_days`` days drawn from ``spec``."""
    rng = np.random.default_rng(seed)
    tariff = spec.tariff
    spd = tariff.slots_per_day
    delta = tariff.delta

    history = []
    for d in range(spec.history_days):
        dow = (spec.start_dow - spec.history_days + d) % 7
        history.append(float(_building_day(spec, dow >= 5, rng).max()))

    loads, dows, sessions = [], [], []
    for d in range(spec.n_days):
        dow = (spec.start_dow + d) % 7
        dows.append(dow)
        loads.append(_building_day(spec, dow >= 5, rng))
        rate = spec.weekend_rate if dow >= 5 else spec.arrival_rate
        for n in range(int(rng.poisson(rate))):
            hour = float(np.clip(rng.normal(spec.arrival_hour_mean, spec.arrival_hour_std),
                                 0.0, 24.0 - spec.min_stay_hours))
            arrival = int(math.floor(hour / delta + 1e-9))
            stay = max(spec.min_stay_hours, rng.normal(spec.stay_hours_mean, spec.stay_hours_std))
            departure = min(spd, arrival + max(1, int(round(stay / delta))))
            soc_init = float(rng.uniform(*spec.soc_init_range))
            soc_req = float(rng.uniform(*spec.soc_req_range))
            cap = float(spec.capacities_kwh[rng.integers(len(spec.capacities_kwh))])
            sessions.append(EvSession(f"d{d:02d}-{n:02d}", d * spd + arrival, d * spd + departure,
                                      soc_init, soc_req, cap))

    return Episode(
        building_load=np.concatenate(loads),
        sessions=tuple(sessions),
        tariff=tariff,
        estimated_peak_kw=0.0,
        day_of_week=tuple(dows),
        history_peaks=tuple(history),
    )


def weekend_session_count(monthly: Episode) -> int:
    spd = monthly.tariff.slots_per_day
    return sum(monthly.day_of_week[s.arrival_slot // spd] >= 5 for s in monthly.sessions)


def split_daily(monthly: Episode) -> list:
    """Weekday days of a billing period as separate one-day episodes.

    Each day keeps the period's estimated peak and carries the preceding seven
    calendar-day building peaks as history.  Sessions arriving on weekends are
    dropped; sessions running past midnight are cut at the end of the day.
    """
    spd = monthly.tariff.slots_per_day
    n_days = monthly.n_slots // spd
    by_day: dict = {}
    for s in monthly.sessions:
        by_day.setdefault(s.arrival_slot // spd, []).append(s)
    dropped = weekend_session_count(monthly)
    if dropped:
        log.info("split_daily: dropped %d weekend sessions", dropped)

    peaks = list(monthly.history_peaks)
    days = []
    for d in range(n_days):
        load = monthly.building_load[d * spd:(d + 1) * spd]
        dow = monthly.day_of_week[d]
        if dow < 5:
            start = d * spd
            sessions = tuple(
                replace(s, arrival_slot=s.arrival_slot - start,
                        departure_slot=min(s.departure_slot - start, spd))
                for s in by_day.get(d, []))
            days.append(Episode(
                building_load=load.copy(),
                sessions=sessions,
                tariff=monthly.tariff,
                estimated_peak_kw=monthly.estimated_peak_kw,
                day_of_week=(dow,),
                history_peaks=tuple(peaks[-7:]),
            ))
        peaks.append(float(load.max()))
    return days


def peak_lower_bound(peaks: Sequence[float], confidence: float = 0.99) -> float:
    """Lower end of the two-sided normal confidence interval of the mean peak."""
    values = np.asarray(peaks, dtype=float)
    if values.size == 0:
        raise ConfigError("no peaks to estimate from")
    if values.size == 1:
        return float(values[0])
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    return float(values.mean() - z * values.std(ddof=1) / math.sqrt(values.size))


def estimate_peak(episodes: Sequence[Episode], chargers: Sequence[ChargerSpec],
                  adjustment: float = 0.0, weights=(1.0, 1.0, 3.0),
                  confidence: float = 0.99) -> float:
    """Estimated billing-period peak from the oracle peaks of training periods.

    ``adjustment`` inflates the estimate (0.05 for +5%).
    """
    from .oracle.lp import SolverError, solve_episode

    if adjustment < 0:
        raise ConfigError("peak adjustment must be non-negative")
    peaks = []
    for ep in episodes:
        sol = solve_episode(ep, chargers, weights)
        if not sol.optimal:
            raise SolverError(sol.status)
        peaks.append(sol.peak_kw)
    return peak_lower_bound(peaks, confidence) * (1.0 + adjustment)


# -- k-means -----------------------------------------------------------------

@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    objective_history: list
    n_iter: int


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def kmeans(values, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding on rows of ``values`` (1-D allowed)."""
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not 1 <= k <= len(x):
        raise ConfigError(f"k={k} needs between 1 and {len(x)} clusters")
    rng = np.random.default_rng(seed)
    centers = _plus_plus(x, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return KMeansResult(labels, centers, history, it)


@dataclass
class SampleSet:
    episodes: list
    demand_charges: np.ndarray
    labels: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None


def optimal_demand_charges(episodes: Sequence[Episode], chargers,
                           weights=(1.0, 1.0, 3.0)) -> np.ndarray:
    from .core import compute_bill
    from .oracle.lp import SolverError, solve_episode

    out = []
    for ep in episodes:
        sol = solve_episode(ep, chargers, weights)
        if not sol.optimal:
            raise SolverError(sol.status)
        out.append(compute_bill(ep, sol.schedule, sol.final_socs).demand_charge_usd)
    return np.array(out)


def _allocate(sizes: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` across clusters proportionally to ``sizes`` (largest get the remainder)."""
    n = sizes.sum()
    if total == 0 or n == 0:
        return np.zeros(len(sizes), dtype=int)
    quota = np.floor(total * sizes / n).astype(int)
    order = sorted(range(len(sizes)), key=lambda c: (-sizes[c], c))
    i = 0
    while quota.sum() < total:
        c = order[i % len(order)]
        if quota[c] < sizes[c]:
            quota[c] += 1
        i += 1
    return quota


def downsample(samples: SampleSet, k: int = 5, n_train: int = 60, n_test: int = 50,
               seed: int = 0) -> tuple:
    """Disjoint train/test subsets drawn proportionally from demand-charge clusters."""
    n = len(samples.episodes)
    if n_train < 0 or n_test < 0 or n_train + n_test > n:
        raise ConfigError(f"cannot draw {n_train}+{n_test} from {n} samples")
    km = kmeans(samples.demand_charges, min(k, n), seed)
    labels = km.labels
    rng = np.random.default_rng(seed)
    sizes = np.bincount(labels, minlength=km.centers.shape[0])
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in range(len(sizes))]
    train_q = _allocate(sizes, n_train)
    test_q = _allocate(sizes - train_q, n_test)
    train_idx = np.sort(np.concatenate([m[:q] for m, q in zip(members, train_q)])).astype(int)
    test_idx = np.sort(np.concatenate(
        [m[tq:tq + q] for m, tq, q in zip(members, train_q, test_q)])).astype(int)

    def subset(idx):
        return SampleSet([samples.episodes[i] for i in idx], samples.demand_charges[idx],
                         labels[idx], idx)

    samples.labels = labels
    return subset(train_idx), subset(test_idx)
