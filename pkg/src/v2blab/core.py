"""Domain types, tariff arithmetic, SoC dynamics, feasibility checks and billing.

Every other module speaks in terms of the types defined here.  Powers are in
kW, energies in kWh, prices in $/kWh (energy) or $/kW (demand), SoC values are
fractions of battery capacity, and time is measured in integer slots of
``Tariff.delta`` hours starting at midnight of day 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np


class V2BError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(V2BError, ValueError):
    """Raised on malformed or non-finite inputs."""


class ConfigError(V2BError, ValueError):
    """Raised on invalid configuration values."""


class FeasibilityError(V2BError):
    """Raised when a schedule draws negative net power from the grid."""

    def __init__(self, message: str, slots: Sequence[int]):
        super().__init__(message)
        self.slots = list(slots)


# Default tariff values (Table "Simulation Parameters" of the source study).
THETA_E_OFFPEAK = 0.11271
THETA_E_PEAK = 0.1466
THETA_D = 9.62
DELTA_H = 0.25
PEAK_WINDOW = (6.0, 22.0)

FEAS_TOL = 1e-7


@dataclass(frozen=True)
class Tariff:
    theta_e_offpeak: float = THETA_E_OFFPEAK
    theta_e_peak: float = THETA_E_PEAK
    peak_window: tuple = PEAK_WINDOW
    theta_d: float = THETA_D
    delta: float = DELTA_H
    demand_includes_delta: bool = True
    demand_peak_hours_only: bool = True

    def __post_init__(self):
        start, end = self.peak_window
        object.__setattr__(self, "peak_window", (float(start), float(end)))
        prices = (self.theta_e_offpeak, self.theta_e_peak, self.theta_d)
        if not all(math.isfinite(p) and p >= 0 for p in prices):
            raise ConfigError(f"prices must be finite and non-negative: {prices}")
        if self.theta_e_offpeak > self.theta_e_peak:
            raise ConfigError("off-peak energy price exceeds peak price")
        if not 0 < self.delta <= 1:
            raise ConfigError(f"delta must lie in (0, 1] hours, got {self.delta}")
        if not (0 <= start < end <= 24):
            raise ConfigError(f"invalid peak window {self.peak_window}")

    @property
    def slots_per_day(self) -> int:
        return int(round(24.0 / self.delta))

    def hour(self, slot: int) -> int:
        return int(math.floor(slot * self.delta + 1e-9)) % 24

    def is_peak(self, slot: int) -> bool:
        start, end = self.peak_window
        return start <= self.hour(slot) < end

    def peak_mask(self, n_slots: int) -> np.ndarray:
        return np.array([self.is_peak(j) for j in range(n_slots)], dtype=bool)

    def rates(self, n_slots: int) -> np.ndarray:
        """Energy price of every slot in ``range(n_slots)``."""
        return np.where(self.peak_mask(n_slots), self.theta_e_peak, self.theta_e_offpeak)

    @property
    def demand_price(self) -> float:
        """$ per kW of billed peak, including the slot-length factor when enabled."""
        return self.theta_d * (self.delta if self.demand_includes_delta else 1.0)


@dataclass(frozen=True)
class ChargerSpec:
    id: int
    p_min: float
    p_max: float

    def __post_init__(self):
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)):
            raise InvalidInputError(f"charger {self.id}: non-finite bounds")
        if not self.p_min <= 0 < self.p_max:
            raise InvalidInputError(
                f"charger {self.id}: need p_min <= 0 < p_max, got [{self.p_min}, {self.p_max}]"
            )

    @property
    def bidirectional(self) -> bool:
        return self.p_min < 0


@dataclass(frozen=True)
class EvSession:
    """One charging session.  The EV is plugged in for slots ``arrival_slot`` to
    ``departure_slot - 1``; its SoC at departure is the SoC at ``departure_slot``."""

    id: int | str
    arrival_slot: int
    departure_slot: int
    soc_init: float
    soc_req: float
    capacity_kwh: float
    soc_min: float = 0.0
    soc_max: float = 0.9

    def __post_init__(self):
        if self.arrival_slot >= self.departure_slot:
            raise InvalidInputError(f"session {self.id}: arrival must precede departure")
        if self.arrival_slot < 0:
            raise InvalidInputError(f"session {self.id}: negative arrival slot")
        if not self.capacity_kwh > 0:
            raise InvalidInputError(f"session {self.id}: capacity must be positive")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise InvalidInputError(f"session {self.id}: soc_init outside [soc_min, soc_max]")
        if not self.soc_min <= self.soc_req <= self.soc_max:
            raise InvalidInputError(f"session {self.id}: soc_req outside [soc_min, soc_max]")

    @property
    def stay_slots(self) -> int:
        return self.departure_slot - self.arrival_slot

    @property
    def requested_kwh(self) -> float:
        return max(0.0, self.soc_req - self.soc_init) * self.capacity_kwh


@dataclass
class Episode:
    building_load: np.ndarray
    sessions: tuple = ()
    tariff: Tariff = field(default_factory=Tariff)
    estimated_peak_kw: float = 0.0
    day_of_week: tuple = (0,)
    history_peaks: tuple = ()

    def __post_init__(self):
        self.building_load = np.asarray(self.building_load, dtype=float)
        self.sessions = tuple(self.sessions)
        self.day_of_week = tuple(int(d) for d in self.day_of_week)
        self.history_peaks = tuple(float(p) for p in self.history_peaks)
        if self.building_load.ndim != 1:
            raise InvalidInputError("building_load must be one-dimensional")
        if not np.all(np.isfinite(self.building_load)):
            raise InvalidInputError("building_load contains non-finite values")
        if np.any(self.building_load < 0):
            raise InvalidInputError("building_load must be non-negative")
        n_days = max(1, math.ceil(self.n_slots / self.tariff.slots_per_day))
        if len(self.day_of_week) < n_days:
            raise InvalidInputError(f"day_of_week needs {n_days} entries")
        if any(not 0 <= d <= 6 for d in self.day_of_week):
            raise InvalidInputError("day_of_week entries must lie in 0..6")
        ids = [s.id for s in self.sessions]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate session ids")
        for s in self.sessions:
            if s.departure_slot > self.n_slots:
                raise InvalidInputError(f"session {s.id} departs after the episode ends")

    @property
    def n_slots(self) -> int:
        return int(self.building_load.shape[0])

    def dow(self, slot: int) -> int:
        return self.day_of_week[min(slot // self.tariff.slots_per_day, len(self.day_of_week) - 1)]

    def is_weekend(self, slot: int) -> bool:
        return self.dow(slot) >= 5

    def demand_mask(self) -> np.ndarray:
        """Slots whose net power counts toward the billed peak."""
        if self.tariff.demand_peak_hours_only:
            return self.tariff.peak_mask(self.n_slots)
        return np.ones(self.n_slots, dtype=bool)


@dataclass(frozen=True)
class BillBreakdown:
    energy_cost_usd: float
    demand_charge_usd: float
    peak_power_kw: float
    missing_soc_kwh: float

    @property
    def total_usd(self) -> float:
        return self.energy_cost_usd + self.demand_charge_usd

    def weighted(self, weights: Sequence[float]) -> float:
        """Weighted objective with ``weights = (lambda_soc, lambda_energy, lambda_demand)``."""
        lam_s, lam_e, lam_d = weights
        return (lam_e * self.energy_cost_usd + lam_d * self.demand_charge_usd
                + lam_s * self.missing_soc_kwh)

    def as_dict(self) -> dict:
        return {
            "energy_cost_usd": self.energy_cost_usd,
            "demand_charge_usd": self.demand_charge_usd,
            "peak_power_kw": self.peak_power_kw,
            "missing_soc_kwh": self.missing_soc_kwh,
            "total_usd": self.total_usd,
        }


@dataclass(frozen=True)
class Violation:
    constraint: str  # "charger_bounds", "soc_min", "soc_max" or "building_power"
    slot: int
    value: float
    bound: float
    charger: Optional[int] = None
    session: Optional[int] = None


def _finite(*values) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidInputError(f"non-finite input: {values}")


def soc_step(soc: float, power_kw: float, delta_h: float, capacity_kwh: float) -> float:
    """Advance a state of charge by one slot under a linear charging profile."""
    _finite(soc, power_kw, delta_h, capacity_kwh)
    if capacity_kwh <= 0 or delta_h <= 0:
        raise InvalidInputError("capacity and slot length must be positive")
    return soc + power_kw * delta_h / capacity_kwh


def energy_rate(tariff: Tariff, slot_index: int) -> float:
    return tariff.theta_e_peak if tariff.is_peak(slot_index) else tariff.theta_e_offpeak


def _as_schedule(episode: Episode, schedule) -> np.ndarray:
    sched = np.asarray(schedule, dtype=float)
    if sched.ndim == 1:
        sched = sched[:, None]
    if sched.shape[0] != episode.n_slots:
        raise InvalidInputError(
            f"schedule has {sched.shape[0]} slots, episode has {episode.n_slots}"
        )
    return sched


def missing_soc_kwh(sessions: Sequence[EvSession], final_socs: Mapping[int, float]) -> float:
    """Energy short of each session's requirement at departure, summed.  Sessions
    absent from ``final_socs`` never charged and keep their initial SoC."""
    total = 0.0
    for s in sessions:
        final = final_socs.get(s.id, s.soc_init)
        total += max(0.0, s.soc_req - final) * s.capacity_kwh
    return total


def compute_bill(episode: Episode, schedule, final_socs: Mapping[int, float]) -> BillBreakdown:
    """Audit a per-slot charger power schedule against the episode tariff.

    Raises FeasibilityError if any slot's net draw (building + chargers) is
    negative, i.e. the EVs would export to the grid.
    """
    sched = _as_schedule(episode, schedule)
    tariff = episode.tariff
    net = sched.sum(axis=1) + episode.building_load
    bad = np.flatnonzero(net < -FEAS_TOL)
    if bad.size:
        raise FeasibilityError(
            f"net building draw negative in {bad.size} slot(s): {bad[:10].tolist()}", bad.tolist()
        )
    energy = float(np.sum(net * tariff.rates(episode.n_slots)) * tariff.delta)
    eligible = episode.demand_mask()
    peak = float(net[eligible].max()) if eligible.any() else 0.0
    peak = max(peak, 0.0)
    demand = tariff.demand_price * peak
    return BillBreakdown(
        energy_cost_usd=energy,
        demand_charge_usd=demand,
        peak_power_kw=peak,
        missing_soc_kwh=missing_soc_kwh(episode.sessions, final_socs),
    )


def building_only_bill(episode: Episode) -> BillBreakdown:
    zeros = np.zeros((episode.n_slots, 1))
    return compute_bill(episode, zeros, {})


def check_feasibility(chargers: Sequence[ChargerSpec], episode: Episode, schedule,
                      occupancy=None, tol: float = FEAS_TOL) -> list:
    """List every violated constraint of a schedule.

    Charger bounds and the no-export rule are always checked.  SoC bands need to
    know which EV sits on which charger, so they are checked only when
    ``occupancy`` (``n_slots x N`` session indices, -1 for idle) is given.
    """
    sched = _as_schedule(episode, schedule)
    if sched.shape[1] != len(chargers):
        raise InvalidInputError("schedule width does not match charger count")
    out = []
    lo = np.array([c.p_min for c in chargers])
    hi = np.array([c.p_max for c in chargers])
    for j, i in zip(*np.nonzero((sched < lo - tol) | (sched > hi + tol))):
        bound = lo[i] if sched[j, i] < lo[i] else hi[i]
        out.append(Violation("charger_bounds", int(j), float(sched[j, i]), float(bound),
                             charger=chargers[i].id))
    net = sched.sum(axis=1) + episode.building_load
    for j in np.flatnonzero(net < -tol):
        out.append(Violation("building_power", int(j), float(net[j]), 0.0))
    if occupancy is not None:
        occ = np.asarray(occupancy)
        soc = {}
        delta = episode.tariff.delta
        for j in range(episode.n_slots):
            for i in range(len(chargers)):
                k = occ[j, i]
                if k < 0:
                    continue
                s = episode.sessions[k]
                cur = soc.get(k, s.soc_init)
                nxt = cur + sched[j, i] * delta / s.capacity_kwh
                soc[k] = nxt
                if nxt < s.soc_min - tol:
                    out.append(Violation("soc_min", j, nxt, s.soc_min, chargers[i].id, s.id))
                if nxt > s.soc_max + tol:
                    out.append(Violation("soc_max", j, nxt, s.soc_max, chargers[i].id, s.id))
    return out


def default_chargers(n_bidirectional: int = 5, n_unidirectional: int = 10,
                     p_max: float = 20.0, p_min: float = -20.0) -> tuple:
    """Charger fleet with bidirectional units first (ids ascending)."""
    fleet = [ChargerSpec(i, p_min, p_max) for i in range(n_bidirectional)]
    fleet += [ChargerSpec(n_bidirectional + i, 0.0, p_max) for i in range(n_unidirectional)]
    return tuple(fleet)
