"""Discrete-event building simulator.

The simulator owns charger assignment (FIFO over arrivals, configurable
charger priority and tie-breaking), the five-step state transition, the
37-element feature abstraction and full-episode rollouts under any policy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    BillBreakdown,
    ChargerSpec,
    ConfigError,
    Episode,
    InvalidInputError,
    compute_bill,
)
from .mask import post_process_soc
from .rl.reward import reward as slot_reward

MAX_CHARGERS = 15
N_FEATURES = 7 + 2 * MAX_CHARGERS


class Priority(str, Enum):
    BIDIRECTIONAL_FIRST = "bidirectional"
    UNIDIRECTIONAL_FIRST = "unidirectional"
    RANDOM = "random"


class TieBreak(str, Enum):
    DEPARTURE = "departure"
    CAPACITY = "capacity"
    RANDOM = "random"


@dataclass(frozen=True)
class AssignmentPolicy:
    priority: Priority = Priority.BIDIRECTIONAL_FIRST
    tie_break: TieBreak = TieBreak.DEPARTURE
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "priority", Priority(self.priority))
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))


@dataclass
class SimState:
    """Full simulator state at the start of slot ``slot``.

    Per-charger arrays are indexed by charger position; idle chargers hold
    ``occupancy == -1`` and zeros elsewhere.  ``occupancy`` stores indices into
    ``episode.sessions``.
    """

    slot: int
    chargers: tuple
    delta: float
    occupancy: np.ndarray
    soc: np.ndarray
    soc_req: np.ndarray
    soc_min: np.ndarray
    soc_max: np.ndarray
    capacity: np.ndarray
    departure: np.ndarray
    energy_need_kwh: np.ndarray
    remaining_slots: np.ndarray
    estimated_peak_kw: float
    building_kw: float
    arrivals_so_far: int = 0
    day_of_week: int = 0
    history_peak_mean: float = 0.0
    history_peak_var: float = 0.0
    is_peak: bool = True
    is_weekend: bool = False
    pending: tuple = ()
    waiting: tuple = ()
    final_socs: dict = field(default_factory=dict)
    unserved_slots: int = 0
    rng: Optional[np.random.Generator] = None

    @property
    def n_chargers(self) -> int:
        return len(self.chargers)

    @property
    def occupied(self) -> np.ndarray:
        return self.occupancy >= 0

    @property
    def c_max(self) -> np.ndarray:
        return np.array([c.p_max for c in self.chargers])

    @property
    def c_min(self) -> np.ndarray:
        return np.array([c.p_min for c in self.chargers])

    @property
    def bidirectional(self) -> np.ndarray:
        return np.array([c.bidirectional for c in self.chargers])

    def copy(self) -> "SimState":
        return replace(
            self,
            occupancy=self.occupancy.copy(),
            soc=self.soc.copy(),
            soc_req=self.soc_req.copy(),
            soc_min=self.soc_min.copy(),
            soc_max=self.soc_max.copy(),
            capacity=self.capacity.copy(),
            departure=self.departure.copy(),
            energy_need_kwh=self.energy_need_kwh.copy(),
            remaining_slots=self.remaining_slots.copy(),
            final_socs=dict(self.final_socs),
            rng=copy.deepcopy(self.rng),
        )

    def connected_socs(self) -> dict:
        """SoC of every session currently plugged in, by session index."""
        return {int(k): float(self.soc[i]) for i, k in enumerate(self.occupancy) if k >= 0}


@dataclass(frozen=True)
class NormConstants:
    max_building_kw: float
    max_capacity_kwh: float
    slots_per_day: int
    max_window_slots: int
    max_arrivals: int = 2 * MAX_CHARGERS

    def __post_init__(self):
        values = (self.max_building_kw, self.max_capacity_kwh, self.slots_per_day,
                  self.max_window_slots, self.max_arrivals)
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise ConfigError(f"normalisation constants must be finite and positive: {values}")

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode]) -> "NormConstants":
        max_b = max(float(np.max(ep.building_load, initial=0.0)) for ep in episodes)
        max_b = max([max_b] + [ep.estimated_peak_kw for ep in episodes] + [1.0])
        caps = [s.capacity_kwh for ep in episodes for s in ep.sessions] or [1.0]
        spd = episodes[0].tariff.slots_per_day
        return cls(max_building_kw=max_b, max_capacity_kwh=max(caps), slots_per_day=spd,
                   max_window_slots=spd)

    def as_dict(self) -> dict:
        return {
            "max_building_kw": self.max_building_kw,
            "max_capacity_kwh": self.max_capacity_kwh,
            "slots_per_day": self.slots_per_day,
            "max_window_slots": self.max_window_slots,
            "max_arrivals": self.max_arrivals,
        }


def _daily_history(episode: Episode) -> np.ndarray:
    """(mean, variance) of the seven preceding daily building peaks, per day."""
    spd = episode.tariff.slots_per_day
    n_days = max(1, -(-episode.n_slots // spd))
    peaks = list(episode.history_peaks)
    out = np.zeros((n_days, 2))
    for d in range(n_days):
        window = peaks[-7:]
        if window:
            out[d] = (np.mean(window), np.var(window))
        day = episode.building_load[d * spd:(d + 1) * spd]
        peaks.append(float(day.max()) if day.size else 0.0)
    return out


def assign_arrivals(state: SimState, episode: Episode, policy: AssignmentPolicy) -> SimState:
    """Bind waiting sessions to idle chargers, first come first served.

    Simultaneous arrivals are ordered by ``policy.tie_break``; the charger class
    tried first is given by ``policy.priority``.  Sessions that find no idle
    charger stay in ``state.waiting``.  Mutates and returns ``state``.
    """
    if not state.waiting:
        return state
    sessions = episode.sessions
    if policy.tie_break is TieBreak.DEPARTURE:
        secondary = {k: -sessions[k].departure_slot for k in state.waiting}
    elif policy.tie_break is TieBreak.CAPACITY:
        secondary = {k: -sessions[k].capacity_kwh for k in state.waiting}
    else:
        draws = state.rng.random(len(state.waiting))
        secondary = dict(zip(state.waiting, draws))
    order = sorted(state.waiting, key=lambda k: (sessions[k].arrival_slot, secondary[k], k))

    bidir = state.bidirectional
    still_waiting = []
    for k in order:
        idle = np.flatnonzero(state.occupancy < 0)
        if idle.size == 0:
            still_waiting.append(k)
            continue
        if policy.priority is Priority.RANDOM:
            i = int(idle[state.rng.integers(idle.size)])
        else:
            want_bi = policy.priority is Priority.BIDIRECTIONAL_FIRST
            preferred = idle[bidir[idle] == want_bi]
            i = int(preferred[0] if preferred.size else idle[0])
        s = sessions[k]
        state.occupancy[i] = k
        state.soc[i] = s.soc_init
        state.soc_req[i] = s.soc_req
        state.soc_min[i] = s.soc_min
        state.soc_max[i] = s.soc_max
        state.capacity[i] = s.capacity_kwh
        state.departure[i] = s.departure_slot
    state.waiting = tuple(still_waiting)
    return state


def _refresh(state: SimState, episode: Episode, history: np.ndarray) -> None:
    """Recompute derived per-charger features and slot context in place."""
    occ = state.occupied
    state.energy_need_kwh = np.where(occ, (state.soc_req - state.soc) * state.capacity, 0.0)
    state.remaining_slots = np.where(occ, state.departure - state.slot, 0).astype(int)
    j = state.slot
    state.building_kw = float(episode.building_load[j]) if j < episode.n_slots else 0.0
    spd = episode.tariff.slots_per_day
    day = min(j // spd, history.shape[0] - 1)
    state.day_of_week = episode.dow(min(j, episode.n_slots - 1))
    state.history_peak_mean, state.history_peak_var = (float(v) for v in history[day])
    state.is_peak = episode.tariff.is_peak(j)
    state.is_weekend = state.day_of_week >= 5


def _release_and_arrive(state: SimState, episode: Episode, policy: AssignmentPolicy) -> None:
    t = state.slot
    sessions = episode.sessions
    for i in np.flatnonzero(state.occupancy >= 0):
        k = state.occupancy[i]
        if sessions[k].departure_slot <= t:
            state.final_socs[sessions[k].id] = float(state.soc[i])
            state.occupancy[i] = -1
            for arr in (state.soc, state.soc_req, state.soc_min, state.soc_max, state.capacity):
                arr[i] = 0.0
            state.departure[i] = 0
    # sessions that never found a charger leave at their departure slot
    state.waiting = tuple(k for k in state.waiting if sessions[k].departure_slot > t)
    arrived = [k for k in state.pending if sessions[k].arrival_slot <= t]
    if arrived:
        state.pending = tuple(k for k in state.pending if sessions[k].arrival_slot > t)
        state.arrivals_so_far += len(arrived)
        state.waiting = state.waiting + tuple(arrived)
    assign_arrivals(state, episode, policy)
    state.unserved_slots += len(state.waiting)


def initial_state(episode: Episode, chargers: Sequence[ChargerSpec],
                  policy: AssignmentPolicy = AssignmentPolicy(),
                  history: Optional[np.ndarray] = None) -> SimState:
    n = len(chargers)
    if n > MAX_CHARGERS:
        raise ConfigError(f"at most {MAX_CHARGERS} chargers are supported, got {n}")
    if history is None:
        history = _daily_history(episode)
    zeros = np.zeros(n)
    pending = tuple(sorted(range(len(episode.sessions)),
                           key=lambda k: (episode.sessions[k].arrival_slot, k)))
    state = SimState(
        slot=0,
        chargers=tuple(chargers),
        delta=episode.tariff.delta,
        occupancy=np.full(n, -1, dtype=int),
        soc=zeros.copy(), soc_req=zeros.copy(), soc_min=zeros.copy(), soc_max=zeros.copy(),
        capacity=zeros.copy(), departure=np.zeros(n, dtype=int),
        energy_need_kwh=zeros.copy(), remaining_slots=np.zeros(n, dtype=int),
        estimated_peak_kw=float(episode.estimated_peak_kw),
        building_kw=0.0,
        pending=pending,
        rng=np.random.default_rng(policy.rng_seed),
    )
    _release_and_arrive(state, episode, policy)
    _refresh(state, episode, history)
    return state


def transition(state: SimState, action, episode: Episode,
               policy: AssignmentPolicy = AssignmentPolicy(),
               history: Optional[np.ndarray] = None) -> SimState:
    """Apply one slot of charger powers and return the state of the next slot.

    The action must already respect charger bounds.  Steps: raise the peak
    estimate, advance SoCs, release departures then assign arrivals, recompute
    energy needs and remaining times.
    """
    a = np.asarray(action, dtype=float)
    if a.shape != (state.n_chargers,):
        raise InvalidInputError(f"action must have shape ({state.n_chargers},), got {a.shape}")
    if state.slot >= episode.n_slots:
        raise IndexError("episode already finished")
    if history is None:
        history = _daily_history(episode)
    nxt = state.copy()
    nxt.estimated_peak_kw = max(state.estimated_peak_kw, state.building_kw + float(a.sum()))
    occ = nxt.occupied
    nxt.soc[occ] = nxt.soc[occ] + a[occ] * state.delta / nxt.capacity[occ]
    nxt.slot = state.slot + 1
    _release_and_arrive(nxt, episode, policy)
    _refresh(nxt, episode, history)
    return nxt


def featurize(state: SimState, norm: NormConstants) -> np.ndarray:
    """37-element state abstraction with every entry in [0, 1].

    Energy needs are mapped affinely from [-cap, cap] onto [0, 1] for occupied
    chargers (0.5 means the requirement is met) and idle chargers read 0.
    """
    spd = norm.slots_per_day
    scale = norm.max_building_kw
    head = np.array([
        (state.slot % spd) / spd,
        state.building_kw / scale,
        (state.estimated_peak_kw - state.building_kw) / scale,
        state.history_peak_mean / scale,
        state.history_peak_var / scale ** 2,
        state.day_of_week / 6.0,
        state.arrivals_so_far / norm.max_arrivals,
    ])
    need = np.zeros(MAX_CHARGERS)
    remaining = np.zeros(MAX_CHARGERS)
    n = state.n_chargers
    occ = state.occupied
    need[:n] = np.where(occ, 0.5 + 0.5 * state.energy_need_kwh / norm.max_capacity_kwh, 0.0)
    remaining[:n] = state.remaining_slots / norm.max_window_slots
    return np.clip(np.concatenate([head, need, remaining]), 0.0, 1.0)


class Simulator:
    """Binds an episode, a charger fleet and an assignment policy."""

    def __init__(self, episode: Episode, chargers: Sequence[ChargerSpec],
                 assignment: AssignmentPolicy = AssignmentPolicy()):
        self.episode = episode
        self.chargers = tuple(chargers)
        self.assignment = assignment
        self._history = _daily_history(episode)

    def reset(self) -> SimState:
        return initial_state(self.episode, self.chargers, self.assignment, self._history)

    def step(self, state: SimState, action) -> SimState:
        return transition(state, action, self.episode, self.assignment, self._history)

    def done(self, state: SimState) -> bool:
        return state.slot >= self.episode.n_slots

    def occupancy_plan(self, state: Optional[SimState] = None) -> np.ndarray:
        """Charger occupancy from ``state.slot`` to the end of the episode.

        Assignment depends only on arrival and departure times, never on charger
        powers, so the plan is obtained by stepping a copy with zero actions.
        """
        cur = self.reset() if state is None else state.copy()
        rows = []
        zero = np.zeros(len(self.chargers))
        while not self.done(cur):
            rows.append(cur.occupancy.copy())
            cur = self.step(cur, zero)
        return np.array(rows, dtype=int).reshape(-1, len(self.chargers))


@dataclass
class Transition:
    state: SimState
    action: np.ndarray
    reward: float
    next_state: SimState


@dataclass
class RolloutResult:
    schedule: np.ndarray
    bill: BillBreakdown
    final_socs: dict
    occupancy: np.ndarray
    trajectory: list
    unserved_slots: int = 0

    def weighted(self, weights) -> float:
        return self.bill.weighted(weights)


Policy = Callable[[SimState], np.ndarray]


def select_action(policy: Policy, state: SimState) -> np.ndarray:
    """Policy action for ``state`` after routing and SoC post-processing.

    A policy may expose ``offpeak_override(state)``; it is used instead of the
    policy itself in off-peak hours and on weekends.
    """
    override = getattr(policy, "offpeak_override", None)
    if override is not None and (not state.is_peak or state.is_weekend):
        raw = override(state)
    else:
        raw = policy(state)
    return post_process_soc(state, raw)


def rollout(episode: Episode, chargers: Sequence[ChargerSpec], policy: Policy,
            assignment: AssignmentPolicy = AssignmentPolicy(),
            lambdas=(1.0, 1.0, 3.0), record: bool = True) -> RolloutResult:
    """Run ``policy`` over every slot of ``episode`` and audit the bill."""
    sim = Simulator(episode, chargers, assignment)
    state = sim.reset()
    n = len(sim.chargers)
    schedule = np.zeros((episode.n_slots, n))
    occupancy = np.full((episode.n_slots, n), -1, dtype=int)
    trajectory = []
    while not sim.done(state):
        j = state.slot
        action = select_action(policy, state)
        schedule[j] = action
        occupancy[j] = state.occupancy
        nxt = sim.step(state, action)
        if record:
            r = slot_reward(state, action, episode.tariff, lambdas)
            trajectory.append(Transition(state, action, r, nxt))
        state = nxt
    bill = compute_bill(episode, schedule, state.final_socs)
    return RolloutResult(schedule, bill, dict(state.final_socs), occupancy, trajectory,
                         state.unserved_slots)
