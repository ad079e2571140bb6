"""Rule-based charging policies: fast charge, trickle, and the laxity/deadline
ordered trickle and charge-first variants.

Every policy maps a ``SimState`` to a vector of charger powers in kW.  The
``POLICIES`` registry wraps each one so that the forced charge/discharge repair
(steps 1, 3 and 4 of the action mask) is applied afterwards.
"""

from __future__ import annotations

import numpy as np

from .mask import repair


def trickle_rates(state) -> np.ndarray:
    """Constant power that delivers the remaining requirement exactly by departure.

    ``need / (tau * delta)`` in kW, clipped to the charger range; negative for an
    EV above its requirement on a bidirectional charger.
    """
    occ = state.occupied
    tau = np.maximum(state.remaining_slots, 1)
    rate = state.energy_need_kwh / (tau * state.delta)
    return np.where(occ, np.clip(rate, state.c_min, state.c_max), 0.0)


def laxity(state) -> np.ndarray:
    """Slack hours: time to departure minus time to finish at full power.
    Idle chargers get +inf."""
    lax = state.remaining_slots * state.delta - state.energy_need_kwh / state.c_max
    return np.where(state.occupied, lax, np.inf)


def _order(state, key: np.ndarray, reverse: bool = False) -> list:
    idx = np.flatnonzero(state.occupied)
    sign = -1.0 if reverse else 1.0
    return sorted(idx.tolist(), key=lambda i: (sign * key[i], i))


def _power_gap(state) -> float:
    return state.estimated_peak_kw - state.building_kw


def fast_charge(state) -> np.ndarray:
    below = state.occupied & (state.soc < state.soc_max - 1e-12)
    return np.where(below, state.c_max, 0.0)


def trickle(state) -> np.ndarray:
    return trickle_rates(state)


def _gap_limited_trickle(state, order: list) -> np.ndarray:
    rates = trickle_rates(state)
    gap = _power_gap(state)
    out = np.zeros(state.n_chargers)
    for i in order:
        if gap > 0:
            out[i] = min(rates[i], gap)
            gap -= out[i]
    return out


def trickle_llf(state) -> np.ndarray:
    """Trickle rates handed out in least-laxity order until the power gap is used."""
    return _gap_limited_trickle(state, _order(state, laxity(state)))


def trickle_edf(state) -> np.ndarray:
    """As ``trickle_llf`` with earliest departure first."""
    return _gap_limited_trickle(state, _order(state, state.departure.astype(float)))


def _charge_first(state, key: np.ndarray) -> np.ndarray:
    rates = trickle_rates(state)
    occ = state.occupied
    bi = state.bidirectional
    gap = _power_gap(state)
    total = float(rates[occ].sum())
    rev = _order(state, key, reverse=True)
    cap = np.where(occ, state.capacity, 0.0)
    out = np.zeros(state.n_chargers)

    if total < gap:
        # spare headroom: trickle everyone, then pre-charge bidirectional EVs
        out[occ] = rates[occ]
        gap -= total
        for i in rev:
            if not bi[i] or gap <= 0:
                continue
            headroom = (state.soc_max[i] - state.soc[i]) * cap[i] / state.delta
            extra = min(state.c_max[i] - out[i], headroom - out[i], gap)
            if extra > 0:
                out[i] += extra
                gap -= extra
        return out

    # not enough headroom: discharge bidirectional EVs holding surplus energy
    discharged = set()
    for i in rev:
        if gap >= total:
            break
        if bi[i] and state.soc[i] > state.soc_req[i]:
            out[i] = max(state.c_min[i], (state.soc_req[i] - state.soc[i]) * cap[i] / state.delta)
            gap -= out[i]
            discharged.add(i)
    # resumed trickle charging never drives an EV away from its requirement
    for i in rev:
        if i in discharged:
            continue
        out[i] = float(np.clip(min(rates[i], max(gap, 0.0)), state.c_min[i], state.c_max[i]))
        gap -= out[i]
    return out


def charge_first_llf(state) -> np.ndarray:
    """Charge-first with reverse least-laxity ordering."""
    return _charge_first(state, laxity(state))


def charge_first_edf(state) -> np.ndarray:
    """Charge-first with latest-departure-first ordering."""
    return _charge_first(state, state.departure.astype(float))


class HeuristicPolicy:
    """A heuristic followed by the forced charge/discharge repair."""

    def __init__(self, name: str, fn, apply_repair: bool = True):
        self.name = name
        self.fn = fn
        self.apply_repair = apply_repair

    def __call__(self, state) -> np.ndarray:
        action = self.fn(state)
        return repair(state, action) if self.apply_repair else action

    def __repr__(self):
        return f"HeuristicPolicy({self.name!r})"


HEURISTICS = {
    "fc": fast_charge,
    "trickle": trickle,
    "t-llf": trickle_llf,
    "t-edf": trickle_edf,
    "cf-llf": charge_first_llf,
    "cf-edf": charge_first_edf,
}

POLICIES = {name: HeuristicPolicy(name, fn) for name, fn in HEURISTICS.items()}


def get_policy(name: str) -> HeuristicPolicy:
    try:
        return POLICIES[name]
    except KeyError:
        raise KeyError(f"unknown heuristic {name!r}; choose from {sorted(POLICIES)}") from None
