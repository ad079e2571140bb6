"""Per-slot reward shaping the learned policy."""

from __future__ import annotations

import numpy as np

from ..core import Tariff, energy_rate


def reward_terms(state, action, tariff: Tariff) -> tuple:
    """Unweighted (charged energy, -energy cost, -peak breach cost) of one slot.

    ``action`` is in kW.  The charged-energy term credits only energy that moves
    an EV toward its requirement.
    """
    a = np.asarray(action, dtype=float)
    need = state.energy_need_kwh
    r1 = float(np.maximum(0.0, np.minimum(need, a * tariff.delta)).sum())
    r2 = -float(a.sum()) * tariff.delta * energy_rate(tariff, state.slot)
    breach = state.building_kw + float(a.sum()) - state.estimated_peak_kw
    r3 = -max(0.0, breach) * tariff.theta_d
    return r1, r2, r3


def reward(state, action, tariff: Tariff, lambdas=(1.0, 1.0, 3.0)) -> float:
    """``lambda_S * r1 + lambda_E * r2 + lambda_D * r3``."""
    r1, r2, r3 = reward_terms(state, action, tariff)
    lam_s, lam_e, lam_d = lambdas
    return lam_s * r1 + lam_e * r2 + lam_d * r3
