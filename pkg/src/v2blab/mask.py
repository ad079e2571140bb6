"""Piecewise-differentiable action masking and SoC post-processing.

``mask_forward`` applies the six repair steps in order and records the branch
taken at every min/max/relu so that ``mask_backward`` can return the exact
vector-Jacobian product.  All functions accept a single action of shape
``(N,)`` or a batch of shape ``(B, N)``.

Steps:
  1. scale by tau / (tau + eps): idle chargers (tau = 0) output zero;
  2. unidirectional chargers never charge past the requirement;
  3. force charging when the requirement would otherwise be missed at departure;
  4. bidirectional chargers force-discharge surplus energy before departure;
  5. raise charging into the headroom between the peak estimate and building load;
  6. shrink discharging so the building never exports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPSILON = 1e-5


@dataclass
class MaskInputs:
    energy_need_kwh: np.ndarray
    remaining_slots: np.ndarray
    c_max: np.ndarray
    c_min: np.ndarray
    bidirectional: np.ndarray
    building_kw: np.ndarray
    estimated_peak_kw: np.ndarray
    delta: float
    epsilon: float = EPSILON

    def __post_init__(self):
        self.energy_need_kwh = np.asarray(self.energy_need_kwh, dtype=float)
        self.remaining_slots = np.asarray(self.remaining_slots, dtype=float)
        self.c_max = np.asarray(self.c_max, dtype=float)
        self.c_min = np.asarray(self.c_min, dtype=float)
        self.bidirectional = np.asarray(self.bidirectional, dtype=bool)
        self.building_kw = np.asarray(self.building_kw, dtype=float)
        self.estimated_peak_kw = np.asarray(self.estimated_peak_kw, dtype=float)
        if self.energy_need_kwh.shape != self.remaining_slots.shape:
            raise ValueError("energy need and remaining time must have the same shape")
        n = self.energy_need_kwh.shape[-1]
        for name in ("c_max", "c_min", "bidirectional"):
            if getattr(self, name).shape[-1] != n:
                raise ValueError(f"{name} has the wrong number of chargers")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def from_state(cls, state) -> "MaskInputs":
        return cls(
            energy_need_kwh=state.energy_need_kwh,
            remaining_slots=state.remaining_slots,
            c_max=state.c_max,
            c_min=state.c_min,
            bidirectional=state.bidirectional,
            building_kw=state.building_kw,
            estimated_peak_kw=state.estimated_peak_kw,
            delta=state.delta,
        )


@dataclass
class _Tape:
    scale1: np.ndarray
    clamp2: np.ndarray
    force3: np.ndarray
    force4: np.ndarray
    room5: np.ndarray
    gap_active: np.ndarray
    gap_branch: np.ndarray
    can_increase: np.ndarray
    denom5: np.ndarray
    improve5: np.ndarray
    excess6: np.ndarray
    negative6: np.ndarray
    neg: np.ndarray
    denom6: np.ndarray
    improve6: np.ndarray
    squeeze: bool

    def signature(self) -> np.ndarray:
        """Boolean branch pattern; two points share a linear piece iff equal."""
        parts = [self.clamp2, self.force3, self.force4, self.room5, self.negative6,
                 np.broadcast_to(self.gap_active, self.clamp2.shape),
                 np.broadcast_to(self.gap_branch, self.clamp2.shape),
                 np.broadcast_to(self.excess6, self.clamp2.shape)]
        return np.concatenate([p.reshape(p.shape[0], -1) for p in parts], axis=-1)


def _col(x: np.ndarray, batch: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(x, dtype=float).reshape(-1, 1), (batch, 1))


def mask_forward(inputs: MaskInputs, raw_action):
    """Masked action and the tape needed by ``mask_backward``."""
    a0 = np.asarray(raw_action, dtype=float)
    squeeze = a0.ndim == 1
    a0 = np.atleast_2d(a0)
    if a0.shape[-1] != inputs.c_max.shape[-1]:
        raise ValueError(f"action has {a0.shape[-1]} entries, expected {inputs.c_max.shape[-1]}")
    b = a0.shape[0]
    eps = inputs.epsilon
    delta = inputs.delta
    need = np.broadcast_to(inputs.energy_need_kwh, a0.shape)
    tau = np.broadcast_to(inputs.remaining_slots, a0.shape)
    cmax = np.broadcast_to(inputs.c_max, a0.shape)
    cmin = np.broadcast_to(inputs.c_min, a0.shape)
    bi = np.broadcast_to(inputs.bidirectional, a0.shape)
    building = _col(inputs.building_kw, b)
    peak = _col(inputs.estimated_peak_kw, b)
    occ = tau > 0

    scale1 = tau / (tau + eps)
    a1 = scale1 * a0

    need_rate = need / delta
    clamp2 = ~bi & (a1 > need_rate)
    a2 = np.where(clamp2, need_rate, a1)

    # steps 3 and 4 are restricted to occupied chargers: with tau = 0 the
    # formulas would force idle chargers to full charge / discharge
    kw_bar = np.minimum((need - (tau - 1) * cmax * delta) / delta, cmax)
    force3 = occ & (kw_bar > a2)
    a3 = np.where(force3, kw_bar, a2)

    kw_star = np.maximum((need - (tau - 1) * cmin * delta) / delta, cmin)
    force4 = occ & bi & (a3 > kw_star)
    a4 = np.where(force4, kw_star, a3)

    gap = peak - building
    room = np.minimum(need_rate, cmax) - a4
    room5 = room > 0
    can_increase = np.where(room5, room, 0.0)
    total_room = can_increase.sum(axis=-1, keepdims=True)
    headroom = gap - a4.sum(axis=-1, keepdims=True)
    gap_active = headroom > 0
    relu_head = np.where(gap_active, headroom, 0.0)
    gap_branch = relu_head <= total_room
    improve5 = np.where(gap_branch, relu_head, total_room)
    denom5 = total_room + eps
    a5 = a4 + improve5 * can_increase / denom5

    excess = -building - a5.sum(axis=-1, keepdims=True)
    excess6 = excess > 0
    improve6 = np.where(excess6, excess, 0.0)
    negative6 = a5 < 0
    neg = np.where(negative6, a5, 0.0)
    # the regulariser follows the sign of the (non-positive) sum so the
    # denominator cannot cross zero
    denom6 = neg.sum(axis=-1, keepdims=True) - eps
    a6 = a5 + improve6 * neg / denom6

    tape = _Tape(scale1, clamp2, force3, force4, room5, gap_active, gap_branch, can_increase,
                 denom5, improve5, excess6, negative6, neg, denom6, improve6, squeeze)
    return (a6[0] if squeeze else a6), tape


def mask_backward(tape: _Tape, grad_output) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the raw action, given dL/d(masked action)."""
    g = np.atleast_2d(np.asarray(grad_output, dtype=float))

    # step 6
    gn = (g * tape.neg).sum(axis=-1, keepdims=True)
    d_neg = g * tape.improve6 / tape.denom6 - gn * tape.improve6 / tape.denom6 ** 2
    d_improve6 = gn / tape.denom6
    g5 = g + np.where(tape.negative6, d_neg, 0.0) - np.where(tape.excess6, d_improve6, 0.0)

    # step 5
    gc = (g5 * tape.can_increase).sum(axis=-1, keepdims=True)
    d_improve5 = gc / tape.denom5
    d_ci = g5 * tape.improve5 / tape.denom5 - gc * tape.improve5 / tape.denom5 ** 2
    d_ci = d_ci + np.where(tape.gap_branch, 0.0, d_improve5)
    g4 = (g5 - np.where(tape.room5, d_ci, 0.0)
          - np.where(tape.gap_branch & tape.gap_active, d_improve5, 0.0))

    # steps 4, 3, 2 replace the action by an action-independent value when active
    g3 = np.where(tape.force4, 0.0, g4)
    g2 = np.where(tape.force3, 0.0, g3)
    g1 = np.where(tape.clamp2, 0.0, g2)
    g0 = g1 * tape.scale1
    return g0[0] if tape.squeeze else g0


def mask(inputs: MaskInputs, raw_action) -> np.ndarray:
    return mask_forward(inputs, raw_action)[0]


def repair(state, action) -> np.ndarray:
    """Idle-charger zeroing plus the forced charge/discharge steps (1, 3, 4).

    Used to give every heuristic the same departure guarantee as the learned
    policy.
    """
    inputs = MaskInputs.from_state(state)
    a = np.asarray(action, dtype=float)
    tau = inputs.remaining_slots
    need, cmax, cmin, delta = inputs.energy_need_kwh, inputs.c_max, inputs.c_min, inputs.delta
    occ = tau > 0
    a = np.where(occ, a, 0.0)
    kw_bar = np.minimum((need - (tau - 1) * cmax * delta) / delta, cmax)
    a = np.where(occ, np.maximum(a, kw_bar), a)
    kw_star = np.maximum((need - (tau - 1) * cmin * delta) / delta, cmin)
    return np.where(occ & inputs.bidirectional, np.minimum(a, kw_star), a)


def post_process_soc(state, action) -> np.ndarray:
    """Make an action safe to execute.

    Clips to charger bounds, zeroes idle chargers, clips each power so the next
    SoC stays inside ``[soc_min, soc_max]``, and finally shrinks discharging
    proportionally if the building would export power.  Applied outside any
    gradient path.
    """
    a = np.asarray(action, dtype=float).copy()
    occ = state.occupied
    cmin, cmax = state.c_min, state.c_max
    a = np.clip(a, cmin, cmax)
    cap = np.where(occ, state.capacity, 1.0)
    upper = np.clip((state.soc_max - state.soc) * cap / state.delta, cmin, cmax)
    lower = np.clip((state.soc_min - state.soc) * cap / state.delta, cmin, cmax)
    a = np.where(occ, np.clip(a, lower, upper), 0.0)
    net = state.building_kw + a.sum()
    if net < 0:
        neg = np.minimum(a, 0.0)
        neg_sum = neg.sum()
        factor = (neg_sum - net) / neg_sum
        a = np.where(a < 0, a * factor, a)
    return a
