"""Full-information linear program for one episode.

With the charger assignment fixed in advance (FIFO, as in the simulator) the
only remaining decisions are continuous charger powers, so the oracle is an LP:

    minimise  lambda_E * energy cost + lambda_D * demand price * P_max
              + lambda_S * sum_V CAP(V) * m(V)

over powers P(i, j) on occupied (charger, slot) pairs, the billed peak P_max
and per-session SoC shortfalls m(V), subject to SoC bands after every slot,
m(V) >= SOC_req - SOC(V, departure), P_max >= building + charging on demand
slots, and no export (building + charging >= 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..core import ChargerSpec, Episode, V2BError
from ..sim import AssignmentPolicy, SimState, Simulator
from . import simplex

DEFAULT_WEIGHTS = (1.0, 1.0, 3.0)  # (lambda_S, lambda_E, lambda_D)


class SolverError(V2BError):
    """Raised when the oracle LP does not reach optimality."""

    def __init__(self, status: str):
        super().__init__(f"oracle LP finished with status {status!r}")
        self.status = status


@dataclass
class LpProblem:
    c: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    x0: np.ndarray
    constant: float
    start_slot: int
    n_slots: int
    n_chargers: int
    power_vars: list            # (slot, charger) of columns 0..len-1
    peak_col: int
    missing_cols: dict          # session index -> column
    row_kinds: list
    initial_socs: dict          # session index -> SoC at start_slot
    episode: Episode = field(repr=False)
    weights: tuple = DEFAULT_WEIGHTS

    @property
    def n_vars(self) -> int:
        return self.c.size

    def counts(self) -> dict:
        out = {"power": len(self.power_vars), "peak": 1, "missing": len(self.missing_cols)}
        for kind in self.row_kinds:
            out[f"rows_{kind}"] = out.get(f"rows_{kind}", 0) + 1
        return out

    def var_name(self, col: int) -> str:
        if col < len(self.power_vars):
            j, i = self.power_vars[col]
            return f"P_{i}_{j}"
        if col == self.peak_col:
            return "Pmax"
        for k, cc in self.missing_cols.items():
            if cc == col:
                return f"m_{self.episode.sessions[k].id}"
        raise KeyError(col)

    def dump(self) -> str:
        """Plain-text listing of variables, bounds and rows for external solvers."""
        lines = ["# v2b-lp 1", f"CONSTANT {float(self.constant)!r}", f"VARIABLES {self.n_vars}"]
        for col in range(self.n_vars):
            lines.append(f"{self.var_name(col)} {float(self.lo[col])!r} {float(self.hi[col])!r} "
                         f"{float(self.c[col])!r}")
        lines.append(f"ROWS {len(self.row_kinds)}")
        A = self.A.tocsr()
        for r, kind in enumerate(self.row_kinds):
            start, end = A.indptr[r], A.indptr[r + 1]
            terms = " ".join(f"{float(A.data[p])!r}*{self.var_name(A.indices[p])}"
                             for p in range(start, end))
            lines.append(f"{kind}_{r} {float(self.row_lo[r])!r} {float(self.row_hi[r])!r} : {terms}")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    status: str
    schedule: np.ndarray
    objective_value: float
    peak_kw: float
    missing_soc: dict           # session id -> kWh short at departure
    final_socs: dict            # session id -> SoC at departure
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == simplex.OPTIMAL


def build_lp(episode: Episode, chargers: Sequence[ChargerSpec], occupancy,
             weights=DEFAULT_WEIGHTS, start_slot: int = 0,
             initial_socs: Optional[Mapping[int, float]] = None,
             peak_floor: float = 0.0, peak_cap: Optional[float] = None) -> LpProblem:
    """LP over slots ``start_slot..n_slots-1`` for a fixed occupancy timeline.

    ``occupancy`` has one row per slot in that range holding session indices
    (-1 idle).  ``initial_socs`` gives the SoC at ``start_slot`` of sessions
    already plugged in; ``peak_floor`` is a lower bound on the billed peak
    (the peak already reached or promised earlier in the billing period).
    ``peak_cap`` is an optional hard limit on the billed peak.
    """
    lam_s, lam_e, lam_d = weights
    tariff = episode.tariff
    delta = tariff.delta
    occ = np.asarray(occupancy, dtype=int).reshape(-1, len(chargers))
    horizon = range(start_slot, episode.n_slots)
    if occ.shape[0] != len(horizon):
        raise ValueError(f"occupancy covers {occ.shape[0]} slots, horizon has {len(horizon)}")
    initial_socs = dict(initial_socs or {})
    load = episode.building_load
    rates = tariff.rates(episode.n_slots)
    eligible = episode.demand_mask()

    power_vars, lo, hi, cost = [], [], [], []
    by_session: dict = {}
    by_slot: dict = {}
    for row, j in enumerate(horizon):
        for i, k in enumerate(occ[row]):
            if k < 0:
                continue
            col = len(power_vars)
            power_vars.append((j, i))
            lo.append(chargers[i].p_min)
            hi.append(chargers[i].p_max)
            cost.append(lam_e * rates[j] * delta)
            by_session.setdefault(int(k), []).append(col)
            by_slot.setdefault(j, []).append(col)

    n_power = len(power_vars)
    peak_col = n_power
    demand_slots = [j for j in horizon if eligible[j]]
    # slots without chargers in use bound the peak directly; the rest get rows
    fixed_peak = max([peak_floor, 0.0] + [float(load[j]) for j in demand_slots
                                          if j not in by_slot])
    start_peak = max([fixed_peak] + [float(load[j]) for j in demand_slots])
    max_charge = sum(c.p_max for c in chargers)
    lo.append(fixed_peak)
    hi.append(start_peak + max_charge if peak_cap is None else float(peak_cap))
    cost.append(lam_d * tariff.demand_price)

    sessions = episode.sessions
    start_soc = {}
    constant = lam_e * float(np.sum(load[start_slot:] * rates[start_slot:]) * delta)
    missing_cols = {}
    for k in sorted(by_session):
        s = sessions[k]
        start_soc[k] = float(initial_socs.get(k, s.soc_init))
        missing_cols[k] = len(lo)
        lo.append(0.0)
        hi.append(max(1.0, s.soc_req))
        cost.append(lam_s * s.capacity_kwh)
    for k, s in enumerate(sessions):
        if k in by_session or s.departure_slot <= start_slot:
            continue
        soc0 = float(initial_socs.get(k, s.soc_init))
        constant += lam_s * max(0.0, s.soc_req - soc0) * s.capacity_kwh

    rows, cols, vals = [], [], []
    row_lo, row_hi, kinds = [], [], []

    def add_row(entries, low, high, kind):
        r = len(kinds)
        for col, v in entries:
            rows.append(r)
            cols.append(col)
            vals.append(v)
        row_lo.append(low)
        row_hi.append(high)
        kinds.append(kind)

    for k in sorted(by_session):
        s = sessions[k]
        gain = delta / s.capacity_kwh
        soc0 = start_soc[k]
        prefix = []
        for col in by_session[k]:
            prefix.append(col)
            add_row([(c, gain) for c in prefix], s.soc_min - soc0, s.soc_max - soc0, "soc_band")
        add_row([(missing_cols[k], 1.0)] + [(c, gain) for c in prefix],
                s.soc_req - soc0, np.inf, "missing")

    for j in horizon:
        slot_cols = by_slot.get(j, [])
        if not slot_cols:
            continue
        if eligible[j]:
            add_row([(peak_col, 1.0)] + [(c, -1.0) for c in slot_cols], float(load[j]), np.inf,
                    "peak")
        if any(lo[c] < 0 for c in slot_cols):
            add_row([(c, 1.0) for c in slot_cols], -float(load[j]), np.inf, "building_power")

    n_vars = len(lo)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(kinds), n_vars))
    x0 = np.zeros(n_vars)
    x0[peak_col] = start_peak
    for k, col in missing_cols.items():
        x0[col] = max(0.0, sessions[k].soc_req - start_soc[k])

    return LpProblem(
        c=np.array(cost), A=A, row_lo=np.array(row_lo), row_hi=np.array(row_hi),
        lo=np.array(lo, dtype=float), hi=np.array(hi, dtype=float), x0=x0, constant=constant,
        start_slot=start_slot, n_slots=episode.n_slots, n_chargers=len(chargers),
        power_vars=power_vars, peak_col=peak_col, missing_cols=missing_cols, row_kinds=kinds,
        initial_socs=start_soc, episode=episode, weights=tuple(weights),
    )


def solve_lp(problem: LpProblem) -> LpSolution:
    res = simplex.solve(problem.c, problem.A, problem.row_lo, problem.row_hi,
                        problem.lo, problem.hi, x0=problem.x0)
    schedule = np.zeros((problem.n_slots, problem.n_chargers))
    if res.status != simplex.OPTIMAL:
        return LpSolution(res.status, schedule, np.nan, np.nan, {}, {}, res.iterations)
    for col, (j, i) in enumerate(problem.power_vars):
        schedule[j, i] = res.x[col]
    sessions = problem.episode.sessions
    delta = problem.episode.tariff.delta
    final_socs, missing = {}, {}
    soc = dict(problem.initial_socs)
    session_of = _session_of_columns(problem)
    for col, k in session_of.items():
        soc[k] += res.x[col] * delta / sessions[k].capacity_kwh
    for k, value in soc.items():
        s = sessions[k]
        final_socs[s.id] = value
        missing[s.id] = max(0.0, s.soc_req - value) * s.capacity_kwh
    return LpSolution(
        status=res.status,
        schedule=schedule,
        objective_value=float(res.objective + problem.constant),
        peak_kw=float(res.x[problem.peak_col]),
        missing_soc=missing,
        final_socs=final_socs,
        iterations=res.iterations,
    )


def _session_of_columns(problem: LpProblem) -> dict:
    """Map each power column to the session index it charges (from the missing rows)."""
    A = problem.A.tocsr()
    out = {}
    inverse = {col: k for k, col in problem.missing_cols.items()}
    for r, kind in enumerate(problem.row_kinds):
        if kind != "missing":
            continue
        idx = A.indices[A.indptr[r]:A.indptr[r + 1]]
        k = next(inverse[c] for c in idx if c in inverse)
        for c in idx:
            if c < len(problem.power_vars):
                out[int(c)] = k
    return out


def solve_episode(episode: Episode, chargers: Sequence[ChargerSpec],
                  weights=DEFAULT_WEIGHTS,
                  assignment: AssignmentPolicy = AssignmentPolicy(),
                  peak_floor: float = 0.0, peak_cap: Optional[float] = None) -> LpSolution:
    """Optimal schedule for a fully known episode under FIFO charger assignment."""
    sim = Simulator(episode, chargers, assignment)
    occupancy = sim.occupancy_plan()
    return solve_lp(build_lp(episode, chargers, occupancy, weights, peak_floor=peak_floor,
                             peak_cap=peak_cap))


def guidance_action(state: SimState, sim: Simulator, weights=DEFAULT_WEIGHTS) -> np.ndarray:
    """First-slot action of the optimal plan from ``state`` to the episode end.

    The current SoCs are the initial conditions and the running peak estimate
    is a floor on the billed peak.  Raises SolverError if the LP fails.
    """
    occupancy = sim.occupancy_plan(state)
    problem = build_lp(sim.episode, sim.chargers, occupancy, weights, start_slot=state.slot,
                       initial_socs=state.connected_socs(), peak_floor=state.estimated_peak_kw)
    sol = solve_lp(problem)
    if not sol.optimal:
        raise SolverError(sol.status)
    return sol.schedule[state.slot].copy()
