"""Run policies and the oracle on one episode batch and tabulate bills."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..core import BillBreakdown, Episode, building_only_bill, compute_bill
from ..sim import AssignmentPolicy, rollout

TABLE_COLUMNS = ("policy", "bill_mean", "bill_std", "shave_mean", "shave_std", "missing_soc")
ORACLE = "oracle"


@dataclass
class EvalTable:
    rows: list                                  # one dict per policy, sorted by name
    bills: dict = field(default_factory=dict)   # policy -> [BillBreakdown per episode]

    def row(self, policy: str) -> dict:
        return next(r for r in self.rows if r["policy"] == policy)

    def as_json(self) -> dict:
        return {
            "columns": list(TABLE_COLUMNS) + ["weighted_mean"],
            "rows": self.rows,
            "episodes": {name: [b.as_dict() for b in bills] for name, bills in self.bills.items()},
        }


def _oracle_bill(episode: Episode, chargers, weights, assignment) -> BillBreakdown:
    from ..oracle.lp import SolverError, solve_episode

    sol = solve_episode(episode, chargers, weights, assignment)
    if not sol.optimal:
        raise SolverError(sol.status)
    return compute_bill(episode, sol.schedule, sol.final_socs)


def evaluate(episodes: Sequence[Episode], chargers, policies: Mapping[str, object],
             include_oracle: bool = True, weights=(1.0, 1.0, 3.0),
             assignment: AssignmentPolicy = AssignmentPolicy(), jobs: int = 1) -> EvalTable:
    """Bill statistics of every policy (and optionally the oracle) on ``episodes``.

    Peak shaving is the building-only demand charge minus the demand charge with
    the policy's charging, per episode.
    """
    names = sorted(policies) + ([ORACLE] if include_oracle else [])

    def one(task):
        name, ep = task
        if name == ORACLE:
            return _oracle_bill(ep, chargers, weights, assignment)
        return rollout(ep, chargers, policies[name], assignment, weights, record=False).bill

    tasks = [(name, ep) for name in names for ep in episodes]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]

    base = [building_only_bill(ep).demand_charge_usd for ep in episodes]
    n = len(episodes)
    bills, rows = {}, []
    for p, name in enumerate(sorted(names)):
        chunk = results[names.index(name) * n:(names.index(name) + 1) * n]
        bills[name] = chunk
        total = np.array([b.total_usd for b in chunk])
        shave = np.array([b0 - b.demand_charge_usd for b0, b in zip(base, chunk)])
        rows.append({
            "policy": name,
            "bill_mean": float(total.mean()) if n else 0.0,
            "bill_std": float(total.std()) if n else 0.0,
            "shave_mean": float(shave.mean()) if n else 0.0,
            "shave_std": float(shave.std()) if n else 0.0,
            "missing_soc": float(np.mean([b.missing_soc_kwh for b in chunk])) if n else 0.0,
            "weighted_mean": float(np.mean([b.weighted(weights) for b in chunk])) if n else 0.0,
        })
    return EvalTable(rows, bills)
