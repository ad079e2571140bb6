"""Bounded-variable primal simplex.

Solves::

    minimise    c @ x
    subject to  row_lo <= A @ x <= row_hi
                lo <= x <= hi

Each row gets a logical variable ``r_i = (A x)_i`` carrying the row bounds, so
the working system is ``A x - r = 0`` with every variable boxed.  The basis
inverse is kept dense and updated by elementary row operations, with a full
refactorisation every ``REFACTOR_EVERY`` pivots.  Nonbasic variables may rest at
either bound or, when a starting point is supplied, anywhere inside their box.
Pricing is Dantzig's rule; after a run of degenerate pivots it switches to
Bland's rule until the objective moves again.  Rows violated by the starting
point receive artificial variables and a phase-one objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

TOL = 1e-7
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
DEGENERATE_SWITCH = 50


@dataclass
class LpResult:
    status: str
    x: np.ndarray
    objective: float
    iterations: int
    row_activity: np.ndarray


class _Simplex:
    def __init__(self, c, A, row_lo, row_hi, lo, hi, x0, tol):
        self.tol = tol
        self.A = sp.csc_matrix(A, dtype=float)
        m, n = self.A.shape
        self.m, self.n = m, n
        self.c_struct = np.asarray(c, dtype=float)

        x = np.clip(x0, lo, hi)
        activity = self.A @ x
        row_lo = np.asarray(row_lo, dtype=float)
        row_hi = np.asarray(row_hi, dtype=float)
        below = activity < row_lo - tol
        above = activity > row_hi + tol
        bad = np.flatnonzero(below | above)
        target = np.where(below, row_lo, np.where(above, row_hi, activity))

        self.k = bad.size
        self.art_rows = bad
        # A x - r + sign * a = 0  with  a = |target - activity|
        self.art_sign = np.sign(target[bad] - activity[bad])
        total = n + m + self.k
        self.lo = np.concatenate([lo, row_lo, np.zeros(self.k)])
        self.hi = np.concatenate([hi, row_hi, np.full(self.k, np.inf)])
        self.x = np.concatenate([x, target, np.abs(target[bad] - activity[bad])])

        self.basis = np.arange(n, n + m)
        self.basis[bad] = n + m + np.arange(self.k)
        self.is_basic = np.zeros(total, dtype=bool)
        self.is_basic[self.basis] = True
        self.Binv = self._basis_matrix_inverse()
        self.iterations = 0

    def _column(self, j: int) -> tuple:
        """(row indices, values) of working column ``j``."""
        if j < self.n:
            start, end = self.A.indptr[j], self.A.indptr[j + 1]
            return self.A.indices[start:end], self.A.data[start:end]
        if j < self.n + self.m:
            return np.array([j - self.n]), np.array([-1.0])
        a = j - self.n - self.m
        return np.array([self.art_rows[a]]), np.array([self.art_sign[a]])

    def _basis_matrix_inverse(self) -> np.ndarray:
        B = np.zeros((self.m, self.m))
        for pos, j in enumerate(self.basis):
            rows, vals = self._column(j)
            B[rows, pos] = vals
        return np.linalg.inv(B)

    def _refactor(self) -> None:
        self.Binv = self._basis_matrix_inverse()
        nonbasic = ~self.is_basic
        nonbasic[self.basis] = False
        rhs = -self._apply_columns(np.flatnonzero(nonbasic))
        self.x[self.basis] = self.Binv @ rhs

    def _apply_columns(self, cols: np.ndarray) -> np.ndarray:
        """Sum of working columns ``cols`` scaled by their current values."""
        out = np.zeros(self.m)
        xs = cols[cols < self.n]
        if xs.size:
            out += self.A[:, xs] @ self.x[xs]
        logical = cols[(cols >= self.n) & (cols < self.n + self.m)]
        out[logical - self.n] -= self.x[logical]
        art = cols[cols >= self.n + self.m] - self.n - self.m
        np.add.at(out, self.art_rows[art], self.art_sign[art] * self.x[self.n + self.m + art])
        return out

    def _reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        y = cost[self.basis] @ self.Binv
        d = np.empty_like(cost)
        d[:self.n] = cost[:self.n] - self.A.T @ y
        d[self.n:self.n + self.m] = cost[self.n:self.n + self.m] + y
        d[self.n + self.m:] = cost[self.n + self.m:] - self.art_sign * y[self.art_rows]
        d[self.basis] = 0.0
        return d

    def run(self, cost: np.ndarray, max_iter: int) -> str:
        tol = self.tol
        degenerate_run = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            if since_refactor >= REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0
            d = self._reduced_costs(cost)
            can_up = (~self.is_basic) & (self.x < self.hi - tol) & (d < -tol)
            can_down = (~self.is_basic) & (self.x > self.lo + tol) & (d > tol)
            candidates = np.flatnonzero(can_up | can_down)
            if candidates.size == 0:
                return OPTIMAL
            if degenerate_run >= DEGENERATE_SWITCH:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = 1.0 if d[j] < 0 else -1.0

            rows, vals = self._column(j)
            alpha = self.Binv[:, rows] @ vals
            change = direction * alpha  # basic values move by -t * change
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = change > PIVOT_TOL
            inc = change < -PIVOT_TOL
            ratios[dec] = (xb[dec] - lob[dec]) / change[dec]
            ratios[inc] = (hib[inc] - xb[inc]) / -change[inc]
            ratios = np.maximum(ratios, 0.0)
            own = (self.hi[j] - self.x[j]) if direction > 0 else (self.x[j] - self.lo[j])
            t_basic = ratios.min() if self.m else np.inf
            if not np.isfinite(min(t_basic, own)):
                return UNBOUNDED
            self.iterations += 1
            since_refactor += 1

            if own <= t_basic:
                t = own
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
                self.x[self.basis] = xb - t * change
                degenerate_run = degenerate_run + 1 if t <= tol else 0
                continue

            t = t_basic
            ties = np.flatnonzero(ratios <= t_basic + 1e-12)
            if degenerate_run >= DEGENERATE_SWITCH:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            self.x[j] += direction * t
            self.x[self.basis] = xb - t * change
            leaving = self.basis[r]
            self.x[leaving] = self.lo[leaving] if change[r] > 0 else self.hi[leaving]
            self.is_basic[leaving] = False
            self.is_basic[j] = True
            self.basis[r] = j
            pivot_row = self.Binv[r] / alpha[r]
            self.Binv -= np.outer(alpha, pivot_row)
            self.Binv[r] = pivot_row
            degenerate_run = degenerate_run + 1 if t <= tol else 0


def solve(c, A, row_lo, row_hi, lo, hi, x0=None, tol: float = TOL,
          max_iter: int | None = None) -> LpResult:
    """Minimise ``c @ x`` over the boxed, ranged-row polyhedron.

    ``x0`` is an optional starting point (clipped into the variable box);
    nonbasic variables start there, which avoids phase one entirely when it is
    feasible.  Infinite entries in the bound arrays are allowed.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        return LpResult(INFEASIBLE, np.full(n, np.nan), np.nan, 0, np.array([]))
    if x0 is None:
        x0 = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    A = sp.csc_matrix(A, dtype=float) if not sp.issparse(A) else A.tocsc()
    m = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("constraint matrix width does not match the cost vector")
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    lp = _Simplex(c, A, row_lo, row_hi, lo, hi, np.asarray(x0, dtype=float), tol)
    total = n + m + lp.k
    if lp.k:
        phase1 = np.zeros(total)
        phase1[n + m:] = 1.0
        status = lp.run(phase1, max_iter)
        if status == ITERATION_LIMIT:
            return LpResult(status, lp.x[:n].copy(), np.nan, lp.iterations, A @ lp.x[:n])
        lp._refactor()
        infeas = float(lp.x[n + m:].sum())
        if infeas > tol * max(1.0, float(np.abs(lp.x[n:n + m]).max(initial=0.0))):
            return LpResult(INFEASIBLE, lp.x[:n].copy(), np.nan, lp.iterations, A @ lp.x[:n])
        lp.hi[n + m:] = 0.0
        lp.x[n + m:] = np.minimum(lp.x[n + m:], 0.0)
        lp._refactor()
    phase2 = np.zeros(total)
    phase2[:n] = c
    status = lp.run(phase2, max_iter)
    lp._refactor()
    x = np.clip(lp.x[:n], lo, hi)
    return LpResult(status, x, float(c @ x), lp.iterations, A @ x)
