"""Exact solution of finite zero-sum matrix games by linear programming."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

GAP_TOL = 1e-9
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class NumericsFault(RuntimeError):
    """A solver failed or returned a certificate outside tolerance."""


@dataclass(frozen=True, eq=False)
class ZeroSumGame:
    """Rows minimise, columns maximise ``row^T payoff col``.

    ``lower`` is what the column strategy guarantees, ``upper`` what the row
    strategy concedes; ``gap = upper - lower`` certifies optimality.
    """

    payoff: np.ndarray
    value: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    lower: float
    upper: float

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "payoff": self.payoff.tolist(),
            "value": self.value,
            "row_strategy": self.row_strategy.tolist(),
            "col_strategy": self.col_strategy.tolist(),
            "duality_gap": self.gap,
        }


def _simplex_clean(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), 0.0, None)
    return x / x.sum()


def _max_player(payoff: np.ndarray) -> np.ndarray:
    """argmax_y min_i (payoff y)_i over the simplex."""
    m, n = payoff.shape
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([-payoff, np.ones((m, 1))])
    a_eq = np.hstack([np.ones((1, n)), np.zeros((1, 1))])
    res = linprog(cost, A_ub=a_ub, b_ub=np.zeros(m), A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * n + [(None, None)], method="highs", options=_HIGHS)
    if res.status != 0:
        raise NumericsFault(f"LP solve failed: {res.message}")
    return _simplex_clean(res.x[:n])


def solve_zero_sum(payoff) -> ZeroSumGame:
    """Value and optimal strategies of the game ``max_col min_row``.

    Both players' programs are solved separately and checked against each
    other; a duality gap above 1e-9 raises :class:`NumericsFault`.
    """
    payoff = np.asarray(payoff, dtype=float)
    if payoff.ndim != 2 or payoff.size == 0 or not np.all(np.isfinite(payoff)):
        raise ValueError("payoff must be a finite, nonempty matrix")
    col = _max_player(payoff)
    row = _max_player(-payoff.T)
    lower = float(np.min(payoff @ col))
    upper = float(np.max(row @ payoff))
    if upper - lower > GAP_TOL:
        raise NumericsFault(f"duality gap {upper - lower:.3e} exceeds {GAP_TOL}")
    return ZeroSumGame(payoff, 0.5 * (lower + upper), row, col, lower, upper)
