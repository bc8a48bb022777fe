"""Exact solver for two-player zero-sum matrix games.

The maximin problem ``max_x min_j x^T M e_j`` over mixed strategies is solved
through the classical linear program

    maximize 1'y   subject to   (M + c) y <= 1,  y >= 0,

where ``c`` shifts every payoff above zero.  The optimal basis yields the
column player's strategy directly and the row player's strategy as the dual
(the reduced costs of the slack variables), so one tableau produces the whole
saddle point.  The simplex uses Bland's rule, which makes the output
deterministic and cycle-free at the tiny sizes this toolkit needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

__all__ = ["MatrixGameSolution", "solve_matrix_game"]

_PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class MatrixGameSolution:
    """Mixed saddle point of a matrix game (row player maximizes)."""

    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float


def solve_matrix_game(matrix) -> MatrixGameSolution:
    """Solve ``max_x min_y x^T M y`` exactly (duality gap <= 1e-8).

    Raises :class:`NumericalFailure` on non-finite input or if the simplex
    fails to terminate (which Bland's rule rules out short of severe
    floating-point trouble).
    """
    m_mat = np.asarray(matrix, dtype=float)
    if m_mat.ndim != 2 or m_mat.size == 0:
        raise NumericalFailure(f"matrix game needs a 2-d payoff matrix, got shape {m_mat.shape}")
    if not np.all(np.isfinite(m_mat)):
        raise NumericalFailure("matrix game payoffs must be finite")

    m, n = m_mat.shape
    shift = 1.0 - float(m_mat.min())
    shifted = m_mat + shift

    # Tableau rows: [shifted | I_m | rhs=1]; objective row carries reduced costs.
    tab = np.zeros((m + 1, n + m + 1))
    tab[0, :n] = 1.0
    tab[1:, :n] = shifted
    tab[1:, n:n + m] = np.eye(m)
    tab[1:, -1] = 1.0
    basis = np.arange(n, n + m)

    max_iter = 2000 + 16 * (m + n)
    for _ in range(max_iter):
        reduced = tab[0, :n + m]
        candidates = np.nonzero(reduced > _PIVOT_TOL)[0]
        if candidates.size == 0:
            break
        enter = int(candidates[0])  # Bland: lowest index enters
        col = tab[1:, enter]
        rows = np.nonzero(col > _PIVOT_TOL)[0]
        if rows.size == 0:
            raise NumericalFailure("matrix-game LP unbounded (should be impossible)")
        ratios = tab[1 + rows, -1] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best + 1e-12]
        leave = int(tied[np.argmin(basis[tied])])  # Bland: lowest basic index leaves
        pivot_row = 1 + leave
        tab[pivot_row] /= tab[pivot_row, enter]
        factor = tab[:, enter].copy()
        factor[pivot_row] = 0.0
        tab -= np.outer(factor, tab[pivot_row])
        basis[leave] = enter
    else:
        raise NumericalFailure("matrix-game simplex did not converge")

    y_scaled = np.zeros(n)
    for i, b in enumerate(basis):
        if b < n:
            y_scaled[b] = tab[1 + i, -1]
    u_scaled = -tab[0, n:n + m]

    col_strategy = _normalize(y_scaled, n)
    row_strategy = _normalize(u_scaled, m)

    row_guarantee = float((row_strategy @ m_mat).min())
    col_guarantee = float((m_mat @ col_strategy).max())
    gap = col_guarantee - row_guarantee
    scale = max(1.0, float(np.abs(m_mat).max()))
    if gap > 1e-8 * scale:
        raise NumericalFailure(f"matrix-game duality gap {gap:g} exceeds tolerance")
    value = 0.5 * (row_guarantee + col_guarantee)
    return MatrixGameSolution(row_strategy=row_strategy, col_strategy=col_strategy, value=value)


def _normalize(weights: np.ndarray, size: int) -> np.ndarray:
    w = np.clip(weights, 0.0, None)
    total = w.sum()
    if total <= 0.0:
        return np.full(size, 1.0 / size)
    return w / total
