"""Minimax-Q learning, used to construct near-optimal experiment policies.

Time-indexed tabular Minimax-Q: after each sampled transition the Q entry
moves toward ``r + g * val(t+1, s')`` where ``val`` is the matrix-game value
of the next Q slice.  Action selection is epsilon-greedy around the current
maximin mixed strategies.  Values read by updates are always solved fresh;
the sampling strategies may be reused until their slice has drifted, which
keeps the solver out of the inner loop without touching update semantics.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .game import GameSpec, MarkovPolicy, Player, PolicyProfile
from .matrixgame import solve_matrix_game

__all__ = ["minimax_q"]


def _default_schedule(visits: int) -> float:
    return 1.0 / (1.0 + visits / 100.0)


def minimax_q(game: GameSpec, episodes: int, learning_rate_schedule=None,
              exploration: float = 0.2, seed: int = 0,
              policy_refresh_tol: float = 0.01) -> PolicyProfile:
    """Train per-(t, s) maximin strategies from self-play; deterministic in seed."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    schedule = learning_rate_schedule or _default_schedule
    t_hor, s_num = game.horizon, game.num_states
    n1, n2 = game.actions_p1, game.actions_p2
    q = np.zeros((t_hor, s_num, n1, n2))
    visits = np.zeros((t_hor, s_num, n1, n2), dtype=np.int64)

    # caches: exact values for bootstrapping, possibly stale mixed strategies
    val = np.zeros((t_hor + 1, s_num))
    val_dirty = np.ones((t_hor, s_num), dtype=bool)
    strat1 = np.full((t_hor, s_num, n1), 1.0 / n1)
    strat2 = np.full((t_hor, s_num, n2), 1.0 / n2)
    drift = np.full((t_hor, s_num), np.inf)

    def solve(t: int, s: int) -> None:
        sol = solve_matrix_game(q[t, s])
        strat1[t, s] = sol.row_strategy
        strat2[t, s] = sol.col_strategy
        val[t, s] = sol.value
        val_dirty[t, s] = False
        drift[t, s] = 0.0

    gen = rng.stream(seed, "minimax_q")
    init_cdf = np.cumsum(game.initial_dist)

    def draw(cdf, u):
        return min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)

    for _ in range(episodes):
        s = draw(init_cdf, gen.random())
        for t in range(t_hor):
            scale = max(1.0, float(np.abs(q[t, s]).max()))
            if drift[t, s] > policy_refresh_tol * scale:
                solve(t, s)
            if gen.random() < exploration:
                a1 = int(gen.integers(n1))
            else:
                a1 = draw(np.cumsum(strat1[t, s]), gen.random())
            if gen.random() < exploration:
                a2 = int(gen.integers(n2))
            else:
                a2 = draw(np.cumsum(strat2[t, s]), gen.random())

            out = draw(np.cumsum(game.succ_prob[s, a1, a2]), gen.random())
            s_next = int(game.succ_idx[s, a1, a2, out])
            reward = float(game.succ_reward[s, a1, a2, out])
            reward += float(game.reward_noise.from_uniform(np.array([gen.random()]))[0])

            if t + 1 < t_hor:
                if val_dirty[t + 1, s_next]:
                    solve(t + 1, s_next)
                bootstrap = val[t + 1, s_next]
            else:
                bootstrap = 0.0
            alpha = schedule(int(visits[t, s, a1, a2]))
            delta = alpha * (reward + game.discount * bootstrap - q[t, s, a1, a2])
            q[t, s, a1, a2] += delta
            visits[t, s, a1, a2] += 1
            val_dirty[t, s] = True
            drift[t, s] += abs(delta)
            s = s_next

    for t in range(t_hor):
        for s in range(s_num):
            solve(t, s)
    return PolicyProfile(MarkovPolicy(Player.P1, strat1.copy()),
                         MarkovPolicy(Player.P2, strat2.copy()))
