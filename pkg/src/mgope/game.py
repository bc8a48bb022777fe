"""Exact tabular semantics of finite-horizon two-player zero-sum Markov games.

All quantities are expressed in player 1's payoff; player 2's value, Q and V
functions are the negations, which every operation here preserves exactly.
Transitions are stored as per-cell outcome lists ``(prob, next_state, reward)``
so that games whose realized reward is coupled to the realized successor
(Markov soccer's order-dependent scoring) are represented without
approximation.  ``mean_reward`` and the dense transition table remain
available as derived views.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.special import ndtri

from .errors import (
    HorizonMismatch,
    NegativeProbability,
    NonStochasticRow,
    RewardBoundViolated,
)
from .matrixgame import MatrixGameSolution, solve_matrix_game

__all__ = [
    "Player",
    "RewardNoise",
    "GameShape",
    "GameSpec",
    "MarkovPolicy",
    "PolicyProfile",
    "ValueTables",
    "MarginalTable",
    "MatrixGameSolution",
    "validate_game",
    "evaluate_profile",
    "best_response",
    "exploitability",
    "solve_matrix_game",
    "nash_equilibrium",
    "marginal_distribution",
    "uniform_policy",
    "deterministic_policy",
    "policy_from_rows",
    "game_fingerprint",
]

_ROW_TOL = 1e-9  # rows off by more than this are rejected; below, renormalized


class Player(IntEnum):
    P1 = 1
    P2 = 2

    @property
    def other(self) -> "Player":
        return Player.P2 if self is Player.P1 else Player.P1


@dataclass(frozen=True)
class RewardNoise:
    """Additive noise on top of the outcome reward.

    ``kind`` is one of ``deterministic`` (no noise), ``uniform`` (uniform on
    [-param, param]) or ``gaussian`` (centered, std ``param``).
    """

    kind: str = "deterministic"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "uniform", "gaussian"):
            raise ValueError(f"unknown reward noise kind {self.kind!r}")

    @property
    def variance(self) -> float:
        if self.kind == "uniform":
            return self.param ** 2 / 3.0
        if self.kind == "gaussian":
            return self.param ** 2
        return 0.0

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map iid U(0,1) draws to noise samples (keeps draw layout fixed)."""
        if self.kind == "deterministic":
            return np.zeros_like(u)
        if self.kind == "uniform":
            return (2.0 * u - 1.0) * self.param
        return ndtri(u) * self.param


@dataclass(frozen=True)
class GameShape:
    """Dimensions of a tabular game (enough to shape policies and tables)."""

    num_states: int
    actions_p1: int
    actions_p2: int
    horizon: int

    def actions(self, player: Player) -> int:
        return self.actions_p1 if player is Player.P1 else self.actions_p2


def _frozen(arr: np.ndarray, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GameSpec:
    """A validated finite-horizon tabular TZMG.

    ``succ_idx/succ_prob/succ_reward`` hold, for every ``(s, a1, a2)``, the
    possible outcomes: successor state, probability, and player-1 reward of
    that outcome (padding entries carry probability zero).  Use
    :meth:`from_tables` when rewards depend only on ``(s, a1, a2)``.
    """

    num_states: int
    actions_p1: int
    actions_p2: int
    horizon: int
    discount: float
    initial_dist: np.ndarray
    succ_idx: np.ndarray
    succ_prob: np.ndarray
    succ_reward: np.ndarray
    reward_noise: RewardNoise = RewardNoise()
    reward_bound: float = 1.0
    _mean_reward: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = (self.succ_prob * self.succ_reward).sum(axis=-1)
        object.__setattr__(self, "_mean_reward", _frozen(mean))

    # -- constructors --------------------------------------------------

    @classmethod
    def from_tables(cls, *, initial_dist, transition, mean_reward, horizon,
                    discount, reward_noise=RewardNoise(), reward_bound=None,
                    validate=True) -> "GameSpec":
        """Build from dense tables ``transition[s,a1,a2,s']`` and ``mean_reward[s,a1,a2]``."""
        transition = np.asarray(transition, dtype=float)
        mean_reward = np.asarray(mean_reward, dtype=float)
        s_num, a1, a2, s_next = transition.shape
        if s_next != s_num or mean_reward.shape != (s_num, a1, a2):
            raise ValueError("transition / mean_reward shapes are inconsistent")
        succ_idx = np.broadcast_to(np.arange(s_num), (s_num, a1, a2, s_num))
        succ_reward = np.broadcast_to(mean_reward[..., None], transition.shape)
        if reward_bound is None:
            reward_bound = float(np.abs(mean_reward).max()) if mean_reward.size else 1.0
        spec = cls(num_states=s_num, actions_p1=a1, actions_p2=a2,
                   horizon=int(horizon), discount=float(discount),
                   initial_dist=_frozen(initial_dist),
                   succ_idx=_frozen(succ_idx, dtype=np.int64),
                   succ_prob=_frozen(transition),
                   succ_reward=_frozen(succ_reward),
                   reward_noise=reward_noise, reward_bound=float(reward_bound))
        return validate_game(spec) if validate else spec

    @classmethod
    def from_outcomes(cls, *, initial_dist, succ_idx, succ_prob, succ_reward,
                      horizon, discount, reward_noise=RewardNoise(),
                      reward_bound=None, validate=True) -> "GameSpec":
        succ_prob = np.asarray(succ_prob, dtype=float)
        s_num, a1, a2, _ = succ_prob.shape
        if reward_bound is None:
            reward_bound = float(np.abs(np.asarray(succ_reward)).max())
        spec = cls(num_states=s_num, actions_p1=a1, actions_p2=a2,
                   horizon=int(horizon), discount=float(discount),
                   initial_dist=_frozen(initial_dist),
                   succ_idx=_frozen(succ_idx, dtype=np.int64),
                   succ_prob=_frozen(succ_prob),
                   succ_reward=_frozen(succ_reward),
                   reward_noise=reward_noise, reward_bound=float(reward_bound))
        return validate_game(spec) if validate else spec

    # -- views -----------------------------------------------------------

    @property
    def mean_reward(self) -> np.ndarray:
        return self._mean_reward

    @property
    def shape(self) -> GameShape:
        return GameShape(self.num_states, self.actions_p1, self.actions_p2, self.horizon)

    def transition_dense(self) -> np.ndarray:
        """Dense ``(S, A1, A2, S)`` transition table (small games only)."""
        dense = np.zeros((self.num_states, self.actions_p1, self.actions_p2, self.num_states))
        s_flat = self.succ_idx.reshape(-1, self.succ_idx.shape[-1])
        p_flat = self.succ_prob.reshape(-1, self.succ_prob.shape[-1])
        rows = np.repeat(np.arange(s_flat.shape[0]), s_flat.shape[1])
        np.add.at(dense.reshape(-1, self.num_states), (rows, s_flat.ravel()), p_flat.ravel())
        return dense

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """``E[v(s') | s, a1, a2]`` for a state-value vector ``values``."""
        return (self.succ_prob * values[self.succ_idx]).sum(axis=-1)

    def push_state_action(self, p_sab: np.ndarray) -> np.ndarray:
        """Propagate a state-action distribution one step to a state distribution."""
        weights = (p_sab[..., None] * self.succ_prob).ravel()
        return np.bincount(self.succ_idx.ravel(), weights=weights, minlength=self.num_states)

    def reward_conditional_moments(self, values: np.ndarray):
        """Per-cell ``E[r + g*v(s')]`` and ``Var[r + g*v(s')]`` given ``(s,a1,a2)``.

        ``values`` is the next-step state-value vector; the variance accounts
        for outcome coupling between reward and successor plus reward noise.
        """
        g = self.discount
        z = self.succ_reward + g * values[self.succ_idx]
        mean = (self.succ_prob * z).sum(axis=-1)
        second = (self.succ_prob * z * z).sum(axis=-1)
        var = np.maximum(second - mean ** 2, 0.0) + self.reward_noise.variance
        return mean, var


# --- policies ----------------------------------------------------------


@dataclass(frozen=True)
class MarkovPolicy:
    """Time-indexed per-state action distributions for one player."""

    player: Player
    table: np.ndarray  # (T, S, A)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 3:
            raise HorizonMismatch(f"policy table must be (T, S, A), got {table.shape}")
        table = _normalize_rows(table, "policy")
        object.__setattr__(self, "table", _frozen(table))

    @property
    def horizon(self) -> int:
        return self.table.shape[0]

    def check_shape(self, shape: GameShape) -> None:
        expected = (shape.horizon, shape.num_states, shape.actions(self.player))
        if self.table.shape != expected:
            raise HorizonMismatch(
                f"policy shape {self.table.shape} does not match game {expected}")

    def with_block(self, t: int, s: int, row: np.ndarray) -> "MarkovPolicy":
        table = np.array(self.table)
        table[t, s] = row
        return MarkovPolicy(self.player, table)

    def fingerprint(self) -> bytes:
        return hashlib.blake2b(self.table.tobytes(), digest_size=16).digest()


@dataclass(frozen=True)
class PolicyProfile:
    """A pair of Markov policies, one per player."""

    p1: MarkovPolicy
    p2: MarkovPolicy

    def __post_init__(self):
        if self.p1.player is not Player.P1 or self.p2.player is not Player.P2:
            raise ValueError("profile players must be (P1, P2)")
        if self.p1.horizon != self.p2.horizon:
            raise HorizonMismatch("profile policies disagree on horizon")

    @property
    def horizon(self) -> int:
        return self.p1.horizon

    def check_shape(self, shape: GameShape) -> None:
        self.p1.check_shape(shape)
        self.p2.check_shape(shape)

    def policy(self, player: Player) -> MarkovPolicy:
        return self.p1 if player is Player.P1 else self.p2

    def replace(self, policy: MarkovPolicy) -> "PolicyProfile":
        if policy.player is Player.P1:
            return PolicyProfile(policy, self.p2)
        return PolicyProfile(self.p1, policy)

    def fingerprint(self) -> bytes:
        return hashlib.blake2b(self.p1.fingerprint() + self.p2.fingerprint(),
                               digest_size=16).digest()


def uniform_policy(shape: GameShape, player: Player) -> MarkovPolicy:
    n_act = shape.actions(player)
    table = np.full((shape.horizon, shape.num_states, n_act), 1.0 / n_act)
    return MarkovPolicy(player, table)


def deterministic_policy(shape: GameShape, player: Player, action) -> MarkovPolicy:
    """Point-mass policy; ``action`` is a scalar or an ``(T, S)`` array."""
    n_act = shape.actions(player)
    actions = np.broadcast_to(np.asarray(action, dtype=int),
                              (shape.horizon, shape.num_states))
    table = np.zeros((shape.horizon, shape.num_states, n_act))
    t_idx, s_idx = np.meshgrid(np.arange(shape.horizon), np.arange(shape.num_states),
                               indexing="ij")
    table[t_idx, s_idx, actions] = 1.0
    return MarkovPolicy(player, table)


def policy_from_rows(player: Player, rows) -> MarkovPolicy:
    """Build a policy from a nested ``rows[t][s] -> distribution`` structure."""
    return MarkovPolicy(player, np.asarray(rows, dtype=float))


# --- value containers ----------------------------------------------------


@dataclass(frozen=True)
class ValueTables:
    """Player-1 state and state-action values of a fixed profile.

    ``v[t, s]`` and ``q[t, s, a1, a2]`` for t = 1..T (0-indexed); ``total`` is
    the initial-distribution-weighted value.  Player 2's tables are the exact
    negations.
    """

    v: np.ndarray
    q: np.ndarray
    total: float

    def value_at_data(self, t: np.ndarray, s: np.ndarray) -> np.ndarray:
        return self.v[t, s]


@dataclass(frozen=True)
class MarginalTable:
    """Marginal state-action occupancy ``p_t(s, a1, a2)`` for t = 1..T."""

    table: np.ndarray  # (T, S, A1, A2)


# --- validation -----------------------------------------------------------


def _normalize_rows(table: np.ndarray, what: str) -> np.ndarray:
    if np.any(table < -1e-12):
        loc = np.unravel_index(int(np.argmin(table)), table.shape)
        raise NegativeProbability(f"{what}{loc}", float(table[loc]))
    table = np.clip(table, 0.0, None)
    sums = table.sum(axis=-1)
    bad = np.abs(sums - 1.0) > _ROW_TOL
    if np.any(bad):
        loc = np.unravel_index(int(np.argmax(np.abs(sums - 1.0))), sums.shape)
        raise NonStochasticRow(f"{what}{loc}", float(sums[loc]))
    return table / sums[..., None]


def validate_game(spec: GameSpec) -> GameSpec:
    """Check all GameSpec invariants; renormalize rows within 1e-9, reject beyond."""
    init = np.asarray(spec.initial_dist, dtype=float)
    if np.any(init < -1e-12):
        raise NegativeProbability("initial_dist", float(init.min()))
    init = np.clip(init, 0.0, None)
    total = init.sum()
    if abs(total - 1.0) > _ROW_TOL:
        raise NonStochasticRow("initial_dist", float(total))
    init = init / total

    prob = np.asarray(spec.succ_prob, dtype=float)
    if np.any(prob < -1e-12):
        loc = np.unravel_index(int(np.argmin(prob)), prob.shape)
        raise NegativeProbability(f"transition{loc}", float(prob[loc]))
    prob = np.clip(prob, 0.0, None)
    sums = prob.sum(axis=-1)
    off = np.abs(sums - 1.0)
    if np.any(off > _ROW_TOL):
        loc = np.unravel_index(int(np.argmax(off)), sums.shape)
        raise NonStochasticRow(f"transition{loc}", float(sums[loc]))
    prob = prob / sums[..., None]

    if np.any(spec.succ_idx < 0) or np.any(spec.succ_idx >= spec.num_states):
        raise NonStochasticRow("succ_idx", float("nan"))

    bound = spec.reward_bound + 1e-12
    rewards = np.where(prob > 0.0, spec.succ_reward, 0.0)
    if np.abs(rewards).max(initial=0.0) > bound:
        loc = np.unravel_index(int(np.argmax(np.abs(rewards))), rewards.shape)
        raise RewardBoundViolated(f"reward{loc}", float(rewards[loc]), spec.reward_bound)
    if not 0.0 <= spec.discount <= 1.0:
        raise ValueError(f"discount {spec.discount} outside [0, 1]")
    if spec.horizon < 1:
        raise ValueError("horizon must be >= 1")

    return GameSpec(num_states=spec.num_states, actions_p1=spec.actions_p1,
                    actions_p2=spec.actions_p2, horizon=spec.horizon,
                    discount=spec.discount, initial_dist=_frozen(init),
                    succ_idx=spec.succ_idx, succ_prob=_frozen(prob),
                    succ_reward=spec.succ_reward, reward_noise=spec.reward_noise,
                    reward_bound=spec.reward_bound)


# --- exact operations -------------------------------------------------------


def evaluate_profile(game: GameSpec, profile: PolicyProfile) -> ValueTables:
    """Exact backward-induction value of a profile (player 1's tables)."""
    profile.check_shape(game.shape)
    t_hor, s_num = game.horizon, game.num_states
    v = np.zeros((t_hor + 1, s_num))
    q = np.empty((t_hor, s_num, game.actions_p1, game.actions_p2))
    for t in range(t_hor - 1, -1, -1):
        q[t] = game.mean_reward + game.discount * game.expected_next(v[t + 1])
        v[t] = np.einsum("sab,sa,sb->s", q[t], profile.p1.table[t], profile.p2.table[t])
    total = float(game.initial_dist @ v[0])
    return ValueTables(v=_frozen(v[:t_hor]), q=_frozen(q), total=total)


def best_response(game: GameSpec, opponent: MarkovPolicy, player: Player):
    """Optimal deterministic response to ``opponent``; returns (policy, value).

    The value is the responding player's own payoff: ``max_{pi_i} v_i(pi_i,
    pi_-i)``.  Ties break toward the lowest action index.
    """
    if opponent.player is player:
        raise ValueError("opponent policy belongs to the responding player")
    opponent.check_shape(game.shape)
    t_hor, s_num = game.horizon, game.num_states
    n_act = game.shape.actions(player)
    v = np.zeros((t_hor + 1, s_num))
    actions = np.empty((t_hor, s_num), dtype=int)
    for t in range(t_hor - 1, -1, -1):
        q_full = game.mean_reward + game.discount * game.expected_next(v[t + 1])
        if player is Player.P1:
            q_own = np.einsum("sab,sb->sa", q_full, opponent.table[t])
            actions[t] = np.argmax(q_own, axis=1)
            v[t] = q_own[np.arange(s_num), actions[t]]
        else:
            q_own = np.einsum("sab,sa->sb", q_full, opponent.table[t])
            actions[t] = np.argmin(q_own, axis=1)
            v[t] = q_own[np.arange(s_num), actions[t]]
    total_p1 = float(game.initial_dist @ v[0])
    value = total_p1 if player is Player.P1 else -total_p1
    policy = deterministic_policy(game.shape, player, actions)
    return policy, value


def exploitability(game: GameSpec, profile: PolicyProfile) -> float:
    """Sum of both players' best-response gains; zero exactly at a Nash point."""
    _, gain1 = best_response(game, profile.p2, Player.P1)
    _, gain2 = best_response(game, profile.p1, Player.P2)
    return gain1 + gain2


def nash_equilibrium(game: GameSpec):
    """Backward-induction equilibrium; returns (profile, game value for player 1)."""
    t_hor, s_num = game.horizon, game.num_states
    v = np.zeros((t_hor + 1, s_num))
    tab1 = np.empty((t_hor, s_num, game.actions_p1))
    tab2 = np.empty((t_hor, s_num, game.actions_p2))
    for t in range(t_hor - 1, -1, -1):
        q_full = game.mean_reward + game.discount * game.expected_next(v[t + 1])
        for s in range(s_num):
            sol = solve_matrix_game(q_full[s])
            tab1[t, s] = sol.row_strategy
            tab2[t, s] = sol.col_strategy
            v[t, s] = sol.value
    profile = PolicyProfile(MarkovPolicy(Player.P1, tab1), MarkovPolicy(Player.P2, tab2))
    return profile, float(game.initial_dist @ v[0])


def marginal_distribution(game: GameSpec, profile: PolicyProfile) -> MarginalTable:
    """Forward recursion for the marginal state-action occupancy per step."""
    profile.check_shape(game.shape)
    t_hor = game.horizon
    table = np.empty((t_hor, game.num_states, game.actions_p1, game.actions_p2))
    state_dist = np.asarray(game.initial_dist, dtype=float)
    for t in range(t_hor):
        joint = np.einsum("sa,sb->sab", profile.p1.table[t], profile.p2.table[t])
        table[t] = state_dist[:, None, None] * joint
        if t + 1 < t_hor:
            state_dist = game.push_state_action(table[t])
    return MarginalTable(table=_frozen(table))


# --- identity ----------------------------------------------------------------


def game_fingerprint(game: GameSpec) -> str:
    """Stable content hash of everything that defines the game's law."""
    h = hashlib.blake2b(digest_size=16)
    for n in (game.num_states, game.actions_p1, game.actions_p2, game.horizon):
        h.update(int(n).to_bytes(8, "little"))
    for arr in (game.initial_dist, game.succ_prob, game.succ_reward):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(game.succ_idx, dtype="<i8").tobytes())
    h.update(np.float64(game.discount).tobytes())
    h.update(np.float64(game.reward_bound).tobytes())
    h.update(game.reward_noise.kind.encode())
    h.update(np.float64(game.reward_noise.param).tobytes())
    return h.hexdigest()
