"""Constructors for the benchmark environments.

Two families: repeated biased rock-paper-scissors (one-shot matrix games whose
payoff matrix transitions on the round outcome) and Littman-style 1v1 Markov
soccer on a 4x5 grid with simultaneous action choice executed in random order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlphaOutOfRange, DanglingStateReference, HorizonMismatch, InvalidCell
from .game import GameSpec, MarkovPolicy, Player, RewardNoise

__all__ = [
    "RPS_OUTCOMES",
    "RbrpsConfig",
    "SoccerConfig",
    "build_rbrps",
    "build_markov_soccer",
    "mix_policies",
    "rbrps1_config",
    "rbrps2_default_config",
    "soccer_state_index",
    "SOCCER_ACTIONS",
]

ROCK, PAPER, SCISSORS = 0, 1, 2
_BEATS = {ROCK: SCISSORS, PAPER: ROCK, SCISSORS: PAPER}
_MOVE_NAMES = {ROCK: "rock", PAPER: "paper", SCISSORS: "scissors"}

RPS_OUTCOMES = ("draw", "p1-rock", "p1-paper", "p1-scissors",
                "p2-rock", "p2-paper", "p2-scissors")

STANDARD_RPS = np.array([[0.0, -1.0, 1.0],
                         [1.0, 0.0, -1.0],
                         [-1.0, 1.0, 0.0]])


def rps_outcome(a1: int, a2: int) -> str:
    """Round outcome label: a draw, or which player won with which move."""
    if a1 == a2:
        return "draw"
    if _BEATS[a1] == a2:
        return f"p1-{_MOVE_NAMES[a1]}"
    return f"p2-{_MOVE_NAMES[a2]}"


@dataclass(frozen=True)
class RbrpsConfig:
    """Repeated biased RPS: one payoff matrix per state, outcome-driven graph.

    ``transition_graph[(state, outcome)]`` names the next state; missing
    entries default to staying in the same state.
    """

    payoff_matrices: tuple
    transition_graph: dict
    horizon: int = 1
    discount: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "payoff_matrices",
                           tuple(np.asarray(m, dtype=float) for m in self.payoff_matrices))


def rbrps1_config() -> RbrpsConfig:
    """Plain one-shot rock-paper-scissors (single state, horizon 1)."""
    return RbrpsConfig(payoff_matrices=(STANDARD_RPS,), transition_graph={},
                       horizon=1, discount=1.0)


def rbrps2_default_config() -> RbrpsConfig:
    """Bundled two-round config: standard first round, outcome-biased second.

    The second-round matrices double the payoff of the move that won the first
    round; they are a documented stand-in, not a published parameterization.
    """
    def biased(move: int) -> np.ndarray:
        mat = np.array(STANDARD_RPS)
        loser = _BEATS[move]
        mat[move, loser] = 2.0
        mat[loser, move] = -2.0
        return mat

    matrices = (STANDARD_RPS, np.array(STANDARD_RPS),
                biased(ROCK), biased(PAPER), biased(SCISSORS))
    graph = {}
    for s in range(5):
        graph[(s, "draw")] = 1
        for move, name in _MOVE_NAMES.items():
            graph[(s, f"p1-{name}")] = 2 + move
            graph[(s, f"p2-{name}")] = 2 + move
    return RbrpsConfig(payoff_matrices=matrices, transition_graph=graph,
                       horizon=2, discount=1.0)


def build_rbrps(config: RbrpsConfig,
                reward_noise: RewardNoise = RewardNoise()) -> GameSpec:
    num_states = len(config.payoff_matrices)
    transition = np.zeros((num_states, 3, 3, num_states))
    reward = np.zeros((num_states, 3, 3))
    for s, matrix in enumerate(config.payoff_matrices):
        if matrix.shape != (3, 3):
            raise ValueError(f"payoff matrix for state {s} must be 3x3")
        reward[s] = matrix
        for a1 in range(3):
            for a2 in range(3):
                nxt = config.transition_graph.get((s, rps_outcome(a1, a2)), s)
                if not 0 <= nxt < num_states:
                    raise DanglingStateReference(
                        f"transition graph points state {s} to missing state {nxt}")
                transition[s, a1, a2, nxt] = 1.0
    initial = np.zeros(num_states)
    initial[0] = 1.0
    return GameSpec.from_tables(initial_dist=initial, transition=transition,
                                mean_reward=reward, horizon=config.horizon,
                                discount=config.discount, reward_noise=reward_noise,
                                reward_bound=float(np.abs(reward).max()))


# --- Markov soccer -----------------------------------------------------------

ROWS, COLS = 4, 5
UP, DOWN, LEFT, RIGHT, STAY = range(5)
SOCCER_ACTIONS = ("up", "down", "left", "right", "stay")
_DELTAS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), STAY: (0, 0)}

# Edge cells from which the ball carrier scores by exiting the grid.
_A_GOAL_CELLS = (10, 15)   # A moves right from these
_B_GOAL_CELLS = (6, 11)    # B moves left from these


@dataclass(frozen=True)
class SoccerConfig:
    """4x5 soccer board; cells are numbered 1..20 row-major."""

    init_pos_a: int = 8
    init_pos_b: int = 13
    init_ball: Player = Player.P1
    horizon: int = 20
    discount: float = 0.9

    def __post_init__(self):
        for cell in (self.init_pos_a, self.init_pos_b):
            if not 1 <= cell <= ROWS * COLS:
                raise InvalidCell(f"cell {cell} outside 1..{ROWS * COLS}")
        if self.init_pos_a == self.init_pos_b:
            raise InvalidCell("players cannot share the initial cell")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _move_cell(cell: int, action: int) -> int:
    """Target cell of a plain move; off-grid moves stay put."""
    row, col = divmod(cell - 1, COLS)
    d_row, d_col = _DELTAS[action]
    n_row, n_col = row + d_row, col + d_col
    if not (0 <= n_row < ROWS and 0 <= n_col < COLS):
        return cell
    return n_row * COLS + n_col + 1


def _scores(mover: int, cell: int, action: int) -> bool:
    if mover == 0:
        return action == RIGHT and cell in _A_GOAL_CELLS
    return action == LEFT and cell in _B_GOAL_CELLS


def _step_order(pos, ball, actions, order):
    """Apply both moves in ``order`` (tuple of player ids); returns (pos, ball, reward, done).

    Collision rule: a player moving onto the occupied cell stays put and the
    ball goes to the stationary player.  The carrier scores by moving off-grid
    through its goal edge the moment its own move executes.
    """
    pos = list(pos)
    for mover in order:
        other = 1 - mover
        if ball == mover and _scores(mover, pos[mover], actions[mover]):
            reward = 1.0 if mover == 0 else -1.0
            return pos, ball, reward, True
        target = _move_cell(pos[mover], actions[mover])
        if target == pos[other]:
            ball = other
        else:
            pos[mover] = target
    return pos, ball, 0.0, False


def build_markov_soccer(config: SoccerConfig) -> GameSpec:
    """Enumerate the 20*19*2 + 1 = 761 states and the order-averaged kernel."""
    states = []
    index = {}
    for pos_a in range(1, ROWS * COLS + 1):
        for pos_b in range(1, ROWS * COLS + 1):
            if pos_a == pos_b:
                continue
            for ball in (0, 1):
                index[(pos_a, pos_b, ball)] = len(states)
                states.append((pos_a, pos_b, ball))
    terminal = len(states)
    num_states = terminal + 1

    n_act = len(SOCCER_ACTIONS)
    succ_idx = np.zeros((num_states, n_act, n_act, 2), dtype=np.int64)
    succ_prob = np.zeros((num_states, n_act, n_act, 2))
    succ_reward = np.zeros((num_states, n_act, n_act, 2))
    succ_idx[terminal] = terminal
    succ_prob[terminal, :, :, 0] = 1.0

    for (pos_a, pos_b, ball), s in index.items():
        for a1 in range(n_act):
            for a2 in range(n_act):
                outcomes = []
                for order in ((0, 1), (1, 0)):
                    pos, new_ball, reward, done = _step_order(
                        (pos_a, pos_b), ball, (a1, a2), order)
                    nxt = terminal if done else index[(pos[0], pos[1], new_ball)]
                    outcomes.append((nxt, reward))
                if outcomes[0] == outcomes[1]:
                    succ_idx[s, a1, a2, 0] = outcomes[0][0]
                    succ_reward[s, a1, a2, 0] = outcomes[0][1]
                    succ_prob[s, a1, a2, 0] = 1.0
                else:
                    for m, (nxt, reward) in enumerate(outcomes):
                        succ_idx[s, a1, a2, m] = nxt
                        succ_reward[s, a1, a2, m] = reward
                        succ_prob[s, a1, a2, m] = 0.5

    initial = np.zeros(num_states)
    start = (config.init_pos_a, config.init_pos_b, 0 if config.init_ball is Player.P1 else 1)
    initial[index[start]] = 1.0
    return GameSpec.from_outcomes(initial_dist=initial, succ_idx=succ_idx,
                                  succ_prob=succ_prob, succ_reward=succ_reward,
                                  horizon=config.horizon, discount=config.discount,
                                  reward_bound=1.0)


def soccer_state_index():
    """Mapping ``(pos_a, pos_b, ball) -> state`` plus the terminal index."""
    index = {}
    for pos_a in range(1, ROWS * COLS + 1):
        for pos_b in range(1, ROWS * COLS + 1):
            if pos_a == pos_b:
                continue
            for ball in (0, 1):
                index[(pos_a, pos_b, ball)] = len(index)
    return index, len(index)


# --- policy mixing -----------------------------------------------------------


def mix_policies(base: MarkovPolicy, other: MarkovPolicy, alpha) -> MarkovPolicy:
    """Convex combination ``alpha*base + (1-alpha)*other`` per (t, s) row.

    ``alpha`` may be a scalar or a per-state vector.
    """
    if base.player is not other.player:
        raise ValueError("mixing policies of different players")
    if base.table.shape != other.table.shape:
        raise HorizonMismatch("mixing policies with different shapes")
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0.0) or np.any(alpha > 1.0):
        raise AlphaOutOfRange(f"alpha {alpha} outside [0, 1]")
    if alpha.ndim == 0:
        weight = alpha
    elif alpha.shape == (base.table.shape[1],):
        weight = alpha[None, :, None]
    else:
        raise AlphaOutOfRange(f"alpha must be scalar or per-state, got shape {alpha.shape}")
    table = weight * base.table + (1.0 - weight) * other.table
    return MarkovPolicy(base.player, table)
