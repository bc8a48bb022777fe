"""Trajectory data: simulation under a behavior profile, folds, and file I/O.

Trajectories are stored columnar (state/action/reward arrays) for speed; the
record-style :class:`Trajectory` view is available per index.  Simulation
draws its variates from Philox streams keyed by ``(seed, block)`` with a fixed
per-block layout, so trajectory ``i`` is reproducible independently of ``n``
and of how blocks are scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (
    FingerprintMismatch,
    IoError,
    SchemaMismatch,
    TooManyFolds,
)
from .game import (
    GameSpec,
    MarkovPolicy,
    Player,
    PolicyProfile,
    game_fingerprint,
)

__all__ = [
    "Trajectory",
    "Dataset",
    "FoldedDataset",
    "simulate",
    "assign_folds",
    "write_dataset",
    "read_dataset",
    "write_policy_profile",
    "read_policy_profile",
    "empirical_return",
    "kahan_sum",
]

_BLOCK = 1024  # trajectories per RNG block; fixed, part of the determinism contract
_FORMAT = "mgope-v1"


def kahan_sum(values) -> float:
    """Compensated sum in fixed (given) order."""
    return math.fsum(np.asarray(values, dtype=float))


@dataclass(frozen=True)
class Trajectory:
    """One episode: T steps of (state, a1, a2, reward) plus the terminal state."""

    steps: tuple
    terminal_state: int


@dataclass(frozen=True)
class Dataset:
    """n trajectories sampled under one behavior profile on one game."""

    game_fingerprint: str
    horizon: int
    seed: int
    states: np.ndarray   # (n, T+1) including s_{T+1}
    actions_p1: np.ndarray  # (n, T)
    actions_p2: np.ndarray  # (n, T)
    rewards: np.ndarray     # (n, T)
    behavior_known: PolicyProfile | None = None

    def __post_init__(self):
        n, t_plus = self.states.shape
        if n < 1 or t_plus != self.horizon + 1:
            raise ValueError("dataset arrays inconsistent with horizon")
        for arr in (self.actions_p1, self.actions_p2, self.rewards):
            if arr.shape != (n, self.horizon):
                raise ValueError("dataset arrays inconsistent")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        steps = tuple(
            (int(self.states[i, t]), int(self.actions_p1[i, t]),
             int(self.actions_p2[i, t]), float(self.rewards[i, t]))
            for t in range(self.horizon))
        return Trajectory(steps=steps, terminal_state=int(self.states[i, -1]))

    @property
    def trajectories(self) -> list:
        return [self.trajectory(i) for i in range(self.n)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same = (self.game_fingerprint == other.game_fingerprint
                and self.horizon == other.horizon and self.seed == other.seed
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions_p1, other.actions_p1)
                and np.array_equal(self.actions_p2, other.actions_p2)
                and np.array_equal(self.rewards, other.rewards))
        if not same:
            return False
        if (self.behavior_known is None) != (other.behavior_known is None):
            return False
        if self.behavior_known is not None:
            return (np.array_equal(self.behavior_known.p1.table, other.behavior_known.p1.table)
                    and np.array_equal(self.behavior_known.p2.table, other.behavior_known.p2.table))
        return True


@dataclass(frozen=True)
class FoldedDataset:
    """Dataset plus a K-fold assignment with fold sizes differing by <= 1."""

    dataset: Dataset
    num_folds: int
    fold_of: np.ndarray  # (n,) trajectory index -> fold

    def fold_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of == k)[0]

    def out_of_fold_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of != k)[0]


def _sample_rows(prob_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: prob_rows (B, K), u (B,) -> indices (B,)."""
    cdf = np.cumsum(prob_rows, axis=1)
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def simulate(game: GameSpec, behavior: PolicyProfile, n: int, seed: int) -> Dataset:
    """Draw n iid trajectories under the behavior profile (deterministic in seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    behavior.check_shape(game.shape)
    t_hor = game.horizon
    states = np.empty((n, t_hor + 1), dtype=np.int64)
    a1 = np.empty((n, t_hor), dtype=np.int64)
    a2 = np.empty((n, t_hor), dtype=np.int64)
    rewards = np.empty((n, t_hor))

    init_cdf = np.cumsum(game.initial_dist)
    for block in range(0, n, _BLOCK):
        gen = rng.stream(seed, "sim", block // _BLOCK)
        u_init = gen.random(_BLOCK)
        u_a1 = gen.random((_BLOCK, t_hor))
        u_a2 = gen.random((_BLOCK, t_hor))
        u_out = gen.random((_BLOCK, t_hor))
        u_noise = gen.random((_BLOCK, t_hor))
        take = min(_BLOCK, n - block)
        sl = slice(block, block + take)

        cur = np.minimum((u_init[:take, None] >= init_cdf).sum(axis=1),
                         game.num_states - 1)
        states[sl, 0] = cur
        for t in range(t_hor):
            act1 = _sample_rows(behavior.p1.table[t][cur], u_a1[:take, t])
            act2 = _sample_rows(behavior.p2.table[t][cur], u_a2[:take, t])
            out = _sample_rows(game.succ_prob[cur, act1, act2], u_out[:take, t])
            base = game.succ_reward[cur, act1, act2, out]
            noise = game.reward_noise.from_uniform(u_noise[:take, t])
            a1[sl, t] = act1
            a2[sl, t] = act2
            rewards[sl, t] = base + noise
            cur = game.succ_idx[cur, act1, act2, out]
            states[sl, t + 1] = cur

    return Dataset(game_fingerprint=game_fingerprint(game), horizon=t_hor,
                   seed=int(seed), states=states, actions_p1=a1, actions_p2=a2,
                   rewards=rewards, behavior_known=behavior)


def assign_folds(dataset: Dataset, num_folds: int, seed: int) -> FoldedDataset:
    """Uniformly random partition into folds of size floor/ceil(n/K)."""
    n = dataset.n
    if num_folds < 2 or num_folds > n:
        raise TooManyFolds(f"K={num_folds} incompatible with n={n}")
    perm = rng.stream(seed, "folds").permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % num_folds
    return FoldedDataset(dataset=dataset, num_folds=num_folds, fold_of=fold_of)


def empirical_return(dataset: Dataset, discount: float) -> float:
    """Mean over trajectories of the discounted reward sum."""
    gammas = discount ** np.arange(dataset.horizon)
    per_traj = dataset.rewards @ gammas
    return kahan_sum(per_traj) / dataset.n


# --- serialization -----------------------------------------------------------


def write_dataset(dataset: Dataset, path) -> None:
    """Write the ``mgope-v1`` text format (bit-exact round trip)."""
    lines = [f"{_FORMAT} {dataset.game_fingerprint} {dataset.horizon} "
             f"{dataset.n} {dataset.seed}"]
    for i in range(dataset.n):
        for t in range(dataset.horizon):
            lines.append(
                f"{i},{t + 1},{dataset.states[i, t]},{dataset.actions_p1[i, t]},"
                f"{dataset.actions_p2[i, t]},{float(dataset.rewards[i, t])!r},"
                f"{dataset.states[i, t + 1]}")
    if dataset.behavior_known is not None:
        for player, pol in ((1, dataset.behavior_known.p1), (2, dataset.behavior_known.p2)):
            t_hor, s_num, _ = pol.table.shape
            for t in range(t_hor):
                for s in range(s_num):
                    probs = ",".join(repr(float(p)) for p in pol.table[t, s])
                    lines.append(f"pi,{player},{t + 1},{s},{probs}")
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_dataset(path, game: GameSpec | None = None) -> Dataset:
    """Read a dataset file; verifies the fingerprint when ``game`` is given."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            raw = fh.read().splitlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if not raw:
        raise SchemaMismatch("empty dataset file")
    header = raw[0].split()
    if len(header) != 5 or header[0] != _FORMAT:
        raise SchemaMismatch(f"bad header {raw[0]!r}")
    fingerprint = header[1]
    try:
        t_hor, n, seed = int(header[2]), int(header[3]), int(header[4])
    except ValueError as exc:
        raise SchemaMismatch(f"bad header {raw[0]!r}") from exc
    if game is not None and game_fingerprint(game) != fingerprint:
        raise FingerprintMismatch(
            f"dataset was generated for {fingerprint}, not this game")

    expected = n * t_hor
    body = raw[1:]
    if len(body) < expected:
        raise SchemaMismatch(f"expected {expected} step lines, found {len(body)}")
    states = np.zeros((n, t_hor + 1), dtype=np.int64)
    a1 = np.zeros((n, t_hor), dtype=np.int64)
    a2 = np.zeros((n, t_hor), dtype=np.int64)
    rewards = np.zeros((n, t_hor))
    for line_no in range(expected):
        parts = body[line_no].split(",")
        if len(parts) != 7:
            raise SchemaMismatch(f"bad step line {body[line_no]!r}")
        try:
            i, t = int(parts[0]), int(parts[1]) - 1
            states[i, t] = int(parts[2])
            a1[i, t] = int(parts[3])
            a2[i, t] = int(parts[4])
            rewards[i, t] = float(parts[5])
            states[i, t + 1] = int(parts[6])
        except (ValueError, IndexError) as exc:
            raise SchemaMismatch(f"bad step line {body[line_no]!r}") from exc

    behavior = _parse_behavior(body[expected:], t_hor)
    return Dataset(game_fingerprint=fingerprint, horizon=t_hor, seed=seed,
                   states=states, actions_p1=a1, actions_p2=a2, rewards=rewards,
                   behavior_known=behavior)


_POLICY_FORMAT = "mgope-policy-v1"


def write_policy_profile(profile: PolicyProfile, path) -> None:
    """Persist a profile as ``pi,<player>,<t>,<s>,<probs...>`` lines."""
    lines = [_POLICY_FORMAT]
    for player, pol in ((1, profile.p1), (2, profile.p2)):
        t_hor, s_num, _ = pol.table.shape
        for t in range(t_hor):
            for s in range(s_num):
                probs = ",".join(repr(float(p)) for p in pol.table[t, s])
                lines.append(f"pi,{player},{t + 1},{s},{probs}")
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_policy_profile(path) -> PolicyProfile:
    try:
        with open(path, "r", encoding="ascii") as fh:
            raw = fh.read().splitlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if not raw or raw[0] != _POLICY_FORMAT:
        raise SchemaMismatch(f"bad policy file header {raw[:1]!r}")
    body = [line for line in raw[1:] if line.strip()]
    t_hor = 0
    for line in body:
        parts = line.split(",")
        if parts[0] != "pi" or len(parts) < 5:
            raise SchemaMismatch(f"bad policy line {line!r}")
        t_hor = max(t_hor, int(parts[2]))
    profile = _parse_behavior(body, t_hor)
    if profile is None:
        raise SchemaMismatch("policy file has no rows")
    return profile


def _parse_behavior(lines, t_hor) -> PolicyProfile | None:
    rows = {1: {}, 2: {}}
    for line in lines:
        if not line.strip():
            continue
        parts = line.split(",")
        if parts[0] != "pi" or len(parts) < 5:
            raise SchemaMismatch(f"bad trailer line {line!r}")
        try:
            player, t, s = int(parts[1]), int(parts[2]) - 1, int(parts[3])
            rows[player][(t, s)] = [float(p) for p in parts[4:]]
        except (ValueError, KeyError) as exc:
            raise SchemaMismatch(f"bad trailer line {line!r}") from exc
    if not rows[1] and not rows[2]:
        return None
    tables = {}
    for player, entries in rows.items():
        if not entries:
            raise SchemaMismatch("behavior section present for one player only")
        s_num = max(s for (_, s) in entries) + 1
        n_act = len(next(iter(entries.values())))
        table = np.zeros((t_hor, s_num, n_act))
        for (t, s), probs in entries.items():
            table[t, s] = probs
        tables[player] = table
    return PolicyProfile(MarkovPolicy(Player.P1, tables[1]),
                         MarkovPolicy(Player.P2, tables[2]))
