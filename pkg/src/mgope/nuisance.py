"""Cross-fitted nuisance estimation.

For each fold k, everything here is computed strictly from the out-of-fold
data: the tabular model (reward means, Laplace-smoothed transitions and
initial distribution), the behavior policy (when not known), the Q tables for
a candidate target profile (from the estimated model or by tabular TD), the
cumulative importance ratios, and the histogram marginal ratios.  All weights
obey the clipping bounds ``0 <= rho_t, mu_t <= C^t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .data import Dataset, FoldedDataset
from .errors import MissingNuisance, ZeroBehaviorDensity
from .game import (
    GameSpec,
    GameShape,
    MarkovPolicy,
    Player,
    PolicyProfile,
    ValueTables,
    evaluate_profile,
    marginal_distribution,
)

__all__ = [
    "NuisanceOptions",
    "EstimatedModel",
    "FoldNuisance",
    "NuisanceSet",
    "WeightTables",
    "behavior_ratio_bound",
    "resolve_clip_base",
    "estimate_model",
    "estimate_behavior_policy",
    "q_hat_model",
    "q_hat_td",
    "rho_weights",
    "mu_weight_table",
    "mu_weights",
    "fit_nuisances_crossfit",
    "exact_nuisances",
    "model_from_game",
]


@dataclass(frozen=True)
class NuisanceOptions:
    """Knobs for the nuisance pipeline (defaults per the toolkit's experiments).

    ``clip_base`` None means: derive C from the known behavior profile (the
    largest per-step density ratio any candidate policy can realize), falling
    back to 100 when the behavior is estimated or has zero-probability
    actions.
    """

    smoothing: float = 0.5
    clip_base: float | None = None
    q_source: str = "model"  # "model" (backward induction on R-hat/P-hat) or "td"
    td_learning_rate: float = 0.05
    td_sweeps: int = 200
    use_known_behavior: bool = True

    def __post_init__(self):
        if self.q_source not in ("model", "td"):
            raise ValueError(f"unknown q_source {self.q_source!r}")


_FALLBACK_CLIP = 100.0


def behavior_ratio_bound(behavior: PolicyProfile) -> float:
    """Largest one-step density ratio sup_pi pi/pi_b over all policies.

    Attained by point masses on the behavior's least likely actions; infinite
    if the behavior assigns probability zero anywhere.
    """
    min1 = float(behavior.p1.table.min())
    min2 = float(behavior.p2.table.min())
    if min1 <= 0.0 or min2 <= 0.0:
        return float("inf")
    return 1.0 / (min1 * min2)


def resolve_clip_base(options: NuisanceOptions, dataset: Dataset) -> float:
    if options.clip_base is not None:
        return float(options.clip_base)
    if options.use_known_behavior and dataset.behavior_known is not None:
        bound = behavior_ratio_bound(dataset.behavior_known)
        if np.isfinite(bound):
            return bound
    return _FALLBACK_CLIP


@dataclass(frozen=True)
class EstimatedModel:
    """Tabular model fitted from trajectories.

    Transitions are kept sparse (visited rows only); unvisited rows fall back
    to the Laplace prior (uniform).  ``behavior_hist[t]`` is the smoothed
    empirical state-action histogram used as the marginal-ratio denominator.
    """

    shape: GameShape
    smoothing: float
    n_source: int
    reward_hat: np.ndarray        # (S, A1, A2)
    initial_hat: np.ndarray       # (S,)
    visit_counts: np.ndarray      # (T, S, A1, A2) int64
    behavior_hist: np.ndarray     # (T, S, A1, A2)
    _trans_counts: sparse.csr_matrix = field(repr=False)  # (S*A1*A2, S)
    _row_totals: np.ndarray = field(repr=False)

    @property
    def num_cells(self) -> int:
        s = self.shape
        return s.num_states * s.actions_p1 * s.actions_p2

    def transition_hat(self) -> np.ndarray:
        """Dense smoothed transition table (small games only)."""
        s = self.shape
        dense = np.asarray(self._trans_counts.todense(), dtype=float)
        return self._smooth_rows(dense).reshape(
            s.num_states, s.actions_p1, s.actions_p2, s.num_states)

    def _smooth_rows(self, counts: np.ndarray) -> np.ndarray:
        lam, s_num = self.smoothing, self.shape.num_states
        denom = self._row_totals + lam * s_num
        out = np.empty_like(counts)
        seen = denom > 0
        out[seen] = (counts[seen] + lam) / denom[seen, None]
        out[~seen] = 1.0 / s_num  # lam == 0 and never visited
        return out

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """``E-hat[v(s') | s, a1, a2]`` under the smoothed transition model."""
        lam, s = self.smoothing, self.shape
        denom = self._row_totals + lam * s.num_states
        raw = self._trans_counts @ values
        vmean = float(values.mean())
        out = np.where(denom > 0.0,
                       (raw + lam * values.sum()) / np.where(denom > 0.0, denom, 1.0),
                       vmean)
        return out.reshape(s.num_states, s.actions_p1, s.actions_p2)

    def push_state_action(self, p_sab: np.ndarray) -> np.ndarray:
        """Propagate a state-action distribution through the smoothed model."""
        lam, s = self.smoothing, self.shape
        flat = p_sab.reshape(-1)
        denom = self._row_totals + lam * s.num_states
        safe = np.where(denom > 0.0, denom, 1.0)
        nxt = self._trans_counts.T @ (flat / safe)
        uniform_mass = np.where(denom > 0.0, flat * lam * s.num_states / safe, flat)
        return np.asarray(nxt).ravel() + uniform_mass.sum() / s.num_states


def _flat_cells(shape: GameShape, states, a1, a2):
    return (states * shape.actions_p1 + a1) * shape.actions_p2 + a2


def estimate_model(dataset: Dataset, shape: GameShape, smoothing: float,
                   indices=None) -> EstimatedModel:
    """Fit reward means, transition counts, initial distribution and histograms."""
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices)
    if idx.size == 0:
        raise MissingNuisance("cannot fit a model from an empty fold")
    t_hor = shape.horizon
    states = dataset.states[idx]
    a1 = dataset.actions_p1[idx]
    a2 = dataset.actions_p2[idx]
    rewards = dataset.rewards[idx]

    cells = _flat_cells(shape, states[:, :t_hor], a1, a2)  # (m, T)
    n_cells = shape.num_states * shape.actions_p1 * shape.actions_p2

    flat = cells.ravel()
    reward_sum = np.bincount(flat, weights=rewards.ravel(), minlength=n_cells)
    reward_cnt = np.bincount(flat, minlength=n_cells)
    reward_hat = np.divide(reward_sum, reward_cnt,
                           out=np.zeros(n_cells), where=reward_cnt > 0)

    nxt = states[:, 1:].ravel()
    trans = sparse.coo_matrix(
        (np.ones(flat.size), (flat, nxt)), shape=(n_cells, shape.num_states)).tocsr()
    row_totals = np.bincount(flat, minlength=n_cells).astype(float)

    init_cnt = np.bincount(states[:, 0], minlength=shape.num_states).astype(float)
    initial_hat = (init_cnt + smoothing) / (idx.size + smoothing * shape.num_states)

    visit = np.zeros((t_hor, n_cells), dtype=np.int64)
    t_grid = np.broadcast_to(np.arange(t_hor), cells.shape)
    np.add.at(visit, (t_grid.ravel(), flat), 1)

    hist = (visit + smoothing) / (idx.size + smoothing * n_cells)
    dims = (t_hor, shape.num_states, shape.actions_p1, shape.actions_p2)
    return EstimatedModel(
        shape=shape, smoothing=float(smoothing), n_source=int(idx.size),
        reward_hat=reward_hat.reshape(dims[1:]),
        initial_hat=initial_hat,
        visit_counts=visit.reshape(dims),
        behavior_hist=hist.reshape(dims),
        _trans_counts=trans, _row_totals=row_totals)


def model_from_game(game: GameSpec, behavior: PolicyProfile | None = None) -> EstimatedModel:
    """Exact model in EstimatedModel form (for oracle-injection tests).

    When ``behavior`` is given, the histogram denominator is the exact
    behavior occupancy instead of an empirical one.
    """
    shape = game.shape
    n_cells = shape.num_states * shape.actions_p1 * shape.actions_p2
    trans = sparse.csr_matrix(game.transition_dense().reshape(n_cells, shape.num_states))
    row_totals = np.ones(n_cells)
    if behavior is not None:
        hist = marginal_distribution(game, behavior).table
    else:
        hist = np.full((shape.horizon, shape.num_states, shape.actions_p1,
                        shape.actions_p2), 1.0 / n_cells)
    return EstimatedModel(
        shape=shape, smoothing=0.0, n_source=0,
        reward_hat=np.asarray(game.mean_reward),
        initial_hat=np.asarray(game.initial_dist),
        visit_counts=np.zeros(hist.shape, dtype=np.int64),
        behavior_hist=np.asarray(hist),
        _trans_counts=trans, _row_totals=row_totals)


def estimate_behavior_policy(dataset: Dataset, shape: GameShape, smoothing: float,
                             indices=None) -> PolicyProfile:
    """Per-(t, s) smoothed action frequencies, independently per player."""
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices)
    t_hor = shape.horizon
    states = dataset.states[idx][:, :t_hor]
    tables = []
    for player, actions in ((Player.P1, dataset.actions_p1[idx]),
                            (Player.P2, dataset.actions_p2[idx])):
        n_act = shape.actions(player)
        counts = np.zeros((t_hor, shape.num_states, n_act))
        t_grid = np.broadcast_to(np.arange(t_hor), states.shape)
        np.add.at(counts, (t_grid.ravel(), states.ravel(), actions.ravel()), 1.0)
        totals = counts.sum(axis=2, keepdims=True)
        denom = totals + smoothing * n_act
        table = np.where(denom > 0.0, (counts + smoothing) / np.where(denom > 0, denom, 1.0),
                         1.0 / n_act)
        tables.append(MarkovPolicy(player, table))
    return PolicyProfile(tables[0], tables[1])


# --- Q estimators ------------------------------------------------------------


def q_hat_model(model: EstimatedModel, game: GameSpec, profile: PolicyProfile) -> ValueTables:
    """Backward induction on the estimated model; clamped to (T+1-t)*R_max."""
    profile.check_shape(model.shape)
    t_hor, s_num = model.shape.horizon, model.shape.num_states
    v = np.zeros((t_hor + 1, s_num))
    q = np.empty((t_hor, s_num, model.shape.actions_p1, model.shape.actions_p2))
    for t in range(t_hor - 1, -1, -1):
        raw = model.reward_hat + game.discount * model.expected_next(v[t + 1])
        bound = (t_hor - t) * game.reward_bound
        q[t] = np.clip(raw, -bound, bound)
        v[t] = np.einsum("sab,sa,sb->s", q[t], profile.p1.table[t], profile.p2.table[t])
    total = float(model.initial_hat @ v[0])
    return ValueTables(v=v[:t_hor], q=q, total=total)


def q_hat_td(dataset: Dataset, game: GameSpec, profile: PolicyProfile,
             learning_rate: float, sweeps: int, indices=None) -> ValueTables:
    """Tabular expected-update temporal differences toward the profile's values.

    Updates run trajectory-major, step-ascending, repeated ``sweeps`` times:
    ``Q[t,s,a,b] += lr * (r + g * E_pi[Q[t+1, s']] - Q[t,s,a,b])``.
    """
    profile.check_shape(game.shape)
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices)
    t_hor = game.horizon
    shape = game.shape
    q = np.zeros((t_hor, shape.num_states, shape.actions_p1, shape.actions_p2))
    p1, p2 = profile.p1.table, profile.p2.table
    gamma, lr = game.discount, learning_rate

    states = dataset.states[idx]
    a1 = dataset.actions_p1[idx]
    a2 = dataset.actions_p2[idx]
    rewards = dataset.rewards[idx]
    for _ in range(sweeps):
        for row in range(idx.size):
            for t in range(t_hor):
                s, b1, b2 = states[row, t], a1[row, t], a2[row, t]
                if t + 1 < t_hor:
                    s_next = states[row, t + 1]
                    cont = p1[t + 1, s_next] @ q[t + 1, s_next] @ p2[t + 1, s_next]
                else:
                    cont = 0.0
                target = rewards[row, t] + gamma * cont
                q[t, s, b1, b2] += lr * (target - q[t, s, b1, b2])
    for t in range(t_hor):
        bound = (t_hor - t) * game.reward_bound
        np.clip(q[t], -bound, bound, out=q[t])
    v = np.einsum("tsab,tsa,tsb->ts", q, p1, p2)
    init = np.bincount(states[:, 0], minlength=shape.num_states) / idx.size
    return ValueTables(v=v, q=q, total=float(init @ v[0]))


# --- importance weights -------------------------------------------------------


@dataclass(frozen=True)
class WeightTables:
    """Per-trajectory weights evaluated at the realized data points.

    Column ``t`` holds the step-t weight; column 0 is the convention
    ``rho_0 = mu_0 = 1``.
    """

    rho: np.ndarray | None = None  # (n, T+1)
    mu: np.ndarray | None = None   # (n, T+1)
    clip_base: float = np.inf


def _policy_probs_at(policy_table, states, actions):
    t_hor = actions.shape[1]
    t_idx = np.broadcast_to(np.arange(t_hor), actions.shape)
    return policy_table[t_idx, states[:, :t_hor], actions]


def rho_weights(dataset: Dataset, profile: PolicyProfile,
                behavior: PolicyProfile | None = None,
                clip_base: float = np.inf, indices=None) -> WeightTables:
    """Clipped cumulative density ratios; behavior defaults to the known one."""
    if behavior is None:
        behavior = dataset.behavior_known
    if behavior is None:
        raise MissingNuisance("no behavior profile available for rho weights")
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices)
    states = dataset.states[idx]
    a1 = dataset.actions_p1[idx]
    a2 = dataset.actions_p2[idx]
    num = (_policy_probs_at(profile.p1.table, states, a1)
           * _policy_probs_at(profile.p2.table, states, a2))
    den = (_policy_probs_at(behavior.p1.table, states, a1)
           * _policy_probs_at(behavior.p2.table, states, a2))
    if np.any(den <= 0.0):
        where = np.argwhere(den <= 0.0)[0]
        raise ZeroBehaviorDensity(
            f"behavior probability 0 for realized action (trajectory {idx[where[0]]}, "
            f"step {where[1] + 1}); increase smoothing")
    eta = num / den
    t_hor = eta.shape[1]
    rho = np.ones((idx.size, t_hor + 1))
    for t in range(t_hor):
        rho[:, t + 1] = np.clip(rho[:, t] * eta[:, t], 0.0, clip_base ** (t + 1))
    return WeightTables(rho=rho, clip_base=clip_base)


def mu_weight_table(model: EstimatedModel, profile: PolicyProfile,
                    clip_base: float = np.inf) -> np.ndarray:
    """Histogram marginal-ratio table ``mu_t(s, a1, a2)`` for t = 1..T.

    Numerator: forward recursion of the candidate profile on the estimated
    model (the target occupancy is not observable under the behavior policy).
    Denominator: the model's smoothed behavior histogram.  Zero numerator
    gives zero; a positive numerator over a zero denominator clips to C^t.
    """
    shape = model.shape
    t_hor = shape.horizon
    mu = np.empty((t_hor, shape.num_states, shape.actions_p1, shape.actions_p2))
    state_dist = np.asarray(model.initial_hat, dtype=float)
    for t in range(t_hor):
        joint = np.einsum("sa,sb->sab", profile.p1.table[t], profile.p2.table[t])
        num = state_dist[:, None, None] * joint
        den = model.behavior_hist[t]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(num > 0.0, num / den, 0.0)
        mu[t] = np.clip(np.nan_to_num(ratio, posinf=np.inf), 0.0, clip_base ** (t + 1))
        if t + 1 < t_hor:
            state_dist = model.push_state_action(num)
    return mu


def mu_weights(dataset: Dataset, model: EstimatedModel, profile: PolicyProfile,
               clip_base: float = np.inf, indices=None,
               table: np.ndarray | None = None) -> WeightTables:
    """Evaluate the marginal-ratio table at the realized data points."""
    if table is None:
        table = mu_weight_table(model, profile, clip_base)
    idx = np.arange(dataset.n) if indices is None else np.asarray(indices)
    t_hor = table.shape[0]
    states = dataset.states[idx][:, :t_hor]
    t_idx = np.broadcast_to(np.arange(t_hor), states.shape)
    at_data = table[t_idx, states, dataset.actions_p1[idx], dataset.actions_p2[idx]]
    mu = np.concatenate([np.ones((idx.size, 1)), at_data], axis=1)
    return WeightTables(mu=mu, clip_base=clip_base)


# --- cross-fitting ------------------------------------------------------------


@dataclass(frozen=True)
class FoldNuisance:
    """Everything fitted from the data outside one fold."""

    q_hat: ValueTables
    behavior_hat: PolicyProfile | None  # None means the true behavior was used
    model: EstimatedModel | None = None
    mu_table: np.ndarray | None = None


@dataclass(frozen=True)
class NuisanceSet:
    """Per-fold nuisances plus the clip base they were built with."""

    folds: tuple
    clip_base: float
    fold_of: np.ndarray

    def fold(self, k: int) -> FoldNuisance:
        try:
            return self.folds[k]
        except IndexError as exc:
            raise MissingNuisance(f"no nuisances for fold {k}") from exc


def fit_nuisances_crossfit(folded: FoldedDataset, game: GameSpec,
                           profile: PolicyProfile,
                           options: NuisanceOptions = NuisanceOptions()):
    """Fit all nuisances with cross-fitting; returns (NuisanceSet, WeightTables).

    Fold-k nuisances depend only on the data outside fold k; the returned
    weights evaluate each trajectory with its own fold's nuisances.
    """
    dataset = folded.dataset
    shape = game.shape
    t_hor = game.horizon
    clip = resolve_clip_base(options, dataset)
    options = replace(options, clip_base=clip)
    folds = []
    rho = np.empty((dataset.n, t_hor + 1))
    mu = np.empty((dataset.n, t_hor + 1))
    for k in range(folded.num_folds):
        oof = folded.out_of_fold_indices(k)
        mine = folded.fold_indices(k)
        model = estimate_model(dataset, shape, options.smoothing, indices=oof)
        if options.use_known_behavior and dataset.behavior_known is not None:
            behavior, behavior_hat = dataset.behavior_known, None
        else:
            behavior = estimate_behavior_policy(dataset, shape, options.smoothing,
                                                indices=oof)
            behavior_hat = behavior
        if options.q_source == "model":
            q_hat = q_hat_model(model, game, profile)
        else:
            q_hat = q_hat_td(dataset, game, profile, options.td_learning_rate,
                             options.td_sweeps, indices=oof)
        table = mu_weight_table(model, profile, options.clip_base)
        rho[mine] = rho_weights(dataset, profile, behavior, options.clip_base,
                                indices=mine).rho
        mu[mine] = mu_weights(dataset, model, profile, options.clip_base,
                              indices=mine, table=table).mu
        folds.append(FoldNuisance(q_hat=q_hat, behavior_hat=behavior_hat,
                                  model=model, mu_table=table))
    nuisances = NuisanceSet(folds=tuple(folds), clip_base=options.clip_base,
                            fold_of=np.array(folded.fold_of))
    return nuisances, WeightTables(rho=rho, mu=mu, clip_base=options.clip_base)


def exact_nuisances(game: GameSpec, folded: FoldedDataset, profile: PolicyProfile,
                    behavior: PolicyProfile | None = None):
    """Oracle nuisances (exact Q, exact rho, exact mu) for every fold.

    Used by the unbiasedness/CLT studies: plugging these into the DR and DRL
    estimators makes them exactly unbiased.
    """
    dataset = folded.dataset
    if behavior is None:
        behavior = dataset.behavior_known
    if behavior is None:
        raise MissingNuisance("exact nuisances need the behavior profile")
    q_exact = evaluate_profile(game, profile)
    p_e = marginal_distribution(game, profile).table
    p_b = marginal_distribution(game, behavior).table
    with np.errstate(divide="ignore", invalid="ignore"):
        mu_table = np.where(p_e > 0.0, p_e / p_b, 0.0)
    fold = FoldNuisance(q_hat=q_exact, behavior_hat=None,
                        model=model_from_game(game, behavior), mu_table=mu_table)
    folds = tuple(fold for _ in range(folded.num_folds))
    rho = rho_weights(dataset, profile, behavior).rho
    mu = mu_weights(dataset, folds[0].model, profile, table=mu_table).mu
    nuisances = NuisanceSet(folds=folds, clip_base=np.inf,
                            fold_of=np.array(folded.fold_of))
    return nuisances, WeightTables(rho=rho, mu=mu, clip_base=np.inf)
