"""Off-policy value estimators and exact asymptotic-variance oracles.

Five estimators of the player-1 discounted value: importance sampling (IS),
marginalized importance sampling (MIS), the direct method (DM), doubly robust
(DR) and double reinforcement learning (DRL).  Each is a pure fold over
per-trajectory contributions; the player-2 estimate is the exact negation.
Reductions run trajectory-major with compensated summation so results do not
depend on worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldedDataset, kahan_sum
from .errors import FoldMismatch, MissingNuisance, OverlapViolated, WeightShapeMismatch
from .game import (
    GameSpec,
    PolicyProfile,
    evaluate_profile,
    marginal_distribution,
)
from .nuisance import NuisanceSet, WeightTables

__all__ = [
    "EstimatorResult",
    "VarianceReport",
    "estimate_is",
    "estimate_mis",
    "estimate_dm",
    "estimate_dr",
    "estimate_drl",
    "asymptotic_variance",
    "METHODS",
]

METHODS = ("IS", "MIS", "DM", "DR", "DRL")


@dataclass(frozen=True)
class EstimatorResult:
    """Point estimate with its per-trajectory influence values.

    ``estimate`` is the mean of ``per_trajectory``; ``per_fold`` maps a fold
    to the mean over that fold's trajectories (empty for unfolded input).
    """

    method: str
    estimate: float
    per_trajectory: np.ndarray
    per_fold: dict
    n: int

    @property
    def player2(self) -> float:
        return -self.estimate


def _unwrap(data) -> tuple[Dataset, FoldedDataset | None]:
    if isinstance(data, FoldedDataset):
        return data.dataset, data
    return data, None


def _finish(method: str, psi: np.ndarray, folded: FoldedDataset | None) -> EstimatorResult:
    estimate = kahan_sum(psi) / psi.size
    per_fold = {}
    if folded is not None:
        for k in range(folded.num_folds):
            members = folded.fold_indices(k)
            per_fold[k] = kahan_sum(psi[members]) / members.size
    return EstimatorResult(method=method, estimate=estimate, per_trajectory=psi,
                           per_fold=per_fold, n=psi.size)


def _check_weights(weights: np.ndarray | None, n: int, horizon: int, what: str):
    if weights is None:
        raise WeightShapeMismatch(f"{what} weights missing from WeightTables")
    if weights.shape != (n, horizon + 1):
        raise WeightShapeMismatch(
            f"{what} weights shaped {weights.shape}, expected {(n, horizon + 1)}")


def estimate_is(data, weights: WeightTables, discount: float) -> EstimatorResult:
    """Importance sampling: mean of sum_t g^(t-1) rho_t r_t."""
    dataset, folded = _unwrap(data)
    _check_weights(weights.rho, dataset.n, dataset.horizon, "rho")
    gammas = discount ** np.arange(dataset.horizon)
    psi = (weights.rho[:, 1:] * dataset.rewards) @ gammas
    return _finish("IS", psi, folded)


def estimate_mis(data, weights: WeightTables, discount: float) -> EstimatorResult:
    """Marginalized importance sampling: mean of sum_t g^(t-1) mu_t r_t."""
    dataset, folded = _unwrap(data)
    _check_weights(weights.mu, dataset.n, dataset.horizon, "mu")
    gammas = discount ** np.arange(dataset.horizon)
    psi = (weights.mu[:, 1:] * dataset.rewards) @ gammas
    return _finish("MIS", psi, folded)


def _fold_values_at_data(folded: FoldedDataset, nuisances: NuisanceSet,
                         profile: PolicyProfile):
    """Gather Q-hat at the realized (t,s,a1,a2) and V-hat = E_pi[Q-hat] at (t,s)."""
    dataset = folded.dataset
    if len(nuisances.fold_of) != dataset.n:
        raise FoldMismatch("nuisances were fitted for a different dataset")
    if not np.array_equal(nuisances.fold_of, folded.fold_of):
        raise FoldMismatch("nuisances were fitted for a different fold assignment")
    if len(nuisances.folds) < folded.num_folds:
        raise MissingNuisance("missing per-fold nuisances")
    t_hor = dataset.horizon
    q_at = np.empty((dataset.n, t_hor))
    v_at = np.empty((dataset.n, t_hor))
    t_idx = np.arange(t_hor)
    for k in range(folded.num_folds):
        members = folded.fold_indices(k)
        fold = nuisances.fold(k)
        v_table = np.einsum("tsab,tsa,tsb->ts", fold.q_hat.q,
                            profile.p1.table, profile.p2.table)
        states = dataset.states[members][:, :t_hor]
        grid = np.broadcast_to(t_idx, states.shape)
        q_at[members] = fold.q_hat.q[grid, states,
                                     dataset.actions_p1[members],
                                     dataset.actions_p2[members]]
        v_at[members] = v_table[grid, states]
    return q_at, v_at


def estimate_dm(folded: FoldedDataset, nuisances: NuisanceSet,
                profile: PolicyProfile) -> EstimatorResult:
    """Direct method: mean over trajectories of V-hat_{1,1}(s_1)."""
    dataset = folded.dataset
    if len(nuisances.folds) < folded.num_folds:
        raise MissingNuisance("missing per-fold nuisances")
    psi = np.empty(dataset.n)
    for k in range(folded.num_folds):
        members = folded.fold_indices(k)
        fold = nuisances.fold(k)
        v1 = np.einsum("sab,sa,sb->s", fold.q_hat.q[0],
                       profile.p1.table[0], profile.p2.table[0])
        psi[members] = v1[dataset.states[members, 0]]
    return _finish("DM", psi, folded)


def estimate_dr(folded: FoldedDataset, nuisances: NuisanceSet,
                weights: WeightTables, profile: PolicyProfile,
                discount: float) -> EstimatorResult:
    """Doubly robust: rho_t (r_t - Q-hat_t) + rho_{t-1} V-hat_t, discounted."""
    dataset = folded.dataset
    _check_weights(weights.rho, dataset.n, dataset.horizon, "rho")
    q_at, v_at = _fold_values_at_data(folded, nuisances, profile)
    gammas = discount ** np.arange(dataset.horizon)
    rho = weights.rho
    psi = (rho[:, 1:] * (dataset.rewards - q_at) + rho[:, :-1] * v_at) @ gammas
    return _finish("DR", psi, folded)


def estimate_drl(folded: FoldedDataset, nuisances: NuisanceSet,
                 weights: WeightTables, profile: PolicyProfile,
                 discount: float) -> EstimatorResult:
    """Double reinforcement learning: DR with marginal ratios mu in place of rho."""
    dataset = folded.dataset
    _check_weights(weights.mu, dataset.n, dataset.horizon, "mu")
    q_at, v_at = _fold_values_at_data(folded, nuisances, profile)
    gammas = discount ** np.arange(dataset.horizon)
    mu = weights.mu
    psi = (mu[:, 1:] * (dataset.rewards - q_at) + mu[:, :-1] * v_at) @ gammas
    return _finish("DRL", psi, folded)


# --- variance oracles ---------------------------------------------------------


@dataclass(frozen=True)
class VarianceReport:
    """Exact asymptotic variances: the efficiency bound and the DR variance."""

    upsilon_eb: float
    upsilon_dr: float
    empirical_var: float = float("nan")


def asymptotic_variance(game: GameSpec, target: PolicyProfile,
                        behavior: PolicyProfile) -> VarianceReport:
    """Exact efficiency bound and DR asymptotic variance by dynamic programming.

    The efficiency bound weights the per-cell conditional variance of
    ``r_t + g V_{t+1}`` by ``mu_t^2`` under the behavior occupancy; the DR
    variance weights it by the exact second moment of the cumulative ratio,
    propagated forward as ``W_{t+1}(s',a',b') = [sum W_t P] pi^b eta'^2``.
    Raises :class:`OverlapViolated` if the target walks where the behavior
    never does.
    """
    target.check_shape(game.shape)
    behavior.check_shape(game.shape)
    t_hor, s_num = game.horizon, game.num_states
    values = evaluate_profile(game, target)
    v_ext = np.vstack([values.v, np.zeros(s_num)])
    p_e = marginal_distribution(game, target).table
    p_b = marginal_distribution(game, behavior).table

    mean_v1 = float(game.initial_dist @ values.v[0])
    var_v11 = float(game.initial_dist @ (values.v[0] - mean_v1) ** 2)
    upsilon_eb = var_v11
    upsilon_dr = var_v11

    w_second = None  # E_b[rho_t^2 1{s_t,a_t}] as a (S, A1, A2) table
    state_w = np.asarray(game.initial_dist, dtype=float)
    state_reach = np.asarray(game.initial_dist, dtype=float)
    for t in range(t_hor):
        if np.any((p_e[t] > 0.0) & (p_b[t] <= 0.0)):
            raise OverlapViolated(f"target occupancy not covered by behavior at step {t + 1}")
        _, cond_var = game.reward_conditional_moments(v_ext[t + 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_sq_pb = np.where(p_e[t] > 0.0, p_e[t] ** 2 / p_b[t], 0.0)
        upsilon_eb += game.discount ** (2 * t) * float((mu_sq_pb * cond_var).sum())

        joint_b = np.einsum("sa,sb->sab", behavior.p1.table[t], behavior.p2.table[t])
        joint_e = np.einsum("sa,sb->sab", target.p1.table[t], target.p2.table[t])
        reach = state_reach[:, None, None] * joint_b
        if np.any((state_reach > 0.0)[:, None, None] & (joint_e > 0.0) & (joint_b <= 0.0)):
            raise OverlapViolated(f"infinite density ratio on a reachable cell at step {t + 1}")
        with np.errstate(divide="ignore", invalid="ignore"):
            eta_sq = np.where(joint_b > 0.0, (joint_e / joint_b) ** 2, 0.0)
        w_second = state_w[:, None, None] * joint_b * eta_sq
        upsilon_dr += game.discount ** (2 * t) * float((w_second * cond_var).sum())
        if t + 1 < t_hor:
            state_w = game.push_state_action(w_second)
            state_reach = game.push_state_action(reach)
    return VarianceReport(upsilon_eb=upsilon_eb, upsilon_dr=upsilon_dr)
