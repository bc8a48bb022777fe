"""Experiment orchestration: the OPE RMSE study, the best-profile selection
study, and the soccer win-rate matrix.

Every trial draws its seeds from counter-based streams keyed by the base seed
and the trial coordinates, so reports are reproducible bit-for-bit and do not
depend on the worker count.  Reports are CSV tables plus a JSON-lines raw
trial log from which every aggregate can be recomputed.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .config import ExperimentConfig
from .data import assign_folds, simulate
from .errors import IoError
from .exploit import (
    CrossFitObjective,
    estimate_exploitability,
    select_best_profile,
    true_class_exploitability,
)
from .game import GameSpec, PolicyProfile, exploitability

__all__ = [
    "ReportRow",
    "ReportTable",
    "run_ope_experiment",
    "run_selection_experiment",
    "run_soccer_experiment",
    "winrate",
    "winrate_breakdown",
    "run_experiment",
]


@dataclass(frozen=True)
class ReportRow:
    key1: str
    key2: str
    metric: str
    value: float
    stderr: float
    trials: int


@dataclass
class ReportTable:
    rows: list = field(default_factory=list)
    raw_log: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["key1,key2,metric,value,stderr,trials"]
        for row in self.rows:
            lines.append(f"{row.key1},{row.key2},{row.metric},"
                         f"{row.value!r},{row.stderr!r},{row.trials}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        try:
            with open(path, "w", encoding="ascii") as fh:
                fh.write(self.to_csv())
        except OSError as exc:
            raise IoError(str(exc)) from exc

    def write_log(self, path) -> None:
        try:
            with open(path, "w", encoding="ascii") as fh:
                for entry in self.raw_log:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
        except OSError as exc:
            raise IoError(str(exc)) from exc

    def lookup(self, key1: str, key2: str) -> ReportRow:
        for row in self.rows:
            if row.key1 == key1 and row.key2 == key2:
                return row
        raise KeyError((key1, key2))


def _map_trials(worker, payloads, threads: int):
    if threads <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, payloads))


def _rmse_and_se(errors: np.ndarray):
    """RMSE with a delta-method standard error: sd(err^2) / (2 RMSE sqrt(m))."""
    sq = errors ** 2
    rmse = float(np.sqrt(sq.mean()))
    if rmse == 0.0 or errors.size < 2:
        return rmse, 0.0
    se = float(sq.std(ddof=1) / (2.0 * rmse * np.sqrt(errors.size)))
    return rmse, se


# --- OPE RMSE study -------------------------------------------------------------


def _ope_trial(payload):
    (game, behavior, target, classes, methods, options, n, folds, seed, trial) = payload
    data_seed = rng.path_key(seed, "ope-data", n, trial)
    fold_seed = rng.path_key(seed, "ope-folds", n, trial)
    dataset = simulate(game, behavior, n, data_seed)
    folded = assign_folds(dataset, folds, fold_seed)
    objective = CrossFitObjective(folded, game, options)
    out = []
    for method in methods:
        est = estimate_exploitability(folded, game, target, classes, method,
                                      options, objective=objective)
        out.append((n, method, trial, est.total))
    return out


def run_ope_experiment(config: ExperimentConfig) -> ReportTable:
    """Reproduce the exploitability-evaluation RMSE table at desk scale."""
    game = config.build_game()
    config.check_budget(game)
    pi_d = config.build_pi_d(game)
    behavior = config.build_behavior(game, pi_d)
    target = config.build_target(game, pi_d)
    classes = config.build_classes(game, pi_d)
    options = config.exploit_options()
    truth = true_class_exploitability(game, target, classes, config.optimizer)

    payloads = [(game, behavior, target, classes, config.methods, options,
                 n, config.folds, config.seed, trial)
                for n in config.n_list for trial in range(config.trials)]
    results = _map_trials(_ope_trial, payloads, getattr(config, "threads", 1))

    table = ReportTable()
    errors = {(n, m): [] for n in config.n_list for m in config.methods}
    for chunk in results:
        for n, method, trial, estimate in chunk:
            errors[(n, method)].append(estimate - truth)
            table.raw_log.append({"experiment": "ope", "n": n, "method": method,
                                  "trial": trial, "estimate": estimate,
                                  "truth": truth, "error": estimate - truth})
    for n in config.n_list:
        for method in config.methods:
            errs = np.array(errors[(n, method)])
            rmse, se = _rmse_and_se(errs)
            table.rows.append(ReportRow(str(n), method, "rmse", rmse, se, errs.size))
    return table


# --- selection study -------------------------------------------------------------


def _selection_trial(payload):
    (game, behavior, classes, methods, options, n, folds, seed, trial) = payload
    data_seed = rng.path_key(seed, "sel-data", n, trial)
    fold_seed = rng.path_key(seed, "sel-folds", n, trial)
    dataset = simulate(game, behavior, n, data_seed)
    folded = assign_folds(dataset, folds, fold_seed)
    objective = CrossFitObjective(folded, game, options)
    out = []
    for method in methods:
        profile, diag = select_best_profile(folded, game, classes, method,
                                            options, objective=objective)
        out.append((method, trial, exploitability(game, profile),
                    float(diag.get("gap", float("nan")))))
    return out


def run_selection_experiment(config: ExperimentConfig) -> ReportTable:
    """Select per-method profiles and score them with the exact oracle."""
    game = config.build_game()
    config.check_budget(game)
    pi_d = config.build_pi_d(game)
    behavior = config.build_behavior(game, pi_d)
    classes = config.build_classes(game, pi_d)
    options = config.exploit_options()
    n = config.n_list[0]

    payloads = [(game, behavior, classes, config.methods, options,
                 n, config.folds, config.seed, trial)
                for trial in range(config.trials)]
    results = _map_trials(_selection_trial, payloads, getattr(config, "threads", 1))

    table = ReportTable()
    behavior_exp = exploitability(game, behavior)
    table.rows.append(ReportRow(config.env_kind, "behavior", "exploitability",
                                behavior_exp, 0.0, 1))
    per_method = {m: [] for m in config.methods}
    for chunk in results:
        for method, trial, exp, gap in chunk:
            per_method[method].append(exp)
            table.raw_log.append({"experiment": "selection", "method": method,
                                  "trial": trial, "exploitability": exp,
                                  "gap": gap, "n": n})
    for method in config.methods:
        vals = np.array(per_method[method])
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        table.rows.append(ReportRow(config.env_kind, method, "exploitability",
                                    float(vals.mean()), se, vals.size))
    return table


# --- win rates -------------------------------------------------------------------


def winrate_breakdown(game: GameSpec, profile: PolicyProfile, num_games: int,
                      seed: int):
    """(player-1 wins, player-2 wins, draws) as fractions of ``num_games``.

    A win is an episode whose undiscounted reward sum is positive (player 1's
    goal) or negative (player 2's); horizon-exhausted episodes are draws.
    """
    dataset = simulate(game, profile, num_games, seed)
    totals = dataset.rewards.sum(axis=1)
    wins1 = float((totals > 0).mean())
    wins2 = float((totals < 0).mean())
    return wins1, wins2, 1.0 - wins1 - wins2


def winrate(game: GameSpec, profile: PolicyProfile, num_games: int, seed: int) -> float:
    """Fraction of episodes ending in a player-1 goal."""
    return winrate_breakdown(game, profile, num_games, seed)[0]


def _soccer_trial(payload):
    (game, behavior, classes, methods, options, n, folds, seed, trial) = payload
    data_seed = rng.path_key(seed, "soccer-data", n, trial)
    fold_seed = rng.path_key(seed, "soccer-folds", n, trial)
    dataset = simulate(game, behavior, n, data_seed)
    folded = assign_folds(dataset, folds, fold_seed)
    objective = CrossFitObjective(folded, game, options)
    selected = {}
    for method in methods:
        profile, _ = select_best_profile(folded, game, classes, method,
                                         options, objective=objective)
        selected[method] = profile
    return trial, selected


def run_soccer_experiment(config: ExperimentConfig) -> ReportTable:
    """Per-method selection on shared datasets, then the pairwise win-rate matrix."""
    game = config.build_game()
    config.check_budget(game)
    pi_d = config.build_pi_d(game)
    behavior = config.build_behavior(game, pi_d)
    classes = config.build_classes(game, pi_d)
    options = config.exploit_options()
    n = config.n_list[0]

    payloads = [(game, behavior, classes, config.methods, options,
                 n, config.folds, config.seed, trial)
                for trial in range(config.trials)]
    results = _map_trials(_soccer_trial, payloads, getattr(config, "threads", 1))

    names = ("behavior",) + tuple(config.methods)
    cells = {(r, c): [] for r in names for c in names}
    table = ReportTable()
    for trial, selected in results:
        row_pols = {"behavior": behavior.p1}
        col_pols = {"behavior": behavior.p2}
        for method, prof in selected.items():
            row_pols[method] = prof.p1
            col_pols[method] = prof.p2
        for rname in names:
            for cname in names:
                pair = PolicyProfile(row_pols[rname], col_pols[cname])
                wr_seed = rng.path_key(config.seed, "winrate", trial, rname, cname)
                wins1, wins2, draws = winrate_breakdown(game, pair,
                                                        config.num_games, wr_seed)
                cells[(rname, cname)].append(wins1)
                table.raw_log.append({"experiment": "soccer", "trial": trial,
                                      "p1": rname, "p2": cname, "winrate_p1": wins1,
                                      "winrate_p2": wins2, "draws": draws})
    for rname in names:
        for cname in names:
            vals = np.array(cells[(rname, cname)])
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            table.rows.append(ReportRow(rname, cname, "winrate",
                                        float(vals.mean()), se, vals.size))
    return table


def run_experiment(config: ExperimentConfig) -> ReportTable:
    runner = {"ope": run_ope_experiment,
              "selection": run_selection_experiment,
              "soccer": run_soccer_experiment}[config.kind]
    return runner(config)
