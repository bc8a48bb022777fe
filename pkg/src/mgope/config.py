"""The experiment configuration document.

Flat INI text: one section per module, one key per option.  Unknown sections
or keys are configuration errors, as are malformed values.  The same document
drives every CLI subcommand; programmatic construction goes through
:class:`ExperimentConfig` directly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .data import read_policy_profile
from .envs import (
    RbrpsConfig,
    SoccerConfig,
    build_markov_soccer,
    build_rbrps,
    mix_policies,
    rbrps1_config,
    rbrps2_default_config,
)
from .errors import ConfigError
from .exploit import (
    ExploitOptions,
    FiniteSetClass,
    FullMarkovClass,
    MixtureClass,
    OptimizerOptions,
)
from .game import (
    GameSpec,
    MarkovPolicy,
    Player,
    PolicyProfile,
    RewardNoise,
    deterministic_policy,
    nash_equilibrium,
    uniform_policy,
)
from .learning import minimax_q
from .nuisance import NuisanceOptions

__all__ = ["ExperimentConfig", "load_config"]

_SCHEMA = {
    "experiment": {"kind", "trials", "n", "methods", "folds", "seed", "budget"},
    "environment": {"kind", "horizon", "discount", "reward_noise",
                    "init_pos_a", "init_pos_b", "init_ball"},
    "rbrps.matrices": None,   # free-form: one key per state
    "rbrps.graph": None,
    "policies": {"pi_d", "minimax_q_episodes", "minimax_q_exploration",
                 "minimax_q_seed", "anchor_p1", "anchor_p2",
                 "behavior_alpha_p1", "behavior_alpha_p2",
                 "target_alpha_p1", "target_alpha_p2"},
    "classes": {"kind", "anchor_p1", "anchor_p2"},
    "nuisance": {"smoothing", "clip_base", "q_source", "td_learning_rate",
                 "td_sweeps", "behavior"},
    "optimizer": {"restarts", "sweeps", "grid_points", "golden_tol",
                  "saddle_grid", "seed"},
    "evaluation": {"num_games"},
    "output": {"csv", "log"},
}

_DEFAULT_BUDGET = 50_000_000  # max total n * T * trials per experiment


@dataclass
class ExperimentConfig:
    """Parsed experiment description plus builders for every derived object."""

    kind: str = "ope"
    trials: int = 100
    n_list: tuple = (250, 500, 1000)
    methods: tuple = ("IS", "MIS", "DM", "DR", "DRL")
    folds: int = 2
    seed: int = 1
    budget: int = _DEFAULT_BUDGET

    env_kind: str = "rbrps1"
    horizon: int | None = None
    discount: float | None = None
    reward_noise: RewardNoise = RewardNoise()
    soccer: SoccerConfig = field(default_factory=SoccerConfig)
    rbrps_custom: RbrpsConfig | None = None

    pi_d_source: str = "nash"   # nash | minimax_q | file:<path>
    minimax_q_episodes: int = 50_000
    minimax_q_exploration: float = 0.2
    minimax_q_seed: int = 0
    anchor_p1: str = "rock"
    anchor_p2: str = "paper"
    behavior_alpha_p1: float = 0.7
    behavior_alpha_p2: float = 0.7
    target_alpha_p1: float = 0.9
    target_alpha_p2: float = 0.5

    class_kind: str = "full"    # full | mixture | mixture-per-state
    class_anchor_p1: str | None = None
    class_anchor_p2: str | None = None

    nuisance: NuisanceOptions = field(default_factory=NuisanceOptions)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    num_games: int = 10_000
    csv_path: str | None = None
    log_path: str | None = None
    threads: int = 1

    # -- builders -------------------------------------------------------------

    def build_game(self) -> GameSpec:
        if self.env_kind in ("rbrps1", "rbrps2", "rbrps-custom"):
            if self.env_kind == "rbrps1":
                base = rbrps1_config()
            elif self.env_kind == "rbrps2":
                base = rbrps2_default_config()
            else:
                if self.rbrps_custom is None:
                    raise ConfigError("rbrps-custom requires matrices and graph sections")
                base = self.rbrps_custom
            cfg = RbrpsConfig(payoff_matrices=base.payoff_matrices,
                              transition_graph=base.transition_graph,
                              horizon=self.horizon or base.horizon,
                              discount=self.discount if self.discount is not None
                              else base.discount)
            return build_rbrps(cfg, reward_noise=self.reward_noise)
        if self.env_kind == "soccer":
            cfg = self.soccer
            if self.horizon is not None or self.discount is not None:
                cfg = SoccerConfig(init_pos_a=cfg.init_pos_a, init_pos_b=cfg.init_pos_b,
                                   init_ball=cfg.init_ball,
                                   horizon=self.horizon or cfg.horizon,
                                   discount=self.discount if self.discount is not None
                                   else cfg.discount)
            return build_markov_soccer(cfg)
        raise ConfigError(f"unknown environment kind {self.env_kind!r}")

    def build_pi_d(self, game: GameSpec) -> PolicyProfile:
        """The near-optimal profile the behavior/target mixes are built around."""
        if self.pi_d_source == "nash":
            profile, _ = nash_equilibrium(game)
            return profile
        if self.pi_d_source == "minimax_q":
            return minimax_q(game, self.minimax_q_episodes,
                             exploration=self.minimax_q_exploration,
                             seed=self.minimax_q_seed)
        if self.pi_d_source.startswith("file:"):
            return read_policy_profile(self.pi_d_source[5:])
        raise ConfigError(f"unknown pi_d source {self.pi_d_source!r}")

    def _anchor(self, game: GameSpec, player: Player, name: str) -> MarkovPolicy:
        shape = game.shape
        if name == "uniform":
            return uniform_policy(shape, player)
        named = {"rock": 0, "paper": 1, "scissors": 2}
        if name in named:
            return deterministic_policy(shape, player, named[name])
        if name.startswith("action:"):
            return deterministic_policy(shape, player, int(name.split(":", 1)[1]))
        raise ConfigError(f"unknown anchor {name!r}")

    def build_behavior(self, game: GameSpec, pi_d: PolicyProfile) -> PolicyProfile:
        return PolicyProfile(
            mix_policies(pi_d.p1, self._anchor(game, Player.P1, self.anchor_p1),
                         self.behavior_alpha_p1),
            mix_policies(pi_d.p2, self._anchor(game, Player.P2, self.anchor_p2),
                         self.behavior_alpha_p2))

    def build_target(self, game: GameSpec, pi_d: PolicyProfile) -> PolicyProfile:
        return PolicyProfile(
            mix_policies(pi_d.p1, self._anchor(game, Player.P1, self.anchor_p1),
                         self.target_alpha_p1),
            mix_policies(pi_d.p2, self._anchor(game, Player.P2, self.anchor_p2),
                         self.target_alpha_p2))

    def build_classes(self, game: GameSpec, pi_d: PolicyProfile):
        if self.class_kind == "full":
            return FullMarkovClass(Player.P1), FullMarkovClass(Player.P2)
        per_state = self.class_kind == "mixture-per-state"
        if self.class_kind not in ("mixture", "mixture-per-state"):
            raise ConfigError(f"unknown class kind {self.class_kind!r}")
        anchor1 = self._anchor(game, Player.P1, self.class_anchor_p1 or self.anchor_p1)
        anchor2 = self._anchor(game, Player.P2, self.class_anchor_p2 or self.anchor_p2)
        return (MixtureClass(Player.P1, pi_d.p1, anchor1, per_state),
                MixtureClass(Player.P2, pi_d.p2, anchor2, per_state))

    def exploit_options(self) -> ExploitOptions:
        return ExploitOptions(nuisance=self.nuisance, optimizer=self.optimizer)

    def check_budget(self, game: GameSpec) -> None:
        total = sum(n * game.horizon * self.trials for n in self.n_list)
        if total > self.budget:
            from .errors import BudgetExceeded
            raise BudgetExceeded(
                f"n*T*trials = {total} exceeds the budget guard {self.budget}")


# --- parsing --------------------------------------------------------------------


def _parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(x) for x in row.split()] for row in text.split(";")]
        return np.asarray(rows)
    except ValueError as exc:
        raise ConfigError(f"bad matrix literal {text!r}") from exc


def _parse_noise(text: str) -> RewardNoise:
    if text == "deterministic":
        return RewardNoise()
    for kind in ("uniform", "gaussian"):
        if text.startswith(kind + ":"):
            return RewardNoise(kind, float(text.split(":", 1)[1]))
    raise ConfigError(f"bad reward_noise {text!r}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config document; unknown keys are errors."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path!r} not found")

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SCHEMA[section]
        if allowed is not None:
            for key in parser[section]:
                if key not in allowed:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")

    cfg = ExperimentConfig()
    try:
        _apply(cfg, parser)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg


def _apply(cfg: ExperimentConfig, parser: configparser.ConfigParser) -> None:
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        cfg.kind = sec.get("kind", cfg.kind)
        if cfg.kind not in ("ope", "selection", "soccer"):
            raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
        cfg.trials = sec.getint("trials", cfg.trials)
        if "n" in sec:
            cfg.n_list = tuple(int(x) for x in sec["n"].split(","))
        if "methods" in sec:
            cfg.methods = tuple(m.strip() for m in sec["methods"].split(","))
            for m in cfg.methods:
                if m not in ("IS", "MIS", "DM", "DR", "DRL"):
                    raise ConfigError(f"unknown method {m!r}")
        cfg.folds = sec.getint("folds", cfg.folds)
        cfg.seed = sec.getint("seed", cfg.seed)
        cfg.budget = sec.getint("budget", cfg.budget)

    if parser.has_section("environment"):
        sec = parser["environment"]
        cfg.env_kind = sec.get("kind", cfg.env_kind)
        if "horizon" in sec:
            cfg.horizon = sec.getint("horizon")
        if "discount" in sec:
            cfg.discount = sec.getfloat("discount")
        if "reward_noise" in sec:
            cfg.reward_noise = _parse_noise(sec["reward_noise"])
        soc = {}
        if "init_pos_a" in sec:
            soc["init_pos_a"] = sec.getint("init_pos_a")
        if "init_pos_b" in sec:
            soc["init_pos_b"] = sec.getint("init_pos_b")
        if "init_ball" in sec:
            soc["init_ball"] = Player(sec.getint("init_ball"))
        if soc:
            cfg.soccer = SoccerConfig(**soc)

    if parser.has_section("rbrps.matrices") or parser.has_section("rbrps.graph"):
        matrices = {}
        if parser.has_section("rbrps.matrices"):
            for key, text in parser["rbrps.matrices"].items():
                if not key.startswith("state"):
                    raise ConfigError(f"matrix keys look like 'stateN', got {key!r}")
                matrices[int(key[5:])] = _parse_matrix(text)
        graph = {}
        if parser.has_section("rbrps.graph"):
            for key, text in parser["rbrps.graph"].items():
                state_part, outcome = key.split(".", 1)
                graph[(int(state_part[5:]), outcome)] = int(text)
        ordered = tuple(matrices[i] for i in sorted(matrices))
        if len(ordered) != len(matrices) or sorted(matrices) != list(range(len(matrices))):
            raise ConfigError("matrices must be state0..stateN without gaps")
        cfg.rbrps_custom = RbrpsConfig(payoff_matrices=ordered, transition_graph=graph,
                                       horizon=cfg.horizon or 1,
                                       discount=cfg.discount if cfg.discount is not None else 1.0)
        cfg.env_kind = "rbrps-custom"

    if parser.has_section("policies"):
        sec = parser["policies"]
        cfg.pi_d_source = sec.get("pi_d", cfg.pi_d_source)
        cfg.minimax_q_episodes = sec.getint("minimax_q_episodes", cfg.minimax_q_episodes)
        cfg.minimax_q_exploration = sec.getfloat("minimax_q_exploration",
                                                 cfg.minimax_q_exploration)
        cfg.minimax_q_seed = sec.getint("minimax_q_seed", cfg.minimax_q_seed)
        cfg.anchor_p1 = sec.get("anchor_p1", cfg.anchor_p1)
        cfg.anchor_p2 = sec.get("anchor_p2", cfg.anchor_p2)
        cfg.behavior_alpha_p1 = sec.getfloat("behavior_alpha_p1", cfg.behavior_alpha_p1)
        cfg.behavior_alpha_p2 = sec.getfloat("behavior_alpha_p2", cfg.behavior_alpha_p2)
        cfg.target_alpha_p1 = sec.getfloat("target_alpha_p1", cfg.target_alpha_p1)
        cfg.target_alpha_p2 = sec.getfloat("target_alpha_p2", cfg.target_alpha_p2)

    if parser.has_section("classes"):
        sec = parser["classes"]
        cfg.class_kind = sec.get("kind", cfg.class_kind)
        cfg.class_anchor_p1 = sec.get("anchor_p1", cfg.class_anchor_p1)
        cfg.class_anchor_p2 = sec.get("anchor_p2", cfg.class_anchor_p2)

    if parser.has_section("nuisance"):
        sec = parser["nuisance"]
        clip = sec.get("clip_base", "auto")
        cfg.nuisance = NuisanceOptions(
            smoothing=sec.getfloat("smoothing", 0.5),
            clip_base=None if clip == "auto" else float(clip),
            q_source=sec.get("q_source", "model"),
            td_learning_rate=sec.getfloat("td_learning_rate", 0.05),
            td_sweeps=sec.getint("td_sweeps", 200),
            use_known_behavior=sec.get("behavior", "known") == "known")

    if parser.has_section("optimizer"):
        sec = parser["optimizer"]
        cfg.optimizer = OptimizerOptions(
            restarts=sec.getint("restarts", 8),
            sweeps=sec.getint("sweeps", 16),
            grid_points=sec.getint("grid_points", 101),
            golden_tol=sec.getfloat("golden_tol", 1e-4),
            saddle_grid=sec.getint("saddle_grid", 21),
            seed=sec.getint("seed", 0))

    if parser.has_section("evaluation"):
        cfg.num_games = parser["evaluation"].getint("num_games", cfg.num_games)

    if parser.has_section("output"):
        sec = parser["output"]
        cfg.csv_path = sec.get("csv", None)
        cfg.log_path = sec.get("log", None)
