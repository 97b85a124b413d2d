"""Training orchestration: one or two agents sharing a simulator, strictly
alternating red then blue within every timestep."""
from __future__ import annotations

import csv
import io
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .agents import (LEARNABLE, AgentPolicy, BasicAgent, Hyperparams, attacker_q_key, defender_q_key,
                     load_model, make_agent, save_model)
from .scenario import Scenario, resolve_scenario
from .wrappers import AttackerWrapper, DefenderWrapper, SharedEnv, invalid_mode_name, parse_invalid_mode


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    scenario: str = "toyctf"
    total_timesteps: int = 300_000
    max_episode_len: int = 2000
    availability_threshold: float = 0.6
    availability_penalty: float = -5000.0
    invalid_mode: str = "zero"
    no_reset: bool = False
    red_algo: str = "ppo"
    blue_algo: str = "none"
    seed: int = 0
    red_checkpoint: Optional[str] = None
    blue_checkpoint: Optional[str] = None
    red_hyperparams: Optional[dict] = None
    blue_hyperparams: Optional[dict] = None

    def validate(self) -> None:
        if not 0 < self.availability_threshold <= 1:
            raise ConfigError("availability_threshold must be in (0, 1]")
        if self.max_episode_len < 1:
            raise ConfigError("max_episode_len must be positive")
        if self.total_timesteps < self.max_episode_len:
            raise ConfigError("total_timesteps must be >= max_episode_len")
        for side, algo in (("red", self.red_algo), ("blue", self.blue_algo)):
            if algo not in ("none", "basic") + LEARNABLE:
                raise ConfigError(f"unknown {side} algorithm {algo!r}")
        if self.red_algo == "none":
            raise ConfigError("a red agent is required (blue learns against basic red)")
        try:
            parse_invalid_mode(self.invalid_mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class EpisodeRecord:
    episode: int
    length: int
    red_reward: float
    blue_reward: Optional[float]
    violations: int = 0
    red_invalid: int = 0
    blue_invalid: int = 0


@dataclass
class TrainingCurve:
    episodes: list[EpisodeRecord] = field(default_factory=list)

    COLUMNS = ("episode", "length", "red_reward", "blue_reward", "violations", "red_invalid", "blue_invalid")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for e in self.episodes:
            w.writerow([e.episode, e.length, repr(e.red_reward),
                        "" if e.blue_reward is None else repr(e.blue_reward),
                        e.violations, e.red_invalid, e.blue_invalid])
        return buf.getvalue()

    @property
    def total_steps(self) -> int:
        return sum(e.length for e in self.episodes)


@dataclass
class StepRecord:
    red_reward: float
    blue_reward: Optional[float]
    terminal: bool
    violation: bool
    red_redirected: bool
    blue_invalid: bool


def scenario_bounds(scenario: Scenario) -> dict:
    return scenario.bounds()


def _seeds(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def build_agent(algo: str, side: str, env: SharedEnv, wrapper, rng: np.random.Generator,
                hyperparams: Optional[dict] = None, checkpoint: Optional[str] = None) -> Optional[AgentPolicy]:
    """Instantiate (or load) the policy for one side; None when the side is absent."""
    sc = env.scenario
    if side == "red":
        dims = env.space.attacker_dims
        key_fn = lambda o: attacker_q_key(o, sc.max_nodes, sc.max_credentials)  # noqa: E731
        encode = env.space.encode_attacker
    else:
        dims = env.space.defender_dims
        key_fn = lambda o: defender_q_key(o, sc.max_nodes, len(sc.ports))  # noqa: E731
        encode = env.space.encode_defender
    if checkpoint is not None:
        return load_model(checkpoint, bounds=sc.bounds(), side=side, rng=rng, key_fn=key_fn)
    if algo == "none":
        return None
    if algo == "basic":
        return BasicAgent(wrapper.valid_actions, encode, rng)
    hp = None
    if algo in ("a2c", "ppo"):
        base = asdict(Hyperparams.defaults(algo))
        base.update(hyperparams or {})
        hp = Hyperparams(**base)
    return make_agent(algo, wrapper.observation_size, dims, rng, hp, key_fn)


class Match:
    """One shared environment, its two wrappers and the agents driving them.

    ``learn`` routes transitions into the agents; a transition is completed
    when the same side next acts (or at episode end), so each side's next
    observation is exactly what it sees on its next turn.
    """

    def __init__(self, env: SharedEnv, red: Optional[AgentPolicy], blue: Optional[AgentPolicy],
                 *, red_wrapper: Optional[AttackerWrapper] = None, blue_wrapper: Optional[DefenderWrapper] = None,
                 max_episode_len: int = 2000, learn: bool = False, trace: Optional[list] = None):
        self.env = env
        self.red_wrapper = red_wrapper or AttackerWrapper(env)
        self.blue_wrapper = blue_wrapper or DefenderWrapper(env)
        self.red = red
        self.blue = blue
        self.max_episode_len = max_episode_len
        self.learn = learn
        self.trace = trace
        self._pending: dict[str, Optional[tuple]] = {"red": None, "blue": None}
        self.episode_step = 0
        self.active = False

    def start_episode(self, seed: Optional[int] = None) -> None:
        self.red_wrapper.reset(seed)
        if self.blue is not None:
            self.blue_wrapper.reset(seed)
        self.episode_step = 0
        self.active = True

    def _act(self, side: str, agent: AgentPolicy, wrapper) -> tuple[np.ndarray, np.ndarray]:
        obs = wrapper.observe()
        pending = self._pending[side]
        if pending is not None and self.learn:
            agent.observe(*pending, obs, False)
        self._pending[side] = None
        return obs, agent.act(obs, explore=self.learn)

    def step_pair(self) -> StepRecord:
        if not self.active:
            raise RuntimeError("episode is not active")
        obs_r, a_r = self._act("red", self.red, self.red_wrapper)
        if self.trace is not None:
            self.trace.append("red")
        _, r_red, term_red = self.red_wrapper.step(a_r)
        red_redirected = self.red_wrapper.last_redirected
        r_blue = None
        term_blue = False
        violation = False
        blue_invalid = False
        if self.blue is not None:
            obs_b, a_b = self._act("blue", self.blue, self.blue_wrapper)
            if self.trace is not None:
                self.trace.append("blue")
            _, r_blue, term_blue = self.blue_wrapper.step(a_b)
            violation = self.blue_wrapper.last_violation
            blue_invalid = not self.blue_wrapper.last_valid
            self._pending["blue"] = (obs_b, a_b, r_blue)
        self._pending["red"] = (obs_r, a_r, r_red)
        self.env.tick()
        self.episode_step += 1
        terminal = term_red or term_blue
        if terminal or self.episode_step >= self.max_episode_len:
            self.end_episode(terminal)
        return StepRecord(r_red, r_blue, terminal, violation, red_redirected, blue_invalid)

    def end_episode(self, terminal: bool) -> None:
        """Close the episode; ``terminal`` False means a time-limit cut (values bootstrap)."""
        for side, agent, wrapper in (("red", self.red, self.red_wrapper), ("blue", self.blue, self.blue_wrapper)):
            pending = self._pending[side]
            if agent is None:
                continue
            if pending is not None and self.learn:
                agent.observe(*pending, wrapper.observe(), terminal)
            self._pending[side] = None
            if self.learn:
                agent.end_episode()
        self.active = False


def run_episode(match: Match, seed: Optional[int], budget: Optional[int] = None) -> EpisodeRecord:
    """Play one episode (at most ``budget`` steps) and summarise it."""
    match.start_episode(seed)
    red_total = 0.0
    blue_total = 0.0
    violations = red_invalid = blue_invalid = steps = 0
    while match.active:
        rec = match.step_pair()
        steps += 1
        red_total += rec.red_reward
        if rec.blue_reward is not None:
            blue_total += rec.blue_reward
        violations += rec.violation
        red_invalid += rec.red_redirected
        blue_invalid += rec.blue_invalid
        if budget is not None and steps >= budget and match.active:
            match.end_episode(False)
    return EpisodeRecord(0, steps, red_total, blue_total if match.blue is not None else None,
                         violations, red_invalid, blue_invalid)


def _make_env(config: TrainConfig, scenario: Scenario, seed: int) -> SharedEnv:
    return SharedEnv(scenario, seed=seed, invalid_mode=parse_invalid_mode(config.invalid_mode),
                     availability_threshold=config.availability_threshold,
                     availability_penalty=config.availability_penalty, no_reset=config.no_reset)


@dataclass
class TrainResult:
    red: Optional[AgentPolicy]
    blue: Optional[AgentPolicy]
    curve: TrainingCurve
    reset_count: int
    scenario: Scenario


def _train(config: TrainConfig, scenario: Optional[Scenario] = None, trace: Optional[list] = None) -> TrainResult:
    config.validate()
    scenario = scenario or resolve_scenario(config.scenario)
    env_rng, red_rng, blue_rng = _seeds(config.seed, 3)
    env_seed = int(env_rng.integers(2 ** 31))
    env = _make_env(config, scenario, env_seed)
    red_w, blue_w = AttackerWrapper(env), DefenderWrapper(env)
    red = build_agent(config.red_algo, "red", env, red_w, red_rng, config.red_hyperparams)
    blue = build_agent(config.blue_algo, "blue", env, blue_w, blue_rng, config.blue_hyperparams)
    match = Match(env, red, blue, red_wrapper=red_w, blue_wrapper=blue_w,
                  max_episode_len=config.max_episode_len, learn=True, trace=trace)
    curve = TrainingCurve()
    consumed = 0
    while consumed < config.total_timesteps:
        rec = run_episode(match, None, budget=config.total_timesteps - consumed)
        rec.episode = len(curve.episodes)
        curve.episodes.append(rec)
        consumed += rec.length
    for agent in (red, blue):
        if agent is not None:
            agent.finish()
    return TrainResult(red, blue, curve, env.reset_count, scenario)


def train_single(config: TrainConfig, scenario: Optional[Scenario] = None, **kw) -> TrainResult:
    learners = [a for a in (config.red_algo, config.blue_algo) if a in LEARNABLE]
    if len(learners) != 1:
        raise ConfigError("train_single needs exactly one learnable side; use train_joint for two")
    return _train(config, scenario, **kw)


def train_joint(config: TrainConfig, scenario: Optional[Scenario] = None, **kw) -> TrainResult:
    if config.red_algo not in LEARNABLE or config.blue_algo not in LEARNABLE:
        raise ConfigError("train_joint needs learnable algorithms on both sides")
    return _train(config, scenario, **kw)


def build_id() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def write_run(result: TrainResult, config: TrainConfig, out_dir: str) -> dict[str, str]:
    """Checkpoints, curve CSV and manifest for a finished run; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    bounds = result.scenario.bounds()
    for side, agent in (("red", result.red), ("blue", result.blue)):
        if agent is not None and agent.algo in LEARNABLE:
            path = os.path.join(out_dir, f"{side}.mrln")
            save_model(agent, path, side=side, bounds=bounds)
            paths[side] = path
    paths["curve"] = os.path.join(out_dir, "curve.csv")
    with open(paths["curve"], "w", encoding="utf-8") as fh:
        fh.write(result.curve.to_csv())
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    manifest = {"config": asdict(config), "build": build_id(), "episodes": len(result.curve.episodes),
                "timesteps": result.curve.total_steps, "invalid_mode": config.invalid_mode}
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def train(config: TrainConfig, out_dir: Optional[str] = None, scenario: Optional[Scenario] = None) -> TrainResult:
    """Dispatch to single or joint training and optionally persist the run."""
    both = config.red_algo in LEARNABLE and config.blue_algo in LEARNABLE
    result = (train_joint if both else train_single)(config, scenario)
    if out_dir is not None:
        write_run(result, config, out_dir)
    return result


__all__ = ["ConfigError", "TrainConfig", "TrainingCurve", "EpisodeRecord", "Match", "run_episode", "train",
           "train_single", "train_joint", "write_run", "invalid_mode_name"]
