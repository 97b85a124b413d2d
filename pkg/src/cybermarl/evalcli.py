"""Evaluation harness and the ``cybermarl`` command line.

Evaluation plays a fixed number of episodes with exploration disabled and
no learning, then reports per-episode returns with mean, sample standard
deviation and a normal-approximation 95% confidence half-width.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .agents import LEARNABLE, CheckpointError
from .marl import ConfigError, Match, TrainConfig, build_agent, run_episode, train
from .scenario import ScenarioError, load_scenario, resolve_scenario, serialize
from .wrappers import AttackerWrapper, DefenderWrapper, SharedEnv, parse_invalid_mode

CI_Z = 1.96
CI_METHOD = "normal approximation: 1.96 * sample_std / sqrt(n)"
BASELINES = ("basic", "none")


class InsufficientData(ValueError):
    """Fewer than two samples: the sample standard deviation is undefined."""


@dataclass
class Aggregate:
    mean: float
    std: float
    ci95: float
    n: int


def aggregate(values: Sequence[float]) -> Aggregate:
    n = len(values)
    if n < 2:
        raise InsufficientData(f"need at least 2 values, got {n}")
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1))
    return Aggregate(float(arr.mean()), std, CI_Z * std / math.sqrt(n), n)


@dataclass
class EvalConfig:
    scenario: str = "toyctf"
    red: str = "basic"
    blue: str = "none"
    episodes: int = 25
    max_episode_len: int = 2000
    availability_threshold: float = 0.6
    availability_penalty: float = -5000.0
    no_reset: bool = False
    invalid_mode: str = "zero"
    seed: int = 0
    parallel: bool = False
    workers: Optional[int] = None

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.max_episode_len < 1:
            raise ConfigError("max_episode_len must be positive")
        if not 0 < self.availability_threshold <= 1:
            raise ConfigError("availability_threshold must be in (0, 1]")
        if self.red == "none":
            raise ConfigError("a red agent is required")
        try:
            parse_invalid_mode(self.invalid_mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class EvalRow:
    episode: int
    length: int
    red_reward: float
    blue_reward: Optional[float]


@dataclass
class EvalReport:
    rows: list[EvalRow]
    config: EvalConfig
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = self._aggregate()

    def _aggregate(self) -> dict:
        out: dict = {}
        cols = {"red_reward": [r.red_reward for r in self.rows],
                "length": [float(r.length) for r in self.rows]}
        if self.rows and self.rows[0].blue_reward is not None:
            cols["blue_reward"] = [r.blue_reward for r in self.rows]
        for name, vals in cols.items():
            try:
                out[name] = asdict(aggregate(vals))
            except InsufficientData:
                out[name] = {"mean": float(np.mean(vals)), "std": None, "ci95": None, "n": len(vals)}
        return out

    def mean(self, column: str) -> float:
        return self.aggregates[column]["mean"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "length", "red_reward", "blue_reward"])
        for r in self.rows:
            w.writerow([r.episode, r.length, repr(r.red_reward), "" if r.blue_reward is None else repr(r.blue_reward)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"rows": [asdict(r) for r in self.rows], "aggregates": self.aggregates,
               "config": asdict(self.config), "tool_version": __version__, "ci_method": CI_METHOD}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str, formats: Sequence[str] = ("csv", "json")) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for fmt in formats:
            path = os.path.join(out_dir, f"report.{fmt}")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(self.to_csv() if fmt == "csv" else self.to_json())
            written.append(path)
        return written


def _source_algo(source: str) -> tuple[str, Optional[str]]:
    if source in BASELINES:
        return source, None
    return "checkpoint", source


def _episode(config: EvalConfig, index: int) -> EvalRow:
    """Self-contained episode: fresh environment and freshly loaded policies."""
    scenario = resolve_scenario(config.scenario)
    episode_seed = config.seed + index
    env = SharedEnv(scenario, seed=episode_seed, invalid_mode=parse_invalid_mode(config.invalid_mode),
                    availability_threshold=config.availability_threshold,
                    availability_penalty=config.availability_penalty, no_reset=config.no_reset)
    red_w, blue_w = AttackerWrapper(env), DefenderWrapper(env)
    red_rng, blue_rng = [np.random.default_rng(s)
                         for s in np.random.SeedSequence([config.seed, index]).spawn(2)]
    agents = []
    for side, source, wrapper, rng in (("red", config.red, red_w, red_rng), ("blue", config.blue, blue_w, blue_rng)):
        algo, ckpt = _source_algo(source)
        agents.append(build_agent(algo, side, env, wrapper, rng, checkpoint=ckpt))
    match = Match(env, agents[0], agents[1], red_wrapper=red_w, blue_wrapper=blue_w,
                  max_episode_len=config.max_episode_len, learn=False)
    rec = run_episode(match, episode_seed)
    return EvalRow(index, rec.length, rec.red_reward, rec.blue_reward)


def evaluate(config: EvalConfig) -> EvalReport:
    config.validate()
    # fail fast on unreadable inputs before spawning anything
    resolve_scenario(config.scenario)
    _episode_probe(config)
    indices = range(config.episodes)
    if config.parallel and config.episodes > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_episode, [config] * config.episodes, indices))
    else:
        rows = [_episode(config, i) for i in indices]
    return EvalReport(rows, config)


def _episode_probe(config: EvalConfig) -> None:
    scenario = resolve_scenario(config.scenario)
    env = SharedEnv(scenario, seed=config.seed)
    for side, source, wrapper in (("red", config.red, AttackerWrapper(env)), ("blue", config.blue, DefenderWrapper(env))):
        algo, ckpt = _source_algo(source)
        if ckpt is not None:
            build_agent(algo, side, env, wrapper, np.random.default_rng(0), checkpoint=ckpt)


# ---------------------------------------------------------------------------
# command line

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cybermarl", description="Multi-agent attacker/defender network simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train red and/or blue agents")
    t.add_argument("--scenario", default="toyctf")
    t.add_argument("--red", default="ppo", choices=("basic",) + LEARNABLE)
    t.add_argument("--blue", default="none", choices=("none", "basic") + LEARNABLE)
    t.add_argument("--timesteps", type=int, default=300_000)
    t.add_argument("--episode-len", type=int, default=2000)
    t.add_argument("--invalid-mode", default="zero", choices=("penalty", "passthrough", "zero"))
    t.add_argument("--availability", type=float, default=0.6)
    t.add_argument("--availability-penalty", type=float, default=-5000.0)
    t.add_argument("--no-reset", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate agents without learning")
    e.add_argument("--scenario", default="toyctf")
    e.add_argument("--red", default="basic", help="checkpoint path, basic or none")
    e.add_argument("--blue", default="none", help="checkpoint path, basic or none")
    e.add_argument("--episodes", type=int, default=25)
    e.add_argument("--episode-len", type=int, default=2000)
    e.add_argument("--invalid-mode", default="zero", choices=("penalty", "passthrough", "zero"))
    e.add_argument("--availability", type=float, default=0.6)
    e.add_argument("--availability-penalty", type=float, default=-5000.0)
    e.add_argument("--no-reset", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--parallel", action="store_true")
    e.add_argument("--out", required=True)
    e.add_argument("--format", choices=("csv", "json"), default=None,
                   help="write only this format (default: both)")

    s = sub.add_parser("scenario", help="inspect scenario documents")
    ssub = s.add_subparsers(dest="action", parser_class=_Parser)
    v = ssub.add_parser("validate")
    v.add_argument("path")
    sh = ssub.add_parser("show")
    sh.add_argument("ref", help="path, toyctf or tiny")
    return p


def _cmd_train(args) -> int:
    config = TrainConfig(scenario=args.scenario, total_timesteps=args.timesteps, max_episode_len=args.episode_len,
                         availability_threshold=args.availability, availability_penalty=args.availability_penalty,
                         invalid_mode=args.invalid_mode, no_reset=args.no_reset, red_algo=args.red,
                         blue_algo=args.blue, seed=args.seed)
    result = train(config, out_dir=args.out)
    eps = result.curve.episodes
    print(f"trained {len(eps)} episodes, {result.curve.total_steps} timesteps -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = EvalConfig(scenario=args.scenario, red=args.red, blue=args.blue, episodes=args.episodes,
                        max_episode_len=args.episode_len, availability_threshold=args.availability,
                        availability_penalty=args.availability_penalty, no_reset=args.no_reset,
                        invalid_mode=args.invalid_mode, seed=args.seed, parallel=args.parallel)
    report = evaluate(config)
    formats = (args.format,) if args.format else ("csv", "json")
    report.write(args.out, formats)
    for name, agg in report.aggregates.items():
        ci = "n/a" if agg["ci95"] is None else f"{agg['ci95']:.2f}"
        print(f"{name}: mean {agg['mean']:.2f} +/- {ci}")
    return 0


def _cmd_scenario(args) -> int:
    if args.action == "validate":
        with open(args.path, encoding="utf-8") as fh:
            sc = load_scenario(fh.read())
        print(f"ok: {len(sc.nodes)} nodes, {len(sc.credentials)} credentials")
        return 0
    if args.action == "show":
        sys.stdout.write(serialize(resolve_scenario(args.ref)))
        return 0
    raise ConfigError("scenario needs a subcommand: validate or show")


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point. Exit codes: 0 ok, 1 configuration/usage error, 2 I/O or corrupt input."""
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("a command is required: train, eval or scenario")
        return {"train": _cmd_train, "eval": _cmd_eval, "scenario": _cmd_scenario}[args.command](args)
    except (CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
