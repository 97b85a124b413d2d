"""Experiment protocols shared by the acceptance suite and the scripts.

Each study trains agents into a run directory, evaluates the saved
checkpoints with exploration off, and returns plain dictionaries so callers
can print tables or check criteria.
"""
from __future__ import annotations

import os
import statistics
from dataclasses import dataclass
from typing import Iterable, Optional

from .evalcli import EvalConfig, EvalReport, evaluate
from .marl import TrainConfig, train

MODES = ("penalty", "passthrough", "zero")


def train_run(config: TrainConfig, out_dir: str) -> dict[str, str]:
    """Train and persist; returns checkpoint paths keyed by side."""
    train(config, out_dir=out_dir)
    return {side: os.path.join(out_dir, f"{side}.mrln") for side in ("red", "blue")
            if os.path.exists(os.path.join(out_dir, f"{side}.mrln"))}


def run_eval(red: str, blue: str = "none", *, episodes: int = 25, seed: int = 10_000,
             no_reset: bool = False, scenario: str = "toyctf", max_episode_len: int = 2000) -> EvalReport:
    return evaluate(EvalConfig(scenario=scenario, red=red, blue=blue, episodes=episodes, seed=seed,
                               no_reset=no_reset, max_episode_len=max_episode_len))


def median_red(report: EvalReport) -> float:
    return float(statistics.median(r.red_reward for r in report.rows))


# -- invalid-action reward modes ------------------------------------------------

def invalid_mode_study(root: str, seeds: Iterable[int] = range(5), timesteps: int = 100_000,
                       algo: str = "a2c", eval_episodes: int = 10,
                       modes: Iterable[str] = MODES) -> dict[str, dict[int, float]]:
    """Red vs no blue, trained under each invalid-action mode.

    Every agent is evaluated under ZeroReward, so the score counts only the
    reward earned by the agent's own valid actions.
    """
    out: dict[str, dict[int, float]] = {}
    for mode in modes:
        out[mode] = {}
        for seed in seeds:
            run = os.path.join(root, f"{mode}-s{seed}")
            paths = train_run(TrainConfig(total_timesteps=timesteps, red_algo=algo, blue_algo="none",
                                          invalid_mode=mode, seed=seed), run)
            out[mode][seed] = median_red(run_eval(paths["red"], episodes=eval_episodes, seed=10_000 + seed))
    return out


def invalid_mode_ordering(scores: dict[str, dict[int, float]], seed: int) -> tuple[bool, str]:
    z, p, n = scores["zero"][seed], scores["passthrough"][seed], scores["penalty"][seed]
    ok = z >= p > n and n <= 0.2 * z and z > 0
    return ok, f"seed {seed}: zero={z:.1f} passthrough={p:.1f} penalty={n:.1f}"


# -- reset vs no-reset joint training ---------------------------------------------

def reset_study(root: str, seeds: Iterable[int] = range(3), timesteps: int = 100_000,
                algo: str = "ppo", eval_episodes: int = 25) -> dict[str, dict[int, dict]]:
    """Joint red/blue training with and without episode reset on availability loss."""
    out: dict[str, dict[int, dict]] = {"reset": {}, "no_reset": {}}
    for key, no_reset in (("reset", False), ("no_reset", True)):
        for seed in seeds:
            run = os.path.join(root, f"{key}-s{seed}")
            paths = train_run(TrainConfig(total_timesteps=timesteps, red_algo=algo, blue_algo=algo,
                                          no_reset=no_reset, seed=seed), run)
            vs_none = run_eval(paths["red"], episodes=eval_episodes, seed=20_000 + seed)
            vs_blue = run_eval(paths["red"], paths["blue"], episodes=eval_episodes, seed=20_000 + seed,
                               no_reset=no_reset)
            out[key][seed] = {"red_vs_none": vs_none.mean("red_reward"),
                              "red_vs_blue": vs_blue.mean("red_reward"),
                              "blue_vs_red": vs_blue.mean("blue_reward"),
                              "length_vs_blue": vs_blue.mean("length")}
    return out


# -- blue effectiveness (cross evaluation) ----------------------------------------

@dataclass
class CrossEval:
    red_vs_none: EvalReport
    red_vs_solo_blue: EvalReport
    red_vs_joint_blue: EvalReport
    joint_red_vs_none: EvalReport
    joint_red_vs_joint_blue: EvalReport


def blue_study(root: str, seed: int = 0, timesteps: int = 100_000, algo: str = "ppo",
               episodes: int = 25, no_reset: bool = True) -> CrossEval:
    """Red trained alone, blue trained against basic red, and a jointly trained pair.

    Blue training and the red-vs-blue evaluations run in no-reset mode so an
    availability loss costs blue its penalty without shortening the episode.
    """
    red = train_run(TrainConfig(total_timesteps=timesteps, red_algo=algo, blue_algo="none", seed=seed),
                    os.path.join(root, "red-solo"))["red"]
    solo_blue = train_run(TrainConfig(total_timesteps=timesteps, red_algo="basic", blue_algo=algo,
                                      no_reset=no_reset, seed=seed), os.path.join(root, "blue-solo"))["blue"]
    joint = train_run(TrainConfig(total_timesteps=timesteps, red_algo=algo, blue_algo=algo, no_reset=no_reset,
                                  seed=seed), os.path.join(root, "joint"))
    kw = dict(episodes=episodes, seed=30_000 + seed)
    return CrossEval(
        red_vs_none=run_eval(red, **kw),
        red_vs_solo_blue=run_eval(red, solo_blue, no_reset=no_reset, **kw),
        red_vs_joint_blue=run_eval(red, joint["blue"], no_reset=no_reset, **kw),
        joint_red_vs_none=run_eval(joint["red"], **kw),
        joint_red_vs_joint_blue=run_eval(joint["red"], joint["blue"], no_reset=no_reset, **kw),
    )


# -- availability constraint with baseline agents ---------------------------------

def availability_study(episodes: int = 25, seed: int = 0,
                       checkpoints: Optional[dict[str, str]] = None) -> dict[str, EvalReport]:
    """Basic/none and basic/basic matchups in reset mode (plus any supplied checkpoints)."""
    rows = {"basic vs none": ("basic", "none"), "basic vs basic": ("basic", "basic")}
    for name, (red, blue) in (checkpoints or {}).items():
        rows[name] = (red, blue)
    return {name: run_eval(red, blue, episodes=episodes, seed=seed) for name, (red, blue) in rows.items()}
