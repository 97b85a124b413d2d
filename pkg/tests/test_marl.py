import json
import os

import numpy as np
import pytest

from cybermarl import simcore as sim
from cybermarl.agents import AgentPolicy, BasicAgent
from cybermarl.marl import ConfigError, Match, TrainConfig, run_episode, train, train_joint, train_single
from cybermarl.scenario import builtin_tiny, builtin_toyctf
from cybermarl.wrappers import AttackerWrapper, DefenderWrapper, SharedEnv

SMALL_PPO = {"rollout_length": 64, "n_minibatches": 4, "n_epochs": 2}


def _config(**kw):
    base = dict(scenario="tiny", total_timesteps=600, max_episode_len=100, red_algo="a2c", blue_algo="none", seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        _config(availability_threshold=0.0).validate()
    with pytest.raises(ConfigError):
        _config(total_timesteps=10).validate()
    with pytest.raises(ConfigError):
        _config(red_algo="dqn").validate()
    with pytest.raises(ConfigError):
        _config(invalid_mode="harsh").validate()


def test_train_single_rejects_two_learners():
    with pytest.raises(ConfigError):
        train_single(_config(blue_algo="ppo"))
    with pytest.raises(ConfigError):
        train_single(_config(red_algo="basic", blue_algo="basic"))
    with pytest.raises(ConfigError):
        train_joint(_config())


def test_timestep_accounting():
    res = train(_config(total_timesteps=777, max_episode_len=100))
    assert res.curve.total_steps == 777
    assert all(e.length <= 100 for e in res.curve.episodes)
    assert res.curve.episodes[-1].length == 77


def test_budget_equals_episode_len_single_episode():
    res = train(_config(total_timesteps=100, max_episode_len=100))
    assert len(res.curve.episodes) == 1


def test_reset_count_equals_episode_count():
    res = train(_config(scenario="toyctf", red_algo="basic", blue_algo="a2c", total_timesteps=3000,
                        max_episode_len=400))
    assert res.reset_count == len(res.curve.episodes)


def test_reproducible_curve():
    a = train(_config(red_algo="ppo", red_hyperparams=SMALL_PPO)).curve.to_csv()
    b = train(_config(red_algo="ppo", red_hyperparams=SMALL_PPO)).curve.to_csv()
    assert a == b
    c = train(_config(red_algo="ppo", red_hyperparams=SMALL_PPO, seed=4)).curve.to_csv()
    assert a != c


def test_turn_alternation_trace():
    trace = []
    from cybermarl.marl import _train
    _train(_config(scenario="toyctf", red_algo="a2c", blue_algo="a2c", total_timesteps=1000, max_episode_len=200),
           trace=trace)
    assert len(trace) == 2000
    assert trace == ["red", "blue"] * 1000


def test_blue_none_skips_substep():
    trace = []
    from cybermarl.marl import _train
    res = _train(_config(), trace=trace)
    assert set(trace) == {"red"}
    assert all(e.blue_reward is None for e in res.curve.episodes)
    assert "blue_reward" in res.curve.to_csv().splitlines()[0]


def test_no_reset_full_length_episodes():
    res = train(_config(scenario="toyctf", red_algo="a2c", blue_algo="a2c", total_timesteps=1500,
                        max_episode_len=500, no_reset=True))
    assert [e.length for e in res.curve.episodes] == [500, 500, 500]
    assert sum(e.violations for e in res.curve.episodes) >= 1


def test_reset_mode_violation_ends_episode():
    res = train(_config(scenario="toyctf", red_algo="basic", blue_algo="a2c", total_timesteps=4000,
                        max_episode_len=2000))
    for e in res.curve.episodes[:-1]:
        assert e.violations <= 1
        if e.violations:
            assert e.length < 2000


def test_basic_vs_basic_identity():
    env = SharedEnv(builtin_toyctf(), seed=0)
    red_w, blue_w = AttackerWrapper(env), DefenderWrapper(env)
    rng = np.random.default_rng(0)
    red = BasicAgent(red_w.valid_actions, env.space.encode_attacker, rng)
    blue = BasicAgent(blue_w.valid_actions, env.space.encode_defender, rng)
    m = Match(env, red, blue, red_wrapper=red_w, blue_wrapper=blue_w, max_episode_len=2000)
    for ep in range(10):
        rec = run_episode(m, ep)
        assert rec.violations == 1 and rec.length < 2000
        assert rec.blue_reward == -rec.red_reward - 5000


class _Recorder(AgentPolicy):
    def __init__(self, action):
        self.action = np.asarray(action)
        self.seen = []

    def act(self, obs, explore=True):
        self.seen.append(obs.copy())
        return self.action


def test_blue_sees_red_effect_same_step():
    sc = builtin_tiny()
    env = SharedEnv(sc, seed=0)
    red_w, blue_w = AttackerWrapper(env), DefenderWrapper(env)
    red = _Recorder([0, 0, 0, 0, 0, 0])
    blue = _Recorder(env.space.encode_defender(sim.StopService(2, 0)))
    m = Match(env, red, blue, red_wrapper=red_w, blue_wrapper=blue_w, max_episode_len=10)
    m.start_episode(0)
    m.step_pair()  # leaks cB
    red.action = np.asarray(env.space.encode_attacker(sim.Connect(0, 1, 0, 0)))
    m.step_pair()
    infected_b = blue.seen[-1][1]
    assert infected_b == 1.0


def test_no_substep_after_terminal():
    env = SharedEnv(builtin_toyctf(), seed=0)
    trace = []
    red_w, blue_w = AttackerWrapper(env), DefenderWrapper(env)
    rng = np.random.default_rng(1)
    red = BasicAgent(red_w.valid_actions, env.space.encode_attacker, rng)
    blue = BasicAgent(blue_w.valid_actions, env.space.encode_defender, rng)
    m = Match(env, red, blue, red_wrapper=red_w, blue_wrapper=blue_w, trace=trace)
    rec = run_episode(m, 0)
    assert len(trace) == 2 * rec.length
    with pytest.raises(RuntimeError):
        m.step_pair()


def test_write_run(tmp_path):
    cfg = _config(red_algo="ppo", blue_algo="a2c", scenario="toyctf", total_timesteps=400, max_episode_len=200,
                  red_hyperparams=SMALL_PPO)
    train(cfg, out_dir=str(tmp_path))
    for name in ("red.mrln", "blue.mrln", "curve.csv", "manifest.json"):
        assert os.path.exists(tmp_path / name)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["total_timesteps"] == 400 and manifest["build"]
    header = (tmp_path / "curve.csv").read_text().splitlines()[0]
    assert header == "episode,length,red_reward,blue_reward,violations,red_invalid,blue_invalid"


def test_tabular_q_trains_and_saves(tmp_path):
    train(_config(red_algo="tabular_q"), out_dir=str(tmp_path))
    assert os.path.exists(tmp_path / "red.mrln")
