import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cybermarl import simcore as sim
from cybermarl.scenario import builtin_tiny, builtin_toyctf
from cybermarl.wrappers import (
    AttackerWrapper, DefenderWrapper, FlatActionSpace, OutOfRange, PassThrough, Penalty, ResetCoordinator,
    SharedEnv, ZeroReward, attacker_observation, attacker_observation_size, attacker_observation_vector,
    defender_observation, defender_observation_size, defender_observation_vector, parse_invalid_mode,
)

TINY = builtin_tiny()
TOY = builtin_toyctf()


def test_dims_toyctf():
    space = FlatActionSpace(TOY)
    assert space.attacker_dims == (3, 10, 10, 3, 4, 10)
    assert space.defender_dims == (5, 10, 4, 2)
    assert attacker_observation_size(TOY) == 51
    assert defender_observation_size(TOY) == 130


def test_reimage_zero_encoding():
    assert FlatActionSpace(TOY).encode_defender(sim.Reimage(0)) == (0, 0, 0, 0)


@pytest.mark.parametrize("scenario", [TINY, TOY], ids=["tiny", "toyctf"])
def test_round_trip_exhaustive(scenario):
    space = FlatActionSpace(scenario)
    attacker = space.all_attacker_actions()
    assert len(set(attacker)) == len(attacker)
    for a in attacker:
        assert space.decode_attacker(space.encode_attacker(a)) == a
    encoded = [space.encode_attacker(a) for a in attacker]
    assert encoded == sorted(encoded) and len(set(encoded)) == len(encoded)
    for a in space.all_defender_actions():
        assert space.decode_defender(space.encode_defender(a)) == a


def test_connect_round_trip():
    space = FlatActionSpace(TOY)
    a = sim.Connect(0, 7, 2, 5)
    assert space.decode_attacker(space.encode_attacker(a)) == a


@settings(max_examples=300, deadline=None)
@given(st.tuples(*[st.integers(0, d - 1) for d in (3, 10, 10, 3, 4, 10)]))
def test_decode_any_in_range_vector(vec):
    space = FlatActionSpace(TOY)
    a = space.decode_attacker(vec)
    # decoding is total and re-encoding lands on the canonical representative
    assert space.decode_attacker(space.encode_attacker(a)) == a


@pytest.mark.parametrize("vec", [(3, 0, 0, 0, 0, 0), (0, 10, 0, 0, 0, 0), (0, 0, 0, 0, 0, -1), (0, 0, 0)])
def test_out_of_range(vec):
    env = SharedEnv(TOY)
    w = AttackerWrapper(env)
    w.reset()
    with pytest.raises(OutOfRange):
        w.step(vec)


def test_defender_out_of_range():
    env = SharedEnv(TOY)
    w = DefenderWrapper(env)
    w.reset()
    with pytest.raises(OutOfRange):
        w.step((0, 0, 4, 0))


def test_invalid_mode_parsing():
    assert parse_invalid_mode("zero") == ZeroReward()
    assert parse_invalid_mode("penalty") == Penalty(-1.0)
    assert parse_invalid_mode("passthrough") == PassThrough()
    with pytest.raises(ValueError):
        parse_invalid_mode("bogus")
    with pytest.raises(ValueError):
        Penalty(0.0)


def _invalid_with_reward(mode):
    """Tiny state where the only valid action earns +10 (Connect to B)."""
    env = SharedEnv(TINY, seed=0, invalid_mode=mode)
    red = AttackerWrapper(env)
    red.reset()
    sp = env.space
    red.step(sp.encode_attacker(sim.LocalExploit(0, 0)))
    red.step(sp.encode_attacker(sim.LocalExploit(0, 1)))
    # exhaust B's remote scan bonus so the leftover valid set is {repeats, Connect}
    state = env.state
    assert sim.Connect(0, 1, 0, 0) in sim.attacker_valid_actions(state)
    return env, red


@pytest.mark.parametrize("mode,expected", [(ZeroReward(), 0.0), (Penalty(-1.0), -1.0), (Penalty(-3.0), -3.0)])
def test_shaping_for_invalid(mode, expected):
    env, red = _invalid_with_reward(mode)
    bad = env.space.encode_attacker(sim.LocalExploit(2, 0))  # C is not owned
    for _ in range(20):
        _, r, _ = red.step(bad)
        assert red.last_redirected
        assert r == expected


def test_passthrough_returns_replacement_reward():
    env, red = _invalid_with_reward(PassThrough())
    bad = env.space.encode_attacker(sim.LocalExploit(2, 0))
    for _ in range(20):
        _, r, _ = red.step(bad)
        assert r == red.last_raw_reward


@pytest.mark.parametrize("mode", [ZeroReward(), PassThrough(), Penalty()])
def test_valid_action_reward_is_raw(mode):
    env = SharedEnv(TINY, seed=0, invalid_mode=mode)
    red = AttackerWrapper(env)
    red.reset()
    _, r, _ = red.step(env.space.encode_attacker(sim.LocalExploit(0, 0)))
    assert not red.last_redirected and r == 3 - 1


def test_zero_mode_sum_equals_valid_raw():
    env = SharedEnv(TOY, seed=1, invalid_mode=ZeroReward())
    red = AttackerWrapper(env)
    red.reset()
    rng = np.random.default_rng(0)
    total, valid_raw = 0.0, 0.0
    for _ in range(500):
        vec = [rng.integers(d) for d in red.dims]
        if rng.random() < 0.3:
            va = red.valid_actions()
            vec = env.space.encode_attacker(va[rng.integers(len(va))])
        _, r, _ = red.step(vec)
        total += r
        if not red.last_redirected:
            valid_raw += red.last_raw_reward
        env.tick()
    assert total == valid_raw


def test_redirect_uniform_chi_square():
    env = SharedEnv(TINY, seed=3, invalid_mode=ZeroReward())
    red = AttackerWrapper(env)
    red.reset()
    sp = env.space
    red.step(sp.encode_attacker(sim.LocalExploit(0, 0)))
    snapshot = env.state.clone()
    valid = sim.attacker_valid_actions(snapshot)
    assert len(valid) >= 3
    counts = dict.fromkeys(valid, 0)
    bad = sp.encode_attacker(sim.LocalExploit(2, 0))
    original = sim.attacker_step
    chosen = []

    def spy(state, action):
        chosen.append(action)
        return original(state, action)

    sim.attacker_step = spy
    try:
        for _ in range(6000):
            env.state = snapshot.clone()
            red.step(bad)
    finally:
        sim.attacker_step = original
    for a in chosen:
        counts[a] += 1
    _, p = stats.chisquare(list(counts.values()))
    assert p > 0.001


def test_defender_reward_negation():
    env = SharedEnv(TINY, seed=0)
    red, blue = AttackerWrapper(env), DefenderWrapper(env)
    red.reset(), blue.reset()
    sp = env.space
    red.step(sp.encode_attacker(sim.LocalExploit(0, 0)))
    _, rb, term = blue.step(sp.encode_defender(sim.StopService(2, 0)))
    assert rb == -2.0 and not term
    env.tick()
    red.step(sp.encode_attacker(sim.Connect(0, 1, 0, 0)))
    _, rb, _ = blue.step(sp.encode_defender(sim.StartService(2, 0)))
    assert rb == -10.0


def test_defender_invalid_is_noop_with_penalty():
    env = SharedEnv(TOY, seed=0)
    blue = DefenderWrapper(env)
    blue.reset()
    before = env.state.state_hash()
    # StartService on a running service is invalid
    _, r, term = blue.step(env.space.encode_defender(sim.StartService(1, TOY.port_index["HTTPS"])))
    assert r == -1.0 and not term and not blue.last_valid
    assert env.state.state_hash() == before


def _reimage_many(env, blue, k):
    reimagable = [i for i, n in enumerate(env.scenario.nodes) if n.reimagable]
    out = []
    for i in reimagable[:k]:
        out.append(blue.step(env.space.encode_defender(sim.Reimage(i))))
    return out


def test_availability_violation_reset_mode():
    env = SharedEnv(TOY, seed=0)
    blue = DefenderWrapper(env)
    blue.reset()
    results = _reimage_many(env, blue, 5)
    # 4 reimaged -> 0.6, not yet below threshold
    assert all(not t for _, _, t in results[:4])
    _, r, term = results[4]
    assert term and r == -5000.0


def test_availability_penalty_once_per_event_no_reset():
    env = SharedEnv(TOY, seed=0, no_reset=True)
    blue = DefenderWrapper(env)
    blue.reset()
    results = _reimage_many(env, blue, 6)
    rewards = [r for _, r, _ in results]
    assert rewards[4] == -5000.0 and rewards[5] == 0.0
    assert not any(t for _, _, t in results)
    # while still below threshold, nothing more; after recovery the penalty re-arms
    for _ in range(sim.REIMAGE_DURATION):
        env.tick()
    _, r, _ = blue.step(env.space.encode_defender(sim.StopService(1, TOY.port_index["SSH"])))
    assert r == 0.0
    _reimage_many(env, blue, 4)
    _, r, _ = blue.step(env.space.encode_defender(sim.Reimage(7)))
    assert r == -5000.0


def test_coordinator_single_reset_any_order():
    for order in (("red", "blue"), ("blue", "red")):
        env = SharedEnv(TINY, seed=0)
        wrappers = {"red": AttackerWrapper(env), "blue": DefenderWrapper(env)}
        for side in order:
            wrappers[side].reset()
        assert env.reset_count == 1


def test_coordinator_hundred_episodes():
    env = SharedEnv(TOY, seed=0)
    red, blue = AttackerWrapper(env), DefenderWrapper(env)
    for ep in range(100):
        first, second = (red, blue) if ep % 2 else (blue, red)
        first.reset()
        second.reset()
        for _ in range(3):
            red.step([0, 0, 0, 0, 0, 0])
            blue.step([1, 0, 0, 0])
            env.tick()
    assert env.reset_count == 100


def test_coordinator_counter():
    c = ResetCoordinator()
    assert c.request("red") is True
    assert c.request("blue") is False
    assert c.request("blue") is True
    assert c.request("red") is False


def test_observation_vectors_match_structured():
    env = SharedEnv(TOY, seed=0)
    red, blue = AttackerWrapper(env), DefenderWrapper(env)
    red.reset(), blue.reset()
    rng = np.random.default_rng(2)
    for _ in range(300):
        va = red.valid_actions()
        out = sim.attacker_step(env.state, va[rng.integers(len(va))])
        assert np.array_equal(attacker_observation_vector(env.state, out.events),
                              attacker_observation(env.state, out.events).to_vector())
        vd = blue.valid_actions()
        sim.defender_step(env.state, vd[rng.integers(len(vd))])
        assert np.array_equal(defender_observation_vector(env.state), defender_observation(env.state).to_vector())
        env.tick()


def test_defender_observation_mirrors_state():
    env = SharedEnv(TOY, seed=0)
    s = env.state
    obs = defender_observation(s)
    assert obs.infected[TOY.start_index] == 1 and obs.infected.sum() == 1
    for d, mat in ((sim.Direction.INCOMING, obs.firewall_in), (sim.Direction.OUTGOING, obs.firewall_out)):
        for i in range(s.n):
            assert list(mat[i]) == [float(x) for x in s.firewall[d][i]]


def test_attacker_episode_section_monotone_without_defender():
    env = SharedEnv(TOY, seed=5)
    red = AttackerWrapper(env)
    prev = red.reset()
    rng = np.random.default_rng(5)
    for _ in range(400):
        obs, _, _ = red.step([rng.integers(d) for d in red.dims])
        assert np.all(obs[3:] >= prev[3:])
        prev = obs
        env.tick()


@pytest.mark.parametrize("scenario", [TINY, TOY], ids=["tiny", "toyctf"])
def test_fuzz_no_crash(scenario):
    env = SharedEnv(scenario, seed=0, no_reset=True)
    red, blue = AttackerWrapper(env), DefenderWrapper(env)
    red.reset(), blue.reset()
    rng = np.random.default_rng(0)
    for t in range(5000):
        red.step([rng.integers(d) for d in red.dims])
        blue.step([rng.integers(d) for d in blue.dims])
        env.tick()
        if t % 500 == 499:
            red.reset(), blue.reset()


def test_all_flat_vectors_decode_tiny():
    space = FlatActionSpace(TINY)
    for vec in itertools.product(*[range(d) for d in space.attacker_dims]):
        assert space.encode_attacker(space.decode_attacker(vec)) in {space.encode_attacker(a)
                                                                     for a in space.all_attacker_actions()}
