"""Agent-facing adapters over one shared simulator.

Both sides talk in flat integer vectors. The attacker wrapper silently replaces
invalid actions with a uniformly drawn valid one and shapes the reward according
to an InvalidActionMode; the defender wrapper turns invalid actions into a no-op
with a small penalty, mirrors the attacker's reward and enforces the
availability constraint.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import simcore as sim
from .scenario import PROPERTY_WIDTH, Scenario
from .simcore import (AllowTraffic, BlockTraffic, Connect, Direction, LocalExploit, NodeOwned,
                      NodesDiscovered, CredentialsLeaked, Reimage, RemoteExploit, StartService, StopService)

DEFENDER_INVALID_PENALTY = -1.0


class OutOfRange(ValueError):
    pass


# ---------------------------------------------------------------------------
# invalid-action modes


@dataclass(frozen=True)
class Penalty:
    amount: float = -1.0

    def __post_init__(self):
        if not self.amount < 0:
            raise ValueError("penalty amount must be negative")


@dataclass(frozen=True)
class PassThrough:
    pass


@dataclass(frozen=True)
class ZeroReward:
    pass


InvalidActionMode = Union[Penalty, PassThrough, ZeroReward]


def parse_invalid_mode(name: str) -> InvalidActionMode:
    name = name.lower()
    if name == "penalty":
        return Penalty()
    if name == "passthrough":
        return PassThrough()
    if name == "zero":
        return ZeroReward()
    raise ValueError(f"unknown invalid-action mode {name!r}")


def invalid_mode_name(mode: InvalidActionMode) -> str:
    if isinstance(mode, Penalty):
        return "penalty" if mode.amount == -1.0 else f"penalty({mode.amount})"
    return "passthrough" if isinstance(mode, PassThrough) else "zero"


# ---------------------------------------------------------------------------
# flat encodings

ATTACKER_TYPES = (LocalExploit, RemoteExploit, Connect)
DEFENDER_TYPES = (Reimage, BlockTraffic, AllowTraffic, StopService, StartService)


class FlatActionSpace:
    """Per-dimension sizes of both sides' flat action vectors for one scenario.

    attacker: [action_type, source, target, vulnerability, port, credential]
    defender: [action_type, node, port, direction]
    Components a given action type does not use are 0 in the canonical encoding
    and ignored on decode.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        nports = len(scenario.ports)
        self.attacker_dims = (3, scenario.max_nodes, scenario.max_nodes,
                              scenario.max_vulnerabilities, nports, scenario.max_credentials)
        self.defender_dims = (5, scenario.max_nodes, nports, 2)

    @staticmethod
    def _check(vec: Sequence[int], dims: Sequence[int]) -> list[int]:
        if len(vec) != len(dims):
            raise OutOfRange(f"expected {len(dims)} components, got {len(vec)}")
        out = [int(x) for x in vec]
        for i, (x, d) in enumerate(zip(out, dims)):
            if not 0 <= x < d:
                raise OutOfRange(f"component {i} = {x} outside [0, {d})")
        return out

    def encode_attacker(self, a: sim.AttackerAction) -> tuple[int, ...]:
        if isinstance(a, LocalExploit):
            vec = (0, a.node, 0, a.vuln, 0, 0)
        elif isinstance(a, RemoteExploit):
            vec = (1, a.source, a.target, a.vuln, 0, 0)
        elif isinstance(a, Connect):
            vec = (2, a.source, a.target, 0, a.port, a.credential)
        else:
            raise TypeError(f"not an attacker action: {a!r}")
        return tuple(self._check(vec, self.attacker_dims))

    def decode_attacker(self, vec: Sequence[int]) -> sim.AttackerAction:
        kind, s, t, v, p, c = self._check(vec, self.attacker_dims)
        if kind == 0:
            return LocalExploit(s, v)
        if kind == 1:
            return RemoteExploit(s, t, v)
        return Connect(s, t, p, c)

    def encode_defender(self, a: sim.DefenderAction) -> tuple[int, ...]:
        if isinstance(a, Reimage):
            vec = (0, a.node, 0, 0)
        elif isinstance(a, (BlockTraffic, AllowTraffic)):
            vec = (1 if isinstance(a, BlockTraffic) else 2, a.node, a.port, int(a.direction))
        elif isinstance(a, (StopService, StartService)):
            vec = (3 if isinstance(a, StopService) else 4, a.node, a.port, 0)
        else:
            raise TypeError(f"not a defender action: {a!r}")
        return tuple(self._check(vec, self.defender_dims))

    def decode_defender(self, vec: Sequence[int]) -> sim.DefenderAction:
        kind, node, port, d = self._check(vec, self.defender_dims)
        if kind == 0:
            return Reimage(node)
        if kind in (1, 2):
            return DEFENDER_TYPES[kind](node, port, Direction(d))
        return DEFENDER_TYPES[kind](node, port)

    def all_attacker_actions(self) -> list[sim.AttackerAction]:
        """Every canonical attacker action, in encoded order."""
        _, mn, _, mv, mp, mc = self.attacker_dims
        out: list[sim.AttackerAction] = [LocalExploit(s, v) for s in range(mn) for v in range(mv)]
        out += [RemoteExploit(s, t, v) for s in range(mn) for t in range(mn) for v in range(mv)]
        out += [Connect(s, t, p, c) for s in range(mn) for t in range(mn) for p in range(mp) for c in range(mc)]
        return out

    def all_defender_actions(self) -> list[sim.DefenderAction]:
        _, mn, mp, _ = self.defender_dims
        out: list[sim.DefenderAction] = [Reimage(i) for i in range(mn)]
        for cls in (BlockTraffic, AllowTraffic):
            out += [cls(i, p, d) for i in range(mn) for p in range(mp) for d in Direction]
        for cls in (StopService, StartService):
            out += [cls(i, p) for i in range(mn) for p in range(mp)]
        return out


# ---------------------------------------------------------------------------
# observations


def attacker_observation_size(scenario: Scenario) -> int:
    return 5 + 2 * scenario.max_nodes + PROPERTY_WIDTH + scenario.max_credentials


def defender_observation_size(scenario: Scenario) -> int:
    return scenario.max_nodes * (1 + 3 * len(scenario.ports))


@dataclass
class AttackerObservation:
    newly_discovered_count: int
    lateral_move_succeeded: bool
    newly_leaked_credential_count: int
    discovered_count: int
    owned_count: int
    discovered_nodes: np.ndarray
    owned_nodes: np.ndarray
    discovered_properties: np.ndarray
    known_credentials: np.ndarray

    def to_vector(self) -> np.ndarray:
        head = np.array([self.newly_discovered_count, float(self.lateral_move_succeeded),
                         self.newly_leaked_credential_count, self.discovered_count, self.owned_count])
        return np.concatenate([head, self.discovered_nodes, self.owned_nodes,
                               self.discovered_properties, self.known_credentials])


def attacker_observation(state: sim.EnvState, events: Sequence = ()) -> AttackerObservation:
    sc = state.scenario
    disc = np.zeros(sc.max_nodes)
    disc[:state.n] = state.discovered
    owned = np.zeros(sc.max_nodes)
    owned[:state.n] = state.owned
    props = np.zeros(PROPERTY_WIDTH)
    props[list(state.revealed_properties)] = 1.0
    creds = np.zeros(sc.max_credentials)
    creds[list(state.credential_cache)] = 1.0
    return AttackerObservation(
        newly_discovered_count=sum(e.count for e in events if isinstance(e, NodesDiscovered)),
        lateral_move_succeeded=any(isinstance(e, NodeOwned) for e in events),
        newly_leaked_credential_count=sum(e.count for e in events if isinstance(e, CredentialsLeaked)),
        discovered_count=int(disc.sum()),
        owned_count=int(owned.sum()),
        discovered_nodes=disc,
        owned_nodes=owned,
        discovered_properties=props,
        known_credentials=creds,
    )


def attacker_observation_vector(state: sim.EnvState, events: Sequence = ()) -> np.ndarray:
    """Same layout as ``AttackerObservation.to_vector`` without the intermediate object."""
    sc = state.scenario
    n, mn = state.n, sc.max_nodes
    vec = np.zeros(5 + 2 * mn + PROPERTY_WIDTH + sc.max_credentials)
    for e in events:
        if isinstance(e, NodesDiscovered):
            vec[0] += e.count
        elif isinstance(e, NodeOwned):
            vec[1] = 1.0
        elif isinstance(e, CredentialsLeaked):
            vec[2] += e.count
    vec[3] = sum(state.discovered)
    vec[4] = sum(state.owned)
    vec[5:5 + n] = state.discovered
    vec[5 + mn:5 + mn + n] = state.owned
    base = 5 + 2 * mn
    for i in state.revealed_properties:
        vec[base + i] = 1.0
    base += PROPERTY_WIDTH
    for c in state.credential_cache:
        vec[base + c] = 1.0
    return vec


@dataclass
class DefenderObservation:
    infected: np.ndarray
    firewall_in: np.ndarray
    firewall_out: np.ndarray
    services: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.infected, self.firewall_in.ravel(),
                               self.firewall_out.ravel(), self.services.ravel()])


def defender_observation(state: sim.EnvState) -> DefenderObservation:
    sc = state.scenario
    n, nports = state.n, len(sc.ports)
    infected = np.zeros(sc.max_nodes)
    infected[:n] = state.owned
    fw_in = np.zeros((sc.max_nodes, nports))
    fw_in[:n] = state.firewall[Direction.INCOMING]
    fw_out = np.zeros((sc.max_nodes, nports))
    fw_out[:n] = state.firewall[Direction.OUTGOING]
    services = np.zeros((sc.max_nodes, nports))
    for i, running in enumerate(state.service_running):
        for p, r in running.items():
            services[i, p] = r
    return DefenderObservation(infected, fw_in, fw_out, services)


def defender_observation_vector(state: sim.EnvState) -> np.ndarray:
    sc = state.scenario
    n, mn, nports = state.n, sc.max_nodes, len(sc.ports)
    block = mn * nports
    vec = np.zeros(mn + 3 * block)
    vec[:n] = state.owned
    fw_in, fw_out = state.firewall
    base_in, base_out, base_svc = mn, mn + block, mn + 2 * block
    for i in range(n):
        off = i * nports
        vec[base_in + off:base_in + off + nports] = fw_in[i]
        vec[base_out + off:base_out + off + nports] = fw_out[i]
        for p, r in state.service_running[i].items():
            if r:
                vec[base_svc + off + p] = 1.0
    return vec


# ---------------------------------------------------------------------------
# shared environment and reset coordination


class ResetCoordinator:
    """Makes the shared simulator reset exactly once per episode transition,
    whichever wrapper asks first."""

    def __init__(self):
        self.generation = 0
        self.last_seen: dict[str, int] = {}

    def request(self, caller: str) -> bool:
        """Record a reset request; True when the caller must perform the real reset."""
        seen = self.last_seen.get(caller, 0)
        if seen == self.generation:
            self.generation += 1
            self.last_seen[caller] = self.generation
            return True
        self.last_seen[caller] = self.generation
        return False


class SharedEnv:
    """One simulator instance plus everything both wrappers need to agree on."""

    def __init__(self, scenario: Scenario, *, seed: int = 0,
                 invalid_mode: InvalidActionMode = ZeroReward(),
                 availability_threshold: float = 0.6,
                 availability_penalty: float = -5000.0,
                 no_reset: bool = False,
                 defender_invalid_penalty: float = DEFENDER_INVALID_PENALTY,
                 terminate_on_full_ownership: bool = False):
        self.scenario = scenario
        self.space = FlatActionSpace(scenario)
        self.seed = seed
        self.invalid_mode = invalid_mode
        self.availability_threshold = availability_threshold
        self.availability_penalty = availability_penalty
        self.no_reset = no_reset
        self.defender_invalid_penalty = defender_invalid_penalty
        self.terminate_on_full_ownership = terminate_on_full_ownership
        self.coordinator = ResetCoordinator()
        self.reset_count = 0
        self.episode_seed = seed
        self.state = sim.reset(scenario, seed)
        self.rng = np.random.default_rng(seed)
        self.last_attacker_reward = 0.0
        self.violation_armed = True

    def real_reset(self, seed: Optional[int] = None) -> None:
        self.episode_seed = self.seed + self.reset_count if seed is None else seed
        self.state = sim.reset(self.scenario, self.episode_seed)
        self.rng = np.random.default_rng(self.episode_seed)
        self.reset_count += 1
        self.last_attacker_reward = 0.0
        self.violation_armed = True

    def tick(self) -> None:
        sim.tick(self.state)
        self.last_attacker_reward = 0.0

    def availability(self) -> float:
        return sim.availability(self.state)


class _Wrapper:
    side = ""

    def __init__(self, env: SharedEnv):
        self.env = env
        self.invalid_count = 0

    @property
    def space(self) -> FlatActionSpace:
        return self.env.space

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if self.env.coordinator.request(self.side):
            self.env.real_reset(seed)
        self.invalid_count = 0
        self._on_reset()
        return self.observe()

    def _on_reset(self) -> None:
        pass

    def observe(self) -> np.ndarray:
        raise NotImplementedError


class AttackerWrapper(_Wrapper):
    side = "red"

    def __init__(self, env: SharedEnv):
        super().__init__(env)
        self.dims = env.space.attacker_dims
        self.observation_size = attacker_observation_size(env.scenario)
        self._last_events: list = []
        self.last_raw_reward = 0.0
        self.last_redirected = False

    def _on_reset(self) -> None:
        self._last_events = []

    def observe(self) -> np.ndarray:
        return attacker_observation_vector(self.env.state, self._last_events)

    def valid_actions(self) -> list[sim.AttackerAction]:
        return sim.attacker_valid_actions(self.env.state)

    def step(self, flat_action: Sequence[int]) -> tuple[np.ndarray, float, bool]:
        env = self.env
        state = env.state
        action = env.space.decode_attacker(flat_action)
        if sim.attacker_is_valid(state, action):
            out = sim.attacker_step(state, action)
            shaped = out.raw_reward
            self.last_redirected = False
        else:
            self.invalid_count += 1
            self.last_redirected = True
            valid = sim.attacker_valid_actions(state)
            if valid:
                out = sim.attacker_step(state, valid[int(env.rng.integers(len(valid)))])
            else:
                out = sim.StepOutcome()
            mode = env.invalid_mode
            if isinstance(mode, Penalty):
                shaped = mode.amount
            elif isinstance(mode, PassThrough):
                shaped = out.raw_reward
            else:
                shaped = 0.0
        self.last_raw_reward = out.raw_reward
        self._last_events = out.events
        env.last_attacker_reward = shaped
        terminal = env.terminate_on_full_ownership and all(state.owned)
        return self.observe(), shaped, terminal


class DefenderWrapper(_Wrapper):
    side = "blue"

    def __init__(self, env: SharedEnv):
        super().__init__(env)
        self.dims = env.space.defender_dims
        self.observation_size = defender_observation_size(env.scenario)
        self.last_valid = True
        self.last_violation = False

    def observe(self) -> np.ndarray:
        return defender_observation_vector(self.env.state)

    def valid_actions(self) -> list[sim.DefenderAction]:
        return sim.defender_valid_actions(self.env.state)

    def step(self, flat_action: Sequence[int]) -> tuple[np.ndarray, float, bool]:
        env = self.env
        action = env.space.decode_defender(flat_action)
        if sim.defender_is_valid(env.state, action):
            sim.defender_step(env.state, action)
            r = env.last_attacker_reward
            reward = -r if r else 0.0
            self.last_valid = True
        else:
            self.invalid_count += 1
            reward = env.defender_invalid_penalty
            self.last_valid = False
        terminal = False
        self.last_violation = False
        if env.availability() < env.availability_threshold:
            if not env.no_reset:
                reward += env.availability_penalty
                terminal = True
                self.last_violation = True
            elif env.violation_armed:
                reward += env.availability_penalty
                env.violation_armed = False
                self.last_violation = True
        else:
            env.violation_armed = True
        return self.observe(), reward, terminal
