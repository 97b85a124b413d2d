"""Turn-based network attack/defence state machine.

Actions are structured values over integer indices into the scenario tables.
Invalid actions are data: every step function returns ``valid=False`` with a
zero reward instead of raising, and leaves the state untouched.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Union

from .scenario import DiscoverNodes, LeakCredentials, Permission, ProbeInfo, Scenario, VulnKind

REIMAGE_DURATION = 15
CONNECT_COST = 0.0


class Direction(enum.IntEnum):
    INCOMING = 0
    OUTGOING = 1


_INCOMING, _OUTGOING = Direction.INCOMING, Direction.OUTGOING


# -- attacker actions

@dataclass(frozen=True)
class LocalExploit:
    node: int
    vuln: int


@dataclass(frozen=True)
class RemoteExploit:
    source: int
    target: int
    vuln: int


@dataclass(frozen=True)
class Connect:
    source: int
    target: int
    port: int
    credential: int


AttackerAction = Union[LocalExploit, RemoteExploit, Connect]


# -- defender actions

@dataclass(frozen=True)
class Reimage:
    node: int


@dataclass(frozen=True)
class BlockTraffic:
    node: int
    port: int
    direction: Direction


@dataclass(frozen=True)
class AllowTraffic:
    node: int
    port: int
    direction: Direction


@dataclass(frozen=True)
class StopService:
    node: int
    port: int


@dataclass(frozen=True)
class StartService:
    node: int
    port: int


DefenderAction = Union[Reimage, BlockTraffic, AllowTraffic, StopService, StartService]


# -- events

@dataclass(frozen=True)
class NodeOwned:
    node: int


@dataclass(frozen=True)
class NodesDiscovered:
    count: int


@dataclass(frozen=True)
class CredentialsLeaked:
    count: int


@dataclass(frozen=True)
class NoEffect:
    pass


Event = Union[NodeOwned, NodesDiscovered, CredentialsLeaked, NoEffect]


@dataclass
class StepOutcome:
    raw_reward: float = 0.0
    events: list = field(default_factory=list)
    valid: bool = False


@dataclass
class EnvState:
    """Mutable runtime state of one episode.

    Per-node lists are indexed by scenario node index; ``service_running`` maps
    port index to running flag per node; ``firewall[direction][node][port]`` is
    True for ALLOW.
    """

    scenario: Scenario
    owned: list[bool]
    discovered: list[bool]
    reimage_countdown: list[int]
    service_running: list[dict[int, bool]]
    firewall: list[list[list[bool]]]
    credential_cache: set[int]
    exercised_vulnerabilities: set[tuple[int, int]]
    # reward bookkeeping: positive reward components are paid at most once per episode
    rewarded_vulnerabilities: set[tuple[int, int]]
    ever_owned: set[int]
    revealed_properties: set[int]
    step: int = 0
    rng_seed: int = 0

    def clone(self) -> "EnvState":
        return EnvState(
            scenario=self.scenario,
            owned=list(self.owned),
            discovered=list(self.discovered),
            reimage_countdown=list(self.reimage_countdown),
            service_running=[dict(d) for d in self.service_running],
            firewall=[[list(row) for row in fw] for fw in self.firewall],
            credential_cache=set(self.credential_cache),
            exercised_vulnerabilities=set(self.exercised_vulnerabilities),
            rewarded_vulnerabilities=set(self.rewarded_vulnerabilities),
            ever_owned=set(self.ever_owned),
            revealed_properties=set(self.revealed_properties),
            step=self.step,
            rng_seed=self.rng_seed,
        )

    @property
    def n(self) -> int:
        return len(self.owned)

    def owned_nodes(self) -> list[int]:
        return [i for i, o in enumerate(self.owned) if o]

    def state_hash(self) -> int:
        """64-bit digest of the full mutable state; stable across processes."""
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<qq", self.step, self.rng_seed))
        h.update(bytes(self.owned) + b"|" + bytes(self.discovered) + b"|")
        h.update(struct.pack(f"<{self.n}q", *self.reimage_countdown))
        for d in self.service_running:
            h.update(repr(sorted(d.items())).encode())
        for fw in self.firewall:
            for row in fw:
                h.update(bytes(row))
        for s in (self.credential_cache, self.exercised_vulnerabilities, self.rewarded_vulnerabilities,
                  self.ever_owned, self.revealed_properties):
            h.update(repr(sorted(s)).encode() + b"|")
        return int.from_bytes(h.digest(), "little")


def reset(scenario: Scenario, seed: int = 0) -> EnvState:
    """Fresh episode state. Exploits are deterministic, so ``seed`` is only recorded."""
    n = len(scenario.nodes)
    nports = len(scenario.ports)
    pidx = scenario.port_index
    firewall = []
    for attr in ("firewall_in", "firewall_out"):
        fw = []
        for node in scenario.nodes:
            row = [False] * nports
            for rule in getattr(node, attr):
                row[pidx[rule.port]] = rule.permission is Permission.ALLOW
            fw.append(row)
        firewall.append(fw)
    start = scenario.start_index
    owned = [False] * n
    owned[start] = True
    discovered = [False] * n
    discovered[start] = True
    return EnvState(
        scenario=scenario,
        owned=owned,
        discovered=discovered,
        reimage_countdown=[0] * n,
        service_running=[{pidx[s.port]: s.running for s in node.services} for node in scenario.nodes],
        firewall=firewall,
        credential_cache=set(),
        exercised_vulnerabilities=set(),
        rewarded_vulnerabilities=set(),
        ever_owned={start},
        revealed_properties=set(),
        step=0,
        rng_seed=seed,
    )


# ---------------------------------------------------------------------------
# attacker


def attacker_is_valid(state: EnvState, action: AttackerAction) -> bool:
    sc = state.scenario
    n = state.n
    if isinstance(action, LocalExploit):
        if not 0 <= action.node < n or not state.owned[action.node]:
            return False
        vulns = sc.nodes[action.node].vulnerabilities
        return 0 <= action.vuln < len(vulns) and vulns[action.vuln].kind is VulnKind.LOCAL
    if isinstance(action, RemoteExploit):
        s, t = action.source, action.target
        if not (0 <= s < n and 0 <= t < n):
            return False
        if not state.owned[s] or not state.discovered[t] or state.owned[t] or state.reimage_countdown[t]:
            return False
        vulns = sc.nodes[t].vulnerabilities
        if not 0 <= action.vuln < len(vulns):
            return False
        v = vulns[action.vuln]
        return v.kind is VulnKind.REMOTE and state.firewall[_INCOMING][t][sc.port_index[v.port]]
    if isinstance(action, Connect):
        s, t, p, c = action.source, action.target, action.port, action.credential
        if not (0 <= s < n and 0 <= t < n) or s == t:
            return False
        if not state.owned[s] or not state.discovered[t] or state.reimage_countdown[t]:
            return False
        if c not in state.credential_cache:
            return False
        cred = sc.credentials[c]
        if sc.node_index[cred.node] != t or sc.port_index[cred.port] != p:
            return False
        if not state.service_running[t].get(p, False):
            return False
        svc = next(sv for sv in sc.nodes[t].services if sv.port == cred.port)
        if cred.id not in svc.accepted_credentials:
            return False
        return state.firewall[_OUTGOING][s][p] and state.firewall[_INCOMING][t][p]
    return False


def _apply_outcome(state: EnvState, node: int, vuln: int) -> tuple[float, list]:
    sc = state.scenario
    v = sc.nodes[node].vulnerabilities[vuln]
    key = (node, vuln)
    reward = -v.effective_cost
    events: list = []
    out = v.outcome
    if isinstance(out, DiscoverNodes):
        new = 0
        for nid in out.nodes:
            i = sc.node_index[nid]
            if not state.discovered[i]:
                state.discovered[i] = True
                new += 1
        if new:
            events.append(NodesDiscovered(new))
    elif isinstance(out, LeakCredentials):
        new_creds = 0
        new_nodes = 0
        for cid in out.credentials:
            ci = sc.credential_index[cid]
            if ci not in state.credential_cache:
                state.credential_cache.add(ci)
                new_creds += 1
            # a leaked credential also reveals the node it opens
            t = sc.node_index[sc.credentials[ci].node]
            if not state.discovered[t]:
                state.discovered[t] = True
                new_nodes += 1
        if new_nodes:
            events.append(NodesDiscovered(new_nodes))
        if new_creds:
            events.append(CredentialsLeaked(new_creds))
    elif isinstance(out, ProbeInfo):
        state.revealed_properties.add(sc.property_tags.index(out.property))
    state.exercised_vulnerabilities.add(key)
    if key not in state.rewarded_vulnerabilities:
        state.rewarded_vulnerabilities.add(key)
        reward += v.reward_bonus
    elif not events:
        events.append(NoEffect())
    return reward, events


def attacker_step(state: EnvState, action: AttackerAction) -> StepOutcome:
    if not attacker_is_valid(state, action):
        return StepOutcome()
    if isinstance(action, LocalExploit):
        reward, events = _apply_outcome(state, action.node, action.vuln)
    elif isinstance(action, RemoteExploit):
        reward, events = _apply_outcome(state, action.target, action.vuln)
    else:
        t = action.target
        reward, events = -CONNECT_COST, []
        if state.owned[t]:
            events.append(NoEffect())
        else:
            state.owned[t] = True
            events.append(NodeOwned(t))
            if t not in state.ever_owned:
                state.ever_owned.add(t)
                reward += state.scenario.nodes[t].value
    return StepOutcome(reward, events, True)


def attacker_valid_actions(state: EnvState) -> list[AttackerAction]:
    """All currently valid attacker actions, ordered by their flat encoding."""
    sc = state.scenario
    n = state.n
    owned = state.owned_nodes()
    local: list[AttackerAction] = []
    remote: list[AttackerAction] = []
    connect: list[AttackerAction] = []
    for i in owned:
        for vi, v in enumerate(sc.nodes[i].vulnerabilities):
            if v.kind is VulnKind.LOCAL:
                local.append(LocalExploit(i, vi))
    fw_in = state.firewall[_INCOMING]
    fw_out = state.firewall[_OUTGOING]
    targets = [t for t in range(n) if state.discovered[t] and not state.reimage_countdown[t]]
    creds_by_target: dict[int, list[tuple[int, int]]] = {}
    for c in sorted(state.credential_cache):
        cred = sc.credentials[c]
        t = sc.node_index[cred.node]
        p = sc.port_index[cred.port]
        if not state.service_running[t].get(p, False) or not fw_in[t][p]:
            continue
        svc = next(sv for sv in sc.nodes[t].services if sv.port == cred.port)
        if cred.id in svc.accepted_credentials:
            creds_by_target.setdefault(t, []).append((p, c))
    for s in owned:
        for t in targets:
            if not state.owned[t]:
                for vi, v in enumerate(sc.nodes[t].vulnerabilities):
                    if v.kind is VulnKind.REMOTE and fw_in[t][sc.port_index[v.port]]:
                        remote.append(RemoteExploit(s, t, vi))
            if t != s:
                for p, c in creds_by_target.get(t, ()):
                    if fw_out[s][p]:
                        connect.append(Connect(s, t, p, c))
    # sort within a type: (source, target, vuln, port, credential) is the encoded order
    remote.sort(key=lambda a: (a.source, a.target, a.vuln))
    connect.sort(key=lambda a: (a.source, a.target, a.port, a.credential))
    local.sort(key=lambda a: (a.node, a.vuln))
    return local + remote + connect


# ---------------------------------------------------------------------------
# defender


def defender_is_valid(state: EnvState, action: DefenderAction) -> bool:
    n = state.n
    nports = len(state.scenario.ports)
    if isinstance(action, Reimage):
        i = action.node
        return 0 <= i < n and state.scenario.nodes[i].reimagable and state.reimage_countdown[i] == 0
    if not (0 <= action.node < n and 0 <= action.port < nports):
        return False
    if isinstance(action, (BlockTraffic, AllowTraffic)):
        allowed = state.firewall[action.direction][action.node][action.port]
        return allowed if isinstance(action, BlockTraffic) else not allowed
    running = state.service_running[action.node].get(action.port)
    if running is None:
        return False
    return running if isinstance(action, StopService) else not running


def defender_step(state: EnvState, action: DefenderAction) -> StepOutcome:
    if not defender_is_valid(state, action):
        return StepOutcome()
    if isinstance(action, Reimage):
        i = action.node
        state.owned[i] = False
        state.exercised_vulnerabilities = {k for k in state.exercised_vulnerabilities if k[0] != i}
        state.reimage_countdown[i] = REIMAGE_DURATION
    elif isinstance(action, BlockTraffic):
        state.firewall[action.direction][action.node][action.port] = False
    elif isinstance(action, AllowTraffic):
        state.firewall[action.direction][action.node][action.port] = True
    elif isinstance(action, StopService):
        state.service_running[action.node][action.port] = False
    else:
        state.service_running[action.node][action.port] = True
    return StepOutcome(0.0, [], True)


def defender_valid_actions(state: EnvState) -> list[DefenderAction]:
    """All currently valid defender actions, ordered by their flat encoding."""
    sc = state.scenario
    n = state.n
    ports = range(len(sc.ports))
    fw_in, fw_out = state.firewall
    out: list[DefenderAction] = [Reimage(i) for i in range(n)
                                 if sc.nodes[i].reimagable and state.reimage_countdown[i] == 0]
    for cls, want in ((BlockTraffic, True), (AllowTraffic, False)):
        for i in range(n):
            row_in, row_out = fw_in[i], fw_out[i]
            for p in ports:
                if row_in[p] == want:
                    out.append(cls(i, p, _INCOMING))
                if row_out[p] == want:
                    out.append(cls(i, p, _OUTGOING))
    for cls, want in ((StopService, True), (StartService, False)):
        for i in range(n):
            running = state.service_running[i]
            for p in sorted(running):
                if running[p] == want:
                    out.append(cls(i, p))
    return out


# ---------------------------------------------------------------------------
# clock and availability


def tick(state: EnvState) -> None:
    cd = state.reimage_countdown
    for i, c in enumerate(cd):
        if c > 0:
            cd[i] = c - 1
    state.step += 1


def availability(state: EnvState) -> float:
    """Fraction of nodes that are up and running every service that runs by default."""
    sc = state.scenario
    up = 0
    for i, node in enumerate(sc.nodes):
        if state.reimage_countdown[i]:
            continue
        running = state.service_running[i]
        if all(running[sc.port_index[s.port]] for s in node.services if s.running):
            up += 1
    return up / len(sc.nodes)


def is_valid(state: EnvState, action) -> bool:
    if isinstance(action, (LocalExploit, RemoteExploit, Connect)):
        return attacker_is_valid(state, action)
    return defender_is_valid(state, action)


def step(state: EnvState, action) -> StepOutcome:
    if isinstance(action, (LocalExploit, RemoteExploit, Connect)):
        return attacker_step(state, action)
    return defender_step(state, action)
