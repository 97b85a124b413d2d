"""Immutable network scenarios: data model, JSON document format, validation and
the built-in ToyCTF / tiny networks.

Everything downstream works with integer indices (node index, vulnerability
index within its node, port index into ``Scenario.ports``, credential index),
so the scenario precomputes those lookups once.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Union

SCHEMA_VERSION = 1
PROPERTY_WIDTH = 16
DEFAULT_EXPLOIT_COST = 1.0


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    """Malformed scenario document. ``locus`` is a line number or a field path."""

    def __init__(self, message: str, locus: Union[str, int, None] = None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus is not None else message)


class ValidationError(ScenarioError):
    pass


class Permission(enum.Enum):
    ALLOW = "ALLOW"
    BLOCK = "BLOCK"


class VulnKind(enum.Enum):
    LOCAL = "LOCAL"
    REMOTE = "REMOTE"


@dataclass(frozen=True)
class DiscoverNodes:
    nodes: tuple[str, ...]


@dataclass(frozen=True)
class LeakCredentials:
    credentials: tuple[str, ...]


@dataclass(frozen=True)
class ProbeInfo:
    property: str


VulnOutcome = Union[DiscoverNodes, LeakCredentials, ProbeInfo]


@dataclass(frozen=True)
class Service:
    port: str
    running: bool = True
    accepted_credentials: tuple[str, ...] = ()


@dataclass(frozen=True)
class FirewallRule:
    port: str
    permission: Permission


@dataclass(frozen=True)
class Vulnerability:
    id: str
    kind: VulnKind
    outcome: VulnOutcome
    # None means the default exploit cost applies
    cost: Optional[float] = None
    reward_bonus: float = 0.0
    # port a REMOTE exploit travels over; must be ALLOWed by the target's inbound firewall
    port: Optional[str] = None

    @property
    def effective_cost(self) -> float:
        return DEFAULT_EXPLOIT_COST if self.cost is None else self.cost


@dataclass(frozen=True)
class NodeSpec:
    id: str
    value: float = 0.0
    services: tuple[Service, ...] = ()
    firewall_in: tuple[FirewallRule, ...] = ()
    firewall_out: tuple[FirewallRule, ...] = ()
    vulnerabilities: tuple[Vulnerability, ...] = ()
    initially_owned: bool = False
    reimagable: bool = True


@dataclass(frozen=True)
class Credential:
    id: str
    node: str
    port: str


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    credentials: tuple[Credential, ...]
    start_node: str
    max_nodes: int
    max_credentials: int
    name: str = field(default="", compare=False)

    # -- derived index tables (cached; the dataclass is frozen so these never go stale)

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def credential_index(self) -> dict[str, int]:
        return {c.id: i for i, c in enumerate(self.credentials)}

    @cached_property
    def ports(self) -> tuple[str, ...]:
        names = set()
        for n in self.nodes:
            names.update(s.port for s in n.services)
            names.update(r.port for r in n.firewall_in)
            names.update(r.port for r in n.firewall_out)
            names.update(v.port for v in n.vulnerabilities if v.port is not None)
        names.update(c.port for c in self.credentials)
        return tuple(sorted(names))

    @cached_property
    def port_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.ports)}

    @cached_property
    def property_tags(self) -> tuple[str, ...]:
        tags = {v.outcome.property for n in self.nodes for v in n.vulnerabilities
                if isinstance(v.outcome, ProbeInfo)}
        return tuple(sorted(tags))

    @cached_property
    def max_vulnerabilities(self) -> int:
        return max([1] + [len(n.vulnerabilities) for n in self.nodes])

    @property
    def start_index(self) -> int:
        return self.node_index[self.start_node]

    def bounds(self) -> dict[str, int]:
        """Encoding bounds a trained model depends on."""
        return {
            "max_nodes": self.max_nodes,
            "max_credentials": self.max_credentials,
            "property_width": PROPERTY_WIDTH,
            "max_vulnerabilities": self.max_vulnerabilities,
            "num_ports": len(self.ports),
        }


# ---------------------------------------------------------------------------
# validation


def validate(s: Scenario) -> Scenario:
    """Raise ValidationError on the first referential-integrity defect found."""
    ids = [n.id for n in s.nodes]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValidationError(f"duplicate node id {dupes[0]!r}")
    cids = [c.id for c in s.credentials]
    dupes = sorted({i for i in cids if cids.count(i) > 1})
    if dupes:
        raise ValidationError(f"duplicate credential id {dupes[0]!r}")

    nodes = {n.id: n for n in s.nodes}
    creds = {c.id: c for c in s.credentials}

    if s.start_node not in nodes:
        raise ValidationError(f"start_node {s.start_node!r} does not exist")
    owned = [n.id for n in s.nodes if n.initially_owned]
    if not owned:
        raise ValidationError("no initially-owned node")
    if not nodes[s.start_node].initially_owned:
        raise ValidationError(f"start_node {s.start_node!r} is not marked initially_owned")
    if s.max_nodes < len(s.nodes):
        raise ValidationError(f"max_nodes {s.max_nodes} < {len(s.nodes)} nodes")
    if s.max_credentials < len(s.credentials):
        raise ValidationError(f"max_credentials {s.max_credentials} < {len(s.credentials)} credentials")

    for c in s.credentials:
        if c.node not in nodes:
            raise ValidationError(f"credential {c.id!r} references unknown node {c.node!r}")
        if c.port not in {sv.port for sv in nodes[c.node].services}:
            raise ValidationError(f"credential {c.id!r} references port {c.port!r} not exposed by {c.node!r}")

    for n in s.nodes:
        if n.value < 0:
            raise ValidationError(f"node {n.id!r} has negative value")
        ports = [sv.port for sv in n.services]
        if len(set(ports)) != len(ports):
            raise ValidationError(f"node {n.id!r} has duplicate service ports")
        for direction, rules in (("firewall_in", n.firewall_in), ("firewall_out", n.firewall_out)):
            rp = [r.port for r in rules]
            if len(set(rp)) != len(rp):
                raise ValidationError(f"node {n.id!r} has more than one {direction} rule for a port")
        for sv in n.services:
            for cid in sv.accepted_credentials:
                if cid not in creds:
                    raise ValidationError(f"service {n.id}:{sv.port} accepts unknown credential {cid!r}")
                c = creds[cid]
                if (c.node, c.port) != (n.id, sv.port):
                    raise ValidationError(f"service {n.id}:{sv.port} accepts credential {cid!r} targeting {c.node}:{c.port}")
        vids = [v.id for v in n.vulnerabilities]
        if len(set(vids)) != len(vids):
            raise ValidationError(f"node {n.id!r} has duplicate vulnerability ids")
        for v in n.vulnerabilities:
            if v.effective_cost < 0 or v.reward_bonus < 0:
                raise ValidationError(f"vulnerability {n.id}:{v.id} has negative cost or bonus")
            if v.kind is VulnKind.REMOTE and v.port is None:
                raise ValidationError(f"remote vulnerability {n.id}:{v.id} declares no port")
            out = v.outcome
            if isinstance(out, DiscoverNodes):
                for ref in out.nodes:
                    if ref not in nodes:
                        raise ValidationError(f"vulnerability {n.id}:{v.id} discovers unknown node {ref!r}")
            elif isinstance(out, LeakCredentials):
                for ref in out.credentials:
                    if ref not in creds:
                        raise ValidationError(f"vulnerability {n.id}:{v.id} leaks unknown credential {ref!r}")
    if len(s.property_tags) > PROPERTY_WIDTH:
        raise ValidationError(f"{len(s.property_tags)} property tags exceed bitmap width {PROPERTY_WIDTH}")
    return s


# ---------------------------------------------------------------------------
# document format


def _outcome_to_dict(o: VulnOutcome) -> dict[str, Any]:
    if isinstance(o, DiscoverNodes):
        return {"type": "DiscoverNodes", "nodes": list(o.nodes)}
    if isinstance(o, LeakCredentials):
        return {"type": "LeakCredentials", "credentials": list(o.credentials)}
    return {"type": "ProbeInfo", "property": o.property}


def to_dict(s: Scenario) -> dict[str, Any]:
    def rules(rs):
        return [{"port": r.port, "permission": r.permission.value} for r in rs]

    def vuln(v: Vulnerability):
        d: dict[str, Any] = {"id": v.id, "kind": v.kind.value, "outcome": _outcome_to_dict(v.outcome),
                             "reward_bonus": v.reward_bonus}
        if v.cost is not None:
            d["cost"] = v.cost
        if v.port is not None:
            d["port"] = v.port
        return d

    return {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "start_node": s.start_node,
        "max_nodes": s.max_nodes,
        "max_credentials": s.max_credentials,
        "nodes": [
            {
                "id": n.id,
                "value": n.value,
                "services": [{"port": sv.port, "running": sv.running,
                              "accepted_credentials": list(sv.accepted_credentials)} for sv in n.services],
                "firewall_in": rules(n.firewall_in),
                "firewall_out": rules(n.firewall_out),
                "vulnerabilities": [vuln(v) for v in n.vulnerabilities],
                "initially_owned": n.initially_owned,
                "reimagable": n.reimagable,
            }
            for n in s.nodes
        ],
        "credentials": [{"id": c.id, "node": c.node, "port": c.port} for c in s.credentials],
    }


def serialize(s: Scenario) -> str:
    return json.dumps(to_dict(s), indent=2) + "\n"


class _Reader:
    """Typed field access that reports the JSON path of whatever is wrong."""

    def __init__(self, obj: Any, path: str):
        if not isinstance(obj, dict):
            raise ParseError("expected an object", path)
        self.obj = obj
        self.path = path

    def get(self, key: str, typ, default: Any = ...):
        p = f"{self.path}.{key}" if self.path else key
        if key not in self.obj:
            if default is ...:
                raise ParseError("missing field", p)
            return default
        val = self.obj[key]
        if typ is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ParseError("expected a number", p)
            return float(val)
        if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
            raise ParseError("expected an integer", p)
        if not isinstance(val, typ):
            raise ParseError(f"expected {typ.__name__}", p)
        return val

    def items(self, key: str, default: Any = ...) -> list[tuple[str, Any]]:
        p = f"{self.path}.{key}" if self.path else key
        seq = self.get(key, list, default)
        return [(f"{p}[{i}]", x) for i, x in enumerate(seq)]

    def strings(self, key: str, default: Any = ...) -> tuple[str, ...]:
        out = []
        for p, x in self.items(key, default):
            if not isinstance(x, str):
                raise ParseError("expected a string", p)
            out.append(x)
        return tuple(out)


def _enum(cls, value: str, path: str):
    try:
        return cls(value)
    except ValueError:
        raise ParseError(f"unknown {cls.__name__} {value!r}", path) from None


def _parse_outcome(r: _Reader) -> VulnOutcome:
    kind = r.get("type", str)
    if kind == "DiscoverNodes":
        return DiscoverNodes(r.strings("nodes"))
    if kind == "LeakCredentials":
        return LeakCredentials(r.strings("credentials"))
    if kind == "ProbeInfo":
        return ProbeInfo(r.get("property", str))
    raise ParseError(f"unknown outcome type {kind!r}", f"{r.path}.type")


def _parse_rules(r: _Reader, key: str) -> tuple[FirewallRule, ...]:
    rules = []
    for p, x in r.items(key, []):
        rr = _Reader(x, p)
        rules.append(FirewallRule(rr.get("port", str), _enum(Permission, rr.get("permission", str), f"{p}.permission")))
    return tuple(rules)


def from_dict(doc: Any) -> Scenario:
    r = _Reader(doc, "")
    version = r.get("schema_version", int)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version}", "schema_version")
    nodes = []
    for p, x in r.items("nodes"):
        nr = _Reader(x, p)
        services = []
        for sp, sx in nr.items("services", []):
            sr = _Reader(sx, sp)
            services.append(Service(sr.get("port", str), sr.get("running", bool, True),
                                    sr.strings("accepted_credentials", [])))
        vulns = []
        for vp, vx in nr.items("vulnerabilities", []):
            vr = _Reader(vx, vp)
            cost = vr.get("cost", float, None)
            vulns.append(Vulnerability(
                id=vr.get("id", str),
                kind=_enum(VulnKind, vr.get("kind", str), f"{vp}.kind"),
                outcome=_parse_outcome(_Reader(vr.get("outcome", dict), f"{vp}.outcome")),
                cost=cost,
                reward_bonus=vr.get("reward_bonus", float, 0.0),
                port=vr.get("port", str, None),
            ))
        nodes.append(NodeSpec(
            id=nr.get("id", str),
            value=nr.get("value", float, 0.0),
            services=tuple(services),
            firewall_in=_parse_rules(nr, "firewall_in"),
            firewall_out=_parse_rules(nr, "firewall_out"),
            vulnerabilities=tuple(vulns),
            initially_owned=nr.get("initially_owned", bool, False),
            reimagable=nr.get("reimagable", bool, True),
        ))
    creds = []
    for p, x in r.items("credentials", []):
        cr = _Reader(x, p)
        creds.append(Credential(cr.get("id", str), cr.get("node", str), cr.get("port", str)))
    max_nodes = r.get("max_nodes", int)
    max_credentials = r.get("max_credentials", int)
    if max_nodes < 1:
        raise ParseError("must be positive", "max_nodes")
    if max_credentials < 1:
        raise ParseError("must be positive", "max_credentials")
    return Scenario(
        nodes=tuple(nodes),
        credentials=tuple(creds),
        start_node=r.get("start_node", str),
        max_nodes=max_nodes,
        max_credentials=max_credentials,
        name=r.get("name", str, ""),
    )


def load_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, f"line {e.lineno}") from None
    return validate(from_dict(doc))


def resolve_scenario(ref: str) -> Scenario:
    """Accept a built-in name (``toyctf``, ``tiny``) or a path to a scenario document."""
    if ref == "toyctf":
        return builtin_toyctf()
    if ref == "tiny":
        return builtin_tiny()
    with open(ref, encoding="utf-8") as fh:
        return load_scenario(fh.read())


# ---------------------------------------------------------------------------
# built-in scenarios

ALLOW = Permission.ALLOW
LOCAL = VulnKind.LOCAL
REMOTE = VulnKind.REMOTE


def _allow(*ports: str) -> tuple[FirewallRule, ...]:
    return tuple(FirewallRule(p, ALLOW) for p in ports)


def builtin_toyctf() -> Scenario:
    """Ten-node capture-the-flag network (values reconstructed, see docs/scenarios.md)."""
    out_all = _allow("GIT", "HTTPS", "SSH")
    nodes = (
        NodeSpec(
            "client", value=0,
            firewall_out=out_all,
            vulnerabilities=(
                Vulnerability("SearchEdgeHistory", LOCAL, DiscoverNodes(("Website",)), reward_bonus=2),
            ),
            initially_owned=True, reimagable=False,
        ),
        NodeSpec(
            "Website", value=20,
            services=(Service("HTTPS"), Service("SSH", accepted_credentials=("web-ssh",))),
            firewall_in=_allow("HTTPS", "SSH"),
            firewall_out=out_all,
            vulnerabilities=(
                Vulnerability("ScanIncomingConnections", REMOTE,
                              DiscoverNodes(("GitHubProject", "Website.Directory")), reward_bonus=5, port="HTTPS"),
                Vulnerability("ListBrowsableDirectory", REMOTE,
                              ProbeInfo("BrowsableDirectory"), reward_bonus=2, port="HTTPS"),
                Vulnerability("ReadTextFile", REMOTE,
                              LeakCredentials(("web-ssh",)), reward_bonus=5, port="HTTPS"),
            ),
        ),
        NodeSpec(
            "Website.Directory", value=10,
            services=(Service("HTTPS", accepted_credentials=("dir-token",)),),
            firewall_in=_allow("HTTPS"),
            firewall_out=out_all,
            vulnerabilities=(
                Vulnerability("NavigateWebDirectory", REMOTE,
                              LeakCredentials(("sharepoint-cred",)), reward_bonus=5, port="HTTPS"),
                Vulnerability("NavigateWebDirectoryFurther", REMOTE,
                              LeakCredentials(("github-token", "dir-token")), reward_bonus=5, port="HTTPS"),
            ),
        ),
        NodeSpec(
            "Website[user=monitor]", value=30,
            services=(Service("SSH", accepted_credentials=("monitor-ssh",)),),
            firewall_in=_allow("SSH"),
            firewall_out=out_all,
            vulnerabilities=(
                Vulnerability("CredScanHomeDirectory", LOCAL,
                              LeakCredentials(("arm-monitor",)), reward_bonus=10),
            ),
        ),
        NodeSpec(
            "GitHubProject", value=10,
            services=(Service("GIT", accepted_credentials=("github-token",)),),
            firewall_in=_allow("GIT"),
            firewall_out=_allow("HTTPS"),
            vulnerabilities=(
                Vulnerability("CredScanGitHistory", REMOTE,
                              LeakCredentials(("sas-token", "monitor-ssh")), reward_bonus=10, port="GIT"),
            ),
        ),
        NodeSpec(
            "AzureStorage", value=50,
            services=(Service("HTTPS", accepted_credentials=("sas-token",)),),
            firewall_in=_allow("HTTPS"),
            vulnerabilities=(
                Vulnerability("AccessDataWithSASToken", REMOTE,
                              ProbeInfo("LeakedCustomerData"), reward_bonus=10, port="HTTPS"),
            ),
        ),
        NodeSpec(
            "Sharepoint", value=40,
            services=(Service("HTTPS", accepted_credentials=("sharepoint-cred",)),),
            firewall_in=_allow("HTTPS"),
            vulnerabilities=(
                Vulnerability("ScanSharepointParentDirectory", REMOTE,
                              LeakCredentials(("ad-principal",)), reward_bonus=10, port="HTTPS"),
            ),
        ),
        NodeSpec(
            "AzureResourceManager", value=50,
            services=(Service("HTTPS", accepted_credentials=("ad-principal",)),),
            firewall_in=_allow("HTTPS"),
            firewall_out=_allow("SSH", "HTTPS"),
            vulnerabilities=(
                Vulnerability("ListAzureResources", LOCAL,
                              LeakCredentials(("vm-ssh",)), reward_bonus=5),
            ),
        ),
        NodeSpec(
            "AzureResourceManager[user=monitor]", value=50,
            services=(Service("HTTPS", accepted_credentials=("arm-monitor",)),),
            firewall_in=_allow("HTTPS"),
            vulnerabilities=(
                Vulnerability("ListSecrets", LOCAL, ProbeInfo("AzureSecrets"), reward_bonus=5),
            ),
        ),
        NodeSpec(
            "AzureVM", value=100,
            services=(Service("SSH", accepted_credentials=("vm-ssh",)), Service("PING")),
            firewall_in=_allow("SSH", "PING"),
            vulnerabilities=(
                Vulnerability("ReadPrivateInfo", LOCAL, ProbeInfo("VMPrivateInfo"), reward_bonus=10),
            ),
        ),
    )
    creds = (
        Credential("web-ssh", "Website", "SSH"),
        Credential("dir-token", "Website.Directory", "HTTPS"),
        Credential("sharepoint-cred", "Sharepoint", "HTTPS"),
        Credential("github-token", "GitHubProject", "GIT"),
        Credential("monitor-ssh", "Website[user=monitor]", "SSH"),
        Credential("sas-token", "AzureStorage", "HTTPS"),
        Credential("arm-monitor", "AzureResourceManager[user=monitor]", "HTTPS"),
        Credential("ad-principal", "AzureResourceManager", "HTTPS"),
        Credential("vm-ssh", "AzureVM", "SSH"),
    )
    return validate(Scenario(nodes, creds, "client", max_nodes=10, max_credentials=10, name="toyctf"))


def builtin_tiny() -> Scenario:
    """Three-node chain A -> B -> C, one credential per hop."""
    nodes = (
        NodeSpec(
            "A", value=0,
            firewall_out=_allow("SSH"),
            vulnerabilities=(
                Vulnerability("LeakB", LOCAL, LeakCredentials(("cB",)), reward_bonus=3),
                Vulnerability("ProbeA", LOCAL, ProbeInfo("Linux"), reward_bonus=1),
            ),
            initially_owned=True, reimagable=False,
        ),
        NodeSpec(
            "B", value=10,
            services=(Service("SSH", accepted_credentials=("cB",)),),
            firewall_in=_allow("SSH"),
            firewall_out=_allow("SSH"),
            vulnerabilities=(
                Vulnerability("ScanB", REMOTE, DiscoverNodes(("C",)), reward_bonus=2, port="SSH"),
                Vulnerability("LeakC", LOCAL, LeakCredentials(("cC",)), reward_bonus=3),
            ),
        ),
        NodeSpec(
            "C", value=20,
            services=(Service("SSH", accepted_credentials=("cC",)),),
            firewall_in=_allow("SSH"),
        ),
    )
    creds = (Credential("cB", "B", "SSH"), Credential("cC", "C", "SSH"))
    return validate(Scenario(nodes, creds, "A", max_nodes=3, max_credentials=2, name="tiny"))
