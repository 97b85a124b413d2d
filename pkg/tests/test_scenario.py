import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cybermarl.scenario import (
    Credential, DiscoverNodes, FirewallRule, LeakCredentials, NodeSpec, ParseError, Permission, ProbeInfo,
    Scenario, Service, ValidationError, Vulnerability, VulnKind, builtin_tiny, builtin_toyctf, load_scenario,
    resolve_scenario, serialize, to_dict, validate,
)

PORTS = ["GIT", "HTTPS", "SSH", "RDP"]


@st.composite
def scenarios(draw):
    n = draw(st.integers(1, 6))
    ids = [f"n{i}" for i in range(n)]
    # services first so credentials can target them
    services = []
    for _ in range(n):
        services.append(draw(st.lists(st.sampled_from(PORTS), unique=True, max_size=3)))
    cred_slots = [(ids[i], p) for i in range(n) for p in services[i]]
    chosen = draw(st.lists(st.sampled_from(cred_slots), max_size=6)) if cred_slots else []
    creds = tuple(Credential(f"c{k}", node, port) for k, (node, port) in enumerate(chosen))
    cred_ids = [c.id for c in creds]
    nodes = []
    for i in range(n):
        svc = tuple(
            Service(p, draw(st.booleans()),
                    tuple(c.id for c in creds if (c.node, c.port) == (ids[i], p)))
            for p in services[i]
        )
        vulns = []
        for j in range(draw(st.integers(0, 3))):
            kind = draw(st.sampled_from(list(VulnKind)))
            outcome_kind = draw(st.integers(0, 2))
            if outcome_kind == 0:
                outcome = DiscoverNodes(tuple(draw(st.lists(st.sampled_from(ids), max_size=2))))
            elif outcome_kind == 1 and cred_ids:
                outcome = LeakCredentials(tuple(draw(st.lists(st.sampled_from(cred_ids), max_size=2))))
            else:
                outcome = ProbeInfo(draw(st.sampled_from(["Linux", "Windows", "Azure", "Data"])))
            port = draw(st.sampled_from(PORTS)) if kind is VulnKind.REMOTE else draw(st.none() | st.sampled_from(PORTS))
            cost = draw(st.none() | st.floats(0, 5, allow_nan=False).map(lambda x: round(x, 3)))
            vulns.append(Vulnerability(f"v{j}", kind, outcome, cost, float(draw(st.integers(0, 20))), port))

        def rules():
            ports = draw(st.lists(st.sampled_from(PORTS), unique=True, max_size=3))
            return tuple(FirewallRule(p, draw(st.sampled_from(list(Permission)))) for p in ports)

        nodes.append(NodeSpec(ids[i], float(draw(st.integers(0, 100))), svc, rules(), rules(), tuple(vulns),
                              initially_owned=(i == 0), reimagable=draw(st.booleans())))
    return validate(Scenario(tuple(nodes), creds, ids[0], max_nodes=n + draw(st.integers(0, 3)),
                             max_credentials=max(1, len(creds)) + draw(st.integers(0, 2)), name="gen"))


@settings(max_examples=150, deadline=None)
@given(scenarios())
def test_round_trip_generated(sc):
    again = load_scenario(serialize(sc))
    assert again == sc
    assert serialize(again) == serialize(sc)


@pytest.mark.parametrize("factory", [builtin_toyctf, builtin_tiny])
def test_builtin_round_trip(factory):
    sc = factory()
    assert load_scenario(serialize(sc)) == sc


def test_toyctf_shape():
    sc = builtin_toyctf()
    assert len(sc.nodes) == 10
    website = sc.nodes[sc.node_index["Website"]]
    assert len(website.vulnerabilities) == 3
    allowed = {r.port for r in website.firewall_in if r.permission is Permission.ALLOW}
    assert {s.port for s in website.services} <= allowed
    outcomes = sorted(type(v.outcome).__name__ for v in website.vulnerabilities)
    assert outcomes == ["DiscoverNodes", "LeakCredentials", "ProbeInfo"]
    client = sc.nodes[sc.start_index]
    assert client.value == 0 and client.initially_owned
    assert [n.id for n in sc.nodes if n.initially_owned] == ["client"]
    assert all(0 <= n.value <= 100 for n in sc.nodes)
    for name in ("GitHubProject", "AzureStorage", "Sharepoint"):
        assert name in sc.node_index


def test_tiny_shape():
    sc = builtin_tiny()
    assert len(sc.nodes) == 3
    assert [n.id for n in sc.nodes if n.initially_owned] == ["A"]
    b = sc.bounds()
    dims = [3, b["max_nodes"], b["max_nodes"], b["max_vulnerabilities"], b["num_ports"], b["max_credentials"]]
    total = 1
    for d in dims:
        total *= d
    assert total == 3 * 3 * 3 * 2 * 1 * 2


def test_dangling_credential_node_named():
    doc = to_dict(builtin_tiny())
    doc["credentials"][0]["node"] = "ghost"
    with pytest.raises(ValidationError, match="ghost"):
        load_scenario(json.dumps(doc))


def test_parse_error_reports_line():
    text = serialize(builtin_tiny()).replace('"max_nodes": 3,', '"max_nodes": 3,,')
    with pytest.raises(ParseError) as info:
        load_scenario(text)
    assert info.value.locus.startswith("line ")


def test_parse_error_reports_field_path():
    doc = to_dict(builtin_tiny())
    doc["nodes"][1]["value"] = "lots"
    with pytest.raises(ParseError) as info:
        load_scenario(json.dumps(doc))
    assert info.value.locus == "nodes[1].value"


def test_schema_version_checked():
    doc = to_dict(builtin_tiny())
    doc["schema_version"] = 2
    with pytest.raises(ParseError):
        load_scenario(json.dumps(doc))


# --- mutation test: delete one referenced entity per defect class -----------

def _drop_node(doc, node_id):
    doc["nodes"] = [n for n in doc["nodes"] if n["id"] != node_id]
    return doc


MUTATIONS = {
    "discovered node removed": lambda d: _drop_node(d, "GitHubProject"),
    "credential target node removed": lambda d: _drop_node(d, "AzureVM"),
    "leaked credential removed": lambda d: {**d, "credentials": [c for c in d["credentials"] if c["id"] != "vm-ssh"]},
    "start node removed": lambda d: _drop_node(d, "client"),
    "duplicate node id": lambda d: {**d, "nodes": d["nodes"] + [dict(d["nodes"][1])]},
    "no owned node": lambda d: {**d, "nodes": [{**n, "initially_owned": False} for n in d["nodes"]]},
    "max_nodes too small": lambda d: {**d, "max_nodes": 9},
    "max_credentials too small": lambda d: {**d, "max_credentials": 8},
}


@pytest.mark.parametrize("name", sorted(MUTATIONS))
def test_mutation_detected(name):
    doc = MUTATIONS[name](to_dict(builtin_toyctf()))
    with pytest.raises(ValidationError):
        load_scenario(json.dumps(doc))


def test_every_reference_deletion_detected():
    """Remove each referenced credential and each referenced node in turn."""
    base = to_dict(builtin_toyctf())
    referenced_creds = {c for n in base["nodes"] for v in n["vulnerabilities"]
                        for c in v["outcome"].get("credentials", [])}
    for cid in sorted(referenced_creds):
        doc = to_dict(builtin_toyctf())
        doc["credentials"] = [c for c in doc["credentials"] if c["id"] != cid]
        with pytest.raises(ValidationError):
            load_scenario(json.dumps(doc))
    for n in base["nodes"]:
        doc = to_dict(builtin_toyctf())
        _drop_node(doc, n["id"])
        with pytest.raises(ValidationError):
            load_scenario(json.dumps(doc))


def test_remote_vulnerability_needs_port():
    sc = builtin_tiny()
    b = sc.nodes[1]
    bad = dataclasses.replace(b.vulnerabilities[0], port=None)
    nodes = (sc.nodes[0], dataclasses.replace(b, vulnerabilities=(bad,) + b.vulnerabilities[1:]), sc.nodes[2])
    with pytest.raises(ValidationError):
        validate(dataclasses.replace(sc, nodes=nodes))


def test_resolve_scenario_path(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(serialize(builtin_tiny()))
    assert resolve_scenario(str(p)) == builtin_tiny()
    assert resolve_scenario("toyctf") == builtin_toyctf()
