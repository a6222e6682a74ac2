import json

import pytest

from pcbe.bench import bench_sim_cost, cost_scenario
from pcbe.group_crypto import header_size
from pcbe.overlay import (DELIVERY_OVERHEAD, MALICIOUS, ScenarioError, Simulator, parse_scenario,
                          population_scenario, run)


def two_groups(**kw):
    sim = Simulator(0, **kw)
    for node, g in [("a", "g1"), ("b", "g1"), ("c", "g1"), ("x", "g2"), ("y", "g2")]:
        sim.join(node, g)
    return sim


def test_first_joiner_is_super_node():
    sim = two_groups()
    assert sim.communities["g1"].super_node == "a"
    assert sim.super_nodes() == {"a", "x"}


def test_same_community_is_direct():
    rep = two_groups().send_one_to_one("b", "c", 10)
    assert rep.status == "delivered" and rep.route == ["b", "c"] and rep.hops == 1


def test_cross_community_goes_through_super_nodes():
    rep = two_groups().send_one_to_one("b", "y", 10)
    assert rep.route == ["b", "a", "x", "y"] and rep.messages == 3


def test_super_node_routes_collapse():
    rep = two_groups().send_one_to_one("a", "x", 10)
    assert rep.route == ["a", "x"]


def test_group_send_is_one_broadcast():
    sim = two_groups()
    rep = sim.send_one_to_group("a", "g1", 40)
    assert rep.recipients == ["b", "c"] and rep.messages == 1
    blob_len = header_size(0) + 40 + 16
    assert rep.bytes == blob_len + DELIVERY_OVERHEAD * 2
    out = sim.send_one_to_group("y", "g1", 40)
    assert out.route == ["y", "x", "a"] and out.messages == 3


def test_group_cost_is_header_plus_per_member_constant():
    costs = []
    for size in (3, 5, 9):
        sim = Simulator(0)
        for i in range(size):
            sim.join(f"m{i}", "g")
        costs.append(sim.send_one_to_group("m0", "g", 100).bytes)
    assert costs[1] - costs[0] == 2 * DELIVERY_OVERHEAD
    assert costs[2] - costs[1] == 4 * DELIVERY_OVERHEAD


def test_revocation_grows_broadcast_header():
    sim = two_groups()
    before = sim.send_one_to_group("a", "g1", 40).bytes
    sim.join("d", "g1")
    sim.leave("d", "g1")
    after = sim.send_one_to_group("a", "g1", 40).bytes
    assert after - before == header_size(1) - header_size(0)


def test_offline_and_unknown():
    sim = two_groups()
    sim.leave("c")
    assert sim.send_one_to_one("b", "c").status == "undeliverable"
    assert sim.send_one_to_one("c", "b").status == "sender-offline"
    with pytest.raises(KeyError):
        sim.send_one_to_one("b", "ghost")
    with pytest.raises(KeyError):
        sim.send_one_to_group("b", "nogroup")


def test_super_node_departure_triggers_reelection():
    sim = two_groups()
    sim.leave("a", "g1")
    assert sim.communities["g1"].super_node == "b"


def test_add_friend_befriends_on_delivery():
    sim = two_groups()
    assert sim.add_friend("b", "y").delivered
    assert "y" in sim.node("b").friends and "b" in sim.node("y").friends


def test_log_holds_no_plaintext():
    sim = two_groups()
    marker = b"CONFIDENTIAL-MARKER-42"
    sim.send_one_to_one("b", "y", marker)
    sim.send_one_to_group("a", "g1", marker)
    text = "\n".join(sim.log_lines())
    assert "CONFIDENTIAL" not in text and marker.hex() not in text
    assert sum("sealed_sha256" in json.loads(line) for line in sim.log_lines()) == 2


def test_receiver_gate_blocks_low_trust_receiver():
    sim = two_groups()
    sim.reputation.global_["c"] = 0.1
    assert sim.send_one_to_one("b", "c").status == "blocked-by-reputation"


SCRIPT = """\
0 join a g1
0 join b g1
0 join c g2 malicious
1 send-one a c 100
2 send-group c g1 50   # cross-group broadcast
3 status-update b 20
4 file-share a group:g1 4096
5 add-friend a b
12 leave b
"""


def test_scenario_runs_and_ticks_epochs():
    out = run(SCRIPT, seed=1, until=30)
    kinds = [json.loads(line)["kind"] for line in out.log]
    assert kinds.count("epoch-tick") == 3
    assert out.ledger.messages > 0
    assert {row[0] for row in out.trust} == {1, 2, 3}


def test_same_seed_same_log():
    assert run(SCRIPT, seed=3).log_text() == run(SCRIPT, seed=3).log_text()
    assert run(SCRIPT, seed=3).log_text() != run(SCRIPT, seed=4).log_text()


@pytest.mark.parametrize("text, line", [
    ("0 join a g1\nx send-one a b\n", 2),
    ("0 join a\n", 1),
    ("0 fly a\n", 1),
    ("5 join a g\n3 join b g\n", 2),
    ("0 join a g\n1 send-one a a big\n", 2),
])
def test_scenario_errors_report_line(text, line):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text)
    assert exc.value.line == line


def test_runtime_error_reports_line():
    with pytest.raises(ScenarioError) as exc:
        run("0 join a g\n1 send-one a ghost\n", seed=0)
    assert exc.value.line == 2


def test_empty_scenario_costs_nothing():
    out = run("# nothing\n", seed=0)
    assert out.ledger.messages == 0 and out.ledger.bytes == 0 and out.log == []


def test_time_cannot_go_backwards():
    sim = Simulator(0)
    sim.advance_to(5)
    with pytest.raises(ValueError):
        sim.advance_to(4)


def test_community_structure_saves_messages():
    res = bench_sim_cost(cost_scenario(n_groups=3, group_size=5, rounds=5))
    rows = {r["topology"]: r for r in res.rows}
    assert rows["community"]["messages"] < rows["flat"]["messages"]
    assert rows["community"]["deliveries"] == rows["flat"]["deliveries"]
    assert res.ok


def test_flooding_malicious_node_is_evicted():
    lines = [f"0 join h{i} g" for i in range(6)] + [f"0 join m g {MALICIOUS}"]
    for t in range(1, 100):
        lines += [f"{t} send-one m h{t % 6} 10", f"{t} send-one h{t % 6} h{(t + 1) % 6} 10"]
    out = run("\n".join(lines), seed=0, until=100)
    sim = out.simulator
    assert "m" in sim.reputation.evicted
    assert not (sim.reputation.evicted - {"m"})
    assert sim.send_one_to_one("m", "h0").status == "evicted"


def test_population_scenario_shape():
    script, bad = population_scenario(n_nodes=10, epochs=2, seed=0)
    events = parse_scenario(script)
    assert len(bad) == 1
    assert sum(e.kind == "join" for e in events) == 10
    assert not any(e.kind == "epoch-tick" for e in events)
