import json

import numpy as np
import pytest

from conftest import build_network
from pcbe.recommend import (EmptyCandidatePool, RecommendConfig, RecommendationError, SessionAborted,
                            audit_leakage, payload_kind, recommend_friends, recommend_groups)
from pcbe.secure_match import ObfuscationParams, gen_key, rank
from pcbe.taxonomy import to_plain_vector

EXACT = ObfuscationParams(0.0, 0.0)


def pick_target(sim):
    return max(sorted(sim.nodes), key=lambda n: len(sim.node(n).friends))


def test_friend_flow_matches_plaintext_ranking(network):
    sim, d = network
    target = pick_target(sim)
    res = recommend_friends(sim, target, 5, d, EXACT, seed=1)
    q = to_plain_vector(sim.node(target).interest, d)
    plain = [float(to_plain_vector(sim.node(c).interest, d) @ q) for c in res.pool.candidates]
    assert res.ranked == rank(res.pool.candidates, plain, 5)
    assert res.ranked


def test_candidates_exclude_target_friends_and_super_node(network):
    sim, d = network
    target = pick_target(sim)
    res = recommend_friends(sim, target, 50, d, seed=2)
    banned = {target, res.request.super_node} | sim.node(target).friends
    assert not banned & set(res.pool.candidates)
    assert len(set(res.pool.candidates)) == len(res.pool.candidates)
    assert all(v in sim.node(target).friends for v in res.pool.provenance.values())


def test_key_never_reaches_designated_super_node(network):
    sim, d = network
    for target in sorted(sim.nodes)[:8]:
        try:
            res = recommend_friends(sim, target, 5, d, seed=3)
        except EmptyCandidatePool:
            continue
        assert res.request.super_node not in res.sk_recipients
        assert audit_leakage(res.transcript_lines()).clean


def test_designated_super_node_is_most_trusted_of_target_groups(network):
    sim, d = network
    target = pick_target(sim)
    sns = {sim.communities[g].super_node for g in sim.node(target).communities}
    res = recommend_friends(sim, target, 3, d, seed=0)
    assert res.request.super_node in sns


def test_pool_cap():
    sim, d = build_network(seed=1, friend_prob=0.6)
    target = pick_target(sim)
    res = recommend_friends(sim, target, 5, d, seed=0, config=RecommendConfig(max_pool=2))
    assert len(res.pool.candidates) <= 2


def test_no_trusted_friends_is_empty_pool(network):
    sim, d = network
    sim.add_node("loner")
    sim.join("loner", "g0")
    sim.set_interest("loner", sim.node("u00").interest)
    with pytest.raises(EmptyCandidatePool):
        recommend_friends(sim, "loner", 3, d, seed=0)


def test_distrusted_friends_do_not_relay(network):
    sim, d = network
    target = pick_target(sim)
    for f in sim.node(target).friends:
        sim.reputation.local[(target, f)] = 0.1
    with pytest.raises(EmptyCandidatePool):
        recommend_friends(sim, target, 3, d, seed=0)


def test_offline_target_aborts(network):
    sim, d = network
    target = pick_target(sim)
    sim.leave(target)
    with pytest.raises(SessionAborted) as exc:
        recommend_friends(sim, target, 3, d, seed=0)
    assert exc.value.retriable


def test_missing_interest_model(network):
    sim, d = network
    target = pick_target(sim)
    sim.node(target).interest = None
    with pytest.raises(RecommendationError):
        recommend_friends(sim, target, 3, d, seed=0)


def test_group_flow_skips_own_groups(network):
    sim, d = network
    target = pick_target(sim)
    res = recommend_groups(sim, target, 3, d, EXACT, seed=0)
    own = set(sim.node(target).communities)
    assert not own & set(res.pool.candidates)
    q = to_plain_vector(sim.node(target).interest, d)
    plain = [float(to_plain_vector(sim.communities[g].profile.as_model(), d) @ q)
             for g in res.pool.candidates]
    assert res.ranked == rank(res.pool.candidates, plain, 3)
    assert audit_leakage(res.transcript).clean


@pytest.mark.parametrize("fault, code", [("sk-to-super-node", "a"), ("plaintext-trapdoor", "c")])
def test_faults_are_caught(network, fault, code):
    sim, d = network
    target = pick_target(sim)
    res = recommend_friends(sim, target, 3, d, seed=0, fault=fault)
    assert code in audit_leakage(res.transcript_lines()).codes()


def test_unknown_fault(network):
    sim, d = network
    with pytest.raises(ValueError):
        recommend_friends(sim, pick_target(sim), 3, d, fault="nope")


def test_audit_flags_friend_index_to_super_node():
    records = [
        {"session": "s", "seq": 0, "phase": "open", "target": "t", "flow": "friends",
         "designated_super_node": "sn", "super_nodes": ["sn"], "target_friends": ["f"],
         "target_groups": ["g"]},
        {"session": "s", "seq": 1, "phase": "index", "from": "f", "to": "sn", "payload_kind": "index"},
    ]
    report = audit_leakage(json.dumps(r) for r in records)
    assert report.codes() == {"b"} and report.sessions == 1


def test_transcript_is_json_lines(network):
    sim, d = network
    res = recommend_friends(sim, pick_target(sim), 3, d, seed=0)
    lines = res.transcript_lines()
    assert [json.loads(line)["seq"] for line in lines] == list(range(len(lines)))
    assert json.loads(lines[0])["phase"] == "open"


def test_payload_kind():
    assert payload_kind(gen_key(2, seed=0)) == "secret-key"
    assert payload_kind(np.zeros(3)) == "plain-vector"
    with pytest.raises(TypeError):
        payload_kind("text")
