import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbe.reputation import (Decision, Outcome, ReputationTable, TrustConfig, advance_epoch,
                             elect_super_node, gate, global_trust, record_interaction, trust_csv)

S, U = Outcome.SATISFACTORY, Outcome.UNSATISFACTORY


def test_local_trust_is_satisfied_fraction():
    t = ReputationTable()
    assert t.local_trust("a", "b") == 0.5
    for o in (S, S, U, S):
        record_interaction(t, "a", "b", o)
    assert t.local_trust("a", "b") == 0.75
    rec = t.records[("a", "b")]
    assert (rec.satisfactory, rec.unsatisfactory) == (3, 1)


def test_self_rating_rejected():
    with pytest.raises(ValueError):
        record_interaction(ReputationTable(), "a", "a", S)


def test_unknown_outcome_rejected():
    with pytest.raises(ValueError):
        record_interaction(ReputationTable(), "a", "b", "meh")


def test_global_is_trust_weighted_mean():
    t = ReputationTable()
    t.global_.update({"a": 1.0, "b": 0.2})
    record_interaction(t, "a", "c", S)
    record_interaction(t, "b", "c", U)
    g = global_trust(t, {"a": ["g"], "b": ["g"], "c": ["g"]})
    assert g["c"] == pytest.approx((1.0 * 1.0 + 0.2 * 0.0) / 1.2)
    assert g["a"] == 0.5  # nobody rated a


def test_global_requires_community():
    with pytest.raises(ValueError):
        global_trust(ReputationTable(), {"a": []})


def test_global_is_pure():
    t = ReputationTable()
    record_interaction(t, "a", "b", U)
    global_trust(t, {"a": ["g"], "b": ["g"]})
    assert t.global_ == {} and t.epoch == 0


def test_zero_weight_raters_fall_back_to_prior():
    t = ReputationTable()
    t.global_.update({"a": 0.0})
    record_interaction(t, "a", "b", U)
    assert global_trust(t, {"a": ["g"], "b": ["g"]})["b"] == 0.5


def test_eviction_after_consecutive_low_epochs():
    cfg = TrustConfig(eviction_epochs=3)
    t = ReputationTable(config=cfg)
    record_interaction(t, "a", "m", U)
    cmap = {"a": ["g"], "m": ["g"]}
    for epoch in range(1, 4):
        advance_epoch(t, cmap)
        assert t.global_trust("m") == 0.0
        assert ("m" in t.evicted) == (epoch == 3)
    assert t.below_floor["m"] == 3


def test_recovery_resets_low_counter():
    t = ReputationTable(config=TrustConfig(eviction_epochs=2))
    record_interaction(t, "a", "m", U)
    cmap = {"a": ["g"], "m": ["g"]}
    advance_epoch(t, cmap)
    for _ in range(3):
        record_interaction(t, "a", "m", S)
    advance_epoch(t, cmap)
    assert t.below_floor["m"] == 0 and "m" not in t.evicted


def test_departed_node_keeps_last_score():
    t = ReputationTable()
    record_interaction(t, "a", "b", U)
    advance_epoch(t, {"a": ["g"], "b": ["g"]})
    advance_epoch(t, {"a": ["g"]})
    assert t.global_trust("b") == 0.0


def test_election_highest_trust_smallest_id():
    t = ReputationTable()
    t.global_.update({"x": 0.9, "y": 0.9, "z": 0.4})
    assert elect_super_node({"z", "y", "x"}, t) == "x"
    assert elect_super_node({"z"}, t) == "z"
    with pytest.raises(ValueError):
        elect_super_node([], t)


def test_gate_uses_receiver_trust_and_eviction():
    t = ReputationTable()
    t.global_.update({"r": 0.29, "q": 0.3})
    assert gate(t, "s", "r") is Decision.DENY
    assert gate(t, "s", "q") is Decision.ALLOW
    assert gate(t, "s", "new") is Decision.ALLOW
    t.evicted.add("q")
    assert gate(t, "s", "q") is Decision.DENY


def test_trust_csv():
    out = trust_csv([(1, "a", 0.5), (1, "b", 1 / 3)])
    assert out.splitlines() == ["epoch,node_id,global_trust", "1,a,0.500000", "1,b,0.333333"]


@settings(max_examples=100)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd"), st.booleans()), max_size=60),
       st.integers(1, 4))
def test_scores_stay_in_unit_interval(events, epochs):
    t = ReputationTable()
    for r, tgt, ok in events:
        if r != tgt:
            record_interaction(t, r, tgt, S if ok else U)
    cmap = {n: ["g"] for n in "abcd"}
    for _ in range(epochs):
        advance_epoch(t, cmap)
    assert all(0.0 <= v <= 1.0 for v in t.local.values())
    assert all(0.0 <= v <= 1.0 for v in t.global_.values())
