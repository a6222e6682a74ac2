from collections import Counter
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbe.taxonomy import (DuplicateKeywordError, GroupProfile, InterestModel, KeywordDictionary,
                           TaxonomyError, UnknownKeywordError, deserialize_profile, init_interest,
                           kilobytes, load_dictionary, parse_dictionary, serialize_profile,
                           synthetic_dictionary, to_plain_vector, update_interest)

DICT = synthetic_dictionary(30)
KW = DICT.keywords


def test_bundled_dictionary_loads():
    d = load_dictionary()
    assert d.n >= 20
    assert "sports/cycling" in d
    assert d.index_of(d.keywords[0]) == 0


def test_parse_skips_comments_and_blank_lines():
    d = parse_dictionary(["# header", "", "a/x", "  b/y  ", "a/z # trailing"])
    assert d.keywords == ("a/x", "b/y", "a/z")


def test_duplicate_keyword_rejected():
    with pytest.raises(DuplicateKeywordError):
        KeywordDictionary(("a", "b", "a"))


def test_unknown_keyword_lookup():
    with pytest.raises(UnknownKeywordError):
        DICT.index_of("nope")


def test_init_interest_weights_one():
    m = init_interest(KW[:3], DICT, owner="alice")
    assert m.entries == {k: 1 for k in KW[:3]}
    assert m.owner == "alice"


def test_init_interest_rejects_empty_and_unknown():
    with pytest.raises(TaxonomyError):
        init_interest([], DICT)
    with pytest.raises(UnknownKeywordError):
        init_interest(["nope"], DICT)


def test_update_increments_and_inserts():
    x = init_interest(KW[:2], DICT)
    y = update_interest(x, [[KW[1], KW[2]], GroupProfile("g", frozenset({KW[2], KW[3]}))], DICT)
    assert y.entries == {KW[0]: 1, KW[1]: 2, KW[2]: 2, KW[3]: 1}
    assert x.entries == {KW[0]: 1, KW[1]: 1}


def test_update_is_all_or_nothing():
    x = init_interest(KW[:2], DICT)
    with pytest.raises(UnknownKeywordError):
        update_interest(x, [[KW[2]], ["missing"]], DICT)
    assert x.entries == {KW[0]: 1, KW[1]: 1}


def test_weights_must_be_positive_integers():
    with pytest.raises(TaxonomyError):
        InterestModel({KW[0]: 0})
    with pytest.raises(TaxonomyError):
        InterestModel({KW[0]: 1.5})


def test_empty_group_profile_rejected():
    with pytest.raises(TaxonomyError):
        GroupProfile("g", frozenset())


def test_plain_vector_places_weights():
    v = to_plain_vector(InterestModel({KW[4]: 3, KW[0]: 1}), DICT)
    assert v.shape == (30,) and v[4] == 3 and v[0] == 1 and v.sum() == 4


@pytest.mark.parametrize("m, kb", [(50, "0.3906"), (100, "0.7813"), (200, "1.5625"),
                                   (400, "3.1250"), (800, "6.2500")])
def test_profile_size_reference(m, kb):
    d = synthetic_dictionary(1000)
    blob = serialize_profile(InterestModel({k: 1 + i % 7 for i, k in enumerate(d.keywords[:m])}), d)
    assert len(blob) == 8 * m
    assert str(kilobytes(len(blob))) == kb


def test_kilobytes_rounds_half_up():
    assert kilobytes(800) == Decimal("0.7813")  # 0.78125
    assert kilobytes(96016) == Decimal("93.7656")


def test_profile_roundtrip():
    m = InterestModel({KW[7]: 4, KW[2]: 1, KW[20]: 9})
    blob = serialize_profile(m, DICT)
    assert deserialize_profile(blob, DICT).entries == m.entries
    with pytest.raises(TaxonomyError):
        deserialize_profile(blob[:-1], DICT)


keyword_sets = st.lists(st.lists(st.sampled_from(KW), min_size=1, max_size=8, unique=True),
                        max_size=6)


@settings(max_examples=200)
@given(x=st.lists(st.sampled_from(KW), min_size=1, max_size=10, unique=True), groups=keyword_sets)
def test_weight_conservation(x, groups):
    model = init_interest(x, DICT)
    out = update_interest(model, groups, DICT)
    assert out.total_weight() == len(x) + sum(len(g) for g in groups)


@settings(max_examples=200)
@given(x=st.lists(st.sampled_from(KW), min_size=1, max_size=10, unique=True), groups=keyword_sets,
       data=st.data())
def test_order_independence(x, groups, data):
    model = init_interest(x, DICT)
    shuffled = data.draw(st.permutations(groups))
    assert update_interest(model, groups, DICT).entries == update_interest(model, shuffled, DICT).entries
    expected = Counter(x)
    for g in groups:
        expected.update(g)
    assert update_interest(model, groups, DICT).entries == dict(expected)
