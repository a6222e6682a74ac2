import numpy as np
import pytest

from pcbe.group_crypto import (HEADER_FIXED, HEADER_PER_REVOKED, AuthorizationError, GroupKeyState,
                               derive_group_key, header_size, open_, open_pairwise, seal,
                               seal_pairwise, split_blob)


def state(members=("a", "b", "c")):
    st = GroupKeyState("g1", np.random.default_rng(0), secret=b"s" * 32)
    for m in members:
        st.add_member(m)
    return st


def test_members_decrypt_outsiders_do_not():
    st = state()
    blob = seal(st, b"hello group")
    assert all(open_(st, blob, m) == b"hello group" for m in "abc")
    with pytest.raises(AuthorizationError):
        open_(st, blob, "mallory")


def test_revoked_member_cannot_read_new_traffic():
    st = state()
    old = seal(st, b"before")
    st.revoke("b")
    new = seal(st, b"after")
    with pytest.raises(AuthorizationError):
        open_(st, new, "b")
    assert open_(st, new, "a") == b"after"
    # Remaining members rotated past the old epoch.
    with pytest.raises(AuthorizationError):
        open_(st, old, "a")


def test_header_grows_by_constant_per_revocation():
    st = state("abcdef")
    sizes = []
    for victim in "abc":
        blob = seal(st, b"x" * 10)
        head, *_ = split_blob(blob)
        sizes.append(len(head))
        st.revoke(victim)
    assert sizes == [header_size(0), header_size(1), header_size(2)]
    assert header_size(2) - header_size(1) == HEADER_PER_REVOKED
    assert HEADER_FIXED == 19


def test_revoke_returns_rewrap_per_remaining_member():
    st = state("abcd")
    assert len(st.revoke("a")) == 3
    with pytest.raises(KeyError):
        st.revoke("a")


def test_rejoin_clears_revocation():
    st = state()
    st.revoke("c")
    st.add_member("c")
    assert open_(st, seal(st, b"back"), "c") == b"back"


def test_tampered_broadcast_rejected():
    st = state()
    blob = bytearray(seal(st, b"payload"))
    blob[-1] ^= 1
    with pytest.raises(AuthorizationError):
        open_(st, bytes(blob), "a")


def test_pairwise_roundtrip_and_key_separation():
    k1 = derive_group_key("g", "u")
    k2 = derive_group_key("g", "v")
    assert k1 != k2 and len(k1) == 32
    assert derive_group_key("g", "u", b"k") != k1
    blob = seal_pairwise(k1, b"data", np.random.default_rng(0))
    assert open_pairwise(k1, blob) == b"data"
    with pytest.raises(AuthorizationError):
        open_pairwise(k2, blob)
