"""Pluggable group encryption used for one-to-group delivery.

The default construction is a naive hybrid: each group has an epoch key that
the super node wraps for every member under that member's ``Hash(G, U)``
key. Revoking a member rotates the epoch key and re-wraps it for everyone
left; the revoked ids also travel in every broadcast header, so header size
grows with the number of revocations the way subset-cover headers do.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
ID_TAG_SIZE = 8
_HEADER = struct.Struct("<BI12sH")
HEADER_VERSION = 1
HEADER_FIXED = _HEADER.size
HEADER_PER_REVOKED = ID_TAG_SIZE
WRAPPED_KEY_SIZE = NONCE_SIZE + KEY_SIZE + TAG_SIZE


class AuthorizationError(Exception):
    pass


def derive_group_key(group_id: str, user_id: str, secret: bytes | None = None) -> bytes:
    """32-byte key for ``(G, U)``: SHA-256 of ``G || 0x00 || U``, or HMAC-SHA256 under ``secret``."""
    msg = group_id.encode() + b"\x00" + user_id.encode()
    if secret is None:
        return hashlib.sha256(msg).digest()
    return hmac.new(secret, msg, hashlib.sha256).digest()


def id_tag(user_id: str) -> bytes:
    return hashlib.sha256(user_id.encode()).digest()[:ID_TAG_SIZE]


def header_size(revoked: int) -> int:
    return HEADER_FIXED + HEADER_PER_REVOKED * revoked


def seal_pairwise(key: bytes, plaintext: bytes, rng: np.random.Generator, aad: bytes = b"") -> bytes:
    nonce = rng.bytes(NONCE_SIZE)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def open_pairwise(key: bytes, blob: bytes, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(key).decrypt(blob[:NONCE_SIZE], blob[NONCE_SIZE:], aad)
    except InvalidTag:
        raise AuthorizationError("pairwise payload failed authentication") from None


@dataclass
class GroupKeyState:
    group_id: str
    rng: np.random.Generator = field(repr=False)
    secret: bytes | None = field(default=None, repr=False)
    epoch: int = 0
    members: set[str] = field(default_factory=set)
    revoked: list[str] = field(default_factory=list)
    # What each (current or former) member was able to unwrap: id -> (epoch, key).
    held: dict[str, tuple[int, bytes]] = field(default_factory=dict, repr=False)
    _key: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        if not self._key:
            self._key = self.rng.bytes(KEY_SIZE)

    def _wrap_for(self, member: str) -> bytes:
        kek = derive_group_key(self.group_id, member, self.secret)
        aad = struct.pack("<I", self.epoch)
        blob = seal_pairwise(kek, self._key, self.rng, aad)
        # The member unwraps on receipt.
        self.held[member] = (self.epoch, open_pairwise(kek, blob, aad))
        return blob

    def add_member(self, member: str) -> list[bytes]:
        """Admit ``member``; returns the key-wrap messages sent."""
        self.members.add(member)
        if member in self.revoked:
            self.revoked.remove(member)
        return [self._wrap_for(member)]

    def revoke(self, member: str) -> list[bytes]:
        """Remove ``member`` and rotate the epoch key; returns the re-wrap messages."""
        if member not in self.members:
            raise KeyError(member)
        self.members.discard(member)
        self.revoked.append(member)
        self.epoch += 1
        self._key = self.rng.bytes(KEY_SIZE)
        return [self._wrap_for(m) for m in sorted(self.members)]

    def header(self, nonce: bytes) -> bytes:
        return (_HEADER.pack(HEADER_VERSION, self.epoch, nonce, len(self.revoked))
                + b"".join(id_tag(u) for u in self.revoked))


def seal(state: GroupKeyState, plaintext: bytes) -> bytes:
    nonce = state.rng.bytes(NONCE_SIZE)
    head = state.header(nonce)
    return head + AESGCM(state._key).encrypt(nonce, plaintext, head)


def split_blob(blob: bytes) -> tuple[bytes, int, bytes, list[bytes], bytes]:
    version, epoch, nonce, count = _HEADER.unpack_from(blob)
    if version != HEADER_VERSION:
        raise AuthorizationError(f"unknown header version {version}")
    end = HEADER_FIXED + count * ID_TAG_SIZE
    tags = [blob[i:i + ID_TAG_SIZE] for i in range(HEADER_FIXED, end, ID_TAG_SIZE)]
    return blob[:end], epoch, nonce, tags, blob[end:]


def open_(state: GroupKeyState, blob: bytes, member: str) -> bytes:
    """Decrypt a broadcast as ``member``; anyone without the current epoch key fails."""
    head, epoch, nonce, revoked_tags, body = split_blob(blob)
    if id_tag(member) in revoked_tags:
        raise AuthorizationError(f"{member!r} is revoked from {state.group_id!r}")
    held = state.held.get(member)
    if held is None or held[0] != epoch:
        raise AuthorizationError(f"{member!r} holds no key for epoch {epoch} of {state.group_id!r}")
    try:
        return AESGCM(held[1]).decrypt(nonce, body, head)
    except InvalidTag:
        raise AuthorizationError("broadcast failed authentication") from None
