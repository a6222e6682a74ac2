"""HTTP gateway for recommendation sessions with tiered request authentication.

Tiers are cumulative:

* basic  - HMAC over the canonical request (method, path, query, sender,
  timestamp, nonce, body digest);
* middle - basic plus a fresh nonce (per-sender LRU window) and a bounded
  timestamp skew;
* high   - middle plus a one-time password (HMAC counter sequence) passed
  as the ``otp`` query parameter.

Vector payloads travel as the raw binary trapdoor/index wire format;
control endpoints use JSON. All routes live under ``/v1``.
"""

from __future__ import annotations

import asyncio
import hashlib
import hmac
import json
import os
import secrets
import struct
import threading
import time
from collections import OrderedDict
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from urllib.parse import urlencode

import httpx
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .secure_match import (DimensionError, EncIndex, IndexBatch, ObfuscationParams,
                           Trapdoor, top_k)

MAC_TAG_BYTES = 20


class Tier(IntEnum):
    BASIC = 1
    MIDDLE = 2
    HIGH = 3


@dataclass
class GatewayConfig:
    n: int
    secrets: Mapping[str, bytes]
    bind: str = "127.0.0.1:8080"
    mac_hash: str = "sha1"
    nonce_window: int = 128
    max_skew: float = 60.0
    otp_digits: int = 8
    max_inflight: int = 256
    clock: Callable[[], float] = time.time

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> GatewayConfig:
        """Read ``PCBE_BIND``, ``PCBE_SECRETS`` (JSON file: sender -> hex secret) and ``PCBE_DICT_SIZE``."""
        env = os.environ if env is None else env
        return cls(n=int(env["PCBE_DICT_SIZE"]), secrets=load_secrets(env["PCBE_SECRETS"]),
                   bind=env.get("PCBE_BIND", "127.0.0.1:8080"))


def load_secrets(path: str | Path) -> dict[str, bytes]:
    raw = json.loads(Path(path).read_text())
    return {sender: bytes.fromhex(hexkey) for sender, hexkey in raw.items()}


def body_digest(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()


def canonical(method: str, path: str, query: Mapping[str, str], sender: str,
              timestamp: str, nonce: str, body: bytes) -> bytes:
    q = urlencode(sorted((k, v) for k, v in query.items() if k != "otp"))
    return "\n".join([method.upper(), path, q, sender, timestamp, nonce, body_digest(body)]).encode()


def mac(secret: bytes, message: bytes, hash_name: str = "sha1") -> str:
    return hmac.new(secret, message, hash_name).digest()[:MAC_TAG_BYTES].hex()


def hotp(secret: bytes, counter: int, digits: int = 8) -> str:
    digest = hmac.new(secret, struct.pack(">Q", counter), hashlib.sha1).digest()
    off = digest[-1] & 0x0F
    code = (int.from_bytes(digest[off:off + 4], "big") & 0x7FFFFFFF) % 10 ** digits
    return f"{code:0{digits}d}"


@dataclass
class Signer:
    """Client-side request signing matching the gateway's tier checks."""

    sender: str
    secret: bytes
    hash_name: str = "sha1"
    otp_counter: int = 0
    digits: int = 8
    clock: Callable[[], float] = time.time

    def sign(self, method: str, path: str, body: bytes = b"", query: Mapping[str, str] | None = None,
             tier: Tier = Tier.MIDDLE, nonce: str | None = None) -> tuple[dict, dict]:
        query = dict(query or {})
        ts = f"{self.clock():.3f}"
        nonce = (secrets.token_hex(12) if nonce is None else nonce) if tier >= Tier.MIDDLE else ""
        headers = {"X-Sender": self.sender, "X-Timestamp": ts, "X-Nonce": nonce,
                   "X-MAC": mac(self.secret, canonical(method, path, query, self.sender, ts, nonce, body),
                                self.hash_name)}
        if tier >= Tier.HIGH:
            query["otp"] = hotp(self.secret, self.otp_counter, self.digits)
            self.otp_counter += 1
        return headers, query


@dataclass(frozen=True)
class Authed:
    sender: str
    body: bytes


@dataclass
class _SenderState:
    nonces: OrderedDict = field(default_factory=OrderedDict)
    otp_counter: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class SessionState:
    session_id: str
    target: str
    k: int
    params: ObfuscationParams
    super_node: str | None
    trapdoor: Trapdoor | None = None
    indices: dict[str, EncIndex] = field(default_factory=dict)
    ranked: list | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class Authenticator:
    def __init__(self, config: GatewayConfig):
        self.config = config
        self._senders: dict[str, _SenderState] = {}
        self._lock = threading.Lock()

    def _state(self, sender: str) -> _SenderState:
        with self._lock:
            return self._senders.setdefault(sender, _SenderState())

    def verify(self, tier: Tier, method: str, path: str, query: Mapping[str, str],
               headers: Mapping[str, str], body: bytes) -> str:
        """Return the authenticated sender or raise HTTPException (401 / 409)."""
        cfg = self.config
        sender = headers.get("x-sender", "")
        secret = cfg.secrets.get(sender)
        if secret is None:
            raise HTTPException(401, "unknown sender")
        ts, nonce = headers.get("x-timestamp", ""), headers.get("x-nonce", "")
        expected = mac(secret, canonical(method, path, query, sender, ts, nonce, body), cfg.mac_hash)
        if not hmac.compare_digest(expected, headers.get("x-mac", "")):
            raise HTTPException(401, "bad MAC")
        if tier < Tier.MIDDLE:
            return sender
        try:
            skew = abs(cfg.clock() - float(ts))
        except ValueError:
            raise HTTPException(401, "bad timestamp") from None
        if skew > cfg.max_skew:
            raise HTTPException(401, "timestamp outside the allowed skew")
        if not nonce:
            raise HTTPException(401, "nonce required")
        st = self._state(sender)
        with st.lock:
            if nonce in st.nonces:
                raise HTTPException(409, "replayed nonce")
            if tier >= Tier.HIGH:
                otp = query.get("otp", "")
                if not hmac.compare_digest(otp, hotp(secret, st.otp_counter, cfg.otp_digits)):
                    raise HTTPException(401, "bad one-time password")
                st.otp_counter += 1
            st.nonces[nonce] = None
            while len(st.nonces) > cfg.nonce_window:
                st.nonces.popitem(last=False)
        return sender


class InflightLimiter:
    """ASGI middleware that sheds load with 503 once ``limit`` requests are in flight."""

    def __init__(self, app, limit: int):
        self.app = app
        self.limit = limit
        self.inflight = 0
        self.peak = 0

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            return await self.app(scope, receive, send)
        if self.inflight >= self.limit:
            resp = JSONResponse({"detail": "overloaded"}, status_code=503)
            return await resp(scope, receive, send)
        self.inflight += 1
        self.peak = max(self.peak, self.inflight)
        try:
            await self.app(scope, receive, send)
        finally:
            self.inflight -= 1


def _decode(cls, body: bytes, n: int):
    try:
        vec = cls.from_bytes(body)
    except DimensionError as exc:
        raise HTTPException(400, f"malformed vector: {exc}") from None
    if vec.dim != n + 2:
        raise HTTPException(400, f"vector dimension {vec.dim} != n+2 = {n + 2}")
    return vec


def create_app(config: GatewayConfig) -> FastAPI:
    app = FastAPI(title="pcbe gateway", version="1")
    auth = Authenticator(config)
    sessions: dict[str, SessionState] = {}
    store_lock = threading.Lock()
    app.state.config = config
    app.state.sessions = sessions
    app.state.auth = auth

    def require(tier: Tier):
        async def dep(request: Request) -> Authed:
            body = await request.body()
            sender = auth.verify(tier, request.method, request.url.path, dict(request.query_params),
                                 request.headers, body)
            return Authed(sender, body)
        return dep

    def lookup(session_id: str) -> SessionState:
        with store_lock:
            ses = sessions.get(session_id)
        if ses is None:
            raise HTTPException(404, "unknown session")
        return ses

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "n": config.n}

    @app.post("/v1/session", status_code=201)
    def open_session(authed: Authed = Depends(require(Tier.MIDDLE))):
        try:
            req = json.loads(authed.body)
            k = int(req["k"])
            params = ObfuscationParams(float(req.get("mu", 0.0)), float(req.get("sigma", 1.0)))
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(400, f"bad recommendation request: {exc}") from None
        if k < 1:
            raise HTTPException(400, "k must be >= 1")
        sid = req.get("session_id") or secrets.token_hex(8)
        with store_lock:
            if sid in sessions:
                raise HTTPException(409, "session id already in use")
            sessions[sid] = SessionState(sid, req.get("target", authed.sender), k, params, req.get("super_node"))
        return {"session_id": sid}

    @app.post("/v1/session/{session_id}/trapdoor", status_code=202)
    def submit_trapdoor(session_id: str, authed: Authed = Depends(require(Tier.MIDDLE))):
        ses = lookup(session_id)
        td = _decode(Trapdoor, authed.body, config.n)
        with ses.lock:
            if ses.ranked is not None:
                raise HTTPException(409, "session already scored")
            ses.trapdoor = td
        return {"accepted": True, "bytes": 2 * td.dim * 4}

    @app.post("/v1/session/{session_id}/index", status_code=202)
    def submit_index(session_id: str, authed: Authed = Depends(require(Tier.BASIC))):
        ses = lookup(session_id)
        ix = _decode(EncIndex, authed.body, config.n)
        with ses.lock:
            if ses.ranked is not None:
                raise HTTPException(409, "session already scored")
            # First submission per candidate wins.
            ses.indices.setdefault(authed.sender, ix)
        return {"accepted": True, "bytes": 2 * ix.dim * 4}

    @app.post("/v1/session/{session_id}/score")
    def score_session(session_id: str, authed: Authed = Depends(require(Tier.MIDDLE))):
        ses = lookup(session_id)
        with ses.lock:
            if ses.ranked is None:
                if ses.trapdoor is None or not ses.indices:
                    raise HTTPException(409, "trapdoor and at least one index are required")
                pairs = sorted(ses.indices.items())
                ses.ranked = top_k(ses.trapdoor, IndexBatch.from_pairs(pairs), len(pairs))
            return {"scored": len(ses.ranked)}

    @app.get("/v1/session/{session_id}/result")
    def result(session_id: str, k: int | None = None, authed: Authed = Depends(require(Tier.HIGH))):
        ses = lookup(session_id)
        with ses.lock:
            if ses.ranked is None:
                raise HTTPException(425, "scoring not finished")
            return ses.ranked[: (k if k is not None else ses.k)]

    app.add_middleware(InflightLimiter, limit=config.max_inflight)
    return app


async def measure_load(app, concurrency: int, requests_per_worker: int,
                       make_request: Callable[[int, int], tuple[str, str, dict, dict, bytes]]) -> float:
    """Closed-loop load: ``concurrency`` workers each issue requests back to back.

    ``make_request(worker, i)`` returns ``(method, path, headers, params, body)``.
    Returns the fraction of requests answered with a 2xx status.
    """
    transport = httpx.ASGITransport(app=app)
    ok = 0

    async def worker(w: int, client: httpx.AsyncClient):
        nonlocal ok
        for i in range(requests_per_worker):
            method, path, headers, params, body = make_request(w, i)
            resp = await client.request(method, path, headers=headers, params=params, content=body)
            ok += resp.is_success

    async with httpx.AsyncClient(transport=transport, base_url="http://gateway") as client:
        await asyncio.gather(*(worker(w, client) for w in range(concurrency)))
    return ok / (concurrency * requests_per_worker)
