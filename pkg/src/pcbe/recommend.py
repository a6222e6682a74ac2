"""End-to-end friend and group recommendation sessions.

A session runs the four phases over a :class:`~pcbe.overlay.Simulator`
network: the target generates a key and a trapdoor, hands the trapdoor to
the most trusted super node among its groups, relays the key only through
trusted friends to candidates, and the super node ranks the indices it
receives. Every message is written to a JSON-lines transcript that
:func:`audit_leakage` can check without access to any live state.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .overlay import Simulator
from .secure_match import (EncIndex, IndexBatch, ObfuscationParams, SecretKey, Trapdoor,
                           build_index, build_trapdoor, gen_key, top_k)
from .taxonomy import InterestModel, KeywordDictionary, to_plain_vector

FAULTS = (None, "sk-to-super-node", "plaintext-trapdoor")


class RecommendationError(Exception):
    pass


class EmptyCandidatePool(RecommendationError):
    def __init__(self, target: str):
        super().__init__(f"empty-candidate-pool: {target!r} has no trusted friends to relay through")


class SessionAborted(RecommendationError):
    def __init__(self, reason: str, retriable: bool = True):
        super().__init__(reason)
        self.retriable = retriable


@dataclass(frozen=True)
class RecommendConfig:
    depth: int = 2
    max_pool: int = 10_000
    threshold: float | None = None


@dataclass(frozen=True)
class RecommendationRequest:
    target: str
    k: int
    params: ObfuscationParams
    super_node: str
    session_id: str

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class CandidatePool:
    session_id: str
    candidates: list[str] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict)

    def add(self, candidate: str, via: str, cap: int) -> bool:
        if candidate in self.provenance or len(self.candidates) >= cap:
            return False
        self.candidates.append(candidate)
        self.provenance[candidate] = via
        return True


@dataclass
class RecommendationResult:
    request: RecommendationRequest
    ranked: list[str]
    pool: CandidatePool
    transcript: list[dict]
    sk_recipients: set[str]

    def transcript_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.transcript]


def payload_kind(obj) -> str:
    if isinstance(obj, SecretKey):
        return "secret-key"
    if isinstance(obj, Trapdoor):
        return "trapdoor"
    if isinstance(obj, EncIndex):
        return "index"
    if isinstance(obj, (np.ndarray, InterestModel)):
        return "plain-vector"
    raise TypeError(f"unexpected payload {type(obj).__name__}")


def _payload_bytes(obj) -> int:
    if isinstance(obj, SecretKey):
        return obj.dim // 8 + 1 + 2 * obj.dim * obj.dim * 8
    if isinstance(obj, (Trapdoor, EncIndex)):
        return len(obj.to_bytes())
    if isinstance(obj, InterestModel):
        return 8 * obj.m
    return int(np.asarray(obj).size * 4)


class _Session:
    def __init__(self, sim: Simulator, target: str, k: int, params: ObfuscationParams,
                 dictionary: KeywordDictionary, flow: str, rng: np.random.Generator,
                 config: RecommendConfig):
        self.sim = sim
        self.target = target
        self.dictionary = dictionary
        self.rng = rng
        self.config = config
        self.flow = flow
        self.threshold = sim.reputation.config.threshold if config.threshold is None else config.threshold
        self.transcript: list[dict] = []
        self.sk_recipients: set[str] = set()
        self.session_id = f"{flow}-{target}-{rng.bytes(6).hex()}"
        st = sim.node(target)
        if not st.online or target in sim.reputation.evicted:
            raise SessionAborted(f"target {target!r} is offline", retriable=True)
        sn = self._designated_super_node()
        self.request = RecommendationRequest(target, k, params, sn, self.session_id)
        self.emit("open", target=target, flow=flow, k=k, designated_super_node=sn,
                  super_nodes=sorted(sim.super_nodes()), target_friends=sorted(st.friends),
                  target_groups=sorted(st.communities))

    def _designated_super_node(self) -> str:
        st = self.sim.node(self.target)
        sns = {self.sim.communities[g].super_node for g in st.communities}
        sns = [s for s in sns if s is not None and self.sim.node(s).online]
        if not sns:
            raise SessionAborted(f"no online super node among the groups of {self.target!r}")
        return max(sorted(sns), key=lambda s: self.sim.reputation.global_trust(s))

    def emit(self, phase: str, **fields) -> None:
        self.transcript.append({"session": self.session_id, "seq": len(self.transcript),
                                "phase": phase, **fields})

    def send(self, phase: str, src: str, dst: str, obj, **fields) -> None:
        kind = payload_kind(obj)
        if kind == "secret-key":
            self.sk_recipients.add(dst)
        self.emit(phase, **{"from": src, "to": dst, "payload_kind": kind,
                            "bytes": _payload_bytes(obj), **fields})

    def trusted(self, rater: str, nodes: Iterable[str]) -> list[str]:
        rep = self.sim.reputation
        out = []
        for n in sorted(nodes):
            if n == rater or n in rep.evicted or not self.sim.node(n).online:
                continue
            if rep.local_trust(rater, n) >= self.threshold:
                out.append(n)
        return out


def _start(sim, target, k, params, dictionary, flow, seed, rng, config, fault):
    if fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    ses = _Session(sim, target, k, params, dictionary, flow, rng, config)
    st = sim.node(target)
    if st.interest is None:
        raise RecommendationError(f"target {target!r} has no interest model")
    # The designated super node must never hold the key, even when it is a friend.
    friends = [f for f in ses.trusted(target, st.friends) if f != ses.request.super_node]
    if not friends:
        raise EmptyCandidatePool(target)
    key = gen_key(dictionary.n, rng=rng)
    ses.emit("genkey", node=target, dim=key.dim)
    sn = ses.request.super_node
    if fault == "plaintext-trapdoor":
        trapdoor = None
        ses.send("trapdoor", target, sn, to_plain_vector(st.interest, dictionary))
    else:
        trapdoor = build_trapdoor(st.interest, key, dictionary=dictionary, rng=rng)
        ses.send("trapdoor", target, sn, trapdoor)
    for f in friends:
        ses.send("sk-relay", target, f, key, hop=1)
    return ses, key, trapdoor, friends


def _finish(ses: _Session, trapdoor, submissions: list[tuple[str, EncIndex]], pool: CandidatePool):
    sn = ses.request.super_node
    if trapdoor is None or not submissions:
        ranked = []
        ses.emit("rank", node=sn, status="no-trapdoor" if trapdoor is None else "no-indices", result=[])
    else:
        ranked = top_k(trapdoor, IndexBatch.from_pairs(submissions), ses.request.k)
        ses.emit("rank", node=sn, status="ok", result=ranked, scored=len(submissions))
        ses.emit("result", **{"from": sn, "to": ses.target, "payload_kind": "ids", "result": ranked})
    return RecommendationResult(ses.request, ranked, pool, ses.transcript, ses.sk_recipients)


def recommend_friends(sim: Simulator, target: str, k: int, dictionary: KeywordDictionary,
                      params: ObfuscationParams = ObfuscationParams(), *, seed: int | None = None,
                      rng: np.random.Generator | None = None,
                      config: RecommendConfig = RecommendConfig(), fault: str | None = None
                      ) -> RecommendationResult:
    """Recommend up to ``k`` non-friends whose interests best match ``target``.

    Candidates are the trusted friends of the target's trusted friends
    (chain length 2..``config.depth``), minus the target, its friends and
    the designated super node. The first relay to reach a candidate wins.
    """
    ses, key, trapdoor, friends = _start(sim, target, k, params, dictionary, "friends",
                                         seed, rng, config, fault)
    sn = ses.request.super_node
    excluded = {target, sn} | sim.node(target).friends
    pool = CandidatePool(ses.session_id)
    frontier = [(f, f) for f in friends]
    seen = {target, *friends}
    for hop in range(2, config.depth + 1):
        nxt = []
        for holder, via in frontier:
            for c in ses.trusted(holder, sim.node(holder).friends):
                if c in seen or c in excluded:
                    continue
                seen.add(c)
                if not pool.add(c, via, config.max_pool):
                    continue
                ses.send("sk-relay", holder, c, key, hop=hop)
                nxt.append((c, via))
        frontier = nxt
    submissions = []
    for c in pool.candidates:
        model = sim.node(c).interest
        if model is None:
            ses.emit("skip", node=c, reason="no-interest-model")
            continue
        index = build_index(model, key, dictionary=dictionary, obf=ses.request.params, rng=ses.rng)
        ses.send("index", c, sn, index, candidate=c)
        submissions.append((c, index))
        if fault == "sk-to-super-node" and len(submissions) == 1:
            ses.send("sk-relay", c, sn, key, hop=config.depth + 1)
    result = _finish(ses, trapdoor, submissions, pool)
    for c in result.ranked:
        ses.emit("add-friend", **{"from": target, "to": c, "payload_kind": "friend-request"})
    return result


def recommend_groups(sim: Simulator, target: str, k: int, dictionary: KeywordDictionary,
                     params: ObfuscationParams = ObfuscationParams(), *, seed: int | None = None,
                     rng: np.random.Generator | None = None,
                     config: RecommendConfig = RecommendConfig(), fault: str | None = None
                     ) -> RecommendationResult:
    """Recommend up to ``k`` groups the target has not joined.

    Trusted friends forward the key to the super nodes of their own groups,
    which index the group keyword profile. Groups the target already joined
    and groups led by the designated super node are dropped.
    """
    ses, key, trapdoor, friends = _start(sim, target, k, params, dictionary, "groups",
                                         seed, rng, config, fault)
    sn = ses.request.super_node
    own = set(sim.node(target).communities)
    pool = CandidatePool(ses.session_id)
    leaders: dict[str, str] = {}
    for f in friends:
        for gid in sim.node(f).communities:
            comm = sim.communities[gid]
            leader = comm.super_node
            if gid in own or leader is None or leader == sn or comm.profile is None:
                continue
            if pool.add(gid, f, config.max_pool):
                leaders[gid] = leader
                if leader not in ses.sk_recipients and leader != f:
                    ses.send("sk-relay", f, leader, key, hop=2, group=gid)
    submissions = []
    for gid in pool.candidates:
        leader = leaders[gid]
        model = sim.communities[gid].profile.as_model()
        index = build_index(model, key, dictionary=dictionary, obf=ses.request.params, rng=ses.rng)
        ses.send("index", leader, sn, index, candidate=gid)
        submissions.append((gid, index))
        if fault == "sk-to-super-node" and len(submissions) == 1:
            ses.send("sk-relay", leader, sn, key, hop=3)
    return _finish(ses, trapdoor, submissions, pool)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass
class LeakageReport:
    sessions: int
    violations: list[Violation]

    @property
    def clean(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def audit_leakage(transcript: Iterable[str | dict]) -> LeakageReport:
    """Structural privacy checks over a session transcript.

    (a) the key never reaches the designated super node; (b) in friend
    flows that super node never receives an index from the target or its
    friends; (c) no plaintext interest vector reaches any super node.
    """
    records = [json.loads(r) if isinstance(r, str) else r for r in transcript]
    opens = {r["session"]: r for r in records if r["phase"] == "open"}
    violations = []
    for r in records:
        ctx = opens.get(r["session"])
        if ctx is None or "to" not in r:
            continue
        sn, kind = ctx["designated_super_node"], r.get("payload_kind")
        if kind == "secret-key" and r["to"] == sn:
            violations.append(Violation("a", f"{r['session']}: key sent by {r['from']} to super node {sn}"))
        if (kind == "index" and r["to"] == sn and ctx["flow"] == "friends"
                and (r["from"] in ctx["target_friends"] or r["from"] == ctx["target"])):
            violations.append(Violation("b", f"{r['session']}: index from friend {r['from']} reached {sn}"))
        if kind == "plain-vector" and r["to"] in ctx["super_nodes"]:
            violations.append(Violation("c", f"{r['session']}: plaintext vector from {r['from']} to {r['to']}"))
    return LeakageReport(len(opens), violations)
