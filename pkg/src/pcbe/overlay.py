"""Deterministic discrete-event simulator of the community-based P2P overlay.

Peers join communities; each community has a super node elected by global
trust. Messages inside a community take one direct hop. Anything crossing
communities goes sender -> own super node -> receiver's super node ->
receiver, and group messages are broadcast once by the group's super node.
All randomness (keys, nonces, payload bytes) comes from one seeded
generator, so a (script, seed) pair always yields the same event log.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import shlex
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import group_crypto
from .group_crypto import GroupKeyState, derive_group_key, open_pairwise, seal_pairwise
from .reputation import (Decision, Outcome, ReputationTable, TrustConfig, advance_epoch,
                         elect_super_node, gate, record_interaction)
from .taxonomy import GroupProfile, InterestModel

EVENT_KINDS = ("join", "leave", "send-one", "send-group", "add-friend",
               "status-update", "file-share", "epoch-tick")
SEND_KINDS = ("send-one", "send-group", "add-friend", "status-update", "file-share")
DELIVERY_OVERHEAD = 8
FRIEND_REQUEST_BYTES = 64
HONEST, MALICIOUS = "honest", "malicious"


class ScenarioError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class NodeState:
    node_id: str
    communities: list[str] = field(default_factory=list)
    friends: set[str] = field(default_factory=set)
    interest: InterestModel | None = None
    online: bool = True
    behavior: str = HONEST


@dataclass
class Community:
    group_id: str
    members: set[str]
    super_node: str | None
    crypto: GroupKeyState
    profile: GroupProfile | None = None
    secret: bytes = b""


@dataclass(frozen=True)
class SimEvent:
    tick: int
    kind: str
    args: tuple[str, ...] = ()
    line: int = 0


@dataclass
class DeliveryReport:
    status: str
    route: list[str] = field(default_factory=list)
    messages: int = 0
    bytes: int = 0
    recipients: list[str] = field(default_factory=list)

    @property
    def hops(self) -> int:
        return max(len(self.route) - 1, 0)

    @property
    def deliveries(self) -> int:
        return len(self.recipients)

    @property
    def delivered(self) -> bool:
        return self.status == "delivered"


@dataclass
class CostLedger:
    per_tick: dict[int, list[int]] = field(default_factory=dict)
    per_kind: dict[str, list[int]] = field(default_factory=dict)
    messages: int = 0
    bytes: int = 0
    deliveries: int = 0

    def charge(self, tick: int, kind: str, messages: int, nbytes: int, deliveries: int = 0):
        if messages < 0 or nbytes < 0:
            raise ValueError("costs are non-negative")
        for row in (self.per_tick.setdefault(tick, [0, 0]), self.per_kind.setdefault(kind, [0, 0])):
            row[0] += messages
            row[1] += nbytes
        self.messages += messages
        self.bytes += nbytes
        self.deliveries += deliveries

    def messages_for(self, kinds: Iterable[str]) -> int:
        return sum(self.per_kind.get(k, [0, 0])[0] for k in kinds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tick", "messages", "bytes", "cumulative_messages", "cumulative_bytes"])
        cm = cb = 0
        for tick in sorted(self.per_tick):
            m, b = self.per_tick[tick]
            cm += m
            cb += b
            w.writerow([tick, m, b, cm, cb])
        return buf.getvalue()


def _dedupe(route: Sequence[str]) -> list[str]:
    out: list[str] = []
    for hop in route:
        if not out or out[-1] != hop:
            out.append(hop)
    return out


class Simulator:
    """Community overlay state plus the single-threaded event loop.

    ``topology="flat"`` makes every peer its own community (and its own
    super node); groups then degrade to plain member lists served by
    unicast. It is the baseline for the broadcast-amortization comparison.
    """

    def __init__(self, seed: int = 0, *, epoch_ticks: int = 10, trust: TrustConfig = TrustConfig(),
                 topology: str = "community", honest_error: float = 0.0):
        if topology not in ("community", "flat"):
            raise ValueError(f"unknown topology {topology!r}")
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.epoch_ticks = epoch_ticks
        self.topology = topology
        self.honest_error = honest_error
        self.nodes: dict[str, NodeState] = {}
        self.communities: dict[str, Community] = {}
        self.reputation = ReputationTable(config=trust)
        self.ledger = CostLedger()
        self.log: list[dict] = []
        self.trust_history: list[tuple[int, str, float]] = []
        self.tick = 0
        self._last_boundary = 0

    # -- topology --------------------------------------------------------

    def node(self, node_id: str) -> NodeState:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def create_group(self, group_id: str, profile: GroupProfile | None = None) -> Community:
        if group_id in self.communities:
            comm = self.communities[group_id]
            if profile is not None:
                comm.profile = profile
            return comm
        secret = self.rng.bytes(32)
        comm = Community(group_id, set(), None,
                         GroupKeyState(group_id, self.rng, secret=secret), profile, secret)
        self.communities[group_id] = comm
        return comm

    def add_node(self, node_id: str, behavior: str = HONEST,
                 interest: InterestModel | None = None) -> NodeState:
        if behavior not in (HONEST, MALICIOUS):
            raise ValueError(f"unknown behavior {behavior!r}")
        st = self.nodes.get(node_id)
        if st is None:
            st = self.nodes[node_id] = NodeState(node_id, behavior=behavior, interest=interest)
        else:
            st.behavior = behavior
            if interest is not None:
                st.interest = interest
        return st

    def join(self, node_id: str, group_id: str, behavior: str | None = None) -> DeliveryReport:
        st = self.add_node(node_id, behavior or self.nodes.get(node_id, NodeState(node_id)).behavior)
        if node_id in self.reputation.evicted:
            return self._record("join", DeliveryReport("evicted", [node_id]), group=group_id)
        st.online = True
        comm = self.create_group(group_id)
        if node_id in comm.members:
            return self._record("join", DeliveryReport("online", [node_id]), group=group_id)
        comm.members.add(node_id)
        st.communities.append(group_id)
        if comm.super_node is None or not self.nodes[comm.super_node].online:
            comm.super_node = node_id
        wraps = comm.crypto.add_member(node_id)
        rep = DeliveryReport("joined", _dedupe([comm.super_node, node_id]),
                             messages=len(wraps), bytes=sum(map(len, wraps)))
        return self._record("join", rep, group=group_id)

    def leave(self, node_id: str, group_id: str | None = None) -> DeliveryReport:
        st = self.node(node_id)
        if group_id is None:
            st.online = False
            for gid in st.communities:
                self._reelect_if_needed(self.communities[gid])
            return self._record("leave", DeliveryReport("offline", [node_id]))
        comm = self.communities.get(group_id)
        if comm is None or node_id not in comm.members:
            return self._record("leave", DeliveryReport("not-member", [node_id]), group=group_id)
        wraps = self._remove_member(comm, node_id)
        rep = DeliveryReport("left", [node_id], messages=len(wraps), bytes=sum(map(len, wraps)))
        return self._record("leave", rep, group=group_id)

    def _remove_member(self, comm: Community, node_id: str) -> list[bytes]:
        wraps = comm.crypto.revoke(node_id)
        comm.members.discard(node_id)
        self.nodes[node_id].communities.remove(comm.group_id)
        if not self.nodes[node_id].communities:
            self.nodes[node_id].online = False
        if comm.super_node == node_id:
            comm.super_node = None
        self._reelect_if_needed(comm)
        return wraps

    def befriend(self, a: str, b: str) -> None:
        if a == b:
            raise ValueError("a node cannot befriend itself")
        self.node(a).friends.add(b)
        self.node(b).friends.add(a)

    def set_interest(self, node_id: str, model: InterestModel) -> None:
        self.node(node_id).interest = model

    def _eligible(self, node_id: str) -> bool:
        st = self.nodes[node_id]
        return st.online and node_id not in self.reputation.evicted

    def _reelect_if_needed(self, comm: Community) -> None:
        if comm.super_node is not None and self._eligible(comm.super_node):
            return
        candidates = [m for m in comm.members if self._eligible(m)]
        comm.super_node = elect_super_node(candidates, self.reputation) if candidates else None

    def home(self, node_id: str) -> str:
        """Overlay community a node routes through (its first joined group)."""
        st = self.node(node_id)
        if self.topology == "flat":
            return f"solo:{node_id}"
        if not st.communities:
            raise KeyError(f"node {node_id!r} is in no community")
        return st.communities[0]

    def super_node_of(self, node_id: str) -> str | None:
        if self.topology == "flat":
            return node_id
        return self.communities[self.home(node_id)].super_node

    def share_community(self, a: str, b: str) -> bool:
        if self.topology == "flat":
            return a == b
        return bool(set(self.node(a).communities) & set(self.node(b).communities))

    def community_map(self) -> dict[str, list[str]]:
        if self.topology == "flat":
            return {n: [f"solo:{n}"] for n, st in self.nodes.items() if st.communities}
        return {n: list(st.communities) for n, st in self.nodes.items() if st.communities}

    def super_nodes(self) -> set[str]:
        if self.topology == "flat":
            return set(self.nodes)
        return {c.super_node for c in self.communities.values() if c.super_node is not None}

    # -- messaging -------------------------------------------------------

    def _payload(self, payload: bytes | int) -> bytes:
        return self.rng.bytes(payload) if isinstance(payload, int) else payload

    def _rate(self, rater: str, sender: str) -> None:
        if rater == sender:
            return
        rater_bad = self.nodes[rater].behavior == MALICIOUS
        sender_bad = self.nodes[sender].behavior == MALICIOUS
        if rater_bad:
            # Colluders praise each other and bad-mouth everyone else.
            ok = sender_bad
        elif sender_bad:
            ok = False
        else:
            ok = self.honest_error == 0 or self.rng.random() >= self.honest_error
        record_interaction(self.reputation, rater, sender,
                           Outcome.SATISFACTORY if ok else Outcome.UNSATISFACTORY)

    def _pair_key(self, a: str, b: str) -> bytes:
        lo, hi = sorted((a, b))
        return derive_group_key(f"pair:{lo}", hi)

    def send_one_to_one(self, sender: str, receiver: str, payload: bytes | int = 0,
                        kind: str = "send-one", label: str = "chat") -> DeliveryReport:
        data = self._payload(payload)
        if sender == receiver:
            raise ValueError("sender and receiver must differ")
        if sender in self.reputation.evicted:
            return self._record(kind, DeliveryReport("evicted", [sender]), receiver=receiver, label=label)
        s, r = self.node(sender), self.node(receiver)
        if not s.online or not s.communities:
            return self._record(kind, DeliveryReport("sender-offline", [sender]), receiver=receiver, label=label)
        if not r.communities:
            return self._record(kind, DeliveryReport("undeliverable", [sender]), receiver=receiver, label=label)
        if self.share_community(sender, receiver):
            route = [sender, receiver]
        else:
            if self.super_node_of(sender) is None or self.super_node_of(receiver) is None:
                return self._record(kind, DeliveryReport("undeliverable", [sender]),
                                    receiver=receiver, label=label)
            route = _dedupe([sender, self.super_node_of(sender), self.super_node_of(receiver), receiver])
        # The sender's super node confirms the delivery against the receiver's trust.
        if gate(self.reputation, sender, receiver) is Decision.DENY:
            return self._record(kind, DeliveryReport("blocked-by-reputation", route[:2]),
                                receiver=receiver, label=label)
        if not r.online or receiver in self.reputation.evicted:
            return self._record(kind, DeliveryReport("undeliverable", route[:-1]), receiver=receiver, label=label)
        key = self._pair_key(sender, receiver)
        blob = seal_pairwise(key, data, self.rng)
        assert open_pairwise(key, blob) == data
        hops = len(route) - 1
        rep = DeliveryReport("delivered", route, messages=hops, bytes=hops * len(blob), recipients=[receiver])
        self._rate(receiver, sender)
        return self._record(kind, rep, receiver=receiver, label=label, sealed=blob)

    def send_one_to_group(self, sender: str, group_id: str, payload: bytes | int = 0,
                          kind: str = "send-group", label: str = "chat") -> DeliveryReport:
        data = self._payload(payload)
        comm = self.communities.get(group_id)
        if comm is None:
            raise KeyError(f"unknown group {group_id!r}")
        if sender in self.reputation.evicted:
            return self._record(kind, DeliveryReport("evicted", [sender]), group=group_id, label=label)
        s = self.node(sender)
        if not s.online or not s.communities:
            return self._record(kind, DeliveryReport("sender-offline", [sender]), group=group_id, label=label)
        recipients = sorted(m for m in comm.members if m != sender and self._eligible(m))
        if self.topology == "flat":
            return self._flat_group_send(sender, group_id, recipients, data, kind, label)
        if comm.super_node is None or not recipients:
            return self._record(kind, DeliveryReport("no-recipients", [sender]), group=group_id, label=label)
        sn = comm.super_node
        if gate(self.reputation, sender, sn) is Decision.DENY:
            return self._record(kind, DeliveryReport("blocked-by-reputation", [sender]),
                                group=group_id, label=label)
        route = _dedupe([sender] + ([] if group_id in s.communities else [self.super_node_of(sender)]) + [sn])
        # Hash(G, U) protects the leg toward the group's super node.
        uplink = seal_pairwise(derive_group_key(group_id, sender, comm.secret), data, self.rng)
        blob = group_crypto.seal(comm.crypto, data)
        hops = len(route) - 1
        nbytes = hops * len(uplink) + len(blob) + DELIVERY_OVERHEAD * len(recipients)
        rep = DeliveryReport("delivered", route, messages=hops + 1, bytes=nbytes, recipients=recipients)
        for m in recipients:
            assert group_crypto.open_(comm.crypto, blob, m) == data
            self._rate(m, sender)
        return self._record(kind, rep, group=group_id, label=label, sealed=blob)

    def _flat_group_send(self, sender, group_id, recipients, data, kind, label) -> DeliveryReport:
        if not recipients:
            return self._record(kind, DeliveryReport("no-recipients", [sender]), group=group_id, label=label)
        delivered, messages, nbytes, last = [], 0, 0, b""
        for m in recipients:
            if gate(self.reputation, sender, m) is Decision.DENY:
                continue
            last = seal_pairwise(self._pair_key(sender, m), data, self.rng)
            messages += 1
            nbytes += len(last)
            delivered.append(m)
            self._rate(m, sender)
        status = "delivered" if delivered else "blocked-by-reputation"
        rep = DeliveryReport(status, [sender] + delivered, messages, nbytes, delivered)
        return self._record(kind, rep, group=group_id, label=label, sealed=last or None)

    def add_friend(self, a: str, b: str) -> DeliveryReport:
        rep = self.send_one_to_one(a, b, FRIEND_REQUEST_BYTES, kind="add-friend", label="friend-request")
        if rep.delivered:
            self.befriend(a, b)
        return rep

    def status_update(self, node_id: str, payload: bytes | int = 0) -> list[DeliveryReport]:
        data = self._payload(payload)
        return [self.send_one_to_group(node_id, gid, data, kind="status-update", label="status")
                for gid in list(self.node(node_id).communities)]

    def file_share(self, sender: str, target: str, size: int) -> list[DeliveryReport]:
        # File payloads only matter through their byte length.
        if target.startswith("group:"):
            return [self.send_one_to_group(sender, target[6:], size, kind="file-share", label="file")]
        return [self.send_one_to_one(sender, target, size, kind="file-share", label="file")]

    # -- epochs ----------------------------------------------------------

    def epoch_tick(self) -> None:
        advance_epoch(self.reputation, self.community_map())
        for node in sorted(self.reputation.evicted):
            st = self.nodes.get(node)
            if st is not None and st.communities:
                for gid in list(st.communities):
                    self._remove_member(self.communities[gid], node)
                self._record("evict", DeliveryReport("evicted", [node]))
        changes = {}
        for gid in sorted(self.communities):
            comm = self.communities[gid]
            candidates = [m for m in comm.members if self._eligible(m)]
            new = elect_super_node(candidates, self.reputation) if candidates else None
            if new != comm.super_node:
                changes[gid] = new
            comm.super_node = new
        self.trust_history.extend(self.reputation.snapshot_rows())
        self.log.append({"t": self.tick, "kind": "epoch-tick", "epoch": self.reputation.epoch,
                         "elected": changes, "evicted": sorted(self.reputation.evicted)})

    def advance_to(self, tick: int) -> None:
        if tick < self.tick:
            raise ValueError(f"time cannot go backwards ({tick} < {self.tick})")
        if self.epoch_ticks > 0:
            boundary = (tick // self.epoch_ticks) * self.epoch_ticks
            for b in range(self._last_boundary + self.epoch_ticks, boundary + 1, self.epoch_ticks):
                self.tick = b
                self.epoch_tick()
            self._last_boundary = max(self._last_boundary, boundary)
        self.tick = tick

    # -- logging ---------------------------------------------------------

    def _record(self, kind: str, rep: DeliveryReport, sealed: bytes | None = None, **extra) -> DeliveryReport:
        self.ledger.charge(self.tick, kind, rep.messages, rep.bytes, rep.deliveries)
        entry = {"t": self.tick, "kind": kind, "status": rep.status, "route": rep.route,
                 "messages": rep.messages, "bytes": rep.bytes, "recipients": rep.recipients}
        if sealed is not None:
            entry["sealed_sha256"] = hashlib.sha256(sealed).hexdigest()
        entry.update({k: v for k, v in extra.items() if v is not None})
        self.log.append(entry)
        return rep

    def log_lines(self) -> list[str]:
        return [json.dumps(e, sort_keys=True, separators=(",", ":")) for e in self.log]

    # -- scripted runs ---------------------------------------------------

    def apply(self, ev: SimEvent) -> None:
        self.advance_to(ev.tick)
        a = ev.args
        try:
            if ev.kind == "join":
                self.join(a[0], a[1], a[2] if len(a) > 2 else None)
            elif ev.kind == "leave":
                self.leave(a[0], a[1] if len(a) > 1 else None)
            elif ev.kind == "send-one":
                self.send_one_to_one(a[0], a[1], int(a[2]) if len(a) > 2 else 0,
                                     label=a[3] if len(a) > 3 else "chat")
            elif ev.kind == "send-group":
                self.send_one_to_group(a[0], a[1], int(a[2]) if len(a) > 2 else 0,
                                       label=a[3] if len(a) > 3 else "chat")
            elif ev.kind == "add-friend":
                self.add_friend(a[0], a[1])
            elif ev.kind == "status-update":
                self.status_update(a[0], int(a[1]) if len(a) > 1 else 0)
            elif ev.kind == "file-share":
                self.file_share(a[0], a[1], int(a[2]))
            elif ev.kind == "epoch-tick":
                self.epoch_tick()
        except (KeyError, ValueError, IndexError) as exc:
            raise ScenarioError(ev.line, f"{ev.kind}: {exc}") from exc


_ARITY = {"join": (2, 3), "leave": (1, 2), "send-one": (2, 4), "send-group": (2, 4),
          "add-friend": (2, 2), "status-update": (1, 2), "file-share": (3, 3), "epoch-tick": (0, 0)}


def parse_scenario(text: str) -> list[SimEvent]:
    """Parse ``<tick> <event-kind> <args...>`` lines; ``#`` starts a comment."""
    events, last = [], 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = shlex.split(line)
        if len(parts) < 2:
            raise ScenarioError(lineno, f"expected '<tick> <kind> ...', got {raw.strip()!r}")
        try:
            tick = int(parts[0])
        except ValueError:
            raise ScenarioError(lineno, f"tick must be an integer, got {parts[0]!r}") from None
        kind, args = parts[1], tuple(parts[2:])
        if kind not in _ARITY:
            raise ScenarioError(lineno, f"unknown event kind {kind!r}")
        lo, hi = _ARITY[kind]
        if not lo <= len(args) <= hi:
            raise ScenarioError(lineno, f"{kind} takes {lo}..{hi} arguments, got {len(args)}")
        if tick < last:
            raise ScenarioError(lineno, f"tick {tick} is earlier than previous tick {last}")
        for pos in {"send-one": (2,), "send-group": (2,), "status-update": (1,),
                    "file-share": (2,)}.get(kind, ()):
            if pos < len(args) and not args[pos].isdigit():
                raise ScenarioError(lineno, f"{kind}: payload size must be a non-negative integer")
        last = tick
        events.append(SimEvent(tick, kind, args, lineno))
    return events


@dataclass
class SimResult:
    log: list[str]
    ledger: CostLedger
    trust: list[tuple[int, str, float]]
    simulator: Simulator

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log)


def run(script: str, seed: int, until: int | None = None, **sim_kwargs) -> SimResult:
    """Run a scenario script to completion (or to tick ``until``)."""
    sim = Simulator(seed, **sim_kwargs)
    for ev in parse_scenario(script):
        sim.apply(ev)
    if until is not None:
        sim.advance_to(until)
    return SimResult(sim.log_lines(), sim.ledger, list(sim.trust_history), sim)


def population_scenario(n_nodes: int = 50, malicious_fraction: float = 0.1, n_groups: int = 5,
                        epochs: int = 100, sends_per_epoch: int = 3, epoch_ticks: int = 10,
                        seed: int = 0, payload: int = 64) -> tuple[str, set[str]]:
    """Script for a random-messaging population with a fraction of always-malicious peers.

    Returns the script and the ids of the malicious nodes. Run it with
    ``until=epochs * epoch_ticks`` so the last epoch boundary is processed.
    """
    rng = np.random.default_rng(seed)
    width = len(str(n_nodes))
    ids = [f"n{i:0{width}d}" for i in range(n_nodes)]
    n_bad = int(round(malicious_fraction * n_nodes))
    bad = set(rng.choice(ids, size=n_bad, replace=False).tolist()) if n_bad else set()
    lines = [f"# population: {n_nodes} nodes, {n_bad} malicious, seed {seed}"]
    for i, node in enumerate(ids):
        lines.append(f"0 join {node} g{i % n_groups} {MALICIOUS if node in bad else HONEST}")
    for e in range(epochs):
        base = e * epoch_ticks + 1
        for rnd in range(sends_per_epoch):
            tick = base + rnd % max(epoch_ticks - 1, 1)
            for node in ids:
                peer = ids[int(rng.integers(n_nodes - 1))]
                if peer == node:
                    peer = ids[-1]
                lines.append(f"{tick} send-one {node} {peer} {payload}")
    return "\n".join(lines) + "\n", bad
