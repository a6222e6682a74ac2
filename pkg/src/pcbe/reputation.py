"""Local and global trust scores for peers.

Local trust is the satisfied fraction of a rater's interactions with a
target. Global trust is recomputed once per epoch as the mean of all local
scores toward a node, each weighted by the rater's own global trust from
the previous epoch, so raters that have lost trust stop mattering.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum


class Outcome(str, Enum):
    SATISFACTORY = "satisfactory"
    UNSATISFACTORY = "unsatisfactory"


class Decision(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class TrustConfig:
    threshold: float = 0.3
    eviction_floor: float = 0.15
    eviction_epochs: int = 5
    prior: float = 0.5


@dataclass
class InteractionRecord:
    rater: str
    target: str
    satisfactory: int = 0
    unsatisfactory: int = 0

    @property
    def total(self) -> int:
        return self.satisfactory + self.unsatisfactory


@dataclass
class ReputationTable:
    config: TrustConfig = field(default_factory=TrustConfig)
    records: dict[tuple[str, str], InteractionRecord] = field(default_factory=dict)
    local: dict[tuple[str, str], float] = field(default_factory=dict)
    global_: dict[str, float] = field(default_factory=dict)
    epoch: int = 0
    below_floor: dict[str, int] = field(default_factory=dict)
    evicted: set[str] = field(default_factory=set)

    def local_trust(self, rater: str, target: str) -> float:
        return self.local.get((rater, target), self.config.prior)

    def global_trust(self, node: str) -> float:
        return self.global_.get(node, self.config.prior)

    def raters_of(self, target: str) -> list[str]:
        return sorted(r for (r, t) in self.local if t == target)

    def snapshot_rows(self) -> list[tuple[int, str, float]]:
        return [(self.epoch, node, score) for node, score in sorted(self.global_.items())]


def record_interaction(table: ReputationTable, rater: str, target: str,
                       outcome: Outcome | str) -> ReputationTable:
    if rater == target:
        raise ValueError("a node cannot rate itself")
    outcome = Outcome(outcome)
    rec = table.records.setdefault((rater, target), InteractionRecord(rater, target))
    if outcome is Outcome.SATISFACTORY:
        rec.satisfactory += 1
    else:
        rec.unsatisfactory += 1
    score = rec.satisfactory / rec.total if rec.total else table.config.prior
    table.local[(rater, target)] = min(1.0, max(0.0, score))
    return table


def global_trust(table: ReputationTable,
                 community_map: Mapping[str, Iterable[str]]) -> dict[str, float]:
    """One synchronous trust-weighted averaging pass; does not modify ``table``.

    ``community_map`` maps node ids to the communities they belong to and
    fixes the node population. Nodes nobody has rated keep the prior.
    """
    for node, groups in community_map.items():
        if not list(groups):
            raise ValueError(f"node {node!r} belongs to no community")
    incoming: dict[str, list[tuple[str, float]]] = {}
    for (rater, target), score in table.local.items():
        incoming.setdefault(target, []).append((rater, score))
    prior = table.config.prior
    result = {}
    for node in sorted(community_map):
        num = den = 0.0
        for rater, score in sorted(incoming.get(node, ())):
            w = table.global_trust(rater)
            num += w * score
            den += w
        value = num / den if den > 0 else prior
        result[node] = min(1.0, max(0.0, value))
    return result


def advance_epoch(table: ReputationTable,
                  community_map: Mapping[str, Iterable[str]]) -> ReputationTable:
    """Apply the next global pass for the mapped nodes and update eviction counters.

    Nodes missing from ``community_map`` (e.g. ones that left every
    community) keep their last global score.
    """
    table.global_.update(global_trust(table, community_map))
    table.epoch += 1
    cfg = table.config
    for node, score in table.global_.items():
        if node in table.evicted:
            continue
        if score < cfg.eviction_floor:
            table.below_floor[node] = table.below_floor.get(node, 0) + 1
            if table.below_floor[node] >= cfg.eviction_epochs:
                table.evicted.add(node)
        else:
            table.below_floor[node] = 0
    return table


def elect_super_node(community: Iterable[str], table: ReputationTable) -> str:
    members = sorted(set(community))
    if not members:
        raise ValueError("cannot elect a super node in an empty community")
    # max() keeps the first maximal element, i.e. the smallest id among ties.
    return max(members, key=lambda m: table.global_trust(m))


def gate(table: ReputationTable, sender: str, receiver: str,
         threshold: float | None = None) -> Decision:
    """Allow delivery iff the receiver is not evicted and its global trust clears the threshold."""
    threshold = table.config.threshold if threshold is None else threshold
    if receiver in table.evicted:
        return Decision.DENY
    return Decision.ALLOW if table.global_trust(receiver) >= threshold else Decision.DENY


def trust_csv(rows: Iterable[tuple[int, str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "node_id", "global_trust"])
    for epoch, node, score in rows:
        w.writerow([epoch, node, f"{score:.6f}"])
    return buf.getvalue()
