import numpy as np
import pytest

from pcbe.overlay import Simulator
from pcbe.taxonomy import GroupProfile, init_interest, synthetic_dictionary, update_interest

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> None:
    """Record one acceptance criterion line for the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:>2}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def build_network(seed: int = 0, n_groups: int = 4, group_size: int = 6, n_keywords: int = 40,
                  friend_prob: float = 0.25) -> tuple[Simulator, object]:
    """A small social overlay with group profiles, interests and a random friendship graph."""
    rng = np.random.default_rng(seed)
    dictionary = synthetic_dictionary(n_keywords)
    sim = Simulator(seed)
    nodes = []
    for g in range(n_groups):
        kws = rng.choice(dictionary.keywords, size=4, replace=False).tolist()
        sim.create_group(f"g{g}", GroupProfile(f"g{g}", frozenset(kws)))
        for i in range(group_size):
            node = f"u{g}{i}"
            sim.join(node, f"g{g}")
            nodes.append(node)
    for node in nodes:
        chosen = rng.choice(dictionary.keywords, size=3, replace=False).tolist()
        groups = [sim.communities[g].profile for g in sim.node(node).communities]
        sim.set_interest(node, update_interest(init_interest(chosen, dictionary, node), groups, dictionary))
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if rng.random() < friend_prob:
                sim.befriend(a, b)
    return sim, dictionary


@pytest.fixture
def network():
    return build_network()
