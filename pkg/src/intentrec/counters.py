"""Multiply-accumulate counters, grouped by pipeline component.

Forward kernels report the size of each contraction they perform; the
diagnostics module compares the totals against the advertised asymptotic
costs. Counters are plain per-process accumulators (diagnostic runs are
single-threaded).
"""

from collections import defaultdict


class MacCounters:
    def __init__(self):
        self._macs = defaultdict(int)

    def add(self, component: str, macs: int) -> None:
        self._macs[component] += int(macs)

    def reset(self) -> None:
        self._macs.clear()

    def get(self, component: str) -> int:
        return self._macs.get(component, 0)

    def snapshot(self) -> dict:
        return dict(self._macs)

    def total(self) -> int:
        return sum(self._macs.values())


COUNTERS = MacCounters()

GRAPH = "graph_propagation"
HYPER = "hypergraph"
CONTRAST = "contrastive"


def add(component: str, macs: int) -> None:
    COUNTERS.add(component, macs)


def reset() -> None:
    COUNTERS.reset()


def snapshot() -> dict:
    return COUNTERS.snapshot()
