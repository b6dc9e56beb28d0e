"""Real-valued token position assignment for prompt graphs.

Parallel fork branches of heterogeneous length must share a position range.
Two strategies are implemented:

* ``equilibrium``: every branch is linearly spaced to span the harmonic mean
  of the branch lengths, so branch endpoints cluster and the join never sees
  a position discontinuity.  Positions become real-valued.
* ``left_aligned``: every branch starts at the same integer position with
  unit steps; shorter branches leave a gap before the join.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyList, NonPositiveStep
from .graph import ForkJoinLayout, PromptGraph

STRATEGIES = ("equilibrium", "left_aligned")


def arange_positions(start: float, step: float, count: int) -> np.ndarray:
    """<start, start+step, ..., start+(count-1)*step> as float64."""
    if step <= 0:
        raise NonPositiveStep(f"step must be positive, got {step}")
    if count < 1:
        raise ValueError("count must be >= 1")
    return start + step * np.arange(count, dtype=np.float64)


def harmonic_span(doc_lengths: list[int]) -> float:
    """Harmonic mean of branch lengths: n / sum(1/len_i)."""
    if not doc_lengths:
        raise EmptyList("no document lengths")
    if any(n <= 0 for n in doc_lengths):
        raise ValueError("lengths must be positive")
    return len(doc_lengths) / sum(1.0 / n for n in doc_lengths)


@dataclass
class PositionedGraph:
    """A graph plus one position vector per segment.

    Positions are a pure annotation: token content and graph shape are
    untouched.  For every edge (u, v), max(pos(u)) < min(pos(v)).
    """

    graph: PromptGraph
    positions: dict[str, np.ndarray]
    layout: ForkJoinLayout | None = None
    strategy: str = "equilibrium"

    def end_of(self, sid: str) -> float:
        return float(self.positions[sid][-1])

    def validate(self) -> None:
        for sid, seg in self.graph.segments.items():
            pos = self.positions[sid]
            if len(pos) != len(seg):
                raise ValueError(f"position count mismatch for {sid!r}")
            if not np.all(np.isfinite(pos)) or np.any(pos < 0):
                raise ValueError(f"positions for {sid!r} not finite/non-negative")
            if len(pos) > 1 and not np.all(np.diff(pos) > 0):
                raise ValueError(f"positions for {sid!r} not strictly increasing")
        for parent, child in self.graph.edges:
            if self.positions[parent][-1] >= self.positions[child][0]:
                raise ValueError(f"edge ({parent!r}, {child!r}) breaks position order")


def _chain_positions(graph: PromptGraph) -> dict[str, np.ndarray]:
    positions: dict[str, np.ndarray] = {}
    cursor = 0.0
    for sid in graph.topological_order():
        n = len(graph.segments[sid])
        positions[sid] = arange_positions(cursor, 1.0, n)
        cursor += n
    return positions


@dataclass
class ForkPositions:
    """Position vectors for the fork portion, before a query is known."""

    preamble: np.ndarray
    docs: list[np.ndarray]
    query_start: float


def fork_positions(
    preamble_len: int,
    doc_lengths: list[int],
    strategy: str = "equilibrium",
    start: float = 0.0,
) -> ForkPositions:
    """Position the preamble and the parallel document branches.

    With ``equilibrium``, document i starts at max(preamble)+1 with step
    S/len_i, where S is the harmonic mean of document lengths, so every
    branch ends within one step of max(preamble)+S.  With ``left_aligned``
    every document uses unit steps from the same start, and shorter branches
    leave a gap before the query.  The query starts one slot after the last
    document end in either case.
    """
    preamble = arange_positions(start, 1.0, preamble_len)
    doc_start = preamble[-1] + 1.0
    if strategy == "equilibrium":
        span = harmonic_span(doc_lengths)
        docs = [arange_positions(doc_start, span / n, n) for n in doc_lengths]
    elif strategy == "left_aligned":
        docs = [arange_positions(doc_start, 1.0, n) for n in doc_lengths]
    else:
        raise ValueError(f"unknown positioning strategy {strategy!r}")
    query_start = max(pos[-1] for pos in docs) + 1.0
    return ForkPositions(preamble, docs, float(query_start))


def _assign_fork_join(
    graph: PromptGraph, layout: ForkJoinLayout, strategy: str
) -> PositionedGraph:
    segs = graph.segments
    fork = fork_positions(
        len(segs[layout.preamble_id]),
        [len(segs[did]) for did, _ in layout.paths],
        strategy,
    )
    positions: dict[str, np.ndarray] = {layout.preamble_id: fork.preamble}
    for (did, qid), dpos in zip(layout.paths, fork.docs):
        positions[did] = dpos
        positions[qid] = arange_positions(fork.query_start, 1.0, len(segs[qid]))
    post_start = positions[layout.paths[0][1]][-1] + 1.0
    positions[layout.postamble_id] = arange_positions(
        post_start, 1.0, len(segs[layout.postamble_id])
    )
    pg = PositionedGraph(graph, positions, layout, strategy)
    pg.validate()
    return pg


def assign_equilibrium(graph: PromptGraph, layout: ForkJoinLayout | None = None) -> PositionedGraph:
    """Equilibrium positioning of a ForkJoin (or chain) graph.

    All query copies share one unit-spaced vector starting just past the
    last document end; the postamble continues with unit steps after the
    query.  On a chain this reduces to classical unit spacing.
    """
    if layout is None:
        return PositionedGraph(graph, _chain_positions(graph), None, "equilibrium")
    return _assign_fork_join(graph, layout, "equilibrium")


def assign_left_aligned(graph: PromptGraph, layout: ForkJoinLayout | None = None) -> PositionedGraph:
    """Left-aligned positioning: unit steps everywhere, shorter branches gap."""
    if layout is None:
        return PositionedGraph(graph, _chain_positions(graph), None, "left_aligned")
    return _assign_fork_join(graph, layout, "left_aligned")


def assign_positions(
    graph: PromptGraph, layout: ForkJoinLayout | None, strategy: str
) -> PositionedGraph:
    if strategy == "equilibrium":
        return assign_equilibrium(graph, layout)
    if strategy == "left_aligned":
        return assign_left_aligned(graph, layout)
    raise ValueError(f"unknown positioning strategy {strategy!r}")


def position_gap_stats(positioned: PositionedGraph) -> float:
    """Mean over paths of (max document end position - this document end)."""
    if positioned.layout is None:
        raise ValueError("gap stats need a ForkJoin layout")
    ends = [positioned.end_of(did) for did, _ in positioned.layout.paths]
    top = max(ends)
    return float(np.mean([top - e for e in ends]))
