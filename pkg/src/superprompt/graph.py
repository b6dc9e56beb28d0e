"""Prompt DAG data model and the ForkJoin topology used for RAG.

A prompt is a directed acyclic graph whose nodes are token segments and whose
edges codify attention dependencies: a segment attends to another iff a
directed path exists between them.  The classical prompt is the linked-list
special case; the RAG instance is ForkJoin, where a shared preamble forks
into per-document branches (each carrying a duplicate of the query) that
join at the postamble.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import (
    EmptyDocumentSet,
    EmptySegment,
    FactorOutOfRange,
    GraphInvariantError,
)

SEGMENT_KINDS = ("preamble", "document", "query", "postamble", "response")


@dataclass(frozen=True)
class TokenSegment:
    """A run of token ids with a role in the prompt."""

    id: str
    tokens: tuple[int, ...]
    kind: str

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")
        if not self.tokens and self.kind in ("preamble", "document", "query"):
            raise EmptySegment(f"{self.kind} segment {self.id!r} has no tokens")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ForkJoinLayout:
    """Index of the special roles inside a ForkJoin graph.

    ``paths[i]`` is the (document id, query id) pair of path i.  Every query
    segment carries identical token content (the duplicated user query).
    """

    preamble_id: str
    paths: tuple[tuple[str, str], ...]
    postamble_id: str

    @property
    def n_paths(self) -> int:
        return len(self.paths)


@dataclass
class PromptGraph:
    """DAG of token segments; edges are (parent id, child id) pairs."""

    segments: dict[str, TokenSegment] = field(default_factory=dict)
    edges: list[tuple[str, str]] = field(default_factory=list)

    def add(self, segment: TokenSegment) -> None:
        if segment.id in self.segments:
            raise GraphInvariantError(f"duplicate segment id {segment.id!r}")
        self.segments[segment.id] = segment

    def link(self, parent_id: str, child_id: str) -> None:
        for sid in (parent_id, child_id):
            if sid not in self.segments:
                raise GraphInvariantError(f"unknown segment id {sid!r}")
        self.edges.append((parent_id, child_id))

    def parents(self, sid: str) -> list[str]:
        return [p for p, c in self.edges if c == sid]

    def children(self, sid: str) -> list[str]:
        return [c for p, c in self.edges if p == sid]

    def roots(self) -> list[str]:
        targets = {c for _, c in self.edges}
        return [sid for sid in self.segments if sid not in targets]

    def leaves(self) -> list[str]:
        sources = {p for p, _ in self.edges}
        return [sid for sid in self.segments if sid not in sources]

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; raises if the edge relation has a cycle."""
        indeg = {sid: 0 for sid in self.segments}
        for _, c in self.edges:
            indeg[c] += 1
        frontier = [sid for sid in self.segments if indeg[sid] == 0]
        order: list[str] = []
        while frontier:
            sid = frontier.pop(0)
            order.append(sid)
            for c in self.children(sid):
                indeg[c] -= 1
                if indeg[c] == 0:
                    frontier.append(c)
        if len(order) != len(self.segments):
            raise GraphInvariantError("graph contains a cycle")
        return order

    def ancestors(self, sid: str) -> set[str]:
        """All segments reachable by walking edges backwards from ``sid``."""
        seen: set[str] = set()
        stack = list(self.parents(sid))
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self.parents(cur))
        return seen

    def validate(self) -> None:
        """Check acyclicity and that every non-root hangs off the unique root."""
        order = self.topological_order()
        roots = self.roots()
        if len(roots) != 1 and len(self.segments) > 1:
            raise GraphInvariantError(f"expected a unique root, found {roots}")
        if len(self.segments) > 1:
            root = roots[0]
            for sid in order:
                if sid != root and root not in self.ancestors(sid):
                    raise GraphInvariantError(f"{sid!r} unreachable from root")

    # -- serialization (debugging and test fixtures) --

    def to_json(self) -> str:
        doc = {
            "segments": [
                {"id": s.id, "kind": s.kind, "tokens": list(s.tokens)}
                for s in self.segments.values()
            ],
            "edges": [list(e) for e in self.edges],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PromptGraph":
        doc = json.loads(text)
        graph = cls()
        for rec in doc["segments"]:
            graph.add(TokenSegment(rec["id"], tuple(rec["tokens"]), rec["kind"]))
        for parent, child in doc["edges"]:
            graph.link(parent, child)
        return graph


def build_chain(segments: list[TokenSegment]) -> PromptGraph:
    """Linked-list graph: each segment attends to everything before it."""
    graph = PromptGraph()
    for seg in segments:
        graph.add(seg)
    for prev, cur in zip(segments, segments[1:]):
        graph.link(prev.id, cur.id)
    graph.validate()
    return graph


def build_fork_join(
    preamble: TokenSegment,
    documents: list[TokenSegment],
    query: TokenSegment,
    postamble: TokenSegment,
) -> tuple[PromptGraph, ForkJoinLayout]:
    """Construct the ForkJoin graph for one RAG request.

    The preamble forks into one branch per document; each branch carries its
    own copy of the query (fresh ids, identical tokens) so per-path logits
    are available for saliency scoring.  All branches join at the postamble.
    """
    if not documents:
        raise EmptyDocumentSet("need at least one document")
    for seg in [preamble, *documents, query, postamble]:
        if len(seg) == 0:
            raise EmptySegment(f"segment {seg.id!r} has no tokens")

    graph = PromptGraph()
    graph.add(preamble)
    paths: list[tuple[str, str]] = []
    for i, doc in enumerate(documents):
        qcopy = TokenSegment(f"{query.id}#{i}", query.tokens, "query")
        graph.add(doc)
        graph.add(qcopy)
        graph.link(preamble.id, doc.id)
        graph.link(doc.id, qcopy.id)
        paths.append((doc.id, qcopy.id))
    graph.add(postamble)
    for _, qid in paths:
        graph.link(qid, postamble.id)
    graph.validate()
    return graph, ForkJoinLayout(preamble.id, tuple(paths), postamble.id)


def group_sizes(m: int, factor: float) -> list[int]:
    """Document counts per path for a superposition factor in [1, m].

    Each path holds round-half-to-even(m / factor) documents; the final
    group absorbs the remainder and may be smaller.
    """
    if m < 1:
        raise EmptyDocumentSet("nothing to group")
    if not 1 <= factor <= m:
        raise FactorOutOfRange(f"factor {factor} outside [1, {m}]")
    per_group = max(1, round(m / factor))
    sizes = [per_group] * (m // per_group)
    if m % per_group:
        sizes.append(m % per_group)
    return sizes


def group_documents(documents: list[TokenSegment], factor: float) -> list[TokenSegment]:
    """Merge adjacent documents so each path holds ~m/factor of them.

    ``factor`` interpolates between one classical chain (factor=1: a single
    merged group) and fully split one-document-per-path prompts (factor=m).
    Input order is preserved: concatenating all groups reproduces the
    original document concatenation.
    """
    groups: list[TokenSegment] = []
    start = 0
    for size in group_sizes(len(documents), factor):
        chunk = documents[start : start + size]
        start += size
        if len(chunk) == 1:
            groups.append(chunk[0])
            continue
        tokens: list[int] = []
        for doc in chunk:
            tokens.extend(doc.tokens)
        groups.append(
            TokenSegment(
                "+".join(d.id for d in chunk),
                tuple(tokens),
                "document",
            )
        )
    return groups


def longest_path_tokens(graph: PromptGraph) -> int:
    """Max over root-to-leaf paths of summed segment lengths.

    This is the maximum sequence length the model ever perceives: a token
    only attends along its ancestor path, never across sibling branches.
    """
    order = graph.topological_order()
    best: dict[str, int] = {}
    for sid in order:
        parents = graph.parents(sid)
        upstream = max((best[p] for p in parents), default=0)
        best[sid] = upstream + len(graph.segments[sid])
    return max(best.values()) if best else 0


def attention_context(graph: PromptGraph, sid: str) -> set[str]:
    """Segments whose tokens are visible to ``sid`` (its ancestors)."""
    return graph.ancestors(sid)
