"""Multi-relational ad knowledge graph: typed entities, triples, adjacency,
multi-hop traversal, and negative-triple sampling.

The graph is immutable after :func:`build_graph`; all accessors return
deterministically ordered results so downstream training is reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DanglingEntity,
    NoNegativeAvailable,
    ParseError,
    SelfLoop,
    UnknownEntity,
)


class EntityKind(str, Enum):
    USER = "User"
    AD = "Ad"
    PRODUCT = "Product"
    CATEGORY = "Category"
    INTEREST_TAG = "InterestTag"


class RelationKind(str, Enum):
    CLICKS = "Clicks"
    PROMOTES = "Promotes"
    LIKES_CATEGORY = "LikesCategory"
    BELONGS_TO = "BelongsTo"
    INTERESTED_IN = "InterestedIn"


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: RelationKind
    tail: str


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    ad: str
    label: int
    ts: int


# adjacency entry: (relation, neighbor id, direction); direction is "out"
# when the owning entity is the head of the triple, "in" when it is the tail.
AdjEntry = tuple[RelationKind, str, str]


class KnowledgeGraph:
    """Immutable triple store with precomputed bidirectional adjacency."""

    def __init__(
        self,
        entities: dict[str, tuple[EntityKind, str]],
        triples: frozenset[Triple],
        adjacency: dict[str, tuple[AdjEntry, ...]],
    ):
        self._entities = entities
        self._triples = triples
        self._adjacency = adjacency
        self._sorted_ids = sorted(entities)
        self._kind_pools: dict[EntityKind, list[str]] = {}
        for eid in self._sorted_ids:
            self._kind_pools.setdefault(entities[eid][0], []).append(eid)

    @property
    def entities(self) -> dict[str, tuple[EntityKind, str]]:
        return self._entities

    @property
    def triples(self) -> frozenset[Triple]:
        return self._triples

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def kind_of(self, entity_id: str) -> EntityKind:
        if entity_id not in self._entities:
            raise UnknownEntity(entity_id)
        return self._entities[entity_id][0]

    def label_of(self, entity_id: str) -> str:
        if entity_id not in self._entities:
            raise UnknownEntity(entity_id)
        return self._entities[entity_id][1]

    def entity_ids(self) -> list[str]:
        return list(self._sorted_ids)

    def entities_of_kind(self, kind: EntityKind) -> list[str]:
        return list(self._kind_pools.get(kind, []))

    def adjacency_of(self, entity_id: str) -> tuple[AdjEntry, ...]:
        if entity_id not in self._entities:
            raise UnknownEntity(entity_id)
        return self._adjacency.get(entity_id, ())

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triples


def build_graph(
    triples: Iterable[Triple],
    entities: Iterable[tuple[str, EntityKind, str]],
) -> KnowledgeGraph:
    """Construct a graph from entity rows and triples.

    Duplicate triples are deduplicated. Raises ``DanglingEntity`` when a
    triple references an unknown id and ``SelfLoop`` when head == tail.
    """
    ent_table: dict[str, tuple[EntityKind, str]] = {}
    for eid, kind, label in entities:
        ent_table[eid] = (EntityKind(kind), label)

    tset: set[Triple] = set()
    for t in triples:
        if t.head == t.tail:
            raise SelfLoop(f"{t.head} -{t.relation.value}-> {t.tail}")
        if t.head not in ent_table:
            raise DanglingEntity(t.head)
        if t.tail not in ent_table:
            raise DanglingEntity(t.tail)
        tset.add(t)

    adj: dict[str, list[AdjEntry]] = {}
    for t in tset:
        adj.setdefault(t.head, []).append((t.relation, t.tail, "out"))
        adj.setdefault(t.tail, []).append((t.relation, t.head, "in"))
    frozen_adj = {
        eid: tuple(sorted(entries, key=lambda e: (e[0].value, e[1], e[2])))
        for eid, entries in adj.items()
    }
    return KnowledgeGraph(ent_table, frozenset(tset), frozen_adj)


def neighbors(graph: KnowledgeGraph, entity: str) -> list[AdjEntry]:
    """All incident triples of ``entity``, sorted by (relation, neighbor id)."""
    return list(graph.adjacency_of(entity))


def multi_hop_paths(
    graph: KnowledgeGraph, start: str, depth: int
) -> list[tuple]:
    """All simple paths of exactly ``depth`` hops starting at ``start``.

    A path is an alternating tuple (entity, relation, entity, ..., entity).
    Depth is capped at 4 to bound the combinatorial blowup.
    """
    if depth < 1 or depth > 4:
        raise ValueError(f"depth must be in [1, 4], got {depth}")
    if not graph.has_entity(start):
        raise UnknownEntity(start)

    paths: list[tuple] = []

    def walk(node: str, visited: set[str], prefix: tuple, remaining: int):
        for rel, nbr, _direction in graph.adjacency_of(node):
            if nbr in visited:
                continue
            step = prefix + (rel, nbr)
            if remaining == 1:
                paths.append(step)
            else:
                walk(nbr, visited | {nbr}, step, remaining - 1)

    walk(start, {start}, (start,), depth)
    return paths


_MAX_NEGATIVE_ATTEMPTS = 100


def sample_negative(
    graph: KnowledgeGraph, positive: Triple, rng: np.random.Generator
) -> Triple:
    """Corrupt one endpoint of ``positive`` into a triple absent from the graph.

    The side is chosen by a fresh uniform coin on every attempt; the
    replacement is drawn uniformly among entities of the same kind as the
    replaced endpoint. Bounded rejection sampling keeps the call total.
    """
    if positive not in graph:
        raise UnknownEntity(f"positive triple not in graph: {positive}")

    head_pool = graph._kind_pools[graph.kind_of(positive.head)]
    tail_pool = graph._kind_pools[graph.kind_of(positive.tail)]

    for _ in range(_MAX_NEGATIVE_ATTEMPTS):
        corrupt_head = rng.random() < 0.5
        pool = head_pool if corrupt_head else tail_pool
        replacement = pool[int(rng.integers(len(pool)))]
        if corrupt_head:
            candidate = Triple(replacement, positive.relation, positive.tail)
        else:
            candidate = Triple(positive.head, positive.relation, replacement)
        if candidate.head == candidate.tail:
            continue
        if candidate in graph:
            continue
        return candidate
    raise NoNegativeAvailable(str(positive))


# ---------------------------------------------------------------------------
# file formats: entity TSV, triple TSV, interactions JSONL
# ---------------------------------------------------------------------------

def read_entities_tsv(path: str | Path) -> list[tuple[str, EntityKind, str]]:
    rows: list[tuple[str, EntityKind, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            eid, kind, label = parts
            try:
                rows.append((eid, EntityKind(kind), label))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unknown entity kind {kind!r}") from None
    return rows


def read_triples_tsv(path: str | Path) -> list[Triple]:
    rows: list[Triple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            head, rel, tail = parts
            try:
                rows.append(Triple(head, RelationKind(rel), tail))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unknown relation {rel!r}") from None
    return rows


def read_interactions_jsonl(path: str | Path) -> list[InteractionRecord]:
    rows: list[InteractionRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                user, ad, label, ts = obj["user"], obj["ad"], obj["label"], obj["ts"]
            except (KeyError, TypeError):
                raise ParseError(f"{path}:{lineno}: missing field in {line!r}") from None
            if label not in (0, 1):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            rows.append(InteractionRecord(user, ad, int(label), int(ts)))
    return rows


def write_entities_tsv(path: str | Path, rows: Sequence[tuple[str, EntityKind, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for eid, kind, label in rows:
            fh.write(f"{eid}\t{kind.value}\t{label}\n")


def write_triples_tsv(path: str | Path, rows: Sequence[Triple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in rows:
            fh.write(f"{t.head}\t{t.relation.value}\t{t.tail}\n")


def write_interactions_jsonl(path: str | Path, rows: Sequence[InteractionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(
                {"user": r.user, "ad": r.ad, "label": r.label, "ts": r.ts},
                sort_keys=True,
            ) + "\n")
