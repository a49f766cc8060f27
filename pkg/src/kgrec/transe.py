"""Translational knowledge-graph embeddings.

Triple (h, r, t) is scored by the L2 residual of the translation h + r - t;
training minimizes the margin loss over corrupted negatives with exact
subgradients (subgradient 0 at the hinge kink and at zero distance).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, UnknownEntity, UnknownRelation
from .kg import KnowledgeGraph, RelationKind, Triple, sample_negative
from . import snapshot


@dataclass
class KgEmbeddings:
    entity_ids: list[str]
    relation_kinds: list[RelationKind]
    entity_matrix: np.ndarray     # |V| x d_k
    relation_matrix: np.ndarray   # |R| x d_k
    entity_index: dict[str, int] = field(init=False)
    relation_index: dict[RelationKind, int] = field(init=False)

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entity_ids)}
        self.relation_index = {r: i for i, r in enumerate(self.relation_kinds)}

    @property
    def dim(self) -> int:
        return self.entity_matrix.shape[1]

    def entity_row(self, entity_id: str) -> np.ndarray:
        if entity_id not in self.entity_index:
            raise UnknownEntity(entity_id)
        return self.entity_matrix[self.entity_index[entity_id]]

    def relation_row(self, kind: RelationKind) -> np.ndarray:
        if kind not in self.relation_index:
            raise UnknownRelation(kind.value)
        return self.relation_matrix[self.relation_index[kind]]


@dataclass
class MarginConfig:
    gamma: float = 1.0
    learning_rate: float = 0.01
    negatives_per_positive: int = 1

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def init_embeddings(
    entity_ids: list[str], dim: int, seed: int
) -> KgEmbeddings:
    """Uniform init in [-6/sqrt(d), +6/sqrt(d)] per coordinate, seeded."""
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    kinds = list(RelationKind)
    ent = rng.uniform(-bound, bound, size=(len(entity_ids), dim))
    rel = rng.uniform(-bound, bound, size=(len(kinds), dim))
    return KgEmbeddings(list(entity_ids), kinds, ent, rel)


def score_triple(emb: KgEmbeddings, triple: Triple) -> float:
    """L2 distance of the translation residual; 0 iff h + r = t exactly."""
    h = emb.entity_row(triple.head)
    r = emb.relation_row(triple.relation)
    t = emb.entity_row(triple.tail)
    return float(np.linalg.norm(h + r - t))


def margin_loss(d_pos: float, d_neg: float, gamma: float) -> float:
    return max(0.0, gamma + d_pos - d_neg)


def _residual_direction(v: np.ndarray) -> np.ndarray:
    # subgradient 0 at zero distance
    n = np.linalg.norm(v)
    if n < 1e-300:
        return np.zeros_like(v)
    return v / n


def kg_loss_epoch(
    emb: KgEmbeddings,
    graph: KnowledgeGraph,
    cfg: MarginConfig,
    rng: np.random.Generator,
) -> tuple[float, dict[str, np.ndarray]]:
    """Margin loss over all graph triples with fresh sampled negatives.

    Returns the scalar loss and exact subgradients for the entity and
    relation matrices.
    """
    if not graph.triples:
        raise ValueError("graph has no triples")
    grad_ent = np.zeros_like(emb.entity_matrix)
    grad_rel = np.zeros_like(emb.relation_matrix)
    total = 0.0
    for pos in sorted(graph.triples):
        hi = emb.entity_index[pos.head]
        ti = emb.entity_index[pos.tail]
        ri = emb.relation_index[pos.relation]
        res_pos = emb.entity_matrix[hi] + emb.relation_matrix[ri] - emb.entity_matrix[ti]
        d_pos = float(np.linalg.norm(res_pos))
        for _ in range(cfg.negatives_per_positive):
            neg = sample_negative(graph, pos, rng)
            nhi = emb.entity_index[neg.head]
            nti = emb.entity_index[neg.tail]
            res_neg = emb.entity_matrix[nhi] + emb.relation_matrix[ri] - emb.entity_matrix[nti]
            d_neg = float(np.linalg.norm(res_neg))
            hinge = cfg.gamma + d_pos - d_neg
            if hinge > 0.0:
                total += hinge
                u_pos = _residual_direction(res_pos)
                u_neg = _residual_direction(res_neg)
                grad_ent[hi] += u_pos
                grad_ent[ti] -= u_pos
                grad_rel[ri] += u_pos
                grad_ent[nhi] -= u_neg
                grad_ent[nti] += u_neg
                grad_rel[ri] -= u_neg
    return total, {"entity": grad_ent, "relation": grad_rel}


def renormalize_entities(matrix: np.ndarray) -> np.ndarray:
    """Project rows onto the unit ball (rows with norm <= 1 are unchanged)."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    scale = np.maximum(norms, 1.0)
    return matrix / scale


def sgd_step(
    emb: KgEmbeddings, gradients: dict[str, np.ndarray], learning_rate: float
) -> KgEmbeddings:
    if gradients["entity"].shape != emb.entity_matrix.shape:
        raise ShapeMismatch("entity gradient shape mismatch")
    if gradients["relation"].shape != emb.relation_matrix.shape:
        raise ShapeMismatch("relation gradient shape mismatch")
    ent = emb.entity_matrix - learning_rate * gradients["entity"]
    rel = emb.relation_matrix - learning_rate * gradients["relation"]
    return KgEmbeddings(
        emb.entity_ids, emb.relation_kinds, renormalize_entities(ent), rel
    )


def train_epochs(
    emb: KgEmbeddings,
    graph: KnowledgeGraph,
    cfg: MarginConfig,
    epochs: int,
    seed: int,
) -> tuple[KgEmbeddings, list[float]]:
    """Plain SGD epochs over the full triple set; returns per-epoch losses."""
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        loss, grads = kg_loss_epoch(emb, graph, cfg, rng)
        emb = sgd_step(emb, grads, cfg.learning_rate)
        losses.append(loss)
    return emb, losses


def save_embeddings(path_prefix: str | Path, emb: KgEmbeddings) -> None:
    """Binary matrix snapshots plus adjacent id<TAB>row TSV maps."""
    prefix = Path(path_prefix)
    snapshot.save_matrix(prefix.with_suffix(".ent.kgsr"), emb.entity_matrix)
    snapshot.save_matrix(prefix.with_suffix(".rel.kgsr"), emb.relation_matrix)
    snapshot.save_id_map(prefix.with_suffix(".ent.tsv"), emb.entity_ids)
    snapshot.save_id_map(prefix.with_suffix(".rel.tsv"), [r.value for r in emb.relation_kinds])


def load_embeddings(path_prefix: str | Path) -> KgEmbeddings:
    prefix = Path(path_prefix)
    ent = snapshot.load_matrix(prefix.with_suffix(".ent.kgsr"))
    rel = snapshot.load_matrix(prefix.with_suffix(".rel.kgsr"))
    ent_ids = snapshot.load_id_map(prefix.with_suffix(".ent.tsv"))
    rel_ids = [RelationKind(v) for v in snapshot.load_id_map(prefix.with_suffix(".rel.tsv"))]
    return KgEmbeddings(ent_ids, rel_ids, ent, rel)
