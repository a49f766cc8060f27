"""Joint training loop: click BCE + KG margin + alignment, Adam updates,
learning-rate step decay, and per-epoch train/test loss-curve recording.

Every stochastic choice (click negatives, KG triple corruptions, shuffles)
is drawn from one seeded generator, so a (config, data) pair maps to a
bit-identical loss curve and parameter snapshot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DivergedLoss,
    EmptyBatch,
    InvalidConfig,
    LengthMismatch,
    NoNegativeAvailable,
)
from .kg import (
    EntityKind,
    InteractionRecord,
    KnowledgeGraph,
    RelationKind,
    sample_negative,
)
from .model import (
    Batch,
    JointModel,
    LossWeights,
    ModelDims,
    _align_terms,
    _kg_terms,
    backward,
    build_model,
    click_probabilities,
    forward_pass,
)
_CLAMP_LO = 1e-7
_CLAMP_HI = 1.0 - 1e-7


def bce_loss(predictions, labels) -> float:
    """Mean binary cross-entropy with predictions clamped away from {0, 1}."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise EmptyBatch("bce_loss on empty batch")
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} vs {y.shape}")
    p = np.clip(p, _CLAMP_LO, _CLAMP_HI)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def align_loss(kg_rows, sem_rows, projector: np.ndarray) -> float:
    """Mean squared residual of projecting semantic rows into the KG space."""
    kg = np.asarray(kg_rows, dtype=np.float64)
    sem = np.asarray(sem_rows, dtype=np.float64)
    if kg.shape[0] != sem.shape[0]:
        raise LengthMismatch(f"{kg.shape[0]} KG rows vs {sem.shape[0]} semantic rows")
    diff = kg - sem @ projector.T
    return float(np.mean(np.sum(diff * diff, axis=1)))


def total_loss(l_rec: float, l_kg: float, l_align: float,
               weights: LossWeights) -> float:
    return weights.lambda1 * l_rec + weights.lambda2 * l_kg + weights.lambda3 * l_align


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 30
    seed: int = 42
    weights: LossWeights = field(default_factory=LossWeights)
    grad_clip: float | None = None
    weight_decay: float = 1e-3
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.5
    margin: float = 1.0
    dims: ModelDims = field(default_factory=ModelDims)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")


_CONFIG_KEYS = {
    "learning_rate": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "lambda1": float,
    "lambda2": float,
    "lambda3": float,
    "grad_clip": float,
    "weight_decay": float,
    "lr_decay_every": int,
    "lr_decay_factor": float,
    "margin": float,
    "d_kg": int,
    "d_sem": int,
    "d_hidden": int,
    "vocab_size": int,
}


def parse_config_file(path: str | Path) -> TrainConfig:
    """Flat ``key = value`` lines; unknown keys are errors, '#' starts a comment."""
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
            if key == "grad_clip" and value.lower() == "none":
                values[key] = None
                continue
            try:
                values[key] = _CONFIG_KEYS[key](value)
            except ValueError:
                raise InvalidConfig(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    weights = LossWeights(
        float(values.pop("lambda1", 1.0)),
        float(values.pop("lambda2", 0.5)),
        float(values.pop("lambda3", 0.1)),
    )
    dims = ModelDims(
        d_kg=int(values.pop("d_kg", 32)),
        d_sem=int(values.pop("d_sem", 32)),
        d_hidden=int(values.pop("d_hidden", 64)),
        vocab_size=int(values.pop("vocab_size", 4096)),
    )
    return TrainConfig(weights=weights, dims=dims, **values)  # type: ignore[arg-type]


@dataclass
class LossCurve:
    train_losses: list[float]
    test_losses: list[float]

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "test_loss"])
            for i, (tr, te) in enumerate(zip(self.train_losses, self.test_losses), 1):
                writer.writerow([i, f"{tr:.12g}", f"{te:.12g}"])


class Adam:
    """First/second-moment update with bias correction; decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if weight_decay > 0.0:
                params[name] -= lr * weight_decay * params[name]
            params[name] -= lr * update


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


@dataclass
class TrainData:
    graph: KnowledgeGraph               # train-click + attribute edges only
    train_interactions: list[InteractionRecord]
    valid_interactions: list[InteractionRecord]
    test_interactions: list[InteractionRecord]
    ad_texts: dict[str, str]
    user_tags: dict[str, list[str]]


def load_train_data(bundle_dir: str | Path, split_seed: int = 0) -> TrainData:
    """Load a dataset bundle and assemble the training graph.

    Users are split 70/15/15; Clicks edges are added only for positive
    *train* interactions, so valid/test users never leak into the graph.
    """
    from .datagen import load_ad_texts, load_user_tags
    from .kg import (
        Triple,
        build_graph,
        read_entities_tsv,
        read_interactions_jsonl,
        read_triples_tsv,
    )
    from .metrics import split_by_user

    bundle = Path(bundle_dir)
    entities = read_entities_tsv(bundle / "entities.tsv")
    triples = read_triples_tsv(bundle / "triples.tsv")
    interactions = read_interactions_jsonl(bundle / "interactions.jsonl")
    train, valid, test = split_by_user(interactions, seed=split_seed)
    click_edges = {
        Triple(r.user, RelationKind.CLICKS, r.ad)
        for r in train if r.label == 1
    }
    graph = build_graph(list(set(triples) | click_edges), entities)
    return TrainData(
        graph=graph,
        train_interactions=train,
        valid_interactions=valid,
        test_interactions=test,
        ad_texts=load_ad_texts(bundle / "ad_text.jsonl"),
        user_tags=load_user_tags(bundle / "user_tags.jsonl"),
    )


def _click_examples(
    interactions: list[InteractionRecord],
    model: JointModel,
    ad_ids: list[str],
    rng: np.random.Generator,
):
    """Observed positives plus one sampled unclicked (user, ad) pair each."""
    ni = model.node_index
    clicked: dict[str, set[str]] = {}
    for r in interactions:
        if r.label == 1:
            clicked.setdefault(r.user, set()).add(r.ad)
    users, ads, labels = [], [], []
    for r in interactions:
        if r.label != 1:
            continue
        users.append(ni[r.user])
        ads.append(ni[r.ad])
        labels.append(1.0)
        for _ in range(100):
            neg_ad = ad_ids[int(rng.integers(len(ad_ids)))]
            if neg_ad not in clicked.get(r.user, ()):
                users.append(ni[r.user])
                ads.append(ni[neg_ad])
                labels.append(0.0)
                break
        else:
            raise NoNegativeAvailable(f"user {r.user} clicked every ad")
    return (np.asarray(users, dtype=np.int64),
            np.asarray(ads, dtype=np.int64),
            np.asarray(labels, dtype=np.float64))


def _kg_triple_arrays(model: JointModel):
    # relation rows are fixed: alphabetical over the closed RelationKind set
    ni = model.node_index
    rel_order = {k: i for i, k in enumerate(sorted(RelationKind, key=lambda r: r.value))}
    triples = sorted(model.graph.triples)
    h = np.asarray([ni[t.head] for t in triples], dtype=np.int64)
    r = np.asarray([rel_order[t.relation] for t in triples], dtype=np.int64)
    t_ = np.asarray([ni[t.tail] for t in triples], dtype=np.int64)
    return triples, h, r, t_


def _sample_kg_negatives(model: JointModel, triples, rng: np.random.Generator):
    """One type-consistent corruption per positive, absent from the graph."""
    ni = model.node_index
    neg_h = np.empty(len(triples), dtype=np.int64)
    neg_t = np.empty(len(triples), dtype=np.int64)
    for i, pos in enumerate(triples):
        neg = sample_negative(model.graph, pos, rng)
        neg_h[i] = ni[neg.head]
        neg_t[i] = ni[neg.tail]
    return neg_h, neg_t


def _epoch_loss(model: JointModel, h_final, user_idx, ad_idx, labels,
                l_kg: float, l_align: float, weights: LossWeights) -> float:
    probs = click_probabilities(model, h_final, user_idx, ad_idx)
    return total_loss(bce_loss(probs, labels), l_kg, l_align, weights)


def train(config: TrainConfig, data: TrainData) -> tuple[JointModel, LossCurve]:
    """Minibatch Adam over the joint objective; returns model and loss curve."""
    rng = np.random.default_rng(config.seed)
    model = build_model(data.graph, data.ad_texts, data.user_tags,
                        config.dims, seed=config.seed)
    ad_ids = model.graph.entities_of_kind(EntityKind.AD)
    triples, kg_h, kg_r, kg_t = _kg_triple_arrays(model)

    test_u, test_a, test_y = _click_examples(data.test_interactions, model, ad_ids, rng)
    optimizer = Adam(model.params)
    train_losses: list[float] = []
    test_losses: list[float] = []
    initial_loss: float | None = None

    for epoch in range(config.epochs):
        lr = config.learning_rate * (
            config.lr_decay_factor ** (epoch // config.lr_decay_every))
        users, ads, labels = _click_examples(data.train_interactions, model, ad_ids, rng)
        neg_h, neg_t = _sample_kg_negatives(model, triples, rng)
        order = rng.permutation(len(users))
        users, ads, labels = users[order], ads[order], labels[order]

        # each batch carries a disjoint slice of the triple set so the full
        # KG sum is covered exactly once per epoch
        n_batches = int(np.ceil(len(users) / config.batch_size))
        kg_chunks = np.array_split(rng.permutation(len(kg_h)), n_batches)

        batch_totals = []
        for bi, start in enumerate(range(0, len(users), config.batch_size)):
            sl = slice(start, start + config.batch_size)
            sel = kg_chunks[bi]
            batch = Batch(users[sl], ads[sl], labels[sl],
                          kg_h[sel], kg_r[sel], kg_t[sel],
                          neg_h[sel], neg_t[sel])
            losses, grads = backward(model, batch, config.weights,
                                     gamma=config.margin)
            if config.grad_clip is not None:
                clip_gradients(grads, config.grad_clip)
            optimizer.step(model.params, grads, lr, config.weight_decay)
            batch_totals.append(losses["total"])

        cache = forward_pass(model)
        eval_batch = Batch(users[:1], ads[:1], labels[:1], kg_h, kg_r, kg_t, neg_h, neg_t)
        l_kg = _kg_terms(model, eval_batch, config.margin)[0]
        l_align = _align_terms(model, cache.e_sem)[0]
        train_epoch_loss = _epoch_loss(model, cache.h_final, users, ads, labels,
                                       l_kg, l_align, config.weights)
        test_epoch_loss = _epoch_loss(model, cache.h_final, test_u, test_a, test_y,
                                      l_kg, l_align, config.weights)
        train_losses.append(train_epoch_loss)
        test_losses.append(test_epoch_loss)

        if initial_loss is None:
            initial_loss = train_epoch_loss
        if not np.isfinite(train_epoch_loss) or train_epoch_loss > 10.0 * initial_loss:
            raise DivergedLoss(
                f"epoch {epoch + 1}: train loss {train_epoch_loss} "
                f"(initial {initial_loss})")

    return model, LossCurve(train_losses, test_losses)
