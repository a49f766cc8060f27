"""Seeded synthetic dataset generator built on a latent-topic model.

Users and ads carry topic mixtures; tags, categories, and ad words are drawn
from topic-conditioned vocabularies, and click probability is proportional to
user-ad topic affinity (label noise flips a configurable fraction). The
latent state can be dumped so tests can build the task's best-possible
ranker and confirm the learning problem is solvable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import EmptyColumn, InvalidConfig
from .kg import (
    EntityKind,
    InteractionRecord,
    RelationKind,
    Triple,
    write_entities_tsv,
    write_interactions_jsonl,
    write_triples_tsv,
)

FORMAT_VERSIONS = {"entities_tsv": 1, "triples_tsv": 1, "interactions_jsonl": 1,
                   "ad_text_jsonl": 1, "user_tags_jsonl": 1}

# full-scale deployment target this generator miniaturizes; provenance only
REFERENCE_SCALE = {
    "n_users": 1_200_000,
    "n_ads": 250_000,
    "n_interactions": 20_000_000,
    "n_categories": 320,
    "avg_text_len": 28,
    "avg_tags_per_user": 4.7,
}

VOCAB_WORDS = 4096
TAGS_PER_TOPIC = 16
_EXPLOIT_PROB = 0.95
_SOFTMAX_BETA = 60.0


@dataclass
class SyntheticConfig:
    n_users: int = 2000
    n_ads: int = 1000
    n_products: int = 200
    n_categories: int = 32
    n_interactions: int = 50_000
    avg_tags_per_user: float = 4.7
    avg_text_len: int = 28
    n_latent_topics: int = 8
    noise_rate: float = 0.02
    seed: int = 42

    def validate(self) -> None:
        for name in ("n_users", "n_ads", "n_products", "n_categories",
                     "n_interactions", "n_latent_topics"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise InvalidConfig("noise_rate must be in [0, 1]")
        if self.avg_tags_per_user < 1:
            raise InvalidConfig("avg_tags_per_user must be >= 1")


@dataclass
class DatasetBundle:
    out_dir: Path
    entities_path: Path
    triples_path: Path
    interactions_path: Path
    ad_text_path: Path
    user_tags_path: Path
    manifest_path: Path
    latent_path: Path | None = None


def _topic_word_slices(n_topics: int) -> list[np.ndarray]:
    per_topic = VOCAB_WORDS // n_topics
    return [np.arange(t * per_topic, (t + 1) * per_topic) for t in range(n_topics)]


def _word(idx: int) -> str:
    return f"w{idx:04d}"


def normalize_features(columns: np.ndarray) -> np.ndarray:
    """Min-max scale each column into [0, 1]; constant columns map to 0."""
    cols = np.asarray(columns, dtype=np.float64)
    if cols.size == 0:
        raise EmptyColumn("no values to normalize")
    if cols.ndim == 1:
        cols = cols[:, None]
        squeeze = True
    else:
        squeeze = False
    lo = cols.min(axis=0)
    hi = cols.max(axis=0)
    span = hi - lo
    out = np.where(span > 0, (cols - lo) / np.where(span > 0, span, 1.0), 0.0)
    return out[:, 0] if squeeze else out


@dataclass
class LatentState:
    user_ids: list[str]
    ad_ids: list[str]
    user_mixtures: np.ndarray
    ad_mixtures: np.ndarray

    def affinity(self, user: str, ads: list[str] | None = None) -> np.ndarray:
        ui = self.user_ids.index(user)
        mix = self.ad_mixtures
        if ads is not None:
            rows = [self.ad_ids.index(a) for a in ads]
            mix = mix[rows]
        return mix @ self.user_mixtures[ui]

    def best_ranker(self):
        """Ranker using the true topic affinities; the ceiling for this task."""
        ad_pos = {a: i for i, a in enumerate(self.ad_ids)}
        user_pos = {u: i for i, u in enumerate(self.user_ids)}

        def rank(user: str, candidates: list[str]) -> list[str]:
            aff = self.ad_mixtures @ self.user_mixtures[user_pos[user]]
            return sorted(candidates, key=lambda a: (-aff[ad_pos[a]], a))
        return rank


def generate(config: SyntheticConfig, out_dir: str | Path,
             dump_latent: bool = False) -> DatasetBundle:
    """Emit the full dataset bundle into ``out_dir``; deterministic per seed."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    k = config.n_latent_topics
    slices = _topic_word_slices(k)

    user_ids = [f"u{i:05d}" for i in range(config.n_users)]
    ad_ids = [f"a{i:05d}" for i in range(config.n_ads)]
    product_ids = [f"p{i:04d}" for i in range(config.n_products)]
    category_ids = [f"c{i:03d}" for i in range(config.n_categories)]
    n_tags = TAGS_PER_TOPIC * k
    tag_ids = [f"t{i:04d}" for i in range(n_tags)]
    tag_topics = np.array([i // TAGS_PER_TOPIC for i in range(n_tags)])
    # each tag's label is a dedicated word from its topic's vocabulary slice
    tag_words = [
        _word(int(slices[tag_topics[i]][i % TAGS_PER_TOPIC]))
        for i in range(n_tags)
    ]
    cat_topics = np.array([i % k for i in range(config.n_categories)])
    prod_cats = rng.integers(config.n_categories, size=config.n_products)

    alpha = np.full(k, 0.25)
    user_mix = rng.dirichlet(alpha, size=config.n_users) if k > 1 else np.ones((config.n_users, 1))
    ad_mix = rng.dirichlet(alpha, size=config.n_ads) if k > 1 else np.ones((config.n_ads, 1))

    # user interest tags, count targeting avg_tags_per_user on average
    base = int(np.floor(config.avg_tags_per_user))
    frac = config.avg_tags_per_user - base
    tags_by_topic = [np.nonzero(tag_topics == t)[0] for t in range(k)]
    user_tags: dict[str, list[str]] = {}
    user_tag_idx: dict[str, list[int]] = {}
    for ui, uid in enumerate(user_ids):
        count = base + (1 if rng.random() < frac else 0)
        count = min(count, n_tags)
        chosen: list[int] = []
        for _ in range(200):
            if len(chosen) >= count:
                break
            topic = int(rng.choice(k, p=user_mix[ui])) if k > 1 else 0
            tag = int(rng.choice(tags_by_topic[topic]))
            if tag not in chosen:
                chosen.append(tag)
        user_tag_idx[uid] = chosen
        user_tags[uid] = [tag_words[t] for t in chosen]

    # ads: product link biased to the dominant topic's categories, topic text
    ad_texts: dict[str, str] = {}
    ad_products = np.empty(config.n_ads, dtype=np.int64)
    prods_by_topic = [
        np.nonzero(cat_topics[prod_cats] == t)[0] for t in range(k)
    ]
    lo = config.avg_text_len - 5
    hi = config.avg_text_len + 5
    for ai, aid in enumerate(ad_ids):
        dom = int(np.argmax(ad_mix[ai]))
        pool = prods_by_topic[dom]
        if len(pool) and rng.random() < 0.9:
            ad_products[ai] = pool[int(rng.integers(len(pool)))]
        else:
            ad_products[ai] = int(rng.integers(config.n_products))
        length = int(rng.integers(lo, hi + 1))
        topics = rng.choice(k, size=length, p=ad_mix[ai]) if k > 1 else np.zeros(length, int)
        words = [_word(int(slices[t][rng.integers(len(slices[t]))])) for t in topics]
        ad_texts[aid] = " ".join(words)

    # entity table; non-text entities get topic-informative labels
    entities: list[tuple[str, EntityKind, str]] = []
    for uid in user_ids:
        entities.append((uid, EntityKind.USER, uid))
    for aid in ad_ids:
        entities.append((aid, EntityKind.AD, aid))
    for pi, pid in enumerate(product_ids):
        topic = int(cat_topics[prod_cats[pi]])
        label = _word(int(slices[topic][pi % len(slices[topic])]))
        entities.append((pid, EntityKind.PRODUCT, label))
    for ci, cid in enumerate(category_ids):
        topic = int(cat_topics[ci])
        label = " ".join(_word(int(w)) for w in slices[topic][:2])
        entities.append((cid, EntityKind.CATEGORY, label))
    for ti, tid in enumerate(tag_ids):
        entities.append((tid, EntityKind.INTEREST_TAG, tag_words[ti]))

    triples: list[Triple] = []
    for ai, aid in enumerate(ad_ids):
        triples.append(Triple(aid, RelationKind.PROMOTES, product_ids[ad_products[ai]]))
    for pi, pid in enumerate(product_ids):
        triples.append(Triple(pid, RelationKind.BELONGS_TO, category_ids[prod_cats[pi]]))
    for uid in user_ids:
        for t in user_tag_idx[uid]:
            triples.append(Triple(uid, RelationKind.INTERESTED_IN, tag_ids[t]))
    cats_by_topic = [np.nonzero(cat_topics == t)[0] for t in range(k)]
    for ui, uid in enumerate(user_ids):
        liked: set[int] = set()
        for topic in np.argsort(-user_mix[ui])[:2]:
            pool = cats_by_topic[int(topic)]
            if len(pool):
                liked.add(int(pool[int(rng.integers(len(pool)))]))
        for ci in sorted(liked):
            triples.append(Triple(uid, RelationKind.LIKES_CATEGORY, category_ids[ci]))

    # interactions: exploit the topic affinity most of the time, explore the
    # rest; click probability is proportional to affinity (flipped by noise)
    affinity = user_mix @ ad_mix.T
    aff_max = affinity.max(axis=1)
    scaled = np.exp(_SOFTMAX_BETA * (affinity - aff_max[:, None]))
    exploit_p = scaled / scaled.sum(axis=1, keepdims=True)
    interactions: list[InteractionRecord] = []
    seen: set[tuple[int, int]] = set()
    base_ts = 1_700_000_000
    made = 0
    while made < config.n_interactions:
        ui = int(rng.integers(config.n_users))
        if rng.random() < _EXPLOIT_PROB:
            ai = int(rng.choice(config.n_ads, p=exploit_p[ui]))
        else:
            ai = int(rng.integers(config.n_ads))
        if (ui, ai) in seen:
            continue
        seen.add((ui, ai))
        p_click = affinity[ui, ai] / aff_max[ui] if aff_max[ui] > 0 else 1.0
        label = 1 if rng.random() < p_click else 0
        if rng.random() < config.noise_rate:
            label = 1 - label
        interactions.append(InteractionRecord(
            user_ids[ui], ad_ids[ai], label, base_ts + made))
        made += 1

    # write the bundle
    bundle = DatasetBundle(
        out_dir=out,
        entities_path=out / "entities.tsv",
        triples_path=out / "triples.tsv",
        interactions_path=out / "interactions.jsonl",
        ad_text_path=out / "ad_text.jsonl",
        user_tags_path=out / "user_tags.jsonl",
        manifest_path=out / "manifest.json",
    )
    write_entities_tsv(bundle.entities_path, entities)
    write_triples_tsv(bundle.triples_path, triples)
    write_interactions_jsonl(bundle.interactions_path, interactions)
    with open(bundle.ad_text_path, "w", encoding="utf-8") as fh:
        for aid in ad_ids:
            fh.write(json.dumps({"ad_id": aid, "text": ad_texts[aid]},
                                sort_keys=True) + "\n")
    with open(bundle.user_tags_path, "w", encoding="utf-8") as fh:
        for uid in user_ids:
            fh.write(json.dumps({"user_id": uid, "tags": user_tags[uid]},
                                sort_keys=True) + "\n")
    manifest = {
        "config": asdict(config),
        "counts": {
            "entities": len(entities),
            "triples": len(triples),
            "interactions": len(interactions),
            "ads": len(ad_ids),
            "users": len(user_ids),
        },
        "seed": config.seed,
        "format_versions": FORMAT_VERSIONS,
        "reference_scale": REFERENCE_SCALE,
    }
    with open(bundle.manifest_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    if dump_latent:
        bundle.latent_path = out / "latent.npz"
        np.savez(bundle.latent_path,
                 user_ids=np.array(user_ids),
                 ad_ids=np.array(ad_ids),
                 user_mixtures=user_mix,
                 ad_mixtures=ad_mix)
    return bundle


def load_latent(path: str | Path) -> LatentState:
    data = np.load(path, allow_pickle=False)
    return LatentState(
        user_ids=[str(u) for u in data["user_ids"]],
        ad_ids=[str(a) for a in data["ad_ids"]],
        user_mixtures=data["user_mixtures"],
        ad_mixtures=data["ad_mixtures"],
    )


def load_ad_texts(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out[obj["ad_id"]] = obj["text"]
    return out


def load_user_tags(path: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out[obj["user_id"]] = list(obj["tags"])
    return out
