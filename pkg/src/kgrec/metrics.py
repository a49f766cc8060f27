"""Ranking metric suite, user-disjoint splitting, and end-to-end evaluation
of a trained model plus index against sanity baselines.

Relevance is binary (clicked = 1). NDCG uses gain 1/log2(rank + 1) against
the ideal ordering for the user's truth size.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .encoder import fnv1a_64
from .errors import EmptyTruth, NoQueries, TooFewUsers
from .index import LatencyMonitor, exact_search, hnsw_search, ivf_search
from .kg import EntityKind, InteractionRecord
from .model import JointModel, click_probabilities, node_states


def split_by_user(
    interactions: list[InteractionRecord],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[list[InteractionRecord], list[InteractionRecord], list[InteractionRecord]]:
    """Partition users (not interactions) into train/valid/test.

    Rounding rule: floor for train and valid, remainder to test, so 10 users
    at (0.70, 0.15, 0.15) split 7 / 1 / 2.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    users = sorted({r.user for r in interactions})
    if len(users) < 3:
        raise TooFewUsers(f"{len(users)} users")
    rng = np.random.default_rng(seed)
    order = [users[i] for i in rng.permutation(len(users))]
    n_train = int(np.floor(ratios[0] * len(users)))
    n_valid = int(np.floor(ratios[1] * len(users)))
    train_users = set(order[:n_train])
    valid_users = set(order[n_train:n_train + n_valid])
    test_users = set(order[n_train + n_valid:])
    buckets: tuple[list, list, list] = ([], [], [])
    for r in interactions:
        if r.user in train_users:
            buckets[0].append(r)
        elif r.user in valid_users:
            buckets[1].append(r)
        else:
            buckets[2].append(r)
    return buckets


def _check_ranked(ranked: list[str]) -> None:
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicate ids")


def precision_at_k(ranked: list[str], truth: set[str], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    if not truth:
        raise EmptyTruth("empty ground-truth set")
    _check_ranked(ranked)
    hits = sum(1 for a in ranked[:k] if a in truth)
    return hits / k


def recall_at_k(ranked: list[str], truth: set[str], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    if not truth:
        raise EmptyTruth("empty ground-truth set")
    _check_ranked(ranked)
    hits = sum(1 for a in ranked[:k] if a in truth)
    return hits / len(truth)


def ndcg_at_k(ranked: list[str], truth: set[str], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    if not truth:
        raise EmptyTruth("empty ground-truth set")
    _check_ranked(ranked)
    dcg = sum(
        1.0 / np.log2(i + 2)
        for i, a in enumerate(ranked[:k]) if a in truth
    )
    ideal_hits = min(k, len(truth))
    idcg = sum(1.0 / np.log2(i + 2) for i in range(ideal_hits))
    return float(dcg / idcg)


def mrr(ranked_lists: list[list[str]], truths: list[set[str]]) -> float:
    """Mean reciprocal rank of the first relevant item; 0 when none appears."""
    if not ranked_lists:
        raise NoQueries("no ranked lists")
    if len(ranked_lists) != len(truths):
        raise ValueError("ranked lists and truths differ in length")
    total = 0.0
    for ranked, truth in zip(ranked_lists, truths):
        if not truth:
            raise EmptyTruth("empty ground-truth set")
        _check_ranked(ranked)
        for i, a in enumerate(ranked):
            if a in truth:
                total += 1.0 / (i + 1)
                break
    return total / len(ranked_lists)


@dataclass
class MetricsReport:
    precision_at_10: float
    precision_at_20: float
    recall_at_10: float
    recall_at_20: float
    ndcg_at_10: float
    ndcg_at_20: float
    mrr: float
    arl_ms: float
    n_users: int

    def to_json_line(self) -> str:
        obj = {
            "precision@10": self.precision_at_10,
            "precision@20": self.precision_at_20,
            "recall@10": self.recall_at_10,
            "recall@20": self.recall_at_20,
            "ndcg@10": self.ndcg_at_10,
            "ndcg@20": self.ndcg_at_20,
            "mrr": self.mrr,
            "arl_ms": self.arl_ms,
            "n_users": self.n_users,
        }
        return json.dumps(obj, sort_keys=True)

    def to_table(self) -> str:
        lines = ["metric            value", "-" * 24]
        for key, val in json.loads(self.to_json_line()).items():
            lines.append(f"{key:<16} {val:>8.4f}" if isinstance(val, float)
                         else f"{key:<16} {val:>8}")
        return "\n".join(lines)


def aggregate_metrics(
    ranked_lists: list[list[str]], truths: list[set[str]], arl_ms: float
) -> MetricsReport:
    if not ranked_lists:
        raise NoQueries("no users evaluated")
    p10 = np.mean([precision_at_k(r, t, 10) for r, t in zip(ranked_lists, truths)])
    p20 = np.mean([precision_at_k(r, t, 20) for r, t in zip(ranked_lists, truths)])
    r10 = np.mean([recall_at_k(r, t, 10) for r, t in zip(ranked_lists, truths)])
    r20 = np.mean([recall_at_k(r, t, 20) for r, t in zip(ranked_lists, truths)])
    n10 = np.mean([ndcg_at_k(r, t, 10) for r, t in zip(ranked_lists, truths)])
    n20 = np.mean([ndcg_at_k(r, t, 20) for r, t in zip(ranked_lists, truths)])
    return MetricsReport(float(p10), float(p20), float(r10), float(r20),
                         float(n10), float(n20), mrr(ranked_lists, truths),
                         arl_ms, len(ranked_lists))


@dataclass
class EvaluationResult:
    by_distance: MetricsReport    # raw retrieval order
    reranked: MetricsReport       # bilinear-score order over the top-100 cut


def _searcher(index, kind: str, ef_search: int, nprobe: int):
    if kind == "hnsw":
        return lambda q, k: hnsw_search(index, q, k, max(ef_search, k))
    if kind == "ivf":
        return lambda q, k: ivf_search(index, q, k, nprobe)
    if kind == "exact":
        return lambda q, k: exact_search(index, q, k)
    raise ValueError(f"unknown index kind {kind!r}")


def evaluate(
    model: JointModel,
    index,
    index_kind: str,
    test_interactions: list[InteractionRecord],
    monitor: LatencyMonitor,
    retrieval_cut: int = 100,
    ef_search: int = 128,
    nprobe: int = 8,
) -> EvaluationResult:
    """Retrieve top candidates per test user, rerank by the bilinear head,
    and score both orderings. ARL covers the retrieval + rerank path.
    """
    truths: dict[str, set[str]] = {}
    for r in test_interactions:
        if r.label == 1:
            truths.setdefault(r.user, set()).add(r.ad)
    users = sorted(truths)
    if not users:
        raise NoQueries("no test users with positive interactions")

    h_final = node_states(model)
    ni = model.node_index
    search = _searcher(index, index_kind, ef_search, nprobe)

    raw_lists, rr_lists, truth_lists = [], [], []
    for user in users:
        u_idx = ni[user]
        t0 = time.perf_counter_ns()
        result = search(h_final[u_idx].astype(np.float32), retrieval_cut)
        raw = [eid for eid, _d in result]
        a_idx = np.asarray([ni[a] for a in raw])
        scores = click_probabilities(
            model, h_final, np.full(len(a_idx), u_idx), a_idx)
        order = sorted(range(len(raw)), key=lambda i: (-scores[i], raw[i]))
        reranked = [raw[i] for i in order]
        monitor.record_latency((time.perf_counter_ns() - t0) // 1000)
        raw_lists.append(raw)
        rr_lists.append(reranked)
        truth_lists.append(truths[user])

    arl_ms = monitor.latency_report()["avg_us"] / 1000.0
    return EvaluationResult(
        by_distance=aggregate_metrics(raw_lists, truth_lists, arl_ms),
        reranked=aggregate_metrics(rr_lists, truth_lists, arl_ms),
    )


# ---------------------------------------------------------------------------
# sanity baselines
# ---------------------------------------------------------------------------

def baseline_random(seed: int):
    """Seeded shuffle of the candidate ads, fixed per (seed, user) pair."""
    def rank(user: str, candidates: list[str]) -> list[str]:
        rng = np.random.default_rng([seed, fnv1a_64(user) % (2 ** 31)])
        order = rng.permutation(len(candidates))
        return [candidates[i] for i in order]
    return rank

def baseline_popularity(train_interactions: list[InteractionRecord]):
    """Ads by descending train click count, ties broken by ascending id."""
    counts: dict[str, int] = {}
    for r in train_interactions:
        if r.label == 1:
            counts[r.ad] = counts.get(r.ad, 0) + 1

    def rank(user: str, candidates: list[str]) -> list[str]:
        return sorted(candidates, key=lambda a: (-counts.get(a, 0), a))
    return rank


def evaluate_ranker(
    ranker,
    test_interactions: list[InteractionRecord],
    candidates: list[str],
) -> MetricsReport:
    truths: dict[str, set[str]] = {}
    for r in test_interactions:
        if r.label == 1:
            truths.setdefault(r.user, set()).add(r.ad)
    users = sorted(truths)
    if not users:
        raise NoQueries("no test users with positive interactions")
    ranked_lists = [ranker(u, candidates) for u in users]
    truth_lists = [truths[u] for u in users]
    return aggregate_metrics(ranked_lists, truth_lists, 0.0)


def save_report_json(path: str | Path, result: EvaluationResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "by_distance": json.loads(result.by_distance.to_json_line()),
            "reranked": json.loads(result.reranked.to_json_line()),
        }, sort_keys=True, indent=2) + "\n")
