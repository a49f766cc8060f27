"""Command-line surface tying the pipeline together.

Commands communicate only via files: gen-data writes a dataset bundle,
build-kg materializes the train-split graph, train writes a model snapshot
plus loss CSV, index writes an index snapshot, and query/eval/gradcheck
consume those artifacts. Every failure exits non-zero with one
machine-parsable ``ErrorName: detail`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import SyntheticConfig, generate, load_ad_texts, load_user_tags
from .errors import InvalidConfig, KgrecError, UnknownEntity
from .gradcheck import check_gradients
from .index import (
    HnswIndex,
    IvfIndex,
    LatencyMonitor,
    VectorStore,
    audit_hnsw,
    exact_search,
    hnsw_build,
    hnsw_search,
    ivf_build,
    ivf_search,
    load_index,
    save_index,
)
from .kg import (
    EntityKind,
    RelationKind,
    Triple,
    build_graph,
    read_entities_tsv,
    read_interactions_jsonl,
    read_triples_tsv,
    write_entities_tsv,
    write_triples_tsv,
)
from .metrics import (
    baseline_popularity,
    baseline_random,
    evaluate,
    evaluate_ranker,
    save_report_json,
    split_by_user,
)
from .model import load_model, node_states, save_model
from .training import TrainConfig, load_train_data, parse_config_file, train

_GRADCHECK_SEEDS = 20


def _parse_synthetic_config(path: str) -> SyntheticConfig:
    """Flat ``key = value`` file mapped onto SyntheticConfig fields."""
    fields = {f.name: f.type for f in dataclasses.fields(SyntheticConfig)}
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
            if key not in fields:
                raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
            caster = float if key in ("avg_tags_per_user", "noise_rate") else int
            try:
                values[key] = caster(value)
            except ValueError:
                raise InvalidConfig(
                    f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return SyntheticConfig(**values)  # type: ignore[arg-type]


def _cmd_gen_data(args) -> int:
    config = (_parse_synthetic_config(args.config) if args.config
              else SyntheticConfig())
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    bundle = generate(config, args.out, dump_latent=args.dump_latent)
    with open(bundle.manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if args.json:
        print(json.dumps(manifest, sort_keys=True))
    else:
        print(f"wrote bundle to {bundle.out_dir}")
        for key, val in sorted(manifest["counts"].items()):
            print(f"  {key}: {val}")
    return 0


def _cmd_build_kg(args) -> int:
    data_dir = Path(args.data)
    entities = read_entities_tsv(data_dir / "entities.tsv")
    triples = read_triples_tsv(data_dir / "triples.tsv")
    interactions = read_interactions_jsonl(data_dir / "interactions.jsonl")
    train_split, valid_split, test_split = split_by_user(
        interactions, seed=args.seed or 0)
    click_edges = {
        Triple(r.user, RelationKind.CLICKS, r.ad)
        for r in train_split if r.label == 1
    }
    graph = build_graph(list(set(triples) | click_edges), entities)

    # leakage audit: no valid/test user may own a Clicks edge
    held_out = {r.user for r in valid_split} | {r.user for r in test_split}
    for t in graph.triples:
        if t.relation is RelationKind.CLICKS and t.head in held_out:
            raise KgrecError(f"leaked click edge for held-out user {t.head}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(eid, kind, label)
            for eid, (kind, label) in sorted(graph.entities.items())]
    write_entities_tsv(out / "entities.tsv", rows)
    write_triples_tsv(out / "triples.tsv", sorted(graph.triples))
    splits = {
        "train_users": sorted({r.user for r in train_split}),
        "valid_users": sorted({r.user for r in valid_split}),
        "test_users": sorted({r.user for r in test_split}),
        "split_seed": args.seed or 0,
    }
    with open(out / "splits.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(splits, sort_keys=True, indent=2) + "\n")
    summary = {"entities": len(graph.entities), "triples": len(graph.triples)}
    print(json.dumps(summary, sort_keys=True) if args.json
          else f"graph snapshot in {out}: {summary['entities']} entities, "
               f"{summary['triples']} triples")
    return 0


def _cmd_train(args) -> int:
    config = parse_config_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    data = load_train_data(args.data, split_seed=args.split_seed)
    model, curve = train(config, data)
    out = Path(args.out)
    save_model(out, model)
    curve.save_csv(out / "loss_curve.csv")
    summary = {
        "epochs": config.epochs,
        "train_loss_first": curve.train_losses[0],
        "train_loss_last": curve.train_losses[-1],
        "test_loss_first": curve.test_losses[0],
        "test_loss_last": curve.test_losses[-1],
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"model snapshot in {out}")
        print(f"train loss {summary['train_loss_first']:.4f} -> "
              f"{summary['train_loss_last']:.4f}, "
              f"test loss {summary['test_loss_first']:.4f} -> "
              f"{summary['test_loss_last']:.4f}")
    return 0


def _load_model_for(args):
    data = load_train_data(args.data, split_seed=args.split_seed)
    model = load_model(args.model, data.graph, data.ad_texts, data.user_tags)
    return data, model


def _ad_store(model) -> VectorStore:
    h = node_states(model)
    ads = model.graph.entities_of_kind(EntityKind.AD)
    rows = h[[model.node_index[a] for a in ads]].astype(np.float32)
    return VectorStore(ads, rows)


def _cmd_index(args) -> int:
    _, model = _load_model_for(args)
    store = _ad_store(model)
    seed = args.seed if args.seed is not None else 0
    if args.index_kind == "hnsw":
        index = hnsw_build(store, m=args.m, ef_construction=args.ef_construction,
                           seed=seed)
        audit_hnsw(index)
    elif args.index_kind == "ivf":
        index = ivf_build(store, nlist=args.nlist, seed=seed)
    else:
        index = store
    save_index(args.out, index)
    print(json.dumps({"kind": args.index_kind, "n": len(store),
                      "dim": store.dim}, sort_keys=True) if args.json
          else f"{args.index_kind} index over {len(store)} vectors -> {args.out}")
    return 0


def _search(index, query: np.ndarray, k: int, ef_search: int, nprobe: int):
    if isinstance(index, HnswIndex):
        return hnsw_search(index, query, k, max(ef_search, k))
    if isinstance(index, IvfIndex):
        return ivf_search(index, query, k, min(nprobe, index.nlist))
    return exact_search(index, query, k)


def _cmd_query(args) -> int:
    index = load_index(args.index)
    if args.user is not None:
        data, model = _load_model_for(args)
        if not data.graph.has_entity(args.user):
            raise UnknownEntity(args.user)
        h = node_states(model)
        query = h[model.node_index[args.user]].astype(np.float32)
    else:
        query = np.asarray([float(x) for x in args.vector.split(",")],
                           dtype=np.float32)
    for eid, dist in _search(index, query, args.k, args.ef_search, args.nprobe):
        print(f"{eid}\t{dist:.6f}")
    return 0


def _cmd_eval(args) -> int:
    data, model = _load_model_for(args)
    index = load_index(args.index)
    kind = ("hnsw" if isinstance(index, HnswIndex)
            else "ivf" if isinstance(index, IvfIndex) else "exact")
    monitor = LatencyMonitor(threshold_us=args.threshold_us)
    result = evaluate(model, index, kind, data.test_interactions, monitor,
                      ef_search=args.ef_search, nprobe=args.nprobe)
    if args.baselines:
        ads = model.graph.entities_of_kind(EntityKind.AD)
        pop = evaluate_ranker(baseline_popularity(data.train_interactions),
                              data.test_interactions, ads)
        rnd = evaluate_ranker(baseline_random(args.seed or 0),
                              data.test_interactions, ads)
    if args.out:
        save_report_json(args.out, result)
    if args.json:
        print(result.reranked.to_json_line())
    else:
        print("reranked:")
        print(result.reranked.to_table())
        print("by distance:")
        print(result.by_distance.to_table())
    if args.baselines:
        prefix = "" if args.json else "baseline "
        print(f"{prefix}popularity: {pop.to_json_line()}")
        print(f"{prefix}random: {rnd.to_json_line()}")
    return 0


def _cmd_gradcheck(args) -> int:
    seeds = ([args.seed] if args.seed is not None
             else list(range(_GRADCHECK_SEEDS)))
    worst = 0.0
    worst_block = ""
    for seed in seeds:
        report = check_gradients(seed)
        if report.worst_rel_err > worst:
            worst = report.worst_rel_err
            worst_block = max(report.per_block, key=report.per_block.get)
    passed = worst < 1e-4
    if args.json:
        print(json.dumps({"max_rel_err": worst, "worst_block": worst_block,
                          "seeds": len(seeds), "passed": passed},
                         sort_keys=True))
    else:
        print(f"max relative error {worst:.3e} ({worst_block}) "
              f"over {len(seeds)} seed(s): {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    if "data" in names:
        p.add_argument("--data", required=True, help="dataset bundle directory")
    if "model" in names:
        p.add_argument("--model", required=True, help="model snapshot directory")
    if "split_seed" in names:
        p.add_argument("--split-seed", type=int, default=0,
                       help="user-split shuffle seed")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true",
                   help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgrec", description="KG-fused ad recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--dump-latent", action="store_true",
                   help="also write the latent topic state for diagnostics")
    _add_common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("build-kg", help="materialize the train-split graph")
    p.add_argument("--out", required=True)
    _add_common(p, "data")
    p.set_defaults(func=_cmd_build_kg)

    p = sub.add_parser("train", help="train the joint model")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    _add_common(p, "data", "split_seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("index", help="build a vector index over ad embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--index-kind", choices=("hnsw", "ivf", "exact"),
                   default="hnsw")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--nlist", type=int, default=64)
    _add_common(p, "data", "model", "split_seed")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="top-k ads for a user id or raw vector")
    p.add_argument("--index", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--user", default=None)
    group.add_argument("--vector", default=None,
                       help="comma-separated floats")
    p.add_argument("--data", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef-search", type=int, default=128)
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("eval", help="evaluate model + index on the test split")
    p.add_argument("--index", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ef-search", type=int, default=128)
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--threshold-us", type=int, default=500_000)
    p.add_argument("--baselines", action="store_true",
                   help="also report popularity and random rankers")
    _add_common(p, "data", "model", "split_seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the backward pass")
    _add_common(p)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "query" and args.user is not None and (
            args.data is None or args.model is None):
        print("InvalidConfig: --user requires --data and --model",
              file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except KgrecError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
