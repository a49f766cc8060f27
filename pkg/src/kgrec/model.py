"""Joint model: KG rows + text encoder -> fusion -> attention stack -> bilinear.

Forward and reverse passes are written by hand in numpy and verified against
central finite differences. Parameter blocks live in a flat name -> array
dict so snapshots, the optimizer, and the gradient checker can treat the
model uniformly.

Vectorization notes: token sequences are grouped into equal-length buckets so
attention runs as clean batched matmuls without masking; graph edges are kept
as flat (owner, neighbor) arrays with owner-sorted segments so per-node
softmax and aggregation reduce to ``np.add.reduceat`` over contiguous runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBatch, NonFiniteGradient
from .kg import EntityKind, KnowledgeGraph
from .encoder import normalize_text, fnv1a_64

N_GAT_LAYERS = 3


@dataclass
class ModelDims:
    d_kg: int = 32
    d_sem: int = 32
    d_hidden: int = 64
    vocab_size: int = 4096
    leaky_slope: float = 0.2


class SegmentSum:
    """Scatter-add of per-edge rows into per-node rows via sorted reduceat."""

    def __init__(self, index: np.ndarray, n_nodes: int):
        self.n_nodes = n_nodes
        self.perm = np.argsort(index, kind="stable")
        sorted_idx = index[self.perm]
        self.nodes, self.starts = np.unique(sorted_idx, return_index=True)

    def sum(self, contrib: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_nodes,) + contrib.shape[1:], dtype=contrib.dtype)
        if len(self.nodes):
            out[self.nodes] = np.add.reduceat(contrib[self.perm], self.starts, axis=0)
        return out


@dataclass
class GraphStructure:
    """Flat undirected edge arrays, owner-sorted, with CSR adjacency."""
    edge_owner: np.ndarray     # (E,) node receiving the message
    edge_nbr: np.ndarray       # (E,) node sending the message
    isolated: np.ndarray       # (I,) nodes with no neighbors
    seg_nodes: np.ndarray      # nodes with at least one edge, ascending
    seg_starts: np.ndarray     # edge offset of each such node's segment
    indptr: np.ndarray         # CSR row pointers over all nodes
    n_nodes: int

    def segment_max(self, edge_vals: np.ndarray) -> np.ndarray:
        """Per-owner max of edge values, broadcast back onto the edges."""
        per_node = np.full(self.n_nodes, -np.inf)
        if len(self.seg_nodes):
            per_node[self.seg_nodes] = np.maximum.reduceat(edge_vals, self.seg_starts)
        return per_node[self.edge_owner]

    def segment_sum(self, edge_vals: np.ndarray) -> np.ndarray:
        """Per-owner sum of scalar edge values, length n_nodes."""
        return np.bincount(self.edge_owner, weights=edge_vals,
                           minlength=self.n_nodes)

    def message_matrix(self, alpha: np.ndarray):
        """Sparse (n, n) matrix with alpha_e at (owner_e, nbr_e)."""
        from scipy.sparse import csr_matrix
        return csr_matrix((alpha, self.edge_nbr, self.indptr),
                          shape=(self.n_nodes, self.n_nodes))


def build_structure(graph: KnowledgeGraph, node_index: dict[str, int]) -> GraphStructure:
    owners, nbrs = [], []
    isolated = []
    for eid in sorted(node_index, key=node_index.get):
        i = node_index[eid]
        nbr_ids = sorted({n for _r, n, _d in graph.adjacency_of(eid)})
        if not nbr_ids:
            isolated.append(i)
            continue
        for n in nbr_ids:
            owners.append(i)
            nbrs.append(node_index[n])
    owner = np.asarray(owners, dtype=np.int64)
    nbr = np.asarray(nbrs, dtype=np.int64)
    n = len(node_index)
    seg_nodes, seg_starts = np.unique(owner, return_index=True)
    counts = np.bincount(owner, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return GraphStructure(owner, nbr, np.asarray(isolated, dtype=np.int64),
                          seg_nodes, seg_starts, indptr, n)


@dataclass
class TokenBucket:
    node_idx: np.ndarray   # (B,) rows of the node table in this bucket
    tokens: np.ndarray     # (B, T) token ids
    table_agg: SegmentSum = field(init=False)

    def __post_init__(self):
        # aggregator target size is set lazily by the model (vocab size)
        self.table_agg = None  # type: ignore[assignment]


@dataclass
class JointModel:
    dims: ModelDims
    graph: KnowledgeGraph
    node_ids: list[str]
    node_index: dict[str, int]
    structure: GraphStructure
    buckets: list[TokenBucket]
    params: dict[str, np.ndarray]

    def param_names(self) -> list[str]:
        return sorted(self.params)


def node_token_ids(graph: KnowledgeGraph, eid: str,
                   ad_texts: dict[str, str], user_tags: dict[str, list[str]],
                   vocab_size: int) -> tuple[int, ...]:
    kind = graph.kind_of(eid)
    if kind == EntityKind.AD and eid in ad_texts:
        words = normalize_text(ad_texts[eid])
    elif kind == EntityKind.USER and user_tags.get(eid):
        words = normalize_text(" ".join(sorted(user_tags[eid])))
    else:
        words = normalize_text(graph.label_of(eid)) or [eid]
    return tuple(fnv1a_64(w) % vocab_size for w in words)


def build_model(
    graph: KnowledgeGraph,
    ad_texts: dict[str, str],
    user_tags: dict[str, list[str]],
    dims: ModelDims,
    seed: int,
) -> JointModel:
    rng = np.random.default_rng(seed)
    node_ids = graph.entity_ids()
    node_index = {e: i for i, e in enumerate(node_ids)}
    structure = build_structure(graph, node_index)

    seqs = [node_token_ids(graph, e, ad_texts, user_tags, dims.vocab_size)
            for e in node_ids]
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    buckets = []
    for length in sorted(by_len):
        idx = np.asarray(by_len[length], dtype=np.int64)
        toks = np.asarray([seqs[i] for i in by_len[length]], dtype=np.int64)
        b = TokenBucket(idx, toks)
        b.table_agg = SegmentSum(toks.ravel(), dims.vocab_size)
        buckets.append(b)

    n = len(node_ids)
    kg_bound = 6.0 / np.sqrt(dims.d_kg)
    s_sem = 1.0 / np.sqrt(dims.d_sem)
    s_fuse = 1.0 / np.sqrt(dims.d_kg + dims.d_sem)
    s_hid = 1.0 / np.sqrt(dims.d_hidden)
    params: dict[str, np.ndarray] = {
        "kg.entity": rng.uniform(-kg_bound, kg_bound, size=(n, dims.d_kg)),
        "kg.relation": rng.uniform(-kg_bound, kg_bound, size=(5, dims.d_kg)),
        "enc.token_table": rng.normal(0, s_sem, size=(dims.vocab_size, dims.d_sem)),
        "enc.W_Q": rng.normal(0, s_sem, size=(dims.d_sem, dims.d_sem)),
        "enc.W_K": rng.normal(0, s_sem, size=(dims.d_sem, dims.d_sem)),
        "enc.W_V": rng.normal(0, s_sem, size=(dims.d_sem, dims.d_sem)),
        "fusion.W_f": rng.normal(0, s_fuse, size=(dims.d_hidden, dims.d_kg + dims.d_sem)),
        "fusion.b_f": np.zeros(dims.d_hidden),
        "bilinear.W_r": rng.normal(0, s_hid, size=(dims.d_hidden, dims.d_hidden)),
        "align.P": rng.normal(0, s_sem, size=(dims.d_kg, dims.d_sem)),
    }
    for layer in range(N_GAT_LAYERS):
        params[f"gat.{layer}.W_g"] = rng.normal(0, s_hid, size=(dims.d_hidden, dims.d_hidden))
        params[f"gat.{layer}.a"] = rng.normal(0, s_hid, size=2 * dims.d_hidden)
    return JointModel(dims, graph, node_ids, node_index, structure, buckets, params)


@dataclass
class Batch:
    """One training batch with every stochastic choice already materialized."""
    user_idx: np.ndarray    # (B,) node indices
    ad_idx: np.ndarray      # (B,)
    labels: np.ndarray      # (B,) float 0/1
    kg_pos_h: np.ndarray    # (P,) node indices of positive triples
    kg_pos_r: np.ndarray    # (P,) relation rows
    kg_pos_t: np.ndarray    # (P,)
    kg_neg_h: np.ndarray    # (P,) corrupted heads
    kg_neg_t: np.ndarray    # (P,) corrupted tails


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda1 == self.lambda2 == self.lambda3 == 0:
            raise ValueError("loss weights must not all be zero")


_CLAMP_LO = 1e-7
_CLAMP_HI = 1.0 - 1e-7


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@dataclass
class EncoderCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray


@dataclass
class GatCache:
    h_in: np.ndarray
    g: np.ndarray
    pre: np.ndarray
    alpha: np.ndarray
    h_out: np.ndarray


@dataclass
class ForwardCache:
    e_sem: np.ndarray
    enc: list[EncoderCache]
    concat: np.ndarray
    z0: np.ndarray
    gat: list[GatCache]

    @property
    def h_final(self) -> np.ndarray:
        return self.gat[-1].h_out


def _encode_all(model: JointModel) -> tuple[np.ndarray, list[EncoderCache]]:
    p = model.params
    d = model.dims.d_sem
    inv_scale = 1.0 / np.sqrt(d)
    e_sem = np.zeros((model.structure.n_nodes, d))
    caches = []
    for b in model.buckets:
        x = p["enc.token_table"][b.tokens]          # (B, T, d)
        q = x @ p["enc.W_Q"]
        k = x @ p["enc.W_K"]
        v = x @ p["enc.W_V"]
        s = np.matmul(q, np.swapaxes(k, 1, 2)) * inv_scale
        s -= s.max(axis=2, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=2, keepdims=True)
        z = np.matmul(a, v)
        e_sem[b.node_idx] = z.mean(axis=1)
        caches.append(EncoderCache(x, q, k, v, a))
    return e_sem, caches


def _gat_forward(model: JointModel, h_in: np.ndarray, layer: int) -> GatCache:
    p = model.params
    st = model.structure
    w_g = p[f"gat.{layer}.W_g"]
    a_vec = p[f"gat.{layer}.a"]
    d = model.dims.d_hidden
    slope = model.dims.leaky_slope
    g = h_in @ w_g.T
    s_own = g @ a_vec[:d]
    s_nbr = g @ a_vec[d:]
    pre = s_own[st.edge_owner] + s_nbr[st.edge_nbr]
    logit = np.where(pre > 0, pre, slope * pre)
    # segment softmax over each owner's edges
    e = np.exp(logit - st.segment_max(logit))
    alpha = e / st.segment_sum(e)[st.edge_owner]
    m = st.message_matrix(alpha) @ g
    if len(st.isolated):
        m[st.isolated] = g[st.isolated]
    h_out = np.tanh(m)
    return GatCache(h_in, g, pre, alpha, h_out)


def forward_pass(model: JointModel) -> ForwardCache:
    p = model.params
    e_sem, enc_caches = _encode_all(model)
    concat = np.concatenate([p["kg.entity"], e_sem], axis=1)
    z0 = np.tanh(concat @ p["fusion.W_f"].T + p["fusion.b_f"])
    gat_caches = []
    h = z0
    for layer in range(N_GAT_LAYERS):
        cache = _gat_forward(model, h, layer)
        gat_caches.append(cache)
        h = cache.h_out
    return ForwardCache(e_sem, enc_caches, concat, z0, gat_caches)


def _click_terms(model: JointModel, cache: ForwardCache, batch: Batch):
    h = cache.h_final
    w_r = model.params["bilinear.W_r"]
    hu = h[batch.user_idx]
    ha = h[batch.ad_idx]
    s = np.einsum("bd,bd->b", hu, ha @ w_r.T)
    prob = 1.0 / (1.0 + np.exp(-s))
    clamped = np.clip(prob, _CLAMP_LO, _CLAMP_HI)
    y = batch.labels
    loss = float(np.mean(-(y * np.log(clamped) + (1 - y) * np.log(1 - clamped))))
    return loss, s, prob, clamped


def _kg_terms(model: JointModel, batch: Batch, gamma: float):
    ent = model.params["kg.entity"]
    rel = model.params["kg.relation"]
    res_pos = ent[batch.kg_pos_h] + rel[batch.kg_pos_r] - ent[batch.kg_pos_t]
    res_neg = ent[batch.kg_neg_h] + rel[batch.kg_pos_r] - ent[batch.kg_neg_t]
    d_pos = np.linalg.norm(res_pos, axis=1)
    d_neg = np.linalg.norm(res_neg, axis=1)
    hinge = gamma + d_pos - d_neg
    active = hinge > 0
    # mean over sampled triples keeps the term on the same scale as the
    # click BCE regardless of how many triples the batch carries
    loss = float(hinge[active].sum() / hinge.size) if hinge.size else 0.0
    return loss, res_pos, res_neg, d_pos, d_neg, active


def _align_terms(model: JointModel, e_sem: np.ndarray):
    diff = model.params["kg.entity"] - e_sem @ model.params["align.P"].T
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    return loss, diff


def forward_loss(
    model: JointModel, batch: Batch, weights: LossWeights, gamma: float = 1.0
) -> tuple[float, dict[str, float]]:
    """Total weighted loss; used directly by the finite-difference checker."""
    if batch.user_idx.size == 0:
        raise EmptyBatch("no click examples in batch")
    cache = forward_pass(model)
    l_rec, *_ = _click_terms(model, cache, batch)
    l_kg = _kg_terms(model, batch, gamma)[0]
    l_align, _ = _align_terms(model, cache.e_sem)
    total = weights.lambda1 * l_rec + weights.lambda2 * l_kg + weights.lambda3 * l_align
    return total, {"rec": l_rec, "kg": l_kg, "align": l_align, "total": total}


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _gat_backward(
    model: JointModel, cache: GatCache, layer: int, d_h_out: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    p = model.params
    st = model.structure
    w_g = p[f"gat.{layer}.W_g"]
    a_vec = p[f"gat.{layer}.a"]
    d = model.dims.d_hidden
    slope = model.dims.leaky_slope
    a_own, a_nbr = a_vec[:d], a_vec[d:]

    d_m = d_h_out * (1.0 - cache.h_out ** 2)
    d_g = np.zeros_like(cache.g)
    if len(st.isolated):
        d_g[st.isolated] = d_m[st.isolated]
        d_m = d_m.copy()
        d_m[st.isolated] = 0.0

    d_alpha = np.einsum("ed,ed->e", d_m[st.edge_owner], cache.g[st.edge_nbr])
    d_g += st.message_matrix(cache.alpha).T @ d_m

    seg_dot = st.segment_sum(cache.alpha * d_alpha)
    d_logit = cache.alpha * (d_alpha - seg_dot[st.edge_owner])
    d_pre = d_logit * np.where(cache.pre > 0, 1.0, slope)

    # sum_e d_pre_e g_{owner_e} collapses to per-node weight times g
    w_own = st.segment_sum(d_pre)
    w_nbr = np.bincount(st.edge_nbr, weights=d_pre, minlength=st.n_nodes)
    d_a = np.concatenate([w_own @ cache.g, w_nbr @ cache.g])
    d_g += w_own[:, None] * a_own[None, :]
    d_g += w_nbr[:, None] * a_nbr[None, :]

    grads[f"gat.{layer}.W_g"] += d_g.T @ cache.h_in
    grads[f"gat.{layer}.a"] += d_a
    return d_g @ w_g


def _encoder_backward(
    model: JointModel, caches: list[EncoderCache], d_e_sem: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    p = model.params
    inv_scale = 1.0 / np.sqrt(model.dims.d_sem)
    for b, c in zip(model.buckets, caches):
        t = c.x.shape[1]
        d_z = np.repeat(d_e_sem[b.node_idx][:, None, :] / t, t, axis=1)
        d_a = np.matmul(d_z, np.swapaxes(c.v, 1, 2))
        d_v = np.matmul(np.swapaxes(c.attn, 1, 2), d_z)
        inner = (d_a * c.attn).sum(axis=2, keepdims=True)
        d_s = c.attn * (d_a - inner)
        d_q = np.matmul(d_s, c.k) * inv_scale
        d_k = np.matmul(np.swapaxes(d_s, 1, 2), c.q) * inv_scale
        d_x = d_q @ p["enc.W_Q"].T + d_k @ p["enc.W_K"].T + d_v @ p["enc.W_V"].T
        grads["enc.W_Q"] += np.einsum("btd,bte->de", c.x, d_q)
        grads["enc.W_K"] += np.einsum("btd,bte->de", c.x, d_k)
        grads["enc.W_V"] += np.einsum("btd,bte->de", c.x, d_v)
        flat = d_x.reshape(-1, d_x.shape[2])
        grads["enc.token_table"] += b.table_agg.sum(flat)


def backward(
    model: JointModel, batch: Batch, weights: LossWeights, gamma: float = 1.0
) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    """Exact reverse-mode gradients of the weighted total loss.

    Gradient blocks for parameters the batch never touches come back zero.
    Raises ``NonFiniteGradient`` naming the offending block on NaN/Inf.
    """
    if batch.user_idx.size == 0:
        raise EmptyBatch("no click examples in batch")
    p = model.params
    cache = forward_pass(model)
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    # click head
    l_rec, s, prob, clamped = _click_terms(model, cache, batch)
    h = cache.h_final
    n_ex = batch.user_idx.size
    unclamped = (prob > _CLAMP_LO) & (prob < _CLAMP_HI)
    d_s = np.where(unclamped, (prob - batch.labels) / n_ex, 0.0) * weights.lambda1
    hu = h[batch.user_idx]
    ha = h[batch.ad_idx]
    w_r = p["bilinear.W_r"]
    grads["bilinear.W_r"] += (hu * d_s[:, None]).T @ ha
    d_h_final = np.zeros_like(h)
    np.add.at(d_h_final, batch.user_idx, d_s[:, None] * (ha @ w_r.T))
    np.add.at(d_h_final, batch.ad_idx, d_s[:, None] * (hu @ w_r))

    # attention stack
    d_h = d_h_final
    for layer in reversed(range(N_GAT_LAYERS)):
        d_h = _gat_backward(model, cache.gat[layer], layer, d_h, grads)

    # fusion
    d_u = d_h * (1.0 - cache.z0 ** 2)
    grads["fusion.W_f"] += d_u.T @ cache.concat
    grads["fusion.b_f"] += d_u.sum(axis=0)
    d_concat = d_u @ p["fusion.W_f"]
    d_kg = model.dims.d_kg
    grads["kg.entity"] += d_concat[:, :d_kg]
    d_e_sem = d_concat[:, d_kg:]

    # alignment
    l_align, diff = _align_terms(model, cache.e_sem)
    if weights.lambda3 > 0:
        d_diff = (2.0 / diff.shape[0]) * diff * weights.lambda3
        grads["kg.entity"] += d_diff
        grads["align.P"] += -(d_diff.T @ cache.e_sem)
        d_e_sem = d_e_sem + (-(d_diff @ p["align.P"]))

    # KG margin term
    l_kg, res_pos, res_neg, d_pos, d_neg, active = _kg_terms(model, batch, gamma)
    if weights.lambda2 > 0 and active.any():
        w2 = weights.lambda2 / d_pos.size
        with np.errstate(invalid="ignore", divide="ignore"):
            u_pos = np.where((d_pos > 1e-300)[:, None], res_pos / np.maximum(d_pos, 1e-300)[:, None], 0.0)
            u_neg = np.where((d_neg > 1e-300)[:, None], res_neg / np.maximum(d_neg, 1e-300)[:, None], 0.0)
        u_pos = u_pos * active[:, None] * w2
        u_neg = u_neg * active[:, None] * w2
        ent_grad = grads["kg.entity"]
        np.add.at(ent_grad, batch.kg_pos_h, u_pos)
        np.add.at(ent_grad, batch.kg_pos_t, -u_pos)
        np.add.at(ent_grad, batch.kg_neg_h, -u_neg)
        np.add.at(ent_grad, batch.kg_neg_t, u_neg)
        np.add.at(grads["kg.relation"], batch.kg_pos_r, u_pos - u_neg)

    # encoder
    _encoder_backward(model, cache.enc, d_e_sem, grads)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)

    total = weights.lambda1 * l_rec + weights.lambda2 * l_kg + weights.lambda3 * l_align
    losses = {"rec": l_rec, "kg": l_kg, "align": l_align, "total": total}
    return losses, grads


def node_states(model: JointModel) -> np.ndarray:
    """Final attention-stack states for every node, row-aligned to node_ids."""
    return forward_pass(model).h_final


def click_probabilities(
    model: JointModel, h_final: np.ndarray,
    user_idx: np.ndarray, ad_idx: np.ndarray,
) -> np.ndarray:
    w_r = model.params["bilinear.W_r"]
    s = np.einsum("bd,bd->b", h_final[user_idx], h_final[ad_idx] @ w_r.T)
    return 1.0 / (1.0 + np.exp(-s))


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_model(dir_path, model: JointModel) -> None:
    """Write parameter blocks, the node id map, and a dims sidecar.

    The graph and text inputs are not stored; :func:`load_model` rebuilds
    the structure from them and restores the learned parameters.
    """
    import json
    from pathlib import Path
    from .snapshot import save_id_map, save_sections

    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    save_sections(out / "params.kgsr", model.params)
    save_id_map(out / "nodes.tsv", model.node_ids)
    meta = {
        "d_kg": model.dims.d_kg,
        "d_sem": model.dims.d_sem,
        "d_hidden": model.dims.d_hidden,
        "vocab_size": model.dims.vocab_size,
        "leaky_slope": model.dims.leaky_slope,
        "n_gat_layers": N_GAT_LAYERS,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_model(
    dir_path,
    graph: KnowledgeGraph,
    ad_texts: dict[str, str],
    user_tags: dict[str, list[str]],
) -> JointModel:
    import json
    from pathlib import Path
    from .errors import CorruptSnapshot
    from .snapshot import load_id_map, load_sections

    src = Path(dir_path)
    with open(src / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    dims = ModelDims(
        d_kg=int(meta["d_kg"]),
        d_sem=int(meta["d_sem"]),
        d_hidden=int(meta["d_hidden"]),
        vocab_size=int(meta["vocab_size"]),
        leaky_slope=float(meta["leaky_slope"]),
    )
    model = build_model(graph, ad_texts, user_tags, dims, seed=0)
    if load_id_map(src / "nodes.tsv") != model.node_ids:
        raise CorruptSnapshot(
            f"{src}: node id map does not match the supplied graph")
    sections = load_sections(src / "params.kgsr")
    if set(sections) != set(model.params):
        raise CorruptSnapshot(f"{src}: parameter blocks do not match")
    for name, current in model.params.items():
        loaded = sections[name].reshape(current.shape)
        model.params[name] = np.ascontiguousarray(loaded, dtype=np.float64)
    return model
