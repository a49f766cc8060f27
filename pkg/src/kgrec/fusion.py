"""Embedding fusion, graph-attention layers, and bilinear pair scoring.

The fused vector tanh(W_f [h_kg ; e_sem] + b_f) is the unit stored in the
vector index; a 3-layer attention stack propagates it over the graph and a
bilinear-logistic head turns two node states into a click probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IsolatedNode, MissingState, ShapeMismatch
from .kg import KnowledgeGraph


@dataclass
class FusionParams:
    w_fuse: np.ndarray  # d_h x (d_k + d_s)
    b_fuse: np.ndarray  # d_h


@dataclass(frozen=True)
class FusedEmbedding:
    vector: np.ndarray
    entity: str


@dataclass
class GatLayerParams:
    w_graph: np.ndarray   # d_h x d_h
    attn: np.ndarray      # 2 * d_h
    leaky_slope: float = 0.2


@dataclass
class GatStack:
    layers: list[GatLayerParams]


@dataclass
class BilinearParams:
    w_pair: np.ndarray  # d_h x d_h


def init_fusion(d_hidden: int, d_kg: int, d_sem: int, seed: int) -> FusionParams:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_kg + d_sem)
    return FusionParams(
        w_fuse=rng.normal(0.0, scale, size=(d_hidden, d_kg + d_sem)),
        b_fuse=np.zeros(d_hidden),
    )


def init_gat_stack(d_hidden: int, n_layers: int, seed: int,
                   leaky_slope: float = 0.2) -> GatStack:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_hidden)
    layers = [
        GatLayerParams(
            w_graph=rng.normal(0.0, scale, size=(d_hidden, d_hidden)),
            attn=rng.normal(0.0, scale, size=2 * d_hidden),
            leaky_slope=leaky_slope,
        )
        for _ in range(n_layers)
    ]
    return GatStack(layers)


def init_bilinear(d_hidden: int, seed: int) -> BilinearParams:
    rng = np.random.default_rng(seed)
    return BilinearParams(rng.normal(0.0, 1.0 / np.sqrt(d_hidden),
                                     size=(d_hidden, d_hidden)))


def fuse(h_kg: np.ndarray, e_sem: np.ndarray, params: FusionParams,
         entity: str = "") -> FusedEmbedding:
    """tanh(W_f [h_kg ; e_sem] + b_f), KG part first in the concatenation."""
    combined = np.concatenate([h_kg, e_sem])
    if params.w_fuse.shape[1] != combined.shape[0]:
        raise ShapeMismatch(
            f"fusion expects {params.w_fuse.shape[1]} inputs, got {combined.shape[0]}"
        )
    return FusedEmbedding(np.tanh(params.w_fuse @ combined + params.b_fuse), entity)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def attention_coeffs(
    neighbor_states: list[np.ndarray],
    self_state: np.ndarray,
    params: GatLayerParams,
) -> np.ndarray:
    """Softmax over LeakyReLU(a^T [W_g h_i ; W_g h_j]) across the neighbors."""
    if not neighbor_states:
        raise IsolatedNode("attention over an empty neighborhood")
    g_self = params.w_graph @ self_state
    d = g_self.shape[0]
    a_self, a_nbr = params.attn[:d], params.attn[d:]
    base = float(a_self @ g_self)
    logits = np.array([
        base + float(a_nbr @ (params.w_graph @ h)) for h in neighbor_states
    ])
    logits = leaky_relu(logits, params.leaky_slope)
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def gat_layer(
    graph: KnowledgeGraph,
    states: dict[str, np.ndarray],
    params: GatLayerParams,
) -> dict[str, np.ndarray]:
    """One attention layer over the undirected neighborhood.

    Isolated nodes fall back to tanh(W_g h_i) so they are not zeroed out.
    """
    for eid in graph.entity_ids():
        if eid not in states:
            raise MissingState(eid)
    out: dict[str, np.ndarray] = {}
    for eid in graph.entity_ids():
        nbr_ids = sorted({nbr for _rel, nbr, _d in graph.adjacency_of(eid)})
        if not nbr_ids:
            out[eid] = np.tanh(params.w_graph @ states[eid])
            continue
        nbr_states = [states[n] for n in nbr_ids]
        alphas = attention_coeffs(nbr_states, states[eid], params)
        agg = np.zeros_like(states[eid])
        for alpha, h in zip(alphas, nbr_states):
            agg += alpha * (params.w_graph @ h)
        out[eid] = np.tanh(agg)
    return out


def forward_stack(
    graph: KnowledgeGraph,
    initial: dict[str, FusedEmbedding],
    stack: GatStack,
) -> dict[str, np.ndarray]:
    states = {eid: fe.vector for eid, fe in initial.items()}
    for layer in stack.layers:
        states = gat_layer(graph, states, layer)
    return states


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def predict_score(h_user: np.ndarray, h_ad: np.ndarray,
                  params: BilinearParams) -> float:
    """logistic(h_user^T W_r h_ad), a click probability in (0, 1)."""
    if h_user.shape[0] != params.w_pair.shape[0] or h_ad.shape[0] != params.w_pair.shape[1]:
        raise ShapeMismatch("bilinear dimensions do not match the states")
    return logistic(float(h_user @ params.w_pair @ h_ad))
