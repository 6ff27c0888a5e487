"""Plain mean-aggregation GNN with a skip connection.

This is what CoMGNN reduces to when types are erased, edge states are off and
attention is uniform.  It is written independently of the layer code (dense
adjacency built by looping over edges) and reads its weights from a parameter
dict with the same names, so both models can be run from one initialisation.
Intended for small graphs: the adjacency is dense.
"""

import numpy as np

from . import tensor as T
from .hetgraph import HeteroGraph
from .layer import AblationConfig, CoMGNNConfig, with_ablation


FULL_ABLATION = AblationConfig(use_edge_states=False, use_meta_attention=False, collapse_types=True)


def padded_node_features(g: HeteroGraph) -> np.ndarray:
    """Every node gets all type blocks side by side, zeros outside its own block."""
    widths = [t.attr_dim for t in g.node_types]
    x = np.zeros((g.num_nodes, sum(widths)))
    for v in range(g.num_nodes):
        t = g.node_types[int(g.node_type_of[v])]
        start = sum(widths[:t.id])
        x[v, start:start + t.attr_dim] = g.node_attrs[t.name][int(g.node_local[v])]
    return x


def mean_adjacency(g: HeteroGraph) -> tuple:
    """``(A, has_nb)``: row-normalised neighbour counts and a 0/1 mask of non-isolated nodes.

    Each edge contributes one neighbour to each endpoint; a self-loop counts once.
    """
    n = g.num_nodes
    counts = np.zeros((n, n))
    for s, d in zip(g.src.tolist(), g.dst.tolist()):
        counts[s, d] += 1.0
        if s != d:
            counts[d, s] += 1.0
    deg = counts.sum(axis=1)
    has_nb = (deg > 0).astype(float)
    A = counts / np.where(deg > 0, deg, 1.0)[:, None]
    return A, has_nb


class ReferenceGNN:
    """Forward pass of the homogeneous reduction, parameterised by name."""

    def __init__(self, g: HeteroGraph, params: dict, num_layers: int, prefix: str = ""):
        self.x0 = padded_node_features(g)
        self.A, self.has_nb = mean_adjacency(g)
        self.params = params
        self.num_layers = num_layers
        self.prefix = prefix

    def node_states(self, x0=None) -> T.Tensor:
        h = T.as_tensor(self.x0 if x0 is None else x0)
        A = T.Tensor(self.A)
        mask = T.Tensor(self.has_nb[:, None])
        for l in range(1, self.num_layers + 1):
            p = f"{self.prefix}layer.{l}"
            W, b = self.params[f"{p}.rel.edge.W"], self.params[f"{p}.rel.edge.b"]
            d = h.shape[-1]
            W_self = T.take(W, np.arange(d), axis=1)
            W_nb = T.take(W, np.arange(d, 2 * d), axis=1)
            own = T.mul(T.linear(h, W_self, b), mask)
            msg = T.add(own, T.matmul(A, T.linear(h, W_nb)))
            h = T.mish(T.linear(T.concat([msg, h], axis=-1),
                                self.params[f"{p}.node.node.W"], self.params[f"{p}.node.node.b"]))
        return h


class ReferenceRankingModel:
    """Drop-in for the ranking model under full ablation, scored by :class:`ReferenceGNN`."""

    def __init__(self, graph: HeteroGraph, cfg: CoMGNNConfig, seed: int = 0):
        from .training import RankingModel
        cfg = with_ablation(cfg, FULL_ABLATION)
        # borrow the initialisation so both models start from identical weights
        self._twin = RankingModel(graph, cfg, seed=seed)
        self.cfg = cfg
        self.graph = graph
        self.ref = ReferenceGNN(graph, self._twin.params, cfg.num_layers)

    @property
    def params(self):
        return self._twin.params

    def score_edges(self, edge_ids) -> T.Tensor:
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        h = self.ref.node_states()
        hs = T.take(h, self.graph.src[edge_ids])
        hd = T.take(h, self.graph.dst[edge_ids])
        W, b = self.params["readout.W"], self.params["readout.b"]
        return T.reshape(T.linear(T.concat([hs, hd], axis=-1), W, b), (len(edge_ids),))
