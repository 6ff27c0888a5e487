"""Seeded end-to-end gradient checks on toy models.

Both checks build a graph with at most 8 nodes, two node types and two
relations plus their reverses, then compare analytic and central-difference
gradients of the task loss for every parameter tensor.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .datagen import random_hetero_graph
from .layer import CoMGNN, CoMGNNConfig, EdgeReadout
from .stcomgnn import COMPONENTS, STConfig, STCoMGNN, edge_dynamic_features
from .training import MAPE_FLOOR, l2_penalty, mape_loss, ranking_loss

TOLERANCE = 1e-5

SMALL = dict(node_dim=3, edge_dim=2, common_node_dim=2, common_edge_dim=2, att_dim=2, meta_hidden=2)


@dataclass
class CheckResult:
    model: str
    param: str
    size: int
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def toy_graph(seed: int):
    rng = np.random.default_rng(seed)
    return random_hetero_graph(rng, n_nodes=6, n_edges=7, with_reverse=True), rng


def comgnn_check(seed: int = 0, lam: float = 1e-5) -> list:
    """2-layer CoMGNN with an edge readout under the ranking loss."""
    g, rng = toy_graph(seed)
    cfg = CoMGNNConfig(num_layers=2, **SMALL)
    net = CoMGNN(g, cfg, seed=seed)
    r = g.edge_type("ab")
    readout = EdgeReadout(net.store, 2 * cfg.node_dim + cfg.edge_dim)
    cand = g.type_edges[r.id]
    labels = np.zeros(len(cand))
    labels[rng.integers(len(cand))] = 1.0
    params = net.params

    def loss():
        s = net.forward(g)
        h_a = s.node_states["a"]
        h_b = s.node_states["b"]
        score = readout(T.take(h_a, g.node_local[g.src[cand]]),
                        T.take(s.edge_states["ab"], g.edge_local[cand]),
                        T.take(h_b, g.node_local[g.dst[cand]]))
        return T.add(ranking_loss(score, labels), T.mul(l2_penalty(params.values()), lam))

    return [CheckResult("comgnn", name, p.size, T.grad_check(loss, [p]))
            for name, p in params.items()]


def stcomgnn_check(seed: int = 0, lam: float = 1e-5) -> list:
    """1-block ST-CoMGNN on random positive series under MAPE."""
    g, rng = toy_graph(seed)
    cfg = STConfig(kernel=2, k_spatial=1, n_blocks=1, t_recent=3, t_daily=3, t_weekly=3,
                   horizon=2, channels=2, spatial=CoMGNNConfig(num_layers=1, **SMALL))
    net = STCoMGNN(g, cfg, 1, 2, seed=seed)
    B = 2
    wins = {}
    for c in COMPONENTS:
        L = cfg.window(c)
        x = rng.uniform(1.0, 3.0, size=(L, g.num_nodes, B, 1))
        e = edge_dynamic_features(x.reshape(L, g.num_nodes, B)[..., None][:, :, 0], g)
        wins[c] = (x, np.repeat(e[:, :, None, :], B, axis=2))
    y = rng.uniform(2.0, 4.0, size=(g.num_nodes, B, cfg.horizon)) + MAPE_FLOOR
    params = net.params
    with T.no_grad():
        frozen = {c: net.component_forward(c, *wins[c])[0] for c in COMPONENTS}

    out = []
    for name, p in params.items():
        comp = name.split(".")[1]
        live = {comp} if comp in COMPONENTS else set(COMPONENTS)
        out.append(CheckResult("stcomgnn", name, p.size, T.grad_check(_component_loss(
            net, wins, frozen, live, y, params, lam), [p])))
    return out


def _component_loss(net, wins, frozen, live, y, params, lam):
    """Task loss recomputing only the ``live`` components.

    A component's parameters cannot move the other components' outputs, so
    those are held as constants while its coordinates are perturbed.
    """
    def loss():
        outs = [net.component_forward(c, *wins[c])[0] if c in live else frozen[c] for c in COMPONENTS]
        return mape_loss(net.fuse_and_predict(outs), y, params.values(), lam)
    return loss


def run_all(seed: int = 0) -> list:
    return comgnn_check(seed) + stcomgnn_check(seed)


def group_of(name: str) -> str:
    """Parameter group used in summaries: the name up to the relation/type level."""
    parts = name.split(".")
    if parts[0] == "st":
        return ".".join(parts[:3])
    return ".".join(parts[:4]) if len(parts) > 4 else ".".join(parts[:-1])
