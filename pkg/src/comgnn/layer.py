"""CoMGNN aggregation layers.

One layer updates node and edge hidden states together from the previous
layer's states.  Node evolution aggregates relation-specific messages from
incident edges weighted by meta attention; edge evolution aggregates
messages from the edges sharing an endpoint.  Attention parameters are
produced per edge by small meta-learner networks reading the raw
attributes of the edge and its endpoints.

Hidden states are held as ``[n, B, d]`` tensors internally (``B`` is a
batch of independent signals over the same graph, e.g. time steps); the
public entry points accept and return plain ``[n, d]`` matrices too.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .hetgraph import (
    HeteroGraph,
    StateSet,
    collapse_types,
    meta_knowledge_matrix,
    strip_edge_attributes,
)


@dataclass(frozen=True)
class AblationConfig:
    use_edge_states: bool = True
    use_meta_attention: bool = True
    collapse_types: bool = False

    @classmethod
    def from_flags(cls, no_het=False, no_edge_info=False, no_meta_att=False):
        return cls(use_edge_states=not no_edge_info, use_meta_attention=not no_meta_att,
                   collapse_types=no_het)

    def prepare_graph(self, g: HeteroGraph) -> HeteroGraph:
        """Graph as seen by a model under this ablation."""
        if not self.use_edge_states:
            g = strip_edge_attributes(g)
        if self.collapse_types:
            g = collapse_types(g)
        return g

    @property
    def label(self) -> str:
        parts = [name for name, off in (("no-het", self.collapse_types),
                                        ("no-edge-info", not self.use_edge_states),
                                        ("no-meta-att", not self.use_meta_attention)) if off]
        return "+".join(parts) or "full"


@dataclass
class CoMGNNConfig:
    node_dim: int = 32
    edge_dim: int = 32
    common_node_dim: int = 16
    common_edge_dim: int = 16
    att_dim: int = 16
    meta_hidden: int = 16
    num_layers: int = 2
    slope: float = T.DEFAULT_SLOPE
    exclude_self_edge: bool = False
    ablation: AblationConfig = field(default_factory=AblationConfig)


def glorot(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    s = np.sqrt(6.0 / (in_dim + out_dim)) if in_dim + out_dim else 0.0
    return rng.uniform(-s, s, size=(out_dim, in_dim))


class ParamStore:
    """Ordered name -> Tensor mapping shared by all modules of one model."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: "OrderedDict[str, T.Tensor]" = OrderedDict()

    def weight(self, name, out_dim, in_dim) -> T.Tensor:
        return self._add(name, glorot(self.rng, out_dim, in_dim))

    def bias(self, name, dim) -> T.Tensor:
        return self._add(name, np.zeros(dim))

    def _add(self, name, data) -> T.Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name}")
        t = T.parameter(data, name=name)
        self.params[name] = t
        return t


class MetaLearnerNet:
    """affine -> Mish -> affine, output reshaped to ``out_shape``."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, hidden: int, out_shape: tuple):
        self.out_shape = tuple(out_shape)
        out = int(np.prod(out_shape))
        self.W0 = store.weight(prefix + ".0.W", hidden, in_dim)
        self.b0 = store.bias(prefix + ".0.b", hidden)
        self.W1 = store.weight(prefix + ".1.W", out, hidden)
        self.b1 = store.bias(prefix + ".1.b", out)

    def __call__(self, mk) -> T.Tensor:
        h = T.mish(T.linear(mk, self.W0, self.b0))
        y = T.linear(h, self.W1, self.b1)
        return T.reshape(y, (y.shape[0],) + self.out_shape)


class GraphPlan:
    """Index arrays describing who aggregates from whom on one graph.

    *Entries* are (target node, incident edge) pairs, one per endpoint of
    each edge (one for a self-loop), listed by ascending edge id with the
    source-side entry first.  Each entry's message input is
    ``[h_target || h_edge || h_other]``.  *Pairs* are (target edge, entry)
    combinations whose entry target is an endpoint of the target edge; they
    drive edge evolution.
    """

    def __init__(self, g: HeteroGraph, exclude_self_edge: bool = False):
        self.graph = g
        E = g.num_edges
        loops = g.src == g.dst
        eids = np.arange(E)
        # entry order: ascending edge id, fwd (target = src) before bwd
        fwd_pos = eids + np.cumsum(~loops) - (~loops)
        bwd_pos = fwd_pos + 1
        J = int(E + (~loops).sum())
        self.num_entries = J
        self.entry_target = np.empty(J, dtype=np.int64)
        self.entry_other = np.empty(J, dtype=np.int64)
        self.entry_edge = np.empty(J, dtype=np.int64)
        self.entry_target[fwd_pos] = g.src
        self.entry_other[fwd_pos] = g.dst
        self.entry_edge[fwd_pos] = eids
        nl = ~loops
        self.entry_target[bwd_pos[nl]] = g.dst[nl]
        self.entry_other[bwd_pos[nl]] = g.src[nl]
        self.entry_edge[bwd_pos[nl]] = eids[nl]
        self.query_entry = fwd_pos

        # groups by (relation, direction); concatenating groups in this order
        # and applying `group_to_entry` restores entry order.
        self.groups = []
        order = []
        for r in g.edge_types:
            ids = g.type_edges[r.id]
            for direction in ("fwd", "bwd"):
                if direction == "fwd":
                    pos = fwd_pos[ids]
                    t_type, o_type = r.src_type, r.dst_type
                else:
                    keep = ids[~loops[ids]]
                    pos = bwd_pos[keep]
                    t_type, o_type = r.dst_type, r.src_type
                self.groups.append(dict(
                    rel=r.id, direction=direction, pos=pos,
                    target_type=t_type, other_type=o_type,
                    target_local=g.node_local[self.entry_target[pos]],
                    other_local=g.node_local[self.entry_other[pos]],
                    edge_local=g.edge_local[self.entry_edge[pos]],
                ))
                order.append(pos)
        grouped = np.concatenate(order) if order else np.zeros(0, dtype=np.int64)
        self.group_to_entry = np.argsort(grouped, kind="stable")

        # neighbour pairs for edge evolution, ordered by target edge, then
        # anchor (src side first), then entry (ascending edge id)
        entries_by_node = [[] for _ in range(g.num_nodes)]
        for j in range(J):
            entries_by_node[self.entry_target[j]].append(j)
        pk, pj = [], []
        for k in range(E):
            anchors = (g.src[k],) if g.src[k] == g.dst[k] else (g.src[k], g.dst[k])
            for anchor in anchors:
                for j in entries_by_node[anchor]:
                    if exclude_self_edge and self.entry_edge[j] == k:
                        continue
                    pk.append(k)
                    pj.append(j)
        self.pair_edge = np.asarray(pk, dtype=np.int64)
        self.pair_entry = np.asarray(pj, dtype=np.int64)

        deg = np.bincount(self.entry_target, minlength=g.num_nodes)
        self.uniform_node_att = 1.0 / np.maximum(deg, 1)[self.entry_target]
        cnt = np.bincount(self.pair_edge, minlength=E)
        self.uniform_edge_att = 1.0 / np.maximum(cnt, 1)[self.pair_edge]

        self.meta_knowledge = [meta_knowledge_matrix(g, r.id) for r in g.edge_types]


def _to3(x: T.Tensor) -> T.Tensor:
    return T.reshape(x, (x.shape[0], 1, x.shape[1])) if x.ndim == 2 else x


def _expand(t: T.Tensor, nb: int) -> T.Tensor:
    """[J, d] -> [J, 1, d] so it broadcasts over a batch axis."""
    return T.reshape(t, (t.shape[0],) + (1,) * nb + t.shape[1:])


class CoMGNNLayer:
    """One co-evolution layer with per-relation and per-node-type parameters."""

    def __init__(self, store: ParamStore, g: HeteroGraph, index: int, node_in: dict, edge_in: dict,
                 node_out: dict, edge_out: dict, cfg: CoMGNNConfig, prefix: str = ""):
        self.index = index
        self.cfg = cfg
        self.node_in, self.edge_in = dict(node_in), dict(edge_in)
        self.node_out, self.edge_out = dict(node_out), dict(edge_out)
        self.use_edges = cfg.ablation.use_edge_states
        self.use_meta = cfg.ablation.use_meta_attention
        self.node_types = list(g.node_types)
        self.edge_types = list(g.edge_types)
        dv, de = cfg.common_node_dim, cfg.common_edge_dim
        lp = f"{prefix}layer.{index}"
        mp = f"{prefix}meta.{index}"
        self.rel = {}
        for r in g.edge_types:
            s_name = g.node_types[r.src_type].name
            d_name = g.node_types[r.dst_type].name
            d_e = self.edge_in[r.name] if self.use_edges else 0
            width = self.node_in[s_name] + d_e + self.node_in[d_name]
            p = {"width": width}
            p["W"] = store.weight(f"{lp}.rel.{r.name}.W", dv, width)
            p["b"] = store.bias(f"{lp}.rel.{r.name}.b", dv)
            if self.use_edges:
                p["W_edge"] = store.weight(f"{lp}.rel.{r.name}.W_edge", de, width)
                p["b_edge"] = store.bias(f"{lp}.rel.{r.name}.b_edge", de)
                p["W_star"] = store.weight(f"{lp}.rel.{r.name}.W_star", self.edge_out[r.name], de + d_e)
                p["b_star"] = store.bias(f"{lp}.rel.{r.name}.b_star", self.edge_out[r.name])
            if self.use_meta:
                mk = g.node_types[r.src_type].attr_dim + r.attr_dim + g.node_types[r.dst_type].attr_dim
                h = cfg.meta_hidden
                p["gw"] = MetaLearnerNet(store, f"{mp}.rel.{r.name}.gw", mk, h, (width,))
                p["gb"] = MetaLearnerNet(store, f"{mp}.rel.{r.name}.gb", mk, h, (1,))
                if self.use_edges:
                    p["gtw"] = MetaLearnerNet(store, f"{mp}.rel.{r.name}.gtw", mk, h,
                                              (cfg.att_dim, width))
            self.rel[r.name] = p
        self.node = {}
        for t in g.node_types:
            self.node[t.name] = {
                "W": store.weight(f"{lp}.node.{t.name}.W", self.node_out[t.name], dv + self.node_in[t.name]),
                "b": store.bias(f"{lp}.node.{t.name}.b", self.node_out[t.name]),
            }

    # -- pieces -------------------------------------------------------------
    def _entry_inputs(self, plan: GraphPlan, states: StateSet) -> list:
        xs = []
        for grp in plan.groups:
            r = self.edge_types[grp["rel"]]
            tname = self.node_types[grp["target_type"]].name
            oname = self.node_types[grp["other_type"]].name
            parts = [T.take(states.node_states[tname], grp["target_local"])]
            if self.use_edges:
                parts.append(T.take(states.edge_states[r.name], grp["edge_local"]))
            parts.append(T.take(states.node_states[oname], grp["other_local"]))
            xs.append(T.concat(parts, axis=-1))
        return xs

    def _ordered(self, plan: GraphPlan, per_group: list) -> T.Tensor:
        return T.take(T.concat(per_group, axis=0), plan.group_to_entry)

    def node_attention(self, plan: GraphPlan, xs: list, nb: int):
        """Attention weights of every entry over its target's neighbourhood."""
        if not self.use_meta:
            w = plan.uniform_node_att.reshape((-1,) + (1,) * nb)
            return T.Tensor(np.broadcast_to(w, (len(w),) + xs[0].shape[1:-1]).copy() if xs else w)
        scores = []
        cache = {}
        for grp, x in zip(plan.groups, xs):
            r = self.edge_types[grp["rel"]]
            if r.name not in cache:
                mk = T.Tensor(plan.meta_knowledge[r.id])
                cache[r.name] = (self.rel[r.name]["gw"](mk), self.rel[r.name]["gb"](mk))
            M, b = cache[r.name]
            Mg = _expand(T.take(M, grp["edge_local"]), nb)
            bg = T.reshape(T.take(b, grp["edge_local"]), (len(grp["edge_local"]),) + (1,) * nb)
            scores.append(T.leaky_relu(T.add(T.rowdot(x, Mg), bg), self.cfg.slope))
        beta = self._ordered(plan, scores)
        return T.segment_softmax(beta, plan.entry_target, plan.graph.num_nodes)

    def node_evolve(self, plan: GraphPlan, states: StateSet, xs: list, nb: int) -> dict:
        g = plan.graph
        alpha = self.node_attention(plan, xs, nb)
        msgs = [T.linear(x, self.rel[self.edge_types[grp["rel"]].name]["W"],
                         self.rel[self.edge_types[grp["rel"]].name]["b"])
                for grp, x in zip(plan.groups, xs)]
        if msgs:
            m = self._ordered(plan, msgs)
            agg = T.segment_sum(T.mul(T.reshape(alpha, alpha.shape + (1,)), m),
                                plan.entry_target, g.num_nodes)
        else:
            ref = next(iter(states.node_states.values()))
            agg = T.Tensor(np.zeros((g.num_nodes,) + ref.shape[1:-1] + (self.cfg.common_node_dim,)))
        out = {}
        for t in self.node_types:
            rows = g.nodes_of_type(t.id)
            a = T.take(agg, rows)
            h = states.node_states[t.name]
            p = self.node[t.name]
            out[t.name] = T.mish(T.linear(T.concat([a, h], axis=-1), p["W"], p["b"]))
        return out

    def edge_attention(self, plan: GraphPlan, xs: list, nb: int):
        if not self.use_meta:
            w = plan.uniform_edge_att.reshape((-1,) + (1,) * nb)
            return T.Tensor(np.broadcast_to(w, (len(w),) + xs[0].shape[1:-1]).copy())
        proj = []
        cache = {}
        for grp, x in zip(plan.groups, xs):
            r = self.edge_types[grp["rel"]]
            if r.name not in cache:
                cache[r.name] = self.rel[r.name]["gtw"](T.Tensor(plan.meta_knowledge[r.id]))
            Mt = T.take(cache[r.name], grp["edge_local"])          # [J, att, width]
            proj.append(T.sigmoid(T.matmul(x, T.swap_last(Mt))))    # [J, B, att]
        h_t = self._ordered(plan, proj)
        q = T.take(h_t, plan.query_entry)
        beta = T.rowdot(T.take(q, plan.pair_edge), T.take(h_t, plan.pair_entry))
        return T.segment_softmax(beta, plan.pair_edge, plan.graph.num_edges)

    def edge_evolve(self, plan: GraphPlan, states: StateSet, xs: list, nb: int) -> dict:
        g = plan.graph
        if g.num_edges == 0:
            return {r.name: T.Tensor(np.zeros((0,) + states.edge_states[r.name].shape[1:-1]
                                              + (self.edge_out[r.name],)))
                    for r in self.edge_types}
        alpha = self.edge_attention(plan, xs, nb)
        msgs = [T.linear(x, self.rel[self.edge_types[grp["rel"]].name]["W_edge"],
                         self.rel[self.edge_types[grp["rel"]].name]["b_edge"])
                for grp, x in zip(plan.groups, xs)]
        m = self._ordered(plan, msgs)
        agg = T.segment_sum(T.mul(T.reshape(alpha, alpha.shape + (1,)), T.take(m, plan.pair_entry)),
                            plan.pair_edge, g.num_edges)
        out = {}
        for r in self.edge_types:
            a = T.take(agg, g.type_edges[r.id])
            h = states.edge_states[r.name]
            p = self.rel[r.name]
            out[r.name] = T.mish(T.linear(T.concat([a, h], axis=-1), p["W_star"], p["b_star"]))
        return out

    def forward(self, plan: GraphPlan, states: StateSet, need_edges: bool = True) -> StateSet:
        """Synchronous update: both evolutions read only ``states``.

        With ``need_edges=False`` the edge evolution is skipped and the
        returned edge states are the inputs, untouched; only use it when no
        consumer reads this layer's edge output.
        """
        nb = next(iter(states.node_states.values())).ndim - 2
        self._check_dims(states)
        xs = self._entry_inputs(plan, states)
        nodes = self.node_evolve(plan, states, xs, nb)
        if self.use_edges and need_edges:
            edges = self.edge_evolve(plan, states, xs, nb)
        else:
            edges = {k: v for k, v in states.edge_states.items()}
        return StateSet(nodes, edges, states.layer + 1)

    def _check_dims(self, states: StateSet):
        for t in self.node_types:
            d = states.node_states[t.name].shape[-1]
            if d != self.node_in[t.name]:
                raise T.ShapeError(f"layer {self.index}: node type {t.name!r} state dim {d}, "
                                   f"expected {self.node_in[t.name]}")
        if self.use_edges:
            for r in self.edge_types:
                d = states.edge_states[r.name].shape[-1]
                if d != self.edge_in[r.name]:
                    raise T.ShapeError(f"layer {self.index}: relation {r.name!r} state dim {d}, "
                                       f"expected {self.edge_in[r.name]}")


class EdgeReadout:
    """Affine score of ``[h_src || h_edge || h_dst]`` for edges of one relation."""

    def __init__(self, store: ParamStore, in_dim: int, prefix: str = "readout"):
        self.W = store.weight(prefix + ".W", 1, in_dim)
        self.b = store.bias(prefix + ".b", 1)

    def __call__(self, h_src, h_edge, h_dst) -> T.Tensor:
        parts = [h_src] + ([h_edge] if h_edge is not None and h_edge.shape[-1] else []) + [h_dst]
        return T.reshape(T.linear(T.concat(parts, axis=-1), self.W, self.b), (h_src.shape[0],))


def check_relation_binding(g: HeteroGraph) -> None:
    for r in g.edge_types:
        ids = g.type_edges[r.id]
        if ids.size and (np.any(g.node_type_of[g.src[ids]] != r.src_type)
                         or np.any(g.node_type_of[g.dst[ids]] != r.dst_type)):
            raise ValueError(f"relation {r.name!r} joins more than one (src, dst) node-type pair")


class CoMGNN:
    """A stack of CoMGNN layers bound to one graph schema.

    ``graph`` must already be prepared for the ablation (see
    :meth:`AblationConfig.prepare_graph`); models built for the same schema
    can run on any graph sharing it.
    """

    def __init__(self, graph: HeteroGraph, cfg: CoMGNNConfig | None = None, seed: int = 0,
                 node_in: dict | None = None, edge_in: dict | None = None,
                 store: ParamStore | None = None, prefix: str = ""):
        self.cfg = cfg or CoMGNNConfig()
        check_relation_binding(graph)
        self.store = store or ParamStore(np.random.default_rng(seed))
        self.node_types = list(graph.node_types)
        self.edge_types = list(graph.edge_types)
        use_edges = self.cfg.ablation.use_edge_states
        n_in = dict(node_in) if node_in else {t.name: t.attr_dim for t in graph.node_types}
        e_in = dict(edge_in) if edge_in else {r.name: r.attr_dim for r in graph.edge_types}
        if not use_edges:
            e_in = {k: 0 for k in e_in}
        self.layers = []
        for l in range(1, self.cfg.num_layers + 1):
            n_out = {t.name: self.cfg.node_dim for t in graph.node_types}
            e_out = {r.name: (self.cfg.edge_dim if use_edges else 0) for r in graph.edge_types}
            self.layers.append(CoMGNNLayer(self.store, graph, l, n_in, e_in, n_out, e_out,
                                           self.cfg, prefix))
            n_in, e_in = n_out, e_out
        self.out_node_dims, self.out_edge_dims = n_in, e_in
        self._plans = {}

    @property
    def params(self):
        return self.store.params

    def plan(self, g: HeteroGraph) -> GraphPlan:
        key = id(g)
        hit = self._plans.get(key)
        if hit is None or hit.graph is not g:
            hit = self._plans[key] = GraphPlan(g, self.cfg.exclude_self_edge)
        return hit

    def forward(self, g: HeteroGraph, states: StateSet | None = None) -> StateSet:
        plan = self.plan(g)
        states = states or g.initial_states()
        squeeze = next(iter(states.node_states.values())).ndim == 2
        if squeeze:
            states = StateSet({k: _to3(v) for k, v in states.node_states.items()},
                              {k: _to3(v) for k, v in states.edge_states.items()}, states.layer)
        if not self.cfg.ablation.use_edge_states:
            states = StateSet(states.node_states,
                              {k: T.Tensor(np.zeros(v.shape[:-1] + (0,))) for k, v in
                               states.edge_states.items()}, states.layer)
        for layer in self.layers:
            states = layer.forward(plan, states)
        if squeeze:
            states = StateSet({k: T.reshape(v, (v.shape[0], v.shape[-1])) for k, v in states.node_states.items()},
                              {k: T.reshape(v, (v.shape[0], v.shape[-1])) for k, v in states.edge_states.items()},
                              states.layer)
        return states


def layer_forward(layer: CoMGNNLayer, g: HeteroGraph, states: StateSet) -> StateSet:
    """Run one layer on ``[n, d]`` states and return ``[n, d]`` states."""
    plan = GraphPlan(g, layer.cfg.exclude_self_edge)
    s3 = StateSet({k: _to3(v) for k, v in states.node_states.items()},
                  {k: _to3(v) for k, v in states.edge_states.items()}, states.layer)
    out = layer.forward(plan, s3)
    return StateSet({k: T.reshape(v, (v.shape[0], v.shape[-1])) for k, v in out.node_states.items()},
                    {k: T.reshape(v, (v.shape[0], v.shape[-1])) for k, v in out.edge_states.items()},
                    out.layer)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def describe_params(params) -> list:
    """``(name, shape)`` for every parameter, in creation order."""
    return [(name, tuple(t.shape)) for name, t in params.items()]


def save_checkpoint(params, path, extra: dict | None = None) -> None:
    payload = {
        "params": {name: {"shape": list(t.shape), "data": [float(x) for x in t.data.reshape(-1)]}
                   for name, t in params.items()},
    }
    if extra:
        payload["meta"] = extra
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(params, path) -> dict:
    """Copy values from ``path`` into ``params`` in place; returns the meta block."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    stored = payload["params"]
    missing = [k for k in params if k not in stored]
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, t in params.items():
        shape = tuple(stored[name]["shape"])
        if shape != t.shape:
            raise ValueError(f"checkpoint shape {shape} for {name} != model shape {t.shape}")
        t.data[...] = np.asarray(stored[name]["data"], dtype=np.float64).reshape(shape)
    return payload.get("meta", {})


def with_ablation(cfg: CoMGNNConfig, ablation: AblationConfig) -> CoMGNNConfig:
    return replace(cfg, ablation=ablation)
