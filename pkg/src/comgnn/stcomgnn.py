"""Spatiotemporal CoMGNN.

Three components with identical architecture read recent, day-offset and
week-offset input windows.  Each component stacks sandwich blocks
(temporal conv + GLU, ``k_spatial`` CoMGNN layers per time step, temporal
conv + GLU) and collapses the remaining time axis; a trained affine map
fuses the three outputs into a multi-step forecast per node.

Sequence tensors are laid out ``[T, n, B, c]``: time, entity, batch of
forecast origins, channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .hetgraph import HeteroGraph, StateSet
from .layer import CoMGNNConfig, CoMGNNLayer, GraphPlan, ParamStore, check_relation_binding

COMPONENTS = ("recent", "daily", "weekly")


class InsufficientHistory(ValueError):
    pass


@dataclass
class STSeries:
    node_signal: np.ndarray            # [T, N, F_v]
    timestamps: np.ndarray             # epoch minutes, uniform step
    edge_signal: np.ndarray | None = None   # [T, E, F_e]

    def __post_init__(self):
        self.node_signal = np.asarray(self.node_signal, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.node_signal.ndim != 3:
            raise ValueError(f"node_signal must be [T, N, F], got {self.node_signal.shape}")
        if len(self.timestamps) != self.node_signal.shape[0]:
            raise ValueError(f"{len(self.timestamps)} timestamps for {self.node_signal.shape[0]} steps")
        if len(self.timestamps) > 1:
            d = np.diff(self.timestamps)
            if d[0] <= 0 or np.any(d != d[0]):
                raise ValueError("timestamps must be strictly increasing with a uniform step")
        if self.edge_signal is not None:
            self.edge_signal = np.asarray(self.edge_signal, dtype=np.float64)
            if self.edge_signal.shape[0] != self.node_signal.shape[0]:
                raise ValueError("edge_signal and node_signal lengths differ")
        if np.isnan(self.node_signal).any():
            raise ValueError("node_signal contains NaN; run impute_missing first")

    @property
    def step(self) -> int:
        return int(self.timestamps[1] - self.timestamps[0]) if len(self.timestamps) > 1 else 1

    def __len__(self):
        return len(self.timestamps)

    def slice(self, start: int, stop: int) -> "STSeries":
        return STSeries(self.node_signal[start:stop], self.timestamps[start:stop],
                        None if self.edge_signal is None else self.edge_signal[start:stop])


def impute_missing(x: np.ndarray) -> np.ndarray:
    """Forward-fill along time (axis 0), then fill what remains with the global mean."""
    x = np.array(x, dtype=np.float64)
    for t in range(1, len(x)):
        gap = np.isnan(x[t])
        x[t][gap] = x[t - 1][gap]
    if np.isnan(x).any():
        x[np.isnan(x)] = np.nanmean(x) if np.isfinite(np.nanmean(x)) else 0.0
    return x


@dataclass
class STConfig:
    kernel: int = 3
    k_spatial: int = 2
    n_blocks: int = 1
    t_recent: int = 12
    t_daily: int = 5
    t_weekly: int = 5
    horizon: int = 6
    channels: int = 16
    day_min: int = 1440
    week_min: int = 10080
    spatial: CoMGNNConfig = field(default_factory=lambda: CoMGNNConfig(
        common_node_dim=16, common_edge_dim=16, att_dim=16, meta_hidden=16))

    def __post_init__(self):
        need = self.min_window
        for name in ("t_recent", "t_daily", "t_weekly"):
            if getattr(self, name) < need:
                raise ValueError(f"{name}={getattr(self, name)} too short: blocks need at least {need} steps")

    @property
    def min_window(self) -> int:
        return self.n_blocks * 2 * (self.kernel - 1) + 1

    def window(self, component: str) -> int:
        return {"recent": self.t_recent, "daily": self.t_daily, "weekly": self.t_weekly}[component]


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

def window_starts(series: STSeries, cfg: STConfig, target_idx) -> dict:
    """Start index of each component window for forecast origins ``target_idx``.

    The recent window is the ``t_recent`` steps right before the origin; the
    daily and weekly windows are the steps right before the origin shifted
    back by one day and one week.
    """
    target_idx = np.atleast_1d(np.asarray(target_idx, dtype=np.int64))
    step = series.step
    if cfg.day_min % step or cfg.week_min % step:
        raise ValueError(f"period offsets must be multiples of the {step}-minute step")
    day, week = cfg.day_min // step, cfg.week_min // step
    starts = {
        "recent": target_idx - cfg.t_recent,
        "daily": target_idx - day - cfg.t_daily,
        "weekly": target_idx - week - cfg.t_weekly,
    }
    for name, s in starts.items():
        if s.size and s.min() < 0:
            bad = int(target_idx[np.argmin(s)])
            raise InsufficientHistory(
                f"{name} window for origin index {bad} starts before the series "
                f"(needs {bad - int(s.min())} steps of history, have {bad})"
            )
    if target_idx.size and target_idx.max() > len(series):
        raise InsufficientHistory("origin beyond the end of the series")
    return starts


def build_period_windows(series: STSeries, cfg: STConfig, t0: int) -> tuple:
    """Recent, daily and weekly slices for the forecast origin ``t0`` (epoch minutes)."""
    offset = t0 - int(series.timestamps[0])
    if offset % series.step:
        raise ValueError(f"t0={t0} is not on the series grid")
    idx = offset // series.step
    starts = window_starts(series, cfg, [idx])
    return tuple(series.slice(int(starts[c][0]), int(starts[c][0]) + cfg.window(c)) for c in COMPONENTS)


def gather_windows(signal: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """``[T, n, F]`` signal -> ``[length, n, B, F]`` stacked windows."""
    idx = starts[None, :] + np.arange(length)[:, None]       # [L, B]
    w = signal[idx]                                          # [L, B, n, F]
    return np.ascontiguousarray(np.transpose(w, (0, 2, 1, 3)))


def edge_dynamic_features(node_signal: np.ndarray, g: HeteroGraph) -> np.ndarray:
    """Per edge and step: mean and absolute difference of its endpoints' signals.

    ``node_signal`` is ``[T, N, F]``; the result is ``[T, E, 2F]`` laid out
    ``[mean channels || absdiff channels]``.
    """
    a = node_signal[:, g.src]
    b = node_signal[:, g.dst]
    return np.concatenate([(a + b) / 2.0, np.abs(a - b)], axis=-1)


# ---------------------------------------------------------------------------
# model pieces
# ---------------------------------------------------------------------------

def temporal_block(x, kernel) -> T.Tensor:
    """conv1d_time then GLU; ``kernel`` is ``[K, c_in, 2 c_out]``."""
    return T.glu(T.conv1d_time(x, kernel))


class TemporalConv:
    def __init__(self, store: ParamStore, name: str, K: int, c_in: int, c_out: int):
        s = np.sqrt(6.0 / (K * c_in + 2 * c_out)) if K * c_in + c_out else 0.0
        self.kernel = store._add(name, store.rng.uniform(-s, s, size=(K, c_in, 2 * c_out)))

    def __call__(self, x):
        return temporal_block(x, self.kernel)


def _spatial(layers, plan, node_seq: dict, edge_seq: dict, need_edges: bool = True) -> tuple:
    """Apply CoMGNN layers at every time step, with time folded into the batch.

    Without ``need_edges`` the last layer skips its edge evolution and no edge
    sequences are returned.
    """
    if not layers:
        return node_seq, edge_seq

    def fold(x):
        Tn, n = x.shape[0], x.shape[1]
        y = T.transpose(x, (1, 0, 2, 3))                     # [n, T, B, c]
        return T.reshape(y, (n, Tn * x.shape[2], x.shape[3])), (Tn, x.shape[2])

    def unfold(x, tb):
        n = x.shape[0]
        y = T.reshape(x, (n, tb[0], tb[1], x.shape[-1]))
        return T.transpose(y, (1, 0, 2, 3))

    tb = None
    ns, es = {}, {}
    for k, v in node_seq.items():
        ns[k], tb = fold(v)
    for k, v in edge_seq.items():
        es[k], _ = fold(v)
    states = StateSet(ns, es)
    for i, layer in enumerate(layers):
        states = layer.forward(plan, states, need_edges or i < len(layers) - 1)
    nodes = {k: unfold(v, tb) for k, v in states.node_states.items()}
    if not need_edges:
        return nodes, {}
    return nodes, {k: unfold(v, tb) for k, v in states.edge_states.items()}


class SandwichBlock:
    def __init__(self, store: ParamStore, g: HeteroGraph, prefix: str, cfg: STConfig,
                 node_in: dict, edge_in: dict):
        c = cfg.channels
        sp = cfg.spatial
        use_edges = sp.ablation.use_edge_states
        self.t1n = {t.name: TemporalConv(store, f"{prefix}.t1.node.{t.name}", cfg.kernel, node_in[t.name], c)
                    for t in g.node_types}
        self.t2n = {t.name: TemporalConv(store, f"{prefix}.t2.node.{t.name}", cfg.kernel, c, c)
                    for t in g.node_types}
        self.t1e, self.t2e = {}, {}
        if use_edges:
            self.t1e = {r.name: TemporalConv(store, f"{prefix}.t1.edge.{r.name}", cfg.kernel, edge_in[r.name], c)
                        for r in g.edge_types}
            self.t2e = {r.name: TemporalConv(store, f"{prefix}.t2.edge.{r.name}", cfg.kernel, c, c)
                        for r in g.edge_types}
        dims_n = {t.name: c for t in g.node_types}
        dims_e = {r.name: (c if use_edges else 0) for r in g.edge_types}
        self.layers = [CoMGNNLayer(store, g, i + 1, dims_n, dims_e, dims_n, dims_e, sp, prefix=f"{prefix}.spatial.")
                       for i in range(cfg.k_spatial)]
        self.use_edges = use_edges

    def __call__(self, plan, node_seq: dict, edge_seq: dict, need_edges: bool = True) -> tuple:
        ns = {k: f(node_seq[k]) for k, f in self.t1n.items()}
        es = {k: f(edge_seq[k]) for k, f in self.t1e.items()} if self.use_edges else \
            {k: T.Tensor(np.zeros(next(iter(ns.values())).shape[:1] + v.shape[1:3] + (0,)))
             for k, v in edge_seq.items()}
        ns, es = _spatial(self.layers, plan, ns, es, need_edges)
        ns = {k: f(ns[k]) for k, f in self.t2n.items()}
        if not need_edges:
            return ns, {}
        if self.use_edges:
            es = {k: f(es[k]) for k, f in self.t2e.items()}
        else:
            es = {k: T.Tensor(np.zeros(next(iter(ns.values())).shape[:1] + v.shape[1:3] + (0,)))
                  for k, v in es.items()}
        return ns, es


def sandwich_block(block: SandwichBlock, g: HeteroGraph, node_seq: dict, edge_seq: dict) -> tuple:
    return block(GraphPlan(g, block.layers[0].cfg.exclude_self_edge if block.layers else False),
                 node_seq, edge_seq)


class Component:
    """One periodic component: sandwich blocks then a full-width temporal collapse."""

    def __init__(self, store: ParamStore, g: HeteroGraph, name: str, cfg: STConfig,
                 node_in: dict, edge_in: dict):
        self.name = name
        self.blocks = []
        n_in, e_in = dict(node_in), dict(edge_in)
        for b in range(cfg.n_blocks):
            self.blocks.append(SandwichBlock(store, g, f"st.{name}.block.{b}", cfg, n_in, e_in))
            n_in = {k: cfg.channels for k in n_in}
            e_in = {k: cfg.channels for k in e_in}
        remaining = cfg.window(name) - cfg.n_blocks * 2 * (cfg.kernel - 1)
        self.collapse_n = {t.name: TemporalConv(store, f"st.{name}.out.node.{t.name}", remaining,
                                                cfg.channels, cfg.channels) for t in g.node_types}
        self.use_edges = cfg.spatial.ablation.use_edge_states
        self.collapse_e = {}
        if self.use_edges:
            self.collapse_e = {r.name: TemporalConv(store, f"st.{name}.out.edge.{r.name}", remaining,
                                                    cfg.channels, cfg.channels) for r in g.edge_types}

    def __call__(self, plan, node_seq: dict, edge_seq: dict, need_edges: bool = True) -> tuple:
        ns, es = node_seq, edge_seq
        for i, block in enumerate(self.blocks):
            ns, es = block(plan, ns, es, need_edges or i < len(self.blocks) - 1)
        out_n = {k: _drop_time(f(ns[k])) for k, f in self.collapse_n.items()}
        if not need_edges:
            return out_n, {}
        out_e = {k: _drop_time(f(es[k])) for k, f in self.collapse_e.items()}
        return out_n, out_e


def _drop_time(x: T.Tensor) -> T.Tensor:
    return T.reshape(x, x.shape[1:])


class STCoMGNN:
    """Full model: three components and a fusion head producing ``[N, B, horizon]``."""

    def __init__(self, g: HeteroGraph, cfg: STConfig, node_features: int, edge_features: int,
                 seed: int = 0):
        check_relation_binding(g)
        self.cfg = cfg
        self.graph = g
        self.store = ParamStore(np.random.default_rng(seed))
        node_in = {t.name: node_features for t in g.node_types}
        edge_in = {r.name: edge_features for r in g.edge_types}
        self.components = {c: Component(self.store, g, c, cfg, node_in, edge_in) for c in COMPONENTS}
        self.W_f = self.store.weight("st.fuse.W", cfg.horizon, 3 * cfg.channels)
        self.b_f = self.store.bias("st.fuse.b", cfg.horizon)
        self._plan = GraphPlan(g, cfg.spatial.exclude_self_edge)

    @property
    def params(self):
        return self.store.params

    def component_params(self, name: str) -> list:
        return [k for k in self.params if k.startswith(f"st.{name}.")]

    def _split_nodes(self, x: np.ndarray) -> dict:
        g = self.graph
        return {t.name: T.Tensor(x[:, g.nodes_of_type(t.id)]) for t in g.node_types}

    def _split_edges(self, x: np.ndarray | None, length: int, batch: int) -> dict:
        g = self.graph
        if x is None:
            return {r.name: T.Tensor(np.zeros((length, len(g.type_edges[r.id]), batch, 0)))
                    for r in g.edge_types}
        return {r.name: T.Tensor(x[:, g.type_edges[r.id]]) for r in g.edge_types}

    def component_forward(self, name: str, node_win: np.ndarray, edge_win: np.ndarray | None,
                          need_edges: bool = True) -> tuple:
        """``node_win`` is ``[T, N, B, F_v]``; returns per-type ``[n, B, c]`` outputs.

        The edge outputs never reach the forecast, so ``forward`` asks for
        nodes only and the work that feeds just the edge head is skipped.
        """
        ns = self._split_nodes(node_win)
        es = self._split_edges(edge_win, node_win.shape[0], node_win.shape[2])
        return self.components[name](self._plan, ns, es, need_edges)

    def fuse_and_predict(self, outs: list) -> T.Tensor:
        """Concatenate component node outputs (global node order) and map to the horizon."""
        per = []
        for out_n in outs:
            per.append(T.concat([out_n[t.name] for t in self.graph.node_types], axis=0))
        return T.linear(T.concat(per, axis=-1), self.W_f, self.b_f)

    def forward(self, windows: dict) -> T.Tensor:
        """``windows[c] = (node_win, edge_win)`` for each component -> ``[N, B, horizon]``."""
        outs = [self.component_forward(c, *windows[c], need_edges=False)[0] for c in COMPONENTS]
        return self.fuse_and_predict(outs)
