"""Deterministic synthetic tasks with planted structure.

``gen_ranking_task`` builds one small heterogeneous graph per target route
(driver, target route, historical routes and orders, candidate orders) and
labels candidates with a fixed linear rule.  ``gen_diffusion_task`` builds a
multi-relational road graph and a node signal driven by a daily cycle plus
a damped, relation-weighted diffusion of deviations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hetgraph import (
    EdgeType,
    HeteroGraph,
    NodeType,
    add_reverse_relations,
    disjoint_union,
    load_graph,
    save_graph,
)
from .stcomgnn import STSeries, edge_dynamic_features

# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------

RANKING_NODE_TYPES = [
    NodeType(0, "driver", 3, ("age", "rating", "tenure")),
    NodeType(1, "route", 4, ("origin_x", "origin_y", "dest_x", "dest_y")),
    NodeType(2, "order", 5, ("origin_x", "origin_y", "dest_x", "dest_y", "fare")),
]
RANKING_EDGE_TYPES = [
    EdgeType(0, "create", 2, 0, 1, ("weekday", "hour")),
    EdgeType(1, "be_created_by", 2, 1, 0, ("weekday", "hour")),
    EdgeType(2, "historical_route_of", 1, 1, 1, ("interval",)),
    EdgeType(3, "consider", 2, 1, 2, ("detour", "departure_gap")),
]
CONSIDER = "consider"

# planted scoring rule over [route attrs || order attrs || consider attrs]
PLANTED_ROUTE_W = np.array([0.3, -0.2, 0.1, 0.4])
PLANTED_ORDER_W = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
PLANTED_EDGE_W = np.array([-1.5, -1.0])


@dataclass
class SynthRankingSpec:
    n_routes: int = 200
    mu: int = 4
    candidate_count: int = 20
    positive_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.candidate_count < 2:
            raise ValueError("candidate_count must be >= 2")


@dataclass
class RankingInstance:
    target: int                 # target route node id
    candidates: np.ndarray      # consider edge ids
    labels: np.ndarray          # 0/1 per candidate
    split: str = "train"
    graph_index: int = 0

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.candidates) < 1:
            raise ValueError("a ranking instance needs at least one candidate")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")


@dataclass
class RankingTask:
    spec: SynthRankingSpec
    graphs: list                # one per target, ids local to each graph
    instances: list             # ids local to graphs[instance.graph_index]

    def union(self) -> tuple:
        """Disjoint union graph plus instances re-expressed in union ids."""
        g, node_maps, edge_maps = disjoint_union(self.graphs)
        out = [RankingInstance(int(node_maps[i.graph_index][i.target]),
                               edge_maps[i.graph_index][i.candidates], i.labels, i.split, i.graph_index)
               for i in self.instances]
        return g, out


def planted_score(route_attr, order_attr, edge_attr) -> np.ndarray:
    return (np.asarray(route_attr) @ PLANTED_ROUTE_W + np.asarray(order_attr) @ PLANTED_ORDER_W
            + np.asarray(edge_attr) @ PLANTED_EDGE_W)


def _split_of(i: int, n: int) -> str:
    # earlier 80% of routes train (last eighth of it held for validation), later 20% test
    if i < int(round(0.7 * n)):
        return "train"
    if i < int(round(0.8 * n)):
        return "valid"
    return "test"


def _order_attrs(rng, route, n):
    o = np.empty((n, 5))
    o[:, 0:2] = route[0:2] + rng.normal(0, 0.3, size=(n, 2))
    o[:, 2:4] = rng.uniform(0, 1, size=(n, 2))
    o[:, 4] = rng.uniform(0, 1, size=n)
    return o


def _consider_attrs(rng, route, orders):
    detour = np.linalg.norm(orders[:, 0:2] - route[0:2], axis=1) + \
        np.linalg.norm(orders[:, 2:4] - route[2:4], axis=1)
    gap = np.abs(rng.normal(0, 0.5, size=len(orders)))
    return np.stack([detour, gap], axis=1)


def gen_ranking_task(spec: SynthRankingSpec) -> RankingTask:
    rng = np.random.default_rng(spec.seed)
    graphs, instances = [], []
    C, mu = spec.candidate_count, spec.mu
    n_pos = max(1, int(round(spec.positive_fraction * C)))
    for i in range(spec.n_routes):
        driver = rng.normal(0, 1, size=(1, 3))
        routes = rng.uniform(0, 1, size=(1 + mu, 4))        # row 0 is the target
        hist_orders = np.vstack([_order_attrs(rng, routes[1 + h], 1) for h in range(mu)]) \
            if mu else np.zeros((0, 5))
        cand = _order_attrs(rng, routes[0], C)
        orders = np.vstack([hist_orders, cand])
        # node ids: driver 0, routes 1..1+mu, orders after
        drv, tgt = 0, 1
        route_ids = np.arange(1, 2 + mu)
        order_ids = np.arange(2 + mu, 2 + mu + mu + C)
        src, dst, et, eattr = [], [], [], {r.name: [] for r in RANKING_EDGE_TYPES}
        for r_id in route_ids:
            when = np.array([rng.integers(0, 7) / 6.0, rng.integers(0, 24) / 23.0])
            src.append(drv); dst.append(r_id); et.append(0); eattr["create"].append(when)
            src.append(r_id); dst.append(drv); et.append(1); eattr["be_created_by"].append(when)
        for h in range(mu):
            src.append(route_ids[1 + h]); dst.append(tgt); et.append(2)
            eattr["historical_route_of"].append([(h + 1) / max(mu, 1)])
        for h in range(mu):
            src.append(route_ids[1 + h]); dst.append(order_ids[h]); et.append(3)
            eattr["consider"].append(_consider_attrs(rng, routes[1 + h], hist_orders[h:h + 1])[0])
        cons = _consider_attrs(rng, routes[0], cand)
        first_cand_edge = len(src)
        for c in range(C):
            src.append(tgt); dst.append(order_ids[mu + c]); et.append(3)
            eattr["consider"].append(cons[c])
        g = HeteroGraph(
            list(RANKING_NODE_TYPES), list(RANKING_EDGE_TYPES),
            np.array([0] + [1] * (1 + mu) + [2] * (mu + C)),
            np.array(src), np.array(dst), np.array(et),
            {"driver": driver, "route": routes, "order": orders},
            {k: np.asarray(v, dtype=np.float64).reshape(len(v), RANKING_EDGE_TYPES[j].attr_dim)
             for j, (k, v) in enumerate(eattr.items())},
        )
        score = planted_score(routes[0], cand, cons)
        # instance-level threshold: the top n_pos candidates are positive
        thr = np.sort(score)[-n_pos]
        labels = (score >= thr).astype(np.int64)
        graphs.append(g)
        instances.append(RankingInstance(tgt, np.arange(first_cand_edge, first_cand_edge + C), labels,
                                         _split_of(i, spec.n_routes), i))
    return RankingTask(spec, graphs, instances)


def save_ranking_task(task: RankingTask, out_dir) -> None:
    """Union bundle plus ``instances.csv`` and the generating spec."""
    out = Path(out_dir)
    g, inst = task.union()
    save_graph(g, out / "graph")
    lines = ["instance,split,target,candidate_edge,label"]
    for k, i in enumerate(inst):
        for e, y in zip(i.candidates, i.labels):
            lines.append(f"{k},{i.split},{i.target},{int(e)},{int(y)}")
    (out / "instances.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "spec.json").write_text(json.dumps({"task": "ranking", **asdict(task.spec)}, indent=2,
                                              sort_keys=True) + "\n", encoding="utf-8")


def load_ranking_task(data_dir) -> tuple:
    """Returns ``(union graph, instances)`` from a directory written by save_ranking_task."""
    from .hetgraph import GraphFormatError

    d = Path(data_dir)
    g = load_graph(d / "graph")
    path = d / "instances.csv"
    if not path.exists():
        raise GraphFormatError(f"{path}: file missing")
    rows = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["instance", "split", "target", "candidate_edge", "label"]:
            raise GraphFormatError(f"instances.csv: unexpected header {header}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 5:
                raise GraphFormatError(f"instances.csv line {lineno}: expected 5 fields")
            try:
                k, split, tgt, e, y = int(parts[0]), parts[1], int(parts[2]), int(parts[3]), int(parts[4])
            except ValueError as exc:
                raise GraphFormatError(f"instances.csv line {lineno}: {exc}") from None
            if not 0 <= e < g.num_edges or not 0 <= tgt < g.num_nodes:
                raise GraphFormatError(f"instances.csv line {lineno}: id out of range")
            rows.setdefault(k, [split, tgt, [], []])
            rows[k][2].append(e)
            rows[k][3].append(y)
    inst = [RankingInstance(v[1], v[2], v[3], v[0], k) for k, v in sorted(rows.items())]
    return g, inst


# ---------------------------------------------------------------------------
# diffusion
# ---------------------------------------------------------------------------

DIFFUSION_RELATIONS = ("link_to", "close_to", "likely_go_to")


@dataclass
class SynthDiffusionSpec:
    n_nodes: int = 60
    relation_mix: tuple = (0.4, 0.4, 0.2)
    edges_per_node: float = 3.0
    steps_per_day: int = 288
    n_weeks: int = 4
    step_min: int = 5
    rho: float = 0.5
    damping: float = 0.9
    noise: float = 0.05
    relation_weights: tuple = (0.6, 0.3, 0.1)
    weekend_factor: float = 0.6
    burn_in_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.relation_mix = tuple(float(x) for x in self.relation_mix)
        self.relation_weights = tuple(float(x) for x in self.relation_weights)
        if len(self.relation_mix) != 3 or abs(sum(self.relation_mix) - 1.0) > 1e-9:
            raise ValueError("relation_mix must hold three fractions summing to 1")
        if min(self.relation_mix) < 0:
            raise ValueError("relation_mix fractions must be non-negative")
        if self.n_weeks < 2:
            raise ValueError("need at least two weeks: one of history for the weekly window")

    @property
    def week_steps(self) -> int:
        return 7 * self.steps_per_day

    @property
    def T(self) -> int:
        return self.n_weeks * self.week_steps


@dataclass
class DiffusionTask:
    spec: SynthDiffusionSpec
    graph: HeteroGraph
    series: STSeries
    splits: dict                     # name -> forecast-origin indices
    baseline: np.ndarray = field(repr=False, default=None)   # noiseless periodic part [T, N]
    mixing: np.ndarray = field(repr=False, default=None)     # [N, N] relation-weighted mean operator


def _road_graph(spec: SynthDiffusionSpec, rng) -> tuple:
    n = spec.n_nodes
    pos = rng.uniform(0, 1, size=(n, 2))
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    np.fill_diagonal(dist, np.inf)
    near = np.argsort(dist, axis=1)
    total = int(round(spec.edges_per_node * n))
    counts = [int(round(f * total)) for f in spec.relation_mix]
    width = rng.uniform(0.5, 1.5, size=n)
    length = rng.uniform(0.2, 1.0, size=n)
    free_flow = 30.0 + 30.0 * rng.uniform(0, 1, size=n)
    node_attr = np.stack([free_flow / 60.0, width, length], axis=1)

    edges = {name: [] for name in DIFFUSION_RELATIONS}
    # link_to: turn into one of the 3 nearest segments
    seen = set()
    while len(edges["link_to"]) < counts[0]:
        i = int(rng.integers(n))
        j = int(near[i, rng.integers(3)])
        if (i, j) not in seen:
            seen.add((i, j))
            edges["link_to"].append((i, j))
    seen = set()
    while len(edges["close_to"]) < counts[1]:
        i = int(rng.integers(n))
        j = int(near[i, rng.integers(2)])
        if (i, j) not in seen:
            seen.add((i, j))
            edges["close_to"].append((i, j))
    succ = {}
    for i, j in edges["link_to"]:
        succ.setdefault(i, []).append(j)
    seen = set()
    tries = 0
    while len(edges["likely_go_to"]) < counts[2] and tries < 100 * n:
        tries += 1
        i = int(rng.integers(n))
        if i not in succ:
            continue
        j = succ[i][rng.integers(len(succ[i]))]
        if j not in succ:
            continue
        k = succ[j][rng.integers(len(succ[j]))]
        if k != i and (i, k) not in seen:
            seen.add((i, k))
            edges["likely_go_to"].append((i, k))

    src, dst, et, eattr = [], [], [], {}
    for r, name in enumerate(DIFFUSION_RELATIONS):
        rows = []
        for i, j in edges[name]:
            src.append(i); dst.append(j); et.append(r)
            d = float(np.linalg.norm(pos[i] - pos[j]))
            if name == "link_to":
                v = pos[j] - pos[i]
                rows.append([d, float(np.arctan2(v[1], v[0])) / np.pi])
            elif name == "close_to":
                rows.append([d])
            else:
                rows.append([float(rng.uniform(0.3, 1.0))])
        eattr[name] = np.asarray(rows, dtype=np.float64).reshape(len(rows), 2 if name == "link_to" else 1)
    g = HeteroGraph(
        [NodeType(0, "segment", 3, ("free_flow", "width", "length"))],
        [EdgeType(0, "link_to", 2, 0, 0, ("distance", "angle")),
         EdgeType(1, "close_to", 1, 0, 0, ("distance",)),
         EdgeType(2, "likely_go_to", 1, 0, 0, ("probability",))],
        np.zeros(n, dtype=np.int64), np.array(src), np.array(dst), np.array(et),
        {"segment": node_attr}, eattr,
    )
    return g, free_flow


def mixing_operator(g: HeteroGraph, weights) -> np.ndarray:
    """Row-stochastic relation-weighted neighbour mean over the base relations."""
    n = g.num_nodes
    M = np.zeros((n, n))
    wsum = np.zeros(n)
    for r, w in zip(g.edge_types[:3], weights):
        ids = g.type_edges[r.id]
        A = np.zeros((n, n))
        # undirected view: influence flows both ways along a relation
        np.add.at(A, (g.src[ids], g.dst[ids]), 1.0)
        np.add.at(A, (g.dst[ids], g.src[ids]), 1.0)
        deg = A.sum(axis=1)
        has = deg > 0
        M[has] += w * A[has] / deg[has, None]
        wsum[has] += w
    ok = wsum > 0
    M[ok] /= wsum[ok, None]
    return M


def periodic_baseline(spec: SynthDiffusionSpec, free_flow: np.ndarray, phase: np.ndarray,
                      steps: np.ndarray) -> np.ndarray:
    """Noiseless per-node daily cycle with a weekday/weekend amplitude change."""
    day = (steps // spec.steps_per_day) % 7
    weekday = np.where(day >= 5, spec.weekend_factor, 1.0)
    ang = 2 * np.pi * (steps % spec.steps_per_day) / spec.steps_per_day
    amp = 0.25 * free_flow
    return free_flow[None, :] - amp[None, :] * weekday[:, None] * \
        (0.5 + 0.5 * np.sin(ang[:, None] + phase[None, :]))


def diffusion_step(spec: SynthDiffusionSpec, M: np.ndarray, dev: np.ndarray) -> np.ndarray:
    """Noiseless one-step update of the deviation from the periodic baseline."""
    return spec.damping * ((1 - spec.rho) * dev + spec.rho * (M @ dev))


def gen_diffusion_task(spec: SynthDiffusionSpec) -> DiffusionTask:
    rng = np.random.default_rng(spec.seed)
    g, free_flow = _road_graph(spec, rng)
    n = spec.n_nodes
    phase = rng.uniform(-0.3, 0.3, size=n)
    M = mixing_operator(g, spec.relation_weights)
    burn = int(round(spec.burn_in_frac * spec.T))
    steps = np.arange(-burn, spec.T)
    base = periodic_baseline(spec, free_flow, phase, np.mod(steps, spec.week_steps))
    sigma = spec.noise * 0.25 * free_flow
    dev = np.zeros(n)
    x = np.empty((len(steps), n))
    for t in range(len(steps)):
        x[t] = base[t] + dev
        dev = diffusion_step(spec, M, dev) + rng.normal(0, 1, size=n) * sigma
    x = np.maximum(x, 1.0)[burn:]
    ts = np.arange(spec.T, dtype=np.int64) * spec.step_min
    g = add_reverse_relations(g)
    node_signal = x[:, :, None]
    series = STSeries(node_signal, ts, edge_dynamic_features(node_signal, g))
    W = spec.week_steps
    splits = {name: np.arange((k + 1) * W, (k + 2) * W) for k, name in
              enumerate(("train", "valid", "test")) if k + 2 <= spec.n_weeks}
    return DiffusionTask(spec, g, series, splits, base[burn:], M)


def seasonal_naive(series: STSeries, origins, horizon: int, period: int) -> np.ndarray:
    """Predict ``x[t + h]`` by ``x[t + h - period]``; returns ``[N, B, horizon]``."""
    origins = np.asarray(origins)
    idx = origins[None, :] + np.arange(horizon)[:, None] - period
    return np.transpose(series.node_signal[idx, :, 0], (2, 1, 0))


def persistence(series: STSeries, origins, horizon: int) -> np.ndarray:
    """Last observed value repeated over the horizon; ``[N, B, horizon]``."""
    last = series.node_signal[np.asarray(origins) - 1, :, 0]      # [B, N]
    return np.repeat(last.T[:, :, None], horizon, axis=2)


def targets(series: STSeries, origins, horizon: int) -> np.ndarray:
    origins = np.asarray(origins)
    idx = origins[None, :] + np.arange(horizon)[:, None]
    return np.transpose(series.node_signal[idx, :, 0], (2, 1, 0))


def save_diffusion_task(task: DiffusionTask, out_dir) -> None:
    out = Path(out_dir)
    save_graph(task.graph, out / "graph")
    s = task.series
    lines = ["timestamp_min,node_id,value"]
    for t in range(len(s)):
        for v in range(s.node_signal.shape[1]):
            lines.append(f"{int(s.timestamps[t])},{v},{float(s.node_signal[t, v, 0])!r}")
    (out / "series_nodes.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"task": "forecast", **asdict(task.spec),
            "splits": {k: [int(v[0]), int(v[-1]) + 1] for k, v in task.splits.items()}}
    (out / "spec.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_series(path, n_nodes: int) -> STSeries:
    from .hetgraph import GraphFormatError
    from .stcomgnn import impute_missing

    path = Path(path)
    if not path.exists():
        raise GraphFormatError(f"{path}: file missing")
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    names = raw.dtype.names or ()
    if names[:2] != ("timestamp_min", "node_id") or len(names) < 3:
        raise GraphFormatError(f"{path.name}: header must start with timestamp_min,node_id then values")
    ts = np.unique(raw["timestamp_min"])
    if raw["node_id"].min() < 0 or raw["node_id"].max() >= n_nodes:
        raise GraphFormatError(f"{path.name}: node_id outside 0..{n_nodes - 1}")
    x = np.full((len(ts), n_nodes, len(names) - 2), np.nan)
    ti = np.searchsorted(ts, raw["timestamp_min"])
    for c, name in enumerate(names[2:]):
        x[ti, raw["node_id"], c] = raw[name]
    return STSeries(impute_missing(x), ts)


def load_diffusion_task(data_dir) -> DiffusionTask:
    d = Path(data_dir)
    meta = json.loads((d / "spec.json").read_text(encoding="utf-8"))
    g = load_graph(d / "graph")
    series = load_series(d / "series_nodes.csv", g.num_nodes)
    series.edge_signal = edge_dynamic_features(series.node_signal, g)
    spec_fields = {k: v for k, v in meta.items() if k in SynthDiffusionSpec.__dataclass_fields__}
    spec = SynthDiffusionSpec(**spec_fields)
    splits = {k: np.arange(a, b) for k, (a, b) in meta["splits"].items()}
    return DiffusionTask(spec, g, series, splits)


def random_hetero_graph(rng: np.random.Generator, n_nodes: int = 6, n_edges: int = 8,
                        with_reverse: bool = True, node_dims=(2, 3), edge_dims=(1, 2)) -> HeteroGraph:
    """Small random graph with two node types and two relations (a->b, a->a)."""
    n_a = max(1, n_nodes // 2)
    n_b = n_nodes - n_a
    types = np.array([0] * n_a + [1] * n_b)
    rels = [EdgeType(0, "ab", edge_dims[0], 0, 1 if n_b else 0), EdgeType(1, "aa", edge_dims[1], 0, 0)]
    src, dst, et = [], [], []
    for _ in range(n_edges):
        r = int(rng.integers(2))
        s = int(rng.integers(n_a))
        d = int(n_a + rng.integers(n_b)) if (r == 0 and n_b) else int(rng.integers(n_a))
        src.append(s); dst.append(d); et.append(r)
    et = np.array(et, dtype=np.int64)
    g = HeteroGraph(
        [NodeType(0, "a", node_dims[0]), NodeType(1, "b", node_dims[1])], rels, types,
        np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), et,
        {"a": rng.normal(size=(n_a, node_dims[0])), "b": rng.normal(size=(n_b, node_dims[1]))},
        {"ab": rng.normal(size=(int((et == 0).sum()), edge_dims[0])),
         "aa": rng.normal(size=(int((et == 1).sum()), edge_dims[1]))},
    )
    return add_reverse_relations(g) if with_reverse else g
