"""Multi-attributed heterogeneous graphs: typed nodes and edges with
per-type attribute matrices, incidence lists, and a directory bundle format.

Node ids are global integers; the nodes of one type occupy a contiguous id
block so that ``(type, local index)`` addresses a row of that type's
attribute matrix.  Edge ids are global integers ``0..E-1``; each edge also
has a local index into its relation's attribute matrix.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

REVERSE_SUFFIX = "_rev"


class GraphFormatError(ValueError):
    """Raised for any schema or content violation in a graph bundle."""


def _default_names(t) -> None:
    # unnamed attribute columns get positional names a0, a1, ...
    if not t.attr_names:
        object.__setattr__(t, "attr_names", tuple(f"a{i}" for i in range(t.attr_dim)))
    elif len(t.attr_names) != t.attr_dim:
        raise GraphFormatError(f"type {t.name!r}: {len(t.attr_names)} attribute names for dim {t.attr_dim}")


@dataclass(frozen=True)
class NodeType:
    id: int
    name: str
    attr_dim: int
    attr_names: tuple = ()

    def __post_init__(self):
        _default_names(self)


@dataclass(frozen=True)
class EdgeType:
    id: int
    name: str
    attr_dim: int
    src_type: int
    dst_type: int
    attr_names: tuple = ()
    reverse_of: str | None = None

    def __post_init__(self):
        _default_names(self)


def _as_matrix(v, dim: int) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 2 and a.shape[0] > 0:
        return a
    if a.size == 0:
        return np.zeros((0, dim))
    return a.reshape(len(a), -1)


@dataclass
class HeteroGraph:
    node_types: list
    edge_types: list
    node_type_of: np.ndarray          # global node id -> node type id
    src: np.ndarray                   # per edge
    dst: np.ndarray
    edge_type_of: np.ndarray          # per edge -> relation id
    node_attrs: dict                  # node type name -> [n_o, d_o]
    edge_attrs: dict                  # relation name -> [n_r, d_r]
    node_offset: np.ndarray = field(init=False)
    node_local: np.ndarray = field(init=False)
    edge_local: np.ndarray = field(init=False)
    type_edges: list = field(init=False)
    inc_ptr: np.ndarray = field(init=False)
    inc_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        self.node_type_of = np.asarray(self.node_type_of, dtype=np.int64)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.edge_type_of = np.asarray(self.edge_type_of, dtype=np.int64)
        ndim = {t.name: t.attr_dim for t in self.node_types}
        edim = {r.name: r.attr_dim for r in self.edge_types}
        self.node_attrs = {k: _as_matrix(v, ndim.get(k, 0)) for k, v in self.node_attrs.items()}
        self.edge_attrs = {k: _as_matrix(v, edim.get(k, 0)) for k, v in self.edge_attrs.items()}
        validate(self)
        counts = np.bincount(self.node_type_of, minlength=len(self.node_types))
        self.node_offset = np.concatenate([[0], np.cumsum(counts)])
        self.node_local = np.arange(self.num_nodes) - self.node_offset[self.node_type_of]
        self.edge_local = np.zeros(self.num_edges, dtype=np.int64)
        self.type_edges = []
        for r in range(len(self.edge_types)):
            ids = np.flatnonzero(self.edge_type_of == r)
            self.edge_local[ids] = np.arange(len(ids))
            self.type_edges.append(ids)
        self._build_incidence()

    def _build_incidence(self):
        # a self-loop is listed once for its node
        loops = self.src == self.dst
        eids = np.arange(self.num_edges)
        nodes = np.concatenate([self.src, self.dst[~loops]])
        edges = np.concatenate([eids, eids[~loops]])
        order = np.lexsort((edges, nodes))
        self.inc_idx = edges[order]
        self.inc_ptr = np.concatenate([[0], np.cumsum(np.bincount(nodes, minlength=self.num_nodes))])

    # -- sizes and lookups ------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self.node_type_of)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def node_type(self, name: str) -> NodeType:
        for t in self.node_types:
            if t.name == name:
                return t
        raise KeyError(f"unknown node type {name!r}")

    def edge_type(self, name: str) -> EdgeType:
        for t in self.edge_types:
            if t.name == name:
                return t
        raise KeyError(f"unknown edge type {name!r}")

    def nodes_of_type(self, type_id: int) -> np.ndarray:
        return np.arange(self.node_offset[type_id], self.node_offset[type_id + 1])

    def num_nodes_of(self, type_id: int) -> int:
        return int(self.node_offset[type_id + 1] - self.node_offset[type_id])

    def incidence(self, v: int) -> np.ndarray:
        return self.inc_idx[self.inc_ptr[v]:self.inc_ptr[v + 1]]

    def node_attr(self, v: int) -> np.ndarray:
        t = self.node_types[self.node_type_of[v]]
        return self.node_attrs[t.name][self.node_local[v]]

    def edge_attr(self, e: int) -> np.ndarray:
        r = self.edge_types[self.edge_type_of[e]]
        return self.edge_attrs[r.name][self.edge_local[e]]

    def initial_states(self) -> "StateSet":
        return StateSet(
            {t.name: Tensor(self.node_attrs[t.name]) for t in self.node_types},
            {r.name: Tensor(self.edge_attrs[r.name]) for r in self.edge_types},
            layer=0,
        )

    def structurally_equal(self, other: "HeteroGraph") -> bool:
        if [(t.name, t.attr_dim, t.attr_names) for t in self.node_types] != \
                [(t.name, t.attr_dim, t.attr_names) for t in other.node_types]:
            return False
        if [(r.name, r.attr_dim, r.src_type, r.dst_type, r.attr_names, r.reverse_of)
                for r in self.edge_types] != [
                (r.name, r.attr_dim, r.src_type, r.dst_type, r.attr_names, r.reverse_of)
                for r in other.edge_types]:
            return False
        arrays = ("node_type_of", "src", "dst", "edge_type_of")
        if not all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays):
            return False
        return all(np.array_equal(self.node_attrs[k], other.node_attrs[k]) for k in self.node_attrs) \
            and all(np.array_equal(self.edge_attrs[k], other.edge_attrs[k]) for k in self.edge_attrs)


@dataclass
class StateSet:
    """Hidden states of one layer: one matrix per node type and per relation."""

    node_states: dict
    edge_states: dict
    layer: int = 0


def validate(g: HeteroGraph) -> None:
    """Raise GraphFormatError unless ``g`` satisfies every structural invariant."""
    names = [t.name for t in g.node_types]
    if len(set(names)) != len(names):
        raise GraphFormatError(f"duplicate node type names: {names}")
    rnames = [r.name for r in g.edge_types]
    if len(set(rnames)) != len(rnames):
        raise GraphFormatError(f"duplicate edge type names: {rnames}")
    for i, t in enumerate(g.node_types):
        if t.id != i:
            raise GraphFormatError(f"node type {t.name!r} has id {t.id}, expected {i}")
        if t.attr_dim < 0:
            raise GraphFormatError(f"node type {t.name!r} has negative attr_dim")
    for i, r in enumerate(g.edge_types):
        if r.id != i:
            raise GraphFormatError(f"edge type {r.name!r} has id {r.id}, expected {i}")
        if r.attr_dim < 0:
            raise GraphFormatError(f"edge type {r.name!r} has negative attr_dim")
        if not (0 <= r.src_type < len(g.node_types) and 0 <= r.dst_type < len(g.node_types)):
            raise GraphFormatError(f"edge type {r.name!r} binds unknown node types")

    nt = g.node_type_of
    if nt.size and (nt.min() < 0 or nt.max() >= len(g.node_types)):
        raise GraphFormatError("node_type_of references an unknown node type")
    if nt.size > 1 and np.any(np.diff(nt) < 0):
        pos = int(np.flatnonzero(np.diff(nt) < 0)[0]) + 1
        raise GraphFormatError(f"node {pos}: node ids of one type must form a contiguous block")
    n = len(nt)
    if not (len(g.src) == len(g.dst) == len(g.edge_type_of)):
        raise GraphFormatError("src/dst/edge_type_of lengths differ")
    for e in np.flatnonzero((g.src < 0) | (g.src >= n) | (g.dst < 0) | (g.dst >= n)):
        raise GraphFormatError(
            f"edge {int(e)}: dangling endpoint ({int(g.src[e])} -> {int(g.dst[e])}), {n} nodes exist"
        )
    et = g.edge_type_of
    if et.size and (et.min() < 0 or et.max() >= len(g.edge_types)):
        raise GraphFormatError("edge_type_of references an unknown edge type")
    for r in g.edge_types:
        ids = np.flatnonzero(et == r.id)
        bad = ids[(nt[g.src[ids]] != r.src_type) | (nt[g.dst[ids]] != r.dst_type)]
        if bad.size:
            e = int(bad[0])
            raise GraphFormatError(
                f"edge {e} of type {r.name!r} joins node types "
                f"({g.node_types[nt[g.src[e]]].name}, {g.node_types[nt[g.dst[e]]].name}), "
                f"expected ({g.node_types[r.src_type].name}, {g.node_types[r.dst_type].name})"
            )
    counts = np.bincount(nt, minlength=len(g.node_types))
    for t in g.node_types:
        a = g.node_attrs.get(t.name)
        if a is None:
            raise GraphFormatError(f"missing attribute matrix for node type {t.name!r}")
        if a.shape != (counts[t.id], t.attr_dim):
            raise GraphFormatError(
                f"node type {t.name!r}: attribute matrix {a.shape}, expected {(int(counts[t.id]), t.attr_dim)}"
            )
    ecounts = np.bincount(et, minlength=len(g.edge_types))
    for r in g.edge_types:
        a = g.edge_attrs.get(r.name)
        if a is None:
            raise GraphFormatError(f"missing attribute matrix for edge type {r.name!r}")
        if a.shape != (ecounts[r.id], r.attr_dim):
            raise GraphFormatError(
                f"edge type {r.name!r}: attribute matrix {a.shape}, expected {(int(ecounts[r.id]), r.attr_dim)}"
            )
    for k, a in list(g.node_attrs.items()) + list(g.edge_attrs.items()):
        if not np.all(np.isfinite(a)):
            raise GraphFormatError(f"attributes of {k!r} contain non-finite values")


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def incident_edges(g: HeteroGraph, v: int) -> list:
    """``(edge_id, other_endpoint, v_is_src)`` for every edge touching ``v``,
    in ascending edge-id order.  A self-loop appears once, flagged as src."""
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range for {g.num_nodes} nodes")
    out = []
    for e in g.incidence(v):
        e = int(e)
        is_src = bool(g.src[e] == v)
        other = int(g.dst[e]) if is_src else int(g.src[e])
        out.append((e, other, is_src))
    return out


def meta_knowledge(g: HeteroGraph, e: int) -> np.ndarray:
    """Raw attributes of source node, edge and destination node, concatenated."""
    return np.concatenate([g.node_attr(int(g.src[e])), g.edge_attr(e), g.node_attr(int(g.dst[e]))])


def meta_knowledge_matrix(g: HeteroGraph, rel: int) -> np.ndarray:
    """Meta knowledge rows for every edge of relation ``rel`` in local order."""
    r = g.edge_types[rel]
    ids = g.type_edges[rel]
    src_t, dst_t = g.node_types[r.src_type], g.node_types[r.dst_type]
    return np.concatenate([
        g.node_attrs[src_t.name][g.node_local[g.src[ids]]],
        g.edge_attrs[r.name],
        g.node_attrs[dst_t.name][g.node_local[g.dst[ids]]],
    ], axis=1)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def add_reverse_relations(g: HeteroGraph) -> HeteroGraph:
    """Add ``<name>_rev`` mirroring every relation that lacks a reverse.

    Original edges keep their ids; mirrored edges are appended after them.
    Relations that are themselves reverses, or already have one, are skipped,
    so a second application returns an equal graph.
    """
    existing = {r.name for r in g.edge_types}
    has_reverse = {r.reverse_of for r in g.edge_types if r.reverse_of}
    todo = [r for r in g.edge_types if r.reverse_of is None and r.name not in has_reverse]
    if not todo:
        return g
    new_types = list(g.edge_types)
    src, dst, et = [g.src], [g.dst], [g.edge_type_of]
    edge_attrs = dict(g.edge_attrs)
    for r in todo:
        name = r.name + REVERSE_SUFFIX
        if name in existing:
            raise GraphFormatError(f"cannot add reverse of {r.name!r}: type {name!r} already exists")
        rid = len(new_types)
        new_types.append(EdgeType(rid, name, r.attr_dim, r.dst_type, r.src_type, r.attr_names, r.name))
        ids = g.type_edges[r.id]
        src.append(g.dst[ids])
        dst.append(g.src[ids])
        et.append(np.full(len(ids), rid))
        edge_attrs[name] = g.edge_attrs[r.name].copy()
    return HeteroGraph(list(g.node_types), new_types, g.node_type_of.copy(),
                       np.concatenate(src), np.concatenate(dst), np.concatenate(et),
                       {k: v.copy() for k, v in g.node_attrs.items()}, edge_attrs)


def strip_edge_attributes(g: HeteroGraph) -> HeteroGraph:
    """Same graph with every relation's attributes reduced to zero columns."""
    types = [EdgeType(r.id, r.name, 0, r.src_type, r.dst_type, (), r.reverse_of) for r in g.edge_types]
    return HeteroGraph(list(g.node_types), types, g.node_type_of.copy(), g.src.copy(), g.dst.copy(),
                       g.edge_type_of.copy(), {k: v.copy() for k, v in g.node_attrs.items()},
                       {r.name: np.zeros((len(g.type_edges[r.id]), 0)) for r in g.edge_types})


def collapse_types(g: HeteroGraph) -> HeteroGraph:
    """Erase node and edge types.

    Every node gets the concatenation of all node-type attribute blocks with
    zeros in the blocks of other types; edges likewise.  The result has one
    node type ``node`` and one relation ``edge``; ids are unchanged.
    """
    nd = [t.attr_dim for t in g.node_types]
    noff = np.concatenate([[0], np.cumsum(nd)]).astype(int)
    nattr = np.zeros((g.num_nodes, int(noff[-1])))
    for t in g.node_types:
        rows = g.nodes_of_type(t.id)
        nattr[rows, noff[t.id]:noff[t.id + 1]] = g.node_attrs[t.name]
    ed = [r.attr_dim for r in g.edge_types]
    eoff = np.concatenate([[0], np.cumsum(ed)]).astype(int)
    eattr = np.zeros((g.num_edges, int(eoff[-1])))
    for r in g.edge_types:
        eattr[g.type_edges[r.id], eoff[r.id]:eoff[r.id + 1]] = g.edge_attrs[r.name]
    return HeteroGraph(
        [NodeType(0, "node", nattr.shape[1])],
        [EdgeType(0, "edge", eattr.shape[1], 0, 0)],
        np.zeros(g.num_nodes, dtype=np.int64), g.src.copy(), g.dst.copy(),
        np.zeros(g.num_edges, dtype=np.int64), {"node": nattr}, {"edge": eattr},
    )


def disjoint_union(graphs: list) -> tuple:
    """Union of graphs sharing one schema.

    Returns ``(graph, node_maps, edge_maps)`` where ``node_maps[i][v]`` is the
    union id of node ``v`` of graph ``i`` (likewise for edges).  Node ids are
    regrouped so each type stays contiguous; edges keep graph order.
    """
    base = graphs[0]
    n_types = len(base.node_types)
    node_maps = []
    # global ids: type-major, then graph order, then local order
    type_counts = np.array([[g.num_nodes_of(t) for t in range(n_types)] for g in graphs])
    type_base = np.concatenate([[0], np.cumsum(type_counts.sum(axis=0))])
    within = np.vstack([np.zeros(n_types, dtype=int), np.cumsum(type_counts, axis=0)[:-1]])
    for i, g in enumerate(graphs):
        m = type_base[g.node_type_of] + within[i][g.node_type_of] + g.node_local
        node_maps.append(m.astype(np.int64))
    node_type_of = np.repeat(np.arange(n_types), type_counts.sum(axis=0))
    node_attrs = {t.name: np.concatenate([g.node_attrs[t.name] for g in graphs], axis=0)
                  for t in base.node_types}
    src = np.concatenate([node_maps[i][g.src] for i, g in enumerate(graphs)])
    dst = np.concatenate([node_maps[i][g.dst] for i, g in enumerate(graphs)])
    et = np.concatenate([g.edge_type_of for g in graphs])
    e_off = np.concatenate([[0], np.cumsum([g.num_edges for g in graphs])])
    edge_maps = [np.arange(e_off[i], e_off[i + 1]) for i in range(len(graphs))]
    # edge attribute rows follow the order edges of each type appear in the union
    edge_attrs = {r.name: np.concatenate([g.edge_attrs[r.name] for g in graphs], axis=0)
                  for r in base.edge_types}
    u = HeteroGraph(list(base.node_types), list(base.edge_types), node_type_of, src, dst, et,
                    node_attrs, edge_attrs)
    return u, node_maps, edge_maps


# ---------------------------------------------------------------------------
# bundle I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_graph(g: HeteroGraph, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    schema = {
        "node_types": [{"name": t.name, "attributes": list(t.attr_names) or
                        [f"a{i}" for i in range(t.attr_dim)]} for t in g.node_types],
        "edge_types": [{"name": r.name, "src": g.node_types[r.src_type].name,
                        "dst": g.node_types[r.dst_type].name,
                        "attributes": list(r.attr_names) or [f"a{i}" for i in range(r.attr_dim)],
                        **({"reverse_of": r.reverse_of} if r.reverse_of else {})}
                       for r in g.edge_types],
    }
    (path / "schema.json").write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    for t, spec in zip(g.node_types, schema["node_types"]):
        with open(path / f"nodes_{t.name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["global_id"] + spec["attributes"])
            for v, row in zip(g.nodes_of_type(t.id), g.node_attrs[t.name]):
                w.writerow([int(v)] + [_fmt(x) for x in row])
    for r, spec in zip(g.edge_types, schema["edge_types"]):
        with open(path / f"edges_{r.name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["edge_id", "src", "dst"] + spec["attributes"])
            for e, row in zip(g.type_edges[r.id], g.edge_attrs[r.name]):
                w.writerow([int(e), int(g.src[e]), int(g.dst[e])] + [_fmt(x) for x in row])


def _read_csv(path: Path, lead: list, attrs: list) -> tuple:
    if not path.exists():
        raise GraphFormatError(f"{path.name}: file missing")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GraphFormatError(f"{path.name}: empty file, header expected")
    header = rows[0]
    expected = lead + attrs
    if header != expected:
        missing = [c for c in expected if c not in header]
        detail = f"missing columns {missing}" if missing else f"header {header} != {expected}"
        raise GraphFormatError(f"{path.name}: {detail}")
    ids, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected):
            raise GraphFormatError(f"{path.name} line {lineno}: {len(row)} fields, expected {len(expected)}")
        try:
            ids.append([int(x) for x in row[:len(lead)]])
            vals.append([float(x) for x in row[len(lead):]])
        except ValueError as exc:
            raise GraphFormatError(f"{path.name} line {lineno}: {exc}") from None
        if any(i < 0 for i in ids[-1]):
            raise GraphFormatError(f"{path.name} line {lineno}: negative id")
    n = len(rows) - 1
    ids = np.array(ids, dtype=np.int64).reshape(n, len(lead))
    vals = np.array(vals, dtype=np.float64).reshape(n, len(attrs))
    return ids, vals


def load_graph(path) -> HeteroGraph:
    path = Path(path)
    try:
        schema = json.loads((path / "schema.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise GraphFormatError(f"{path}: schema.json missing") from None
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"schema.json: {exc}") from None
    try:
        ntypes_spec = schema["node_types"]
        etypes_spec = schema["edge_types"]
    except (KeyError, TypeError):
        raise GraphFormatError("schema.json: needs 'node_types' and 'edge_types'") from None

    node_types, id_blocks, node_attrs = [], [], {}
    for i, spec in enumerate(ntypes_spec):
        attrs = list(spec.get("attributes", []))
        t = NodeType(i, spec["name"], len(attrs), tuple(attrs))
        ids, vals = _read_csv(path / f"nodes_{t.name}.csv", ["global_id"], attrs)
        node_types.append(t)
        id_blocks.append(ids[:, 0])
        node_attrs[t.name] = vals
    name_to_type = {t.name: t.id for t in node_types}
    all_ids = np.concatenate(id_blocks) if id_blocks else np.zeros(0, dtype=np.int64)
    uniq, counts = np.unique(all_ids, return_counts=True)
    if np.any(counts > 1):
        raise GraphFormatError(f"duplicate node id {int(uniq[counts > 1][0])}")
    n = len(all_ids)
    node_type_of = np.empty(n, dtype=np.int64)
    offset = 0
    for t, ids in zip(node_types, id_blocks):
        order = np.argsort(ids, kind="stable")
        node_attrs[t.name] = node_attrs[t.name][order]
        ids = ids[order]
        want = np.arange(offset, offset + len(ids))
        if not np.array_equal(ids, want):
            bad = ids[ids != want][0] if len(ids) else offset
            raise GraphFormatError(
                f"nodes_{t.name}.csv: ids must be the contiguous block {offset}..{offset + len(ids) - 1}, "
                f"found {int(bad)}"
            )
        node_type_of[offset:offset + len(ids)] = t.id
        offset += len(ids)

    edge_types, eblocks, edge_attrs = [], [], {}
    for i, spec in enumerate(etypes_spec):
        attrs = list(spec.get("attributes", []))
        try:
            s_t, d_t = name_to_type[spec["src"]], name_to_type[spec["dst"]]
        except KeyError as exc:
            raise GraphFormatError(f"schema.json: edge type {spec.get('name')!r} endpoint type {exc} unknown") from None
        r = EdgeType(i, spec["name"], len(attrs), s_t, d_t, tuple(attrs), spec.get("reverse_of"))
        ids, vals = _read_csv(path / f"edges_{r.name}.csv", ["edge_id", "src", "dst"], attrs)
        edge_types.append(r)
        eblocks.append(ids)
        edge_attrs[r.name] = vals
    m = sum(len(b) for b in eblocks)
    src = np.full(m, -1, dtype=np.int64)
    dst = np.full(m, -1, dtype=np.int64)
    et = np.full(m, -1, dtype=np.int64)
    for r, ids in zip(edge_types, eblocks):
        order = np.argsort(ids[:, 0], kind="stable")
        edge_attrs[r.name] = edge_attrs[r.name][order]
        for eid, s, d in ids[order]:
            if eid >= m:
                raise GraphFormatError(f"edges_{r.name}.csv: edge_id {eid} outside 0..{m - 1}")
            if et[eid] != -1:
                raise GraphFormatError(f"edges_{r.name}.csv: duplicate edge_id {eid}")
            if s >= n or d >= n:
                raise GraphFormatError(
                    f"edges_{r.name}.csv: edge {eid} has dangling endpoint ({s} -> {d}); {n} nodes exist"
                )
            src[eid], dst[eid], et[eid] = s, d, r.id
    return HeteroGraph(node_types, edge_types, node_type_of, src, dst, et, node_attrs, edge_attrs)


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
