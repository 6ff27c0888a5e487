"""Losses, Adam, ranking/forecast metrics and the two training loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .datagen import CONSIDER, DiffusionTask, RankingInstance, persistence, targets
from .hetgraph import HeteroGraph
from .layer import AblationConfig, CoMGNN, CoMGNNConfig, EdgeReadout, ParamStore, save_checkpoint
from .stcomgnn import COMPONENTS, STCoMGNN, STConfig, gather_windows, window_starts

MAPE_FLOOR = 1.0
HORIZON_STEPS = (1, 3, 6)


# forecast runs use a smaller spatial stack than the ranking model: every
# spatial layer runs once per time step and batch element
FORECAST_MODEL_DEFAULTS = {
    "model": dict(node_dim=8, edge_dim=8, common_node_dim=8, common_edge_dim=8, att_dim=4,
                  meta_hidden=8, num_layers=1),
    "st": dict(k_spatial=1, channels=8),
}
FORECAST_TRAIN_DEFAULTS = dict(lr=1e-2, epochs=25, batch_size=16, eval_every=1)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "ranking"
    lr: float = 1e-3
    lam: float = 1e-5
    epochs: int = 200
    seed: int = 0
    eval_every: int = 1
    batch_size: int = 0          # forecast only; 0 means every training origin at once
    origin_stride: int = 1       # forecast only; keep every n-th training origin

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.task not in ("ranking", "forecast"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.epochs < 1 or self.eval_every < 1:
            raise ValueError("epochs and eval_every must be >= 1")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def ranking_loss(scores, labels):
    """Softmax cross-entropy against the positive labels normalised to sum 1.

    Returns ``None`` for an instance without positives (it is skipped).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.sum() <= 0:
        return None
    scores = T.as_tensor(scores)
    y = labels / labels.sum()
    logp = T.segment_log_softmax(scores, np.zeros(len(labels), dtype=np.int64), 1)
    return T.mul(T.tsum(T.mul(logp, y)), -1.0)


def batched_ranking_loss(scores, segment_ids, labels, num_segments: int):
    """Mean ranking loss over the segments that hold at least one positive."""
    labels = np.asarray(labels, dtype=np.float64)
    pos = np.zeros(num_segments)
    np.add.at(pos, segment_ids, labels)
    keep = pos > 0
    if not keep.any():
        return None
    y = np.where(keep[segment_ids], labels / np.where(pos > 0, pos, 1.0)[segment_ids], 0.0)
    logp = T.segment_log_softmax(scores, segment_ids, num_segments)
    return T.mul(T.tsum(T.mul(logp, y)), -1.0 / keep.sum())


def l2_penalty(params) -> T.Tensor:
    return T.sum_squares(params)


def mape_loss(pred, y, params=(), lam: float = 0.0, eps: float = MAPE_FLOOR):
    """mean |pred - y| / max(y, eps) plus ``lam`` times the squared parameter norm."""
    y = np.asarray(y, dtype=np.float64)
    denom = np.maximum(y, eps)
    loss = T.mean(T.div(T.tabs(T.sub(pred, y)), denom))
    params = list(params)
    if lam and params:
        loss = T.add(loss, T.mul(l2_penalty(params), lam))
    return loss


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place Adam update with bias correction; ``grads`` maps names to arrays."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def rank_candidates(scores, candidate_ids) -> np.ndarray:
    """Candidate ids sorted by descending score, ties by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(candidate_ids)
    order = np.lexsort((ids, -scores))
    return ids[order]


def recall_at_k(ranked, positives, k: int):
    if k < 1:
        raise ValueError("k must be >= 1")
    pos = set(int(p) for p in positives)
    if not pos:
        return None
    return len(pos.intersection(int(x) for x in list(ranked)[:k])) / len(pos)


def average_precision(ranked, positives):
    pos = set(int(p) for p in positives)
    if not pos:
        return None
    hits, total = 0, 0.0
    for rank, c in enumerate(ranked, start=1):
        if int(c) in pos:
            hits += 1
            total += hits / rank
    return total / len(pos)


def expected_random_ap(n: int, m: int) -> float:
    """Expected AP of a uniformly random ordering of ``n`` items with ``m`` positives."""
    if m < 1 or n < 1:
        return float("nan")
    harmonic = sum(1.0 / k for k in range(1, n + 1))
    if n == 1:
        return 1.0
    return (harmonic + (m - 1) / (n - 1) * (n - harmonic)) / n


def map_metric(instances) -> float:
    """Mean AP over ``(ranked, positives)`` pairs, skipping those without positives."""
    aps = [a for a in (average_precision(r, p) for r, p in instances) if a is not None]
    return float(np.mean(aps)) if aps else float("nan")


def ranking_metrics(scores_by_instance, instances, ks=(1, 5, 10)) -> dict:
    pairs = []
    for s, inst in zip(scores_by_instance, instances):
        ranked = rank_candidates(s, inst.candidates)
        pairs.append((ranked, inst.candidates[inst.labels == 1]))
    out = {}
    for k in ks:
        vals = [v for v in (recall_at_k(r, p, k) for r, p in pairs) if v is not None]
        out[f"recall@{k}"] = float(np.mean(vals)) if vals else float("nan")
    out["map"] = map_metric(pairs)
    return out


def forecast_metrics(pred, y, eps: float = MAPE_FLOOR) -> tuple:
    """(MAPE, MAE, RMSE); only entries with ``y > 0`` enter MAPE."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {y.shape}")
    err = pred - y
    ok = y > 0
    mape = float(np.mean(np.abs(err[ok]) / np.maximum(y[ok], eps))) if ok.any() else float("nan")
    return mape, float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def forecast_metrics_by_horizon(pred, y, steps=HORIZON_STEPS) -> dict:
    """Metrics at each requested horizon step (1-based) of ``[N, B, H]`` arrays."""
    out = {}
    for h in steps:
        if h <= pred.shape[-1]:
            mape, mae, rmse = forecast_metrics(pred[..., h - 1], y[..., h - 1])
            out[f"mape@{h}"], out[f"mae@{h}"], out[f"rmse@{h}"] = mape, mae, rmse
    return out


# ---------------------------------------------------------------------------
# metric log
# ---------------------------------------------------------------------------

class MetricLog:
    """``epoch,split,metric,value`` lines, written through on every append."""

    HEADER = "epoch,split,metric,value"

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list = []
        if self.path:
            self.path.write_text(self.HEADER + "\n", encoding="utf-8")

    def add(self, epoch: int, split: str, metrics: dict):
        lines = []
        for k in sorted(metrics):
            v = float(metrics[k])
            self.rows.append((epoch, split, k, v))
            lines.append(f"{epoch},{split},{k},{v!r}")
        if self.path and lines:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")

    def series(self, split: str, metric: str) -> tuple:
        pts = [(e, v) for e, s, m, v in self.rows if s == split and m == metric]
        return [p[0] for p in pts], [p[1] for p in pts]


def read_metric_log(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != MetricLog.HEADER:
            raise ValueError(f"{path}: not a metric log")
        for line in fh:
            e, s, m, v = line.strip().split(",")
            rows.append((int(e), s, m, float(v)))
    return rows


# ---------------------------------------------------------------------------
# ranking model
# ---------------------------------------------------------------------------

class RankingModel:
    """CoMGNN stack plus an affine readout on candidate (route, consider, order) triples."""

    def __init__(self, graph: HeteroGraph, cfg: CoMGNNConfig, seed: int = 0):
        self.cfg = cfg
        self.graph = cfg.ablation.prepare_graph(graph)
        self.gnn = CoMGNN(self.graph, cfg, seed=seed)
        rel = CONSIDER if not cfg.ablation.collapse_types else self.graph.edge_types[0].name
        r = self.graph.edge_type(rel)
        self.rel = r
        d_in = (self.gnn.out_node_dims[self.graph.node_types[r.src_type].name]
                + self.gnn.out_edge_dims[r.name]
                + self.gnn.out_node_dims[self.graph.node_types[r.dst_type].name])
        self.readout = EdgeReadout(self.gnn.store, d_in)

    @property
    def params(self):
        return self.gnn.params

    def score_edges(self, edge_ids) -> T.Tensor:
        g = self.graph
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        states = self.gnn.forward(g)
        src_t = g.node_types[self.rel.src_type].name
        dst_t = g.node_types[self.rel.dst_type].name
        if np.any(g.edge_type_of[edge_ids] != self.rel.id):
            raise ValueError(f"candidate edges must be of relation {self.rel.name!r}")
        h_s = T.take(states.node_states[src_t], g.node_local[g.src[edge_ids]])
        h_d = T.take(states.node_states[dst_t], g.node_local[g.dst[edge_ids]])
        h_e = T.take(states.edge_states[self.rel.name], g.edge_local[edge_ids])
        return self.readout(h_s, h_e, h_d)


def _flatten(instances) -> tuple:
    edges = np.concatenate([i.candidates for i in instances])
    seg = np.concatenate([np.full(len(i.candidates), k) for k, i in enumerate(instances)])
    labels = np.concatenate([i.labels for i in instances])
    return edges, seg, labels


def _split_scores(scores: np.ndarray, instances) -> list:
    out, pos = [], 0
    for i in instances:
        out.append(scores[pos:pos + len(i.candidates)])
        pos += len(i.candidates)
    return out


def _snapshot(params) -> dict:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params, snap: dict):
    for k, v in params.items():
        v.data[...] = snap[k]


def _grads(params) -> dict:
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in params.items()}


def _zero(params):
    for v in params.values():
        v.grad = None


@dataclass
class TrainResult:
    log: MetricLog
    best_epoch: int
    best_valid: float
    test: dict
    final_loss: float
    losses: list = field(default_factory=list)


def _guarded(fn, params, best, epoch):
    """Run a forward pass; non-finite intermediates count as divergence."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return fn()
    except FloatingPointError as exc:
        _restore(params, best[2])
        raise TrainingDivergence(f"epoch {epoch}: {exc}") from None


def train_ranking(model: RankingModel, instances: list, cfg: TrainConfig, log_path=None,
                  checkpoint_path=None) -> TrainResult:
    """Full-batch training; the model with the best validation MAP is kept."""
    log = MetricLog(log_path)
    by_split = {s: [i for i in instances if i.split == s] for s in ("train", "valid", "test")}
    if not by_split["train"]:
        raise ValueError("no training instances")
    all_inst = by_split["train"] + by_split["valid"] + by_split["test"]
    edges, seg, labels = _flatten(all_inst)
    n_train = len(by_split["train"])
    n_train_c = sum(len(i.candidates) for i in by_split["train"])
    params = model.params
    state = AdamState()
    best = (-math.inf, 0, _snapshot(params))
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        _zero(params)
        scores = _guarded(lambda: model.score_edges(edges), params, best, epoch)
        train_scores = T.take(scores, np.arange(n_train_c))
        loss = batched_ranking_loss(train_scores, seg[:n_train_c], labels[:n_train_c], n_train)
        if cfg.lam:
            loss = T.add(loss, T.mul(l2_penalty(params.values()), cfg.lam))
        lv = loss.item()
        if not math.isfinite(lv):
            _restore(params, best[2])
            raise TrainingDivergence(f"epoch {epoch}: loss is {lv}")
        losses.append(lv)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            per = _split_scores(scores.data, all_inst)
            log.add(epoch, "train", {"loss": lv})
            if by_split["valid"]:
                m = ranking_metrics(per[n_train:n_train + len(by_split["valid"])], by_split["valid"])
                log.add(epoch, "valid", m)
                if m["map"] > best[0]:
                    best = (m["map"], epoch, _snapshot(params))
        loss.backward()
        adam_step(params, _grads(params), state, lr=cfg.lr)
    if not by_split["valid"]:
        best = (float("nan"), cfg.epochs, _snapshot(params))
    _restore(params, best[2])
    with T.no_grad():
        per = _split_scores(model.score_edges(edges).data, all_inst)
    test = ranking_metrics(per[n_train + len(by_split["valid"]):], by_split["test"]) \
        if by_split["test"] else {}
    if test:
        log.add(best[1], "test", test)
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path, {"best_epoch": best[1], "task": "ranking"})
    return TrainResult(log, best[1], best[0], test, losses[-1], losses)


def evaluate_ranking(model: RankingModel, instances: list) -> dict:
    edges, _, _ = _flatten(instances)
    with T.no_grad():
        per = _split_scores(model.score_edges(edges).data, instances)
    return ranking_metrics(per, instances)


# ---------------------------------------------------------------------------
# forecast model
# ---------------------------------------------------------------------------

class ForecastModel:
    """ST-CoMGNN wrapped with input/output scaling fitted on the training split."""

    def __init__(self, task: DiffusionTask, cfg: STConfig, seed: int = 0):
        self.task = task
        self.cfg = cfg
        self.graph = cfg.spatial.ablation.prepare_graph(task.graph)
        s = task.series
        train_idx = task.splits["train"]
        lo = max(0, int(train_idx[0]) - cfg.week_min // s.step - cfg.t_weekly)
        ref = s.node_signal[lo:int(train_idx[-1]) + 1]
        self.mean = float(ref.mean())
        self.std = float(ref.std()) or 1.0
        eref = s.edge_signal[lo:int(train_idx[-1]) + 1] if s.edge_signal is not None else None
        self.emean = eref.mean(axis=(0, 1)) if eref is not None else None
        self.estd = np.where(eref.std(axis=(0, 1)) > 0, eref.std(axis=(0, 1)), 1.0) if eref is not None else None
        ef = 0 if s.edge_signal is None else s.edge_signal.shape[-1]
        if not cfg.spatial.ablation.use_edge_states:
            ef = 0
        self.net = STCoMGNN(self.graph, cfg, s.node_signal.shape[-1], ef, seed=seed)
        self._xn = (s.node_signal - self.mean) / self.std
        self._xe = None if (s.edge_signal is None or ef == 0) else (s.edge_signal - self.emean) / self.estd

    @property
    def params(self):
        return self.net.params

    def valid_origins(self, origins) -> np.ndarray:
        origins = np.asarray(origins)
        s = self.task.series
        week = self.cfg.week_min // s.step
        day = self.cfg.day_min // s.step
        need = max(self.cfg.t_recent, day + self.cfg.t_daily, week + self.cfg.t_weekly)
        end = origins.max() + 1 if origins.size else 0
        return origins[(origins >= need) & (origins + self.cfg.horizon <= min(len(s), end))]

    def windows(self, origins) -> dict:
        starts = window_starts(self.task.series, self.cfg, origins)
        out = {}
        for c in COMPONENTS:
            L = self.cfg.window(c)
            nw = gather_windows(self._xn, starts[c], L)
            ew = gather_windows(self._xe, starts[c], L) if self._xe is not None else None
            out[c] = (nw, ew)
        return out

    def predict(self, origins) -> T.Tensor:
        """``[N, B, horizon]`` forecasts in signal units."""
        y = self.net.forward(self.windows(origins))
        return T.add(T.mul(y, self.std), self.mean)


def _batches(origins: np.ndarray, size: int) -> list:
    if size <= 0 or size >= len(origins):
        return [origins]
    return [origins[i:i + size] for i in range(0, len(origins), size)]


def predict_numpy(model: ForecastModel, origins, chunk: int = 64) -> np.ndarray:
    with T.no_grad():
        parts = [model.predict(b).data for b in _batches(np.asarray(origins), chunk)]
    return np.concatenate(parts, axis=1)


def train_forecast(model: ForecastModel, cfg: TrainConfig, log_path=None,
                   checkpoint_path=None) -> TrainResult:
    """Adam on MAPE + L2; the model with the best validation MAPE at horizon 1 is kept."""
    log = MetricLog(log_path)
    task = model.task
    H = model.cfg.horizon
    train_o = model.valid_origins(task.splits["train"])[::max(1, cfg.origin_stride)]
    valid_o = model.valid_origins(task.splits.get("valid", np.zeros(0, dtype=int)))
    test_o = model.valid_origins(task.splits.get("test", np.zeros(0, dtype=int)))
    if not len(train_o):
        raise ValueError("no training origins with enough history")
    y_valid = targets(task.series, valid_o, H) if len(valid_o) else None
    params = model.params
    state = AdamState()
    best = (math.inf, 0, _snapshot(params))
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        ep_losses = []
        for batch in _batches(train_o, cfg.batch_size):
            _zero(params)
            pred = _guarded(lambda: model.predict(batch), params, best, epoch)
            loss = mape_loss(pred, targets(task.series, batch, H), params.values(), cfg.lam)
            lv = loss.item()
            if not math.isfinite(lv):
                _restore(params, best[2])
                raise TrainingDivergence(f"epoch {epoch}: loss is {lv}")
            loss.backward()
            adam_step(params, _grads(params), state, lr=cfg.lr)
            ep_losses.append(lv)
        lv = float(np.mean(ep_losses))
        losses.append(lv)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            log.add(epoch, "train", {"loss": lv})
            if y_valid is not None:
                m = forecast_metrics_by_horizon(predict_numpy(model, valid_o), y_valid,
                                                [h for h in HORIZON_STEPS if h <= H])
                log.add(epoch, "valid", m)
                if m["mape@1"] < best[0]:
                    best = (m["mape@1"], epoch, _snapshot(params))
    if y_valid is None:
        best = (float("nan"), cfg.epochs, _snapshot(params))
    _restore(params, best[2])
    test = {}
    if len(test_o):
        test = forecast_metrics_by_horizon(predict_numpy(model, test_o), targets(task.series, test_o, H),
                                           [h for h in HORIZON_STEPS if h <= H])
        log.add(best[1], "test", test)
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path, {"best_epoch": best[1], "task": "forecast",
                                                  "scale": [model.mean, model.std]})
    return TrainResult(log, best[1], best[0], test, losses[-1], losses)


def persistence_metrics(task: DiffusionTask, origins, horizon: int) -> dict:
    origins = np.asarray(origins)
    return forecast_metrics_by_horizon(persistence(task.series, origins, horizon),
                                       targets(task.series, origins, horizon),
                                       [h for h in HORIZON_STEPS if h <= horizon])


def default_ablation(no_het=False, no_edge_info=False, no_meta_att=False) -> AblationConfig:
    return AblationConfig.from_flags(no_het, no_edge_info, no_meta_att)


__all__ = [
    "TrainConfig", "TrainingDivergence", "FORECAST_MODEL_DEFAULTS", "FORECAST_TRAIN_DEFAULTS", "ranking_loss", "batched_ranking_loss", "mape_loss",
    "l2_penalty", "adam_step", "AdamState", "recall_at_k", "average_precision", "map_metric",
    "rank_candidates", "ranking_metrics", "expected_random_ap", "forecast_metrics", "forecast_metrics_by_horizon",
    "MetricLog", "read_metric_log", "RankingModel", "train_ranking", "evaluate_ranking",
    "ForecastModel", "train_forecast", "predict_numpy", "persistence_metrics", "ParamStore",
    "RankingInstance",
]
