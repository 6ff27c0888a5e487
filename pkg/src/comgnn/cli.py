"""Command-line entry point.

    comgnn generate --task ranking --seed 1 --out data/
    comgnn train --data data/ --out run/ [--no-het] [--no-edge-info] [--no-meta-att]
    comgnn eval --data data/ --out run/
    comgnn predict --data data/ --out run/
    comgnn report --out run/
    comgnn gradcheck --seed 7
    comgnn describe-params --task ranking

Exit codes: 0 ok, 2 usage or config error, 3 data or schema error, 4 training
diverged.  Results files are written whole or not at all.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

RESULTS = "results.txt"
METRICS = "metrics.log"
CHECKPOINT = "checkpoint.json"
PREDICTIONS = "predictions.csv"
SETTINGS = "settings.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("COMGNN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"COMGNN_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("COMGNN_THREADS must be >= 0")
    return n


def _pin_blas():
    # sequential mode: keep BLAS single-threaded so reductions run in one fixed order
    if os.environ.get("COMGNN_THREADS", "0") in ("0", "1"):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")


_pin_blas()

import numpy as np  # noqa: E402

from . import config as cfgmod  # noqa: E402
from . import tensor as T  # noqa: E402
from .datagen import (  # noqa: E402
    SynthDiffusionSpec,
    SynthRankingSpec,
    gen_diffusion_task,
    gen_ranking_task,
    load_diffusion_task,
    load_ranking_task,
    save_diffusion_task,
    save_ranking_task,
    targets,
)
from .hetgraph import GraphFormatError, write_text_atomic  # noqa: E402
from .layer import AblationConfig, CoMGNNConfig, describe_params, load_checkpoint  # noqa: E402
from .stcomgnn import InsufficientHistory, STConfig  # noqa: E402
from .training import (  # noqa: E402
    FORECAST_MODEL_DEFAULTS,
    FORECAST_TRAIN_DEFAULTS,
    ForecastModel,
    RankingModel,
    TrainConfig,
    TrainingDivergence,
    evaluate_ranking,
    expected_random_ap,
    forecast_metrics_by_horizon,
    persistence_metrics,
    predict_numpy,
    train_forecast,
    train_ranking,
    HORIZON_STEPS,
)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comgnn", description="Co-evolving heterogeneous GNN toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=_seed, default=0)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory written by generate")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    def ablation(sp):
        sp.add_argument("--no-het", action="store_true", help="erase node and edge types")
        sp.add_argument("--no-edge-info", action="store_true", help="drop edge attributes and edge states")
        sp.add_argument("--no-meta-att", action="store_true", help="uniform attention instead of meta attention")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g, data=False)
    g.add_argument("--task", choices=("ranking", "forecast"), required=True)

    t = sub.add_parser("train", help="train a model and write metrics, results and a checkpoint")
    common(t)
    t.add_argument("--task", choices=("ranking", "forecast"))
    t.add_argument("--model", choices=("comgnn", "reference"), default="comgnn",
                   help="reference: plain mean-aggregation GNN (needs all three ablation flags)")
    t.add_argument("--plots", action="store_true", help="also render report figures")
    ablation(t)

    for name, helptext in (("eval", "score a trained checkpoint"), ("predict", "write per-item predictions")):
        e = sub.add_parser(name, help=helptext)
        common(e)
        e.add_argument("--checkpoint", help=f"checkpoint file (default: <out>/{CHECKPOINT})")
        e.add_argument("--split", choices=("train", "valid", "test"), default="test")

    r = sub.add_parser("report", help="render figures from a run directory")
    r.add_argument("--out", required=True, help="run directory holding metrics.log and results.txt")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every parameter on toy models")
    gc.add_argument("--seed", type=_seed, default=0)
    gc.add_argument("--out", help="optional directory for a results file")

    d = sub.add_parser("describe-params", help="list parameter names and shapes")
    d.add_argument("--task", choices=("ranking", "forecast"), default="ranking")
    d.add_argument("--config")
    d.add_argument("--data", help="dataset to take the schema from (default: a generated one)")
    ablation(d)
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _ablation(args) -> AblationConfig:
    return AblationConfig.from_flags(getattr(args, "no_het", False), getattr(args, "no_edge_info", False),
                                     getattr(args, "no_meta_att", False))


def _data_task(data_dir) -> str:
    spec = Path(data_dir) / "spec.json"
    if not spec.is_file():
        raise DataError(f"{spec}: file missing (not a dataset directory?)")
    try:
        meta = json.loads(spec.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{spec}: {exc}") from None
    task = meta.get("task")
    if task not in ("ranking", "forecast"):
        raise DataError(f"{spec}: unknown task {task!r}")
    return task


def _resolve_task(args) -> str:
    task = _data_task(args.data)
    if getattr(args, "task", None) and args.task != task:
        raise UsageError(f"--task {args.task} but {args.data} holds a {task} dataset")
    return task


def _out_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"--out {p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _results_text(items) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in items)


def _ranking_cfg(values: dict, ablation: AblationConfig) -> CoMGNNConfig:
    return CoMGNNConfig(ablation=ablation, **cfgmod.pick(values, "model"))


def _forecast_cfg(values: dict, ablation: AblationConfig, data_spec: SynthDiffusionSpec) -> STConfig:
    model = {**FORECAST_MODEL_DEFAULTS["model"], **cfgmod.pick(values, "model")}
    st = {**FORECAST_MODEL_DEFAULTS["st"], **cfgmod.pick(values, "st")}
    # calendar offsets follow the dataset unless set explicitly
    day = data_spec.steps_per_day * data_spec.step_min
    st.setdefault("day_min", day)
    st.setdefault("week_min", 7 * day)
    return STConfig(spatial=CoMGNNConfig(ablation=ablation, **model), **st)


def _train_cfg(values: dict, task: str, seed: int) -> TrainConfig:
    base = dict(FORECAST_TRAIN_DEFAULTS) if task == "forecast" else {}
    base.update(cfgmod.pick(values, "train"))
    return TrainConfig(task=task, seed=seed, **base)


def _build(task: str, data_dir, values: dict, ablation: AblationConfig, seed: int, model_kind="comgnn"):
    """Load data and construct the model; returns ``(model, payload)``."""
    if task == "ranking":
        g, inst = load_ranking_task(data_dir)
        cfg = _ranking_cfg(values, ablation)
        if model_kind == "reference":
            from .reference import ReferenceRankingModel
            return ReferenceRankingModel(g, cfg, seed=seed), inst
        return RankingModel(g, cfg, seed=seed), inst
    dtask = load_diffusion_task(data_dir)
    return ForecastModel(dtask, _forecast_cfg(values, ablation, dtask.spec), seed=seed), dtask


def _settings(args, task: str, values: dict) -> dict:
    return {"task": task, "seed": args.seed, "model": getattr(args, "model", "comgnn"),
            "ablation": asdict(_ablation(args)), "config": {k: list(v) if isinstance(v, tuple) else v
                                                           for k, v in sorted(values.items())}}


def _ablation_from(d: dict) -> AblationConfig:
    return AblationConfig(**d)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    values = cfgmod.load(args.config)
    out = _out_dir(args.out)
    if args.task == "ranking":
        spec = SynthRankingSpec(seed=args.seed, **cfgmod.pick(values, "ranking_data"))
        task = gen_ranking_task(spec)
        save_ranking_task(task, out)
        g, inst = task.union()
        print(f"ranking dataset: {len(inst)} instances, {g.num_nodes} nodes, {g.num_edges} edges -> {out}")
    else:
        spec = SynthDiffusionSpec(seed=args.seed, **cfgmod.pick(values, "forecast_data"))
        task = gen_diffusion_task(spec)
        save_diffusion_task(task, out)
        print(f"forecast dataset: {task.graph.num_nodes} nodes, {task.graph.num_edges} edges, "
              f"{len(task.series)} steps -> {out}")
    return EXIT_OK


def _ranking_baseline(instances, split="test") -> float:
    sel = [i for i in instances if i.split == split and i.labels.sum() > 0]
    if not sel:
        return float("nan")
    return float(np.mean([expected_random_ap(len(i.labels), int(i.labels.sum())) for i in sel]))


def cmd_train(args) -> int:
    values = cfgmod.load(args.config)
    task = _resolve_task(args)
    abl = _ablation(args)
    if args.model == "reference":
        if task != "ranking":
            raise UsageError("--model reference is only defined for the ranking task")
        if not (args.no_het and args.no_edge_info and args.no_meta_att):
            raise UsageError("--model reference needs --no-het --no-edge-info --no-meta-att")
    _threads()
    out = _out_dir(args.out)
    tcfg = _train_cfg(values, task, args.seed)
    model, payload = _build(task, args.data, values, abl, args.seed, args.model)

    tmp_log = out / (METRICS + ".partial")
    tmp_ckpt = out / (CHECKPOINT + ".partial")
    start = time.perf_counter()
    try:
        if task == "ranking":
            res = train_ranking(model, payload, tcfg, log_path=tmp_log, checkpoint_path=tmp_ckpt)
        else:
            res = train_forecast(model, tcfg, log_path=tmp_log, checkpoint_path=tmp_ckpt)
    except BaseException:
        for p in (tmp_log, tmp_ckpt):
            p.unlink(missing_ok=True)
        raise
    elapsed = time.perf_counter() - start

    items = [("task", task), ("model", args.model), ("ablation", abl.label), ("seed", args.seed),
             ("epochs", tcfg.epochs), ("best_epoch", res.best_epoch),
             ("best_valid", res.best_valid), ("final_loss", res.final_loss)]
    items += [(f"test.{k}", v) for k, v in sorted(res.test.items())]
    if task == "ranking":
        items.append(("baseline.random.test.map", _ranking_baseline(payload)))
    else:
        to = model.valid_origins(payload.splits.get("test", np.zeros(0, dtype=int)))
        if len(to):
            base = persistence_metrics(payload, to, model.cfg.horizon)
            items += [(f"baseline.persistence.test.{k}", v) for k, v in sorted(base.items())]

    write_text_atomic(out / SETTINGS, json.dumps(_settings(args, task, values), indent=2, sort_keys=True) + "\n")
    tmp_ckpt.replace(out / CHECKPOINT)
    tmp_log.replace(out / METRICS)
    write_text_atomic(out / RESULTS, _results_text(items))
    if args.plots:
        _render(out)
    print(f"{task} [{abl.label}] seed={args.seed}: best epoch {res.best_epoch}, "
          f"valid {res.best_valid:.4f}, final loss {res.final_loss:.6g}, {elapsed:.1f}s")
    for k, v in sorted(res.test.items()):
        print(f"  test {k}: {v:.4f}")
    return EXIT_OK


def _load_run(args):
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out) / CHECKPOINT
    settings_path = ckpt.parent / SETTINGS
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    if not settings_path.is_file():
        raise UsageError(f"{settings_path} not found next to the checkpoint")
    settings = json.loads(settings_path.read_text(encoding="utf-8"))
    task = _resolve_task(args)
    if settings["task"] != task:
        raise UsageError(f"checkpoint was trained for {settings['task']}, data holds {task}")
    values = cfgmod.parse_text(cfgmod.dump({k: tuple(v) if isinstance(v, list) else v
                                            for k, v in settings["config"].items()}))
    model, payload = _build(task, args.data, values, _ablation_from(settings["ablation"]),
                            settings["seed"], settings.get("model", "comgnn"))
    try:
        load_checkpoint(model.params, ckpt)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"checkpoint does not fit this model: {exc}") from None
    return task, model, payload


def cmd_eval(args) -> int:
    task, model, payload = _load_run(args)
    out = _out_dir(args.out)
    if task == "ranking":
        sel = [i for i in payload if i.split == args.split]
        if not sel:
            raise DataError(f"no {args.split} instances in {args.data}")
        metrics = evaluate_ranking(model, sel)
    else:
        origins = model.valid_origins(payload.splits.get(args.split, np.zeros(0, dtype=int)))
        if not len(origins):
            raise DataError(f"no usable {args.split} origins in {args.data}")
        H = model.cfg.horizon
        metrics = forecast_metrics_by_horizon(predict_numpy(model, origins), targets(payload.series, origins, H),
                                              [h for h in HORIZON_STEPS if h <= H])
    items = [("task", task), ("split", args.split)] + [(f"{args.split}.{k}", v) for k, v in sorted(metrics.items())]
    write_text_atomic(out / f"eval_{args.split}.txt", _results_text(items))
    for k, v in sorted(metrics.items()):
        print(f"{args.split} {k}: {v:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    task, model, payload = _load_run(args)
    out = _out_dir(args.out)
    if task == "ranking":
        sel = [(k, i) for k, i in enumerate(payload) if i.split == args.split]
        if not sel:
            raise DataError(f"no {args.split} instances in {args.data}")
        edges = np.concatenate([i.candidates for _, i in sel])
        with T.no_grad():
            scores = model.score_edges(edges).data
        lines, pos = ["instance,candidate_edge,score"], 0
        for k, i in sel:
            for e in i.candidates:
                lines.append(f"{k},{int(e)},{float(scores[pos])!r}")
                pos += 1
    else:
        origins = model.valid_origins(payload.splits.get(args.split, np.zeros(0, dtype=int)))
        if not len(origins):
            raise DataError(f"no usable {args.split} origins in {args.data}")
        pred = predict_numpy(model, origins)           # [N, B, H]
        lines = ["origin,node_id,step,value"]
        for b, o in enumerate(origins):
            for v in range(pred.shape[0]):
                for h in range(pred.shape[2]):
                    lines.append(f"{int(o)},{v},{h + 1},{float(pred[v, b, h])!r}")
    write_text_atomic(out / PREDICTIONS, "\n".join(lines) + "\n")
    print(f"{len(lines) - 1} predictions -> {out / PREDICTIONS}")
    return EXIT_OK


def _read_results(path: Path) -> dict:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _render(run_dir: Path) -> list:
    from .plots import plot_metric_bars, plot_training_curves
    from .training import read_metric_log

    log = run_dir / METRICS
    res = run_dir / RESULTS
    if not log.is_file() or not res.is_file():
        raise UsageError(f"{run_dir} lacks {METRICS} or {RESULTS}; run train first")
    try:
        rows = read_metric_log(log)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    results = _read_results(res)
    title = f"{results.get('task', '?')} [{results.get('ablation', '?')}]"
    return [plot_training_curves(rows, run_dir / "training_curves.png", title=title),
            plot_metric_bars(results, run_dir / "test_metrics.png", title=title)]


def cmd_report(args) -> int:
    paths = _render(Path(args.out))
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, group_of, run_all

    results = run_all(args.seed)
    groups = {}
    for r in results:
        key = (r.model, group_of(r.param))
        groups[key] = max(groups.get(key, 0.0), r.error)
    worst = max(r.error for r in results)
    for (model, grp), err in sorted(groups.items()):
        print(f"{model:9s} {grp:48s} {err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
    print(f"max relative error {worst:.3e} over {len(results)} parameter tensors (tolerance {TOLERANCE:g})")
    if args.out:
        out = _out_dir(args.out)
        items = [("seed", args.seed), ("max_rel_error", worst), ("tolerance", TOLERANCE)]
        items += [(f"{m}.{g}", e) for (m, g), e in sorted(groups.items())]
        write_text_atomic(out / "gradcheck.txt", _results_text(items))
    return EXIT_OK if worst < TOLERANCE else 1


def cmd_describe(args) -> int:
    values = cfgmod.load(args.config)
    abl = _ablation(args)
    if args.data:
        task = _data_task(args.data)
        if task != args.task:
            raise UsageError(f"--task {args.task} but {args.data} holds a {task} dataset")
        model, _ = _build(task, args.data, values, abl, 0)
    elif args.task == "ranking":
        g, _ = gen_ranking_task(SynthRankingSpec(n_routes=1, seed=0)).union()
        model = RankingModel(g, _ranking_cfg(values, abl), seed=0)
    else:
        dtask = gen_diffusion_task(SynthDiffusionSpec(n_nodes=8, steps_per_day=4, n_weeks=2, seed=0))
        model = ForecastModel(dtask, _forecast_cfg(values, abl, dtask.spec), seed=0)
    total = 0
    for name, shape in describe_params(model.params):
        size = int(np.prod(shape)) if shape else 1
        total += size
        print(f"{name}\t{'x'.join(str(s) for s in shape)}")
    print(f"# {total} parameters")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "report": cmd_report, "gradcheck": cmd_gradcheck, "describe-params": cmd_describe,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphFormatError, InsufficientHistory, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, TypeError) as exc:
        # dataclass validation of config values lands here
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
