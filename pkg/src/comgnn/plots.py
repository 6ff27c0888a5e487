"""Report figures.  Everything renders off-screen to files."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "legend.frameon": False,
    "svg.hashsalt": "comgnn",
    "path.simplify": False,
}


def apply_style():
    matplotlib.rcParams.update(STYLE)


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
    return path


def plot_training_curves(rows, path, title="training"):
    """Loss on the left axis, every validation metric on the right one."""
    apply_style()
    fig, ax = plt.subplots()
    loss = [(e, v) for e, s, m, v in rows if s == "train" and m == "loss"]
    if loss:
        ax.plot([p[0] for p in loss], [p[1] for p in loss], color="black", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    metrics = sorted({m for e, s, m, v in rows if s == "valid"})
    for m in metrics:
        pts = [(e, v) for e, s, mm, v in rows if s == "valid" and mm == m]
        ax2.plot([p[0] for p in pts], [p[1] for p in pts], "--", label=f"valid {m}")
    ax2.set_ylabel("validation metric")
    ax2.grid(False)
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    if h1 or h2:
        ax.legend(h1 + h2, l1 + l2, loc="best", fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def plot_metric_bars(results: dict, path, title="test metrics"):
    """Bar chart of the ``test.*`` entries of a results mapping."""
    apply_style()
    items = [(k[len("test."):], float(v)) for k, v in sorted(results.items()) if k.startswith("test.")]
    fig, ax = plt.subplots()
    if items:
        ax.bar(range(len(items)), [v for _, v in items], color="0.4")
        ax.set_xticks(range(len(items)))
        ax.set_xticklabels([k for k, _ in items], rotation=45, ha="right")
    ax.set_title(title)
    return _save(fig, path)


def plot_forecast(truth, pred, path, node=0, title=None):
    """One node's horizon-1 forecast against the observed signal."""
    apply_style()
    fig, ax = plt.subplots()
    ax.plot(truth, color="black", label="observed")
    ax.plot(pred, color="tab:red", alpha=0.8, label="forecast")
    ax.set_xlabel("origin")
    ax.set_ylabel("value")
    ax.legend()
    ax.set_title(title or f"node {node}")
    return _save(fig, path)
