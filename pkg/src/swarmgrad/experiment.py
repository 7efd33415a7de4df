"""Experiment harness: runs the configured {dynamic} x {model} x {seed}
grid with in-process swarms, writes per-run trajectory logs, a runs table,
a summary table (mean / spread / best per cell), and renders loss-curve
figures next to the delimited output."""

from __future__ import annotations

import csv
import json
import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .config import (  # noqa: E402
    ExperimentConfig,
    build_dynamics,
    build_model_and_data,
    learning_rate_for,
)
from .core import Dynamic  # noqa: E402
from .data import accuracy  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .worker import run_swarm_inprocess  # noqa: E402

__all__ = ["RunOutcome", "run_experiment", "plot_emit", "write_summary"]


class RunOutcome(dict):
    """Per-run scalar metrics (one swarm run = one model+dynamic+seed)."""


def _model_label(model_section: dict) -> str:
    if model_section["kind"] == "benchmark":
        return f"{model_section['name']}{model_section['dim']}"
    return str(model_section.get("label", model_section["arch"]))


def _run_one(cfg: ExperimentConfig, model_section: dict, dynamic: Dynamic,
             seed: int, log_dir: Path) -> tuple[RunOutcome, list]:
    model_factory, train, test = build_model_and_data(cfg, model_section)
    dynamics = build_dynamics(cfg, dynamic)
    swarm = cfg.swarm
    run_id = f"{_model_label(model_section)}-{dynamic.value}-s{seed}"

    eval_fn = None
    if test is not None:
        probe_model = model_factory()

        def eval_fn(params):
            preds = probe_model.predict(params, test.inputs)
            return {"test_accuracy": accuracy(preds, test.labels)}

    log_dir.mkdir(parents=True, exist_ok=True)
    results = run_swarm_inprocess(
        model_factory, train, dynamics,
        epochs=int(swarm["epochs"]), batch_size=int(swarm["batch_size"]),
        learning_rates=learning_rate_for(cfg, seed), base_seed=seed,
        run_id=run_id, num_particles=int(swarm["num_particles"]),
        log_dir=str(log_dir),
        exchange_gradient=str(swarm["exchange_gradient"]))

    best_losses = [r.best_loss for r in results]
    outcome = RunOutcome(
        model=_model_label(model_section), dynamic=dynamic.value, seed=seed,
        run_id=run_id,
        best_loss=min(best_losses),
        median_best_loss=float(np.median(best_losses)),
        final_loss=min(r.final_loss for r in results))
    if test is not None:
        final_accs = [r.trajectory[-1].get("test_accuracy", 0.0) for r in results]
        outcome["final_accuracy"] = max(final_accs)
    return outcome, results


def _cell_rows(outcomes: list[RunOutcome]) -> list[dict]:
    cells: dict[tuple[str, str], list[RunOutcome]] = {}
    for o in outcomes:
        cells.setdefault((o["model"], o["dynamic"]), []).append(o)
    rows = []
    for (model, dynamic), runs in sorted(cells.items()):
        losses = [r["best_loss"] for r in runs]
        row = {"model": model, "dynamic": dynamic, "runs": len(runs),
               "loss_mean": np.mean(losses), "loss_std": np.std(losses),
               "loss_best": min(losses)}
        accs = [r["final_accuracy"] for r in runs if "final_accuracy" in r]
        if accs:
            row.update(acc_mean=np.mean(accs), acc_std=np.std(accs),
                       acc_max=max(accs))
        rows.append(row)
    return rows


def write_summary(outcomes: list[RunOutcome], out_dir: Path) -> tuple[Path, Path]:
    """runs.csv (one row per run) and summary.csv (mean/std/best per cell)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path = out_dir / "runs.csv"
    run_fields = ["model", "dynamic", "seed", "run_id", "best_loss",
                  "median_best_loss", "final_loss", "final_accuracy"]
    with open(runs_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=run_fields)
        writer.writeheader()
        for o in outcomes:
            writer.writerow({k: o.get(k, "") for k in run_fields})

    summary_path = out_dir / "summary.csv"
    cell_fields = ["model", "dynamic", "runs", "loss_mean", "loss_std",
                   "loss_best", "acc_mean", "acc_std", "acc_max"]
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cell_fields)
        writer.writeheader()
        for row in _cell_rows(outcomes):
            formatted = {}
            for k in cell_fields:
                v = row.get(k, "")
                if k not in ("model", "dynamic", "runs") and v != "":
                    v = repr(float(v))
                formatted[k] = v
            writer.writerow(formatted)
    return runs_path, summary_path


def _loss_series(log_path: Path) -> tuple[list[int], list[float], list[float]]:
    epochs, losses, accs = [], [], []
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("event") == "epoch":
                epochs.append(rec["epoch"])
                losses.append(rec["loss"])
                accs.append(rec.get("test_accuracy"))
    return epochs, losses, accs


def _render_cell_figure(cell: str, log_paths: list[Path], fig_path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    plotted = 0
    for p in sorted(log_paths):
        epochs, losses, _ = _loss_series(p)
        if epochs:
            ax.plot(epochs, losses, alpha=0.6, linewidth=1.0, label=p.stem)
            plotted += 1
    ax.set_xlabel("epoch")
    ax.set_ylabel("full-batch loss")
    ax.set_title(cell)
    if 0 < plotted <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def plot_emit(log_paths, out_dir, stem: str = "series") -> tuple[Path, Path]:
    """Per-epoch loss (and accuracy, when logged) series as CSV plus a
    rendered PNG of the same curves.

    Each trajectory log becomes one column; the CSV is header-only when the
    logs are empty.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_paths = [Path(p) for p in log_paths]
    series = {}
    max_len = 0
    any_acc = False
    for p in log_paths:
        epochs, losses, accs = _loss_series(p)
        series[p.stem] = (losses, accs)
        max_len = max(max_len, len(losses))
        any_acc = any_acc or any(a is not None for a in accs)

    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["epoch"]
        for name in sorted(series):
            header.append(f"{name}_loss")
            if any_acc:
                header.append(f"{name}_accuracy")
        writer.writerow(header)
        for e in range(max_len):
            row = [e]
            for name in sorted(series):
                losses, accs = series[name]
                row.append(repr(losses[e]) if e < len(losses) else "")
                if any_acc:
                    a = accs[e] if e < len(accs) else None
                    row.append(repr(a) if a is not None else "")
            writer.writerow(row)

    fig_path = out_dir / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    plotted = 0
    for name in sorted(series):
        losses, _ = series[name]
        if losses:
            ax.plot(range(len(losses)), losses, linewidth=1.0, label=name)
            plotted += 1
    ax.set_xlabel("epoch")
    ax.set_ylabel("full-batch loss")
    if 0 < plotted <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path, fig_path


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute the configured grid; returns paths and per-run outcomes."""
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures_dir = out / "figures"
    figures_dir.mkdir(exist_ok=True)

    dynamics = cfg.grid_dynamics
    if not dynamics:
        raise ConfigError("grid.dynamics must not be empty", key="grid.dynamics")

    outcomes: list[RunOutcome] = []
    for model_section in cfg.model_sections:
        for dynamic in dynamics:
            cell = f"{_model_label(model_section)}-{dynamic.value}"
            log_dir = out / "logs" / cell
            cell_logs: list[Path] = []
            for seed in cfg.seeds:
                outcome, _results = _run_one(cfg, model_section, dynamic, seed,
                                             log_dir)
                outcomes.append(outcome)
                cell_logs.extend(sorted(
                    log_dir.glob(f"trajectory_{outcome['run_id']}_p*.jsonl")))
            _render_cell_figure(cell, cell_logs, figures_dir / f"{cell}-loss.png")

    runs_path, summary_path = write_summary(outcomes, out)

    # One comparison figure per model: mean loss per epoch, one curve per dynamic.
    for model_section in cfg.model_sections:
        label = _model_label(model_section)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for dynamic in dynamics:
            curves = []
            for p in sorted((out / "logs" / f"{label}-{dynamic.value}")
                            .glob("trajectory_*.jsonl")):
                _, losses, _ = _loss_series(p)
                if losses:
                    curves.append(losses)
            if curves:
                shortest = min(len(c) for c in curves)
                mean_curve = np.mean([c[:shortest] for c in curves], axis=0)
                ax.plot(range(shortest), mean_curve, label=dynamic.value)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean full-batch loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(figures_dir / f"{label}-comparison.png", dpi=120)
        plt.close(fig)

    return {"outcomes": outcomes, "runs_csv": runs_path,
            "summary_csv": summary_path, "figures_dir": figures_dir,
            "out_dir": out}
