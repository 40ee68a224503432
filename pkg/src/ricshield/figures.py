"""Figure rendering for the report paths.

Every CSV-producing command also drops a PNG next to its delimited output;
the CSVs stay the normative interface, the figures are the human view.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import InvarianceReport, PatchSweepResult, ReportRow
from .metrics import ConfidenceSweep
from .models import History
from .ric import LoopReport

_DPI = 150


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_history(history: History, path) -> None:
    epochs = [r.epoch for r in history.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r.train_loss for r in history.rows], label="train loss")
    ax1.plot(epochs, [r.val_loss for r in history.rows], label="val loss")
    if history.best_epoch:
        ax1.axvline(history.best_epoch, color="grey", ls=":", lw=1, label="best epoch")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r.val_accuracy for r in history.rows], color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0, 1)
    _save(fig, path)


def render_report(rows: list[ReportRow], path) -> None:
    names = [r.model_name for r in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, [r.scores.accuracy for r in rows], width=0.4, label="accuracy")
    ax.bar(x + 0.2, [r.scores.macro_f1 for r in rows], width=0.4, label="macro F1")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("test metrics per model")
    _save(fig, path)


def render_confidence_sweep(sweeps: dict[str, ConfidenceSweep], path) -> None:
    """Accuracy and data-usage trends against the confidence threshold."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for name, sweep in sweeps.items():
        ts = [p.threshold for p in sweep.points]
        ax1.plot([t for t, p in zip(ts, sweep.points) if p.accuracy is not None],
                 [p.accuracy for p in sweep.points if p.accuracy is not None],
                 marker="o", ms=3, label=name)
        ax2.plot(ts, [p.coverage for p in sweep.points], marker="o", ms=3, label=name)
    ax1.set_xlabel("confidence threshold")
    ax1.set_ylabel("accuracy on retained samples")
    ax2.set_xlabel("confidence threshold")
    ax2.set_ylabel("coverage")
    ax2.set_ylim(0, 1.02)
    ax1.legend()
    _save(fig, path)


def render_patch_sweep(result: PatchSweepResult, path) -> None:
    names = sorted({c.model_name for c in result.cells})
    sizes = sorted({c.patch_size for c in result.cells})
    x = np.arange(len(sizes))
    width = 0.8 / len(names)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, name in enumerate(names):
        ys = [result.cell(name, s).scores.macro_f1 for s in sizes]
        ax.bar(x + (i - (len(names) - 1) / 2) * width, ys, width=width, label=name)
    ax.set_xticks(x, [f"p={s}" for s in sizes])
    ax.set_ylabel("macro F1")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("patch-size sweep")
    _save(fig, path)


def render_invariance(report: InvarianceReport, path) -> None:
    labels = list(report.per_class_accuracy) + ["overall"]
    values = list(report.per_class_accuracy.values()) + [report.overall_accuracy]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(len(labels)), values, color="tab:blue")
    ax.axhline(report.mean_agreement, color="tab:red", ls="--", lw=1,
               label=f"mean agreement {report.mean_agreement:.2f}")
    ax.set_xticks(np.arange(len(labels)), labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy over fresh encryptions")
    ax.legend()
    _save(fig, path)


def render_rtt(report: LoopReport, path) -> None:
    done = [t for t in report.timings if t is not None]
    rtts = [t.rtt for t in done]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(np.arange(1, len(rtts) + 1), rtts, marker=".", lw=1, label="per-report RTT")
    if rtts:
        ax.axhline(report.p95_rtt, color="tab:orange", ls="--", lw=1,
                   label=f"p95 {report.p95_rtt * 1e3:.0f} ms")
    ax.axhline(report.budget_s, color="tab:red", ls=":", lw=1,
               label=f"budget {report.budget_s:.1f} s")
    ax.set_xlabel("report #")
    ax.set_ylabel("RTT (s)")
    ax.legend()
    _save(fig, path)
