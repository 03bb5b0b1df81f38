"""Parity report: aligned text table, key=value block and figures."""

from __future__ import annotations

import os

import numpy as np

from .experiment import PUBLISHED_CCKS2017_LSTM_CRF, ParityReport
from .plotting import SCHEME_COLORS, new_figure, savefig


def render_table(report: ParityReport, reference: bool = True) -> str:
    head = f"{'variant':<11} {'scheme':<10} {'P':>8} {'R':>8} {'F1':>8} {'dF1':>8} {'sec':>7}  checkpoint"
    lines = [head, "-" * len(head)]
    for r in report.rows:
        lines.append(f"{r.name:<11} {r.scheme:<10} {100 * r.precision:8.4f} {100 * r.recall:8.4f} "
                     f"{100 * r.f1:8.4f} {100 * r.delta_f1:+8.4f} {r.seconds:7.1f}  "
                     f"{r.checkpoint_sha256[:16]}")
    lines.append("")
    lines.append(f"seed={report.seed} vocab_mode={report.config.get('vocab_mode', '?')} "
                 f"identical_f1={str(report.all_f1_identical).lower()} "
                 f"identical_checkpoints={str(report.all_checkpoints_identical).lower()}")
    if reference:
        lines.append("")
        lines.append("reference F1, CCKS2017 LSTM-CRF (published; different data and scale):")
        base = PUBLISHED_CCKS2017_LSTM_CRF[0][1]
        for name, f1 in PUBLISHED_CCKS2017_LSTM_CRF:
            lines.append(f"  {name:<14} {f1:6.2f}  dF1 {f1 - base:+.2f}")
    return "\n".join(lines) + "\n"


def render_kv(report: ParityReport) -> str:
    """Machine-readable block; floats use repr so values round-trip exactly."""
    out = [f"seed={report.seed}"]
    out += [f"config.{k}={v}" for k, v in report.config.items()]
    out.append(f"rows={len(report.rows)}")
    for r in report.rows:
        p = f"row.{r.name}"
        out += [f"{p}.scheme={r.scheme}", f"{p}.precision={r.precision!r}",
                f"{p}.recall={r.recall!r}", f"{p}.f1={r.f1!r}", f"{p}.delta_f1={r.delta_f1!r}",
                f"{p}.seconds={r.seconds:.3f}", f"{p}.checkpoint_sha256={r.checkpoint_sha256}"]
    out.append(f"identical_f1={str(report.all_f1_identical).lower()}")
    out.append(f"identical_checkpoints={str(report.all_checkpoints_identical).lower()}")
    out.append(f"max_abs_delta_f1={report.max_abs_delta!r}")
    return "\n".join(out) + "\n"


def render(report: ParityReport) -> str:
    return render_table(report) + "\n[parity]\n" + render_kv(report)


def plot_f1(report: ParityReport, out_dir) -> str:
    fig, ax = new_figure()
    names = [r.name for r in report.rows]
    f1 = np.array([100 * r.f1 for r in report.rows])
    ax.bar(names, f1, color=[SCHEME_COLORS.get(n, "#999999") for n in names])
    lo = max(0.0, f1.min() - 5.0)
    ax.set_ylim(lo, min(100.0, f1.max() + 2.0))
    for i, v in enumerate(f1):
        ax.text(i, v + 0.2, f"{v:.2f}", ha="center", va="bottom", fontsize=7)
    ax.set_ylabel("span F1 (%)")
    ax.set_title(f"Test F1 per encryption scheme (seed {report.seed})")
    return savefig(fig, "parity_f1", out_dir)


def plot_loss(report: ParityReport, out_dir) -> str:
    fig, ax = new_figure()
    for r in report.rows:
        epochs = np.arange(1, len(r.loss_history) + 1)
        ax.plot(epochs, r.loss_history, label=r.name, color=SCHEME_COLORS.get(r.name),
                lw=1.2, alpha=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training NLL")
    ax.legend(frameon=False)
    return savefig(fig, "parity_loss", out_dir)


def plot_seed_deltas(reports: list[ParityReport], out_dir) -> str:
    """Per-seed delta F1 of each cipher variant against plaintext."""
    fig, ax = new_figure()
    names = [r.name for r in reports[0].rows[1:]]
    for i, name in enumerate(names):
        ys = [100 * next(r.delta_f1 for r in rep.rows if r.name == name) for rep in reports]
        ax.scatter(np.full(len(ys), i), ys, color=SCHEME_COLORS.get(name), s=14)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(range(len(names)), names)
    ax.set_ylabel("F1 - plaintext F1 (points)")
    ax.set_title(f"Delta F1 over {len(reports)} seeds")
    return savefig(fig, "parity_seed_deltas", out_dir)


def write_report(report: ParityReport, out_dir, figures: bool = True) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "parity_report.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render(report))
    written = [path]
    if figures:
        written += [plot_f1(report, out_dir), plot_loss(report, out_dir)]
    return written
