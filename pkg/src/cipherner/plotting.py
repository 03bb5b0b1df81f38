"""Matplotlib defaults and file output for report figures."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.2),
    "savefig.bbox": "tight",
    # fixed metadata so repeated runs write identical PNGs
    "svg.hashsalt": "cipherner",
}

SCHEME_COLORS = {
    "plaintext": "#4d4d4d",
    "shift": "#1b9e77",
    "base64": "#d95f02",
    "md5": "#7570b3",
    "sha256b64": "#e7298a",
}


def new_figure(**kwargs):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(**kwargs)
    return fig, ax


def savefig(fig, name, out_dir, ftype="png", dpi=150):
    """Write ``fig`` to ``out_dir/name.ftype`` and close it; returns the path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.{ftype}")
    with plt.rc_context(STYLE):
        fig.savefig(path, dpi=dpi, metadata={"Software": None} if ftype == "png" else None)
    plt.close(fig)
    return path
