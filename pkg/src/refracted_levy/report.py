"""Figures for command-line runs. Rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
}


def _columns(header: Sequence[str], rows: List[Sequence]) -> Dict[str, np.ndarray]:
    data = np.array(rows, dtype=object)
    out = {}
    for j, name in enumerate(header):
        try:
            out[name] = data[:, j].astype(float)
        except (TypeError, ValueError):
            out[name] = data[:, j]
    return out


def _lines(ax, cols, x: str, names: Sequence[str]):
    for name in names:
        if name in cols:
            ax.plot(cols[x], cols[name], label=name)
    ax.legend()


def render(kind: str, header: Sequence[str], rows: List[Sequence], path: Path, title: str = "") -> Path:
    """Draw the standard figure for one task table and save it as PNG."""
    if not rows:
        return path
    cols = _columns(header, rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if kind == "scale":
            _lines(ax, cols, "x", ["w", "z", "u"])
            ax.set_xlabel("x")
            ax.set_yscale("log")
        elif kind in ("exit", "ruin"):
            names = [h for h in header if h not in ("x", "method") and not h.endswith(("_se", "budget"))]
            for name in names:
                se = cols.get(f"{name}_se")
                if se is not None and np.any(se > 0):
                    ax.errorbar(cols["x"], cols[name], yerr=3 * se, fmt="o", capsize=3, label=name)
                else:
                    ax.plot(cols["x"], cols[name], "o-", label=name)
            ax.legend()
            ax.set_xlabel("start level x")
        elif kind == "resolvent":
            ax.plot(cols["y"], cols["density"])
            ax.set_xlabel("y")
            ax.set_ylabel("density")
        elif kind == "simulate":
            for p in np.unique(cols["path"]):
                m = cols["path"] == p
                ax.plot(cols["t"][m], cols["u"][m], lw=0.8)
            ax.axhline(0.0, color="k", lw=0.6)
            ax.set_xlabel("t")
            ax.set_ylabel("U(t)")
        elif kind == "converge":
            ax.semilogy(cols["n"], cols["sup_error"], "o-")
            ax.set_xlabel("approximation level n")
            ax.set_ylabel("sup error")
        elif kind == "compare":
            ax.semilogy(cols["x"], np.maximum(cols["discrepancy"], 1e-18), "o", label="discrepancy")
            ax.semilogy(cols["x"], cols["tolerance"], "--", label="tolerance")
            ax.legend()
            ax.set_xlabel("x")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
