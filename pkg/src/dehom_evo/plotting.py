"""Static SVG plots of Pareto fronts and hypervolume histories.

Figures are rendered without pyplot and with a fixed hash salt and no date
stamp, so identical inputs give identical bytes.
"""
from __future__ import annotations

import io

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .io import atomic_write_text

_RC = {"svg.hashsalt": "dehom-evo", "svg.fonttype": "none", "path.simplify": False}


def _svg(fig: Figure) -> str:
    FigureCanvasSVG(fig)
    buf = io.StringIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    return buf.getvalue()


def pareto_svg(objectives, feasible, labels=("volume fraction", "objective"), title="") -> str:
    """Scatter of a population: feasible designs as filled dots, infeasible as crosses."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5, 4))
        ax = fig.add_subplot()
        ok = [tuple(f) for f, good in zip(objectives, feasible) if good]
        bad = [tuple(f) for f, good in zip(objectives, feasible) if not good]
        if ok:
            xs, ys = zip(*ok)
            ax.scatter(xs, ys, s=18, c="tab:blue", label="feasible", gid="pareto-feasible")
        if bad:
            xs, ys = zip(*bad)
            ax.scatter(xs, ys, s=18, c="tab:red", marker="x", label="infeasible", gid="pareto-infeasible")
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        if title:
            ax.set_title(title)
        if ok or bad:
            ax.legend(loc="best")
        fig.tight_layout()
        return _svg(fig)


def hypervolume_svg(history) -> str:
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5, 4))
        ax = fig.add_subplot()
        ax.plot(range(len(history)), history, "-o", ms=3, c="tab:blue", gid="hv-line")
        ax.set_xlabel("generation")
        ax.set_ylabel("hypervolume")
        fig.tight_layout()
        return _svg(fig)


def write_svg(path, text: str) -> None:
    atomic_write_text(path, text)
