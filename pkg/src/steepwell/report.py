"""Deterministic CSV/JSON writers and the figure rendering used by the
report paths.

Floats are serialized with repr (shortest round-trip form), JSON keys are
sorted and no timestamps are embedded, so identical inputs produce
byte-identical delimited outputs.  Figures are rendered headless next to the
delimited files; they carry no reproducibility guarantee of their own.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def to_jsonable(obj):
    """Strict-JSON view: non-finite floats become null, keys stay sorted by
    the writer."""
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_csv(path, header: list[str], rows: list[list]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def render_bifurcation_figure(path, rows: list[dict], lambda1: float) -> None:
    """Branch energies and well norms against the linear coupling."""
    lams = [r["lam"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    for branch, marker in (("minus", "o"), ("plus", "s")):
        xs = [r["lam"] for r in rows if r.get(f"{branch}_converged")]
        js = [r[f"{branch}_J"] for r in rows if r.get(f"{branch}_converged")]
        ns = [r[f"{branch}_munorm"] for r in rows if r.get(f"{branch}_converged")]
        if xs:
            ax1.plot(xs, js, marker=marker, label=branch)
            ax2.plot(xs, ns, marker=marker, label=branch)
    for ax, ylabel in ((ax1, "branch energy"), (ax2, "well norm")):
        if lams:
            ax.axvline(lambda1, color="k", lw=0.8, ls="--")
        ax.set_xlabel("lambda")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
    ax1.axhline(0.0, color="k", lw=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eigen_figure(path, table: list[dict], lambda1: float) -> None:
    """Principal eigenvalue and eigenfunction gap against the well depth."""
    mus = [r["mu"] for r in table]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.semilogx(mus, [r["lambda_tilde"] for r in table], marker="o")
    ax1.axhline(lambda1, color="k", lw=0.8, ls="--", label="well-restricted value")
    ax1.set_xlabel("mu")
    ax1.set_ylabel("principal eigenvalue")
    ax1.legend(fontsize=8)
    ax2.loglog(mus, [max(r["l2_gap"], 1e-16) for r in table], marker="o")
    ax2.set_xlabel("mu")
    ax2.set_ylabel("L2 eigenfunction gap")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_solution_figure(path, grid, named_solutions: dict) -> None:
    """Solution profiles (1D sections; 2D plots the midline section)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    if grid.dim == 1:
        x = grid.axes[0]
        for name, vals in named_solutions.items():
            ax.plot(x, vals, label=name)
        ax.set_xlabel("x")
    else:
        x = grid.axes[0]
        mid = grid.shape[1] // 2
        for name, vals in named_solutions.items():
            ax.plot(x, vals[:, mid], label=name)
        ax.set_xlabel("x (midline section)")
    ax.set_ylabel("u")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
