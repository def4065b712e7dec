#!/usr/bin/env python3
"""Regenerate the convergence figures from solver records.csv files.

Reads the delimited output of the solver CLI (one or two runs) and renders a
log-log plot of estimator, oscillation, and energy-error series against the
number of elements, with slope reference triangles.  Writes both a raster and
a vector image at a fixed canvas so reruns are deterministic.

Usage:
    plot_convergence.py --adaptive records_ada.csv --uniform records_uni.csv \\
        --out figure.png [--series eta,osc,energy_error] [--guides 1/2,1]
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


class MissingColumn(Exception):
    """The CSV lacks a requested series column."""


class EmptyInput(Exception):
    """The CSV has no data rows."""


DEFAULT_SERIES = ("eta", "osc", "energy_error")

SERIES_LABEL = {
    "eta": r"$\eta_\ell$",
    "osc": r"$\mathrm{osc}_\ell$",
    "energy_error": r"$E_\ell$",
    "fem_energy_error": r"$E_\ell^{\mathrm{FEM}}$",
}

SERIES_STYLE = {
    "eta": {"color": "tab:blue", "marker": "o"},
    "osc": {"color": "tab:green", "marker": "^"},
    "energy_error": {"color": "tab:red", "marker": "s"},
    "fem_energy_error": {"color": "tab:purple", "marker": "d"},
}


@dataclass
class PlotSpec:
    """What to draw: input runs, selected columns, slope guides, output path."""

    runs: list  # (tag, csv path) pairs, tag in {"ada.", "uni."}
    series: tuple = DEFAULT_SERIES
    guides: tuple = (0.5, 1.0)  # drawn as slopes -1/2, -1
    out: str = "convergence.png"
    figsize: tuple = (7.0, 5.0)
    dpi: int = 150
    companion_format: str | None = field(default=None)  # inferred from out


def read_columns(path, columns):
    """Columns of a records.csv as float lists; rows in file order."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for name in columns:
            if name not in header:
                raise MissingColumn(f"{path}: no column {name!r}")
        rows = list(reader)
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    data = {name: [float(row[name]) for row in rows] for name in columns}
    return data


def _slope_triangle(ax, x0, y0, slope, decades=0.8, color="0.3"):
    """Right triangle showing a decline of the given slope in log-log axes."""
    x1 = x0 * 10**decades
    y1 = y0 * (x1 / x0) ** (-slope)
    ax.plot([x0, x1, x1, x0], [y0, y0, y1, y0], color=color, lw=0.8, zorder=1)
    label = {0.5: "1/2", 1.0: "1", 1 / 3: "1/3"}.get(slope, f"{slope:g}")
    ax.annotate(
        "1", ((x0 * x1) ** 0.5, y0), textcoords="offset points", xytext=(0, 3),
        ha="center", fontsize=8, color=color,
    )
    ax.annotate(
        label, (x1, (y0 * y1) ** 0.5), textcoords="offset points", xytext=(4, 0),
        ha="left", va="center", fontsize=8, color=color,
    )


def plot_convergence(spec: PlotSpec):
    """Render the figure and save raster + vector files; returns the Figure."""
    fig, ax = plt.subplots(figsize=spec.figsize, dpi=spec.dpi)
    y_min, y_max = math.inf, -math.inf
    x_right = 1.0
    for tag, path in spec.runs:
        data = read_columns(path, ("n_elements",) + tuple(spec.series))
        n = data["n_elements"]
        x_right = max(x_right, max(n))
        for name in spec.series:
            values = data[name]
            pairs = [(x, y) for x, y in zip(n, values) if math.isfinite(y) and y > 0]
            if not pairs:
                continue
            xs, ys = zip(*pairs)
            style = SERIES_STYLE.get(name, {})
            linestyle = "-" if tag == "ada." else "--"
            ax.loglog(
                xs, ys, linestyle=linestyle, ms=3.5, lw=1.2,
                label=f"{SERIES_LABEL.get(name, name)} ({tag})",
                **style, alpha=1.0 if tag == "ada." else 0.65,
            )
            y_min = min(y_min, min(ys))
            y_max = max(y_max, max(ys))

    if y_min is math.inf:
        raise EmptyInput("no positive finite data in any selected series")

    for i, slope in enumerate(spec.guides):
        anchor_y = y_min * (y_max / y_min) ** (0.08 + 0.12 * i)
        _slope_triangle(ax, x_right / 10**1.6, anchor_y, slope)

    ax.set_xlabel("number of elements")
    ax.set_ylabel("error, estimator, oscillation")
    ax.grid(True, which="major", ls=":", lw=0.5, alpha=0.6)
    ax.legend(loc="lower left", fontsize=8, ncol=2)
    fig.tight_layout()

    out = Path(spec.out)
    fig.savefig(out)
    companion = spec.companion_format or ("pdf" if out.suffix != ".pdf" else "png")
    fig.savefig(out.with_suffix(f".{companion}"))
    return fig


def parse_args(argv=None) -> PlotSpec:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--adaptive", help="records.csv of an adaptive run")
    parser.add_argument("--uniform", help="records.csv of a uniform run")
    parser.add_argument("--out", default="convergence.png")
    parser.add_argument(
        "--series", default=",".join(DEFAULT_SERIES),
        help="comma-separated column names to draw",
    )
    parser.add_argument(
        "--guides", default="1/2,1",
        help="comma-separated slope guides, fractions allowed (e.g. 1/3,1)",
    )
    args = parser.parse_args(argv)
    runs = []
    if args.adaptive:
        runs.append(("ada.", args.adaptive))
    if args.uniform:
        runs.append(("uni.", args.uniform))
    if not runs:
        parser.error("need at least one of --adaptive / --uniform")

    def parse_fraction(text):
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den)
        return float(text)

    guides = tuple(parse_fraction(g) for g in args.guides.split(",") if g)
    series = tuple(s for s in args.series.split(",") if s)
    return PlotSpec(runs=runs, series=series, guides=guides, out=args.out)


def main(argv=None) -> int:
    try:
        spec = parse_args(argv)
        plot_convergence(spec)
    except (MissingColumn, EmptyInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
