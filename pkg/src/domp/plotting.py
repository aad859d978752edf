"""Render ``domp`` CSV output to PNG figures.

Usage::

    domp-plot results.csv [more.csv ...]

Each figure is written next to its CSV with the suffix replaced by ``.png``.
The file kind is detected from the column header: sweep summaries plot mean
NMSE in dB per estimator, ``lemma1`` output plots power capture against K,
and ``kernel-dump`` output is drawn as a magnitude image.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np


def read_csv(path):
    """Comment lines (``#``) and the column header/rows of a ``domp`` CSV."""
    comments, rows = [], []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                rows.append(line)
    reader = csv.DictReader(rows)
    return comments, reader.fieldnames or [], list(reader)


def _axis_name(comments):
    for c in comments:
        if c.startswith("axis = "):
            return c.split("=", 1)[1].strip()
    return "axis_value"


def _sweep_means(rows, per_trial):
    """``{estimator: (axis values, mean nmse)}``; aggregates per-trial rows on the fly."""
    groups = {}
    for r in rows:
        if per_trial and r.get("error"):
            continue
        key = r["nmse"] if per_trial else r["mean_nmse"]
        groups.setdefault(r["estimator"], {}).setdefault(float(r["axis_value"]), []).append(float(key))
    out = {}
    for est, by_axis in groups.items():
        xs = sorted(by_axis)
        out[est] = (np.array(xs), np.array([np.mean(by_axis[x]) for x in xs]))
    return out


def plot_file(path, plt) -> Path:
    comments, fields, rows = read_csv(path)
    png = Path(path).with_suffix(".png")
    fig, ax = plt.subplots(figsize=(6, 4.2))
    if "mean_nmse" in fields or "nmse" in fields:
        for est, (x, y) in _sweep_means(rows, per_trial="nmse" in fields).items():
            with np.errstate(divide="ignore"):
                ax.plot(x, 10 * np.log10(y), marker="o", label=est)
        name = _axis_name(comments)
        ax.set_xlabel({"snr_db": "SNR (dB)", "measurements": "measurements"}.get(name, name))
        ax.set_ylabel("NMSE (dB)")
        ax.grid(True, alpha=0.3)
        ax.legend()
    elif "eta_worst_oracle" in fields:
        K = np.array([int(r["K"]) for r in rows])
        for col, label in (("eta_best", "on grid"), ("eta_worst_oracle", "half-cell offset")):
            ax.plot(K, [float(r[col]) for r in rows], label=label)
        closed = np.array([float(r["eta_worst_closed"]) for r in rows])
        ok = np.isfinite(closed)
        ax.plot(K[ok], closed[ok], "x", label="closed form")
        ax.set_xscale("log")
        ax.set_xlabel("K")
        ax.set_ylabel("fraction of power")
        ax.grid(True, alpha=0.3)
        ax.legend()
    elif "magnitude" in fields:
        m = np.array([int(r["m"]) for r in rows])
        n = np.array([int(r["n"]) for r in rows])
        grid = np.zeros((n.max(), m.max()))
        grid[n - 1, m - 1] = [float(r["magnitude"]) for r in rows]
        im = ax.imshow(grid, origin="lower", extent=(0.5, m.max() + 0.5, 0.5, n.max() + 0.5))
        fig.colorbar(im, ax=ax, label="|H_V|")
        ax.set_xlabel("m (BS beam)")
        ax.set_ylabel("n (UE beam)")
    else:
        plt.close(fig)
        raise ValueError(f"{path}: unrecognised columns {fields}")
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return png


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="domp-plot", description="Render domp CSV files to PNG.")
    parser.add_argument("csv", nargs="+", help="CSV files written by domp")
    args = parser.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    status = 0
    for path in args.csv:
        try:
            print(plot_file(path, plt))
        except (OSError, ValueError, KeyError) as exc:
            print(f"domp-plot: {exc}", file=sys.stderr)
            status = 3
    return status


if __name__ == "__main__":
    sys.exit(main())
