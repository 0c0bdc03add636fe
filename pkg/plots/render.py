#!/usr/bin/env python3
"""Offline chart rendering for the CLI's CSV outputs.

Kinds:
  histogram        single `leading_term` column (top-k per-example values);
                   drawn on a log-scale x axis
  depth_scaling    `depth,leading_term,spectral_baseline,log_ratio`; the two
                   series are drawn on a log-scale y axis against depth
  training_curves  `epoch,train_loss,train_acc,test_acc,jac_frob_sq,leading_term`

Never recomputes anything: pure visualization of the CSV bytes.  Malformed or
empty input exits nonzero without writing a file.
"""

import argparse
import csv
import sys

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

HEADERS = {
    "histogram": ["leading_term"],
    "depth_scaling": ["depth", "leading_term", "spectral_baseline", "log_ratio"],
    "training_curves": [
        "epoch",
        "train_loss",
        "train_acc",
        "test_acc",
        "jac_frob_sq",
        "leading_term",
    ],
}

FIGSIZE = (6.0, 4.0)


def read_rows(path, kind):
    with open(path, newline="") as f:
        lines = [ln for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise SystemExit(f"error: {path}: no data")
    reader = csv.reader(lines)
    header = next(reader)
    if header != HEADERS[kind]:
        raise SystemExit(
            f"error: {path}: header {header} does not match the "
            f"{kind} contract {HEADERS[kind]}"
        )
    rows = []
    for idx, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise SystemExit(f"error: {path}: row {idx} has {len(row)} fields")
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise SystemExit(f"error: {path}: row {idx}: {exc}")
    if not rows:
        raise SystemExit(f"error: {path}: no data rows")
    return rows


def render_histogram(rows, out, log_y):
    vals = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    positive = [v for v in vals if v > 0]
    if positive:
        lo, hi = min(positive), max(positive)
        if lo == hi:
            lo, hi = lo * 0.9, hi * 1.1
        bins = np.geomspace(lo, hi, 24)
        ax.hist(positive, bins=bins, color="#4878d0", edgecolor="white")
        ax.set_xscale("log")
    else:
        ax.hist(vals, bins=24, color="#4878d0", edgecolor="white")
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("per-example leading term")
    ax.set_ylabel("count")
    ax.set_title(f"largest {len(vals)} leading terms")
    fig.tight_layout()
    fig.savefig(out)


def render_depth_scaling(rows, out, log_y):
    depths = [r[0] for r in rows]
    lt = [r[1] for r in rows]
    sb = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(depths, lt, "o-", label="leading term", color="#4878d0")
    ax.plot(depths, sb, "s--", label="spectral product", color="#d65f5f")
    ax.set_yscale("log")
    ax.set_xlabel("depth (weight matrices)")
    ax.set_ylabel("complexity (log scale)")
    ax.set_title("leading term vs spectral product")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)


def render_training_curves(rows, out, log_y):
    epochs = [r[0] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0))
    axes[0].plot(epochs, [r[1] for r in rows], label="train loss", color="#4878d0")
    axes[0].plot(epochs, [r[4] for r in rows], label="jacobian norm sq",
                 color="#d65f5f")
    if log_y:
        axes[0].set_yscale("log")
    axes[0].set_xlabel("epoch")
    axes[0].legend()
    axes[1].plot(epochs, [r[2] for r in rows], label="train acc", color="#4878d0")
    axes[1].plot(epochs, [r[3] for r in rows], label="test acc", color="#d65f5f")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylim(0.0, 1.02)
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(out)


RENDERERS = {
    "histogram": render_histogram,
    "depth_scaling": render_depth_scaling,
    "training_curves": render_training_curves,
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--kind", required=True, choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="inp", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--log", action="store_true", help="log-scale y axis")
    args = parser.parse_args(argv)
    rows = read_rows(args.inp, args.kind)
    RENDERERS[args.kind](rows, args.out, args.log)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
