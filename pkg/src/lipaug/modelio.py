"""Model and dataset persistence.

Models are human-diffable JSON with a fixed key order; floats serialize via
repr so save -> load -> save is byte-identical.  Datasets are CSV with header
``f1,...,fd,label``.
"""

from __future__ import annotations

import json

import numpy as np

from .network import SmoothNet

__all__ = ["save_model", "load_model", "save_dataset_csv", "load_dataset_csv"]

MODEL_FORMAT_VERSION = 1


def save_model(net: SmoothNet, path, metadata=None) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "activation": net.activation.name,
        "weights": [w.tolist() for w in net.weights],
        "metadata": metadata or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_model(path):
    """Returns (net, metadata).  Dimension and finiteness checks happen inside
    SmoothNet construction, so a corrupted file fails here."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {doc.get('format_version')!r}")
    net = SmoothNet(doc["weights"], doc["activation"])
    return net, doc.get("metadata", {})


def save_dataset_csv(path, x, y) -> None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    d = x.shape[1]
    lines = [",".join([f"f{k + 1}" for k in range(d)] + ["label"])]
    for row, label in zip(x, y):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset_csv(path):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"dataset file {path} is empty")
    header = lines[0].split(",")
    if header[-1] != "label" or not all(
        h == f"f{k + 1}" for k, h in enumerate(header[:-1])
    ):
        raise ValueError(f"dataset file {path} has unexpected header {header}")
    xs, ys = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        xs.append([float(v) for v in parts[:-1]])
        ys.append(int(parts[-1]))
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=int)
