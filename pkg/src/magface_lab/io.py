"""File formats: embeddings/sample CSVs, reject-curve CSV, JSON reports, model buffers.

Floats are written with 17 significant digits so every double round-trips
exactly.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DomainError
from .toy import EmbeddingModel


def fmt(x):
    return format(float(x), ".17g")


def _clean(obj):
    """Make numpy values and non-finite floats JSON-safe."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_embeddings_csv(path, embeddings, labels, qualities=None, ids=None):
    E = np.atleast_2d(np.asarray(embeddings, dtype=float))
    n, d = E.shape
    ids = range(n) if ids is None else ids
    qualities = np.full(n, np.nan) if qualities is None else qualities
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "quality"] + [f"f{j}" for j in range(d)])
        for i, lab, q, row in zip(ids, labels, qualities, E):
            w.writerow([i, int(lab), fmt(q)] + [fmt(v) for v in row])


def read_embeddings_csv(path):
    """Returns dict with ``ids``, ``labels``, ``qualities`` and ``embeddings``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path}: empty embeddings file")
    header = rows[0]
    if header[:3] != ["id", "label", "quality"] or len(header) < 4:
        raise DomainError(f"{path}: header must start with id,label,quality,f0")
    d = len(header) - 3
    if header[3:] != [f"f{j}" for j in range(d)]:
        raise DomainError(f"{path}: feature columns must be f0..f{d - 1}")
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DomainError(f"{path}: line {k} has {len(r)} fields, expected {len(header)}")
    return {
        "ids": [r[0] for r in body],
        "labels": np.array([int(r[1]) for r in body], dtype=np.int64),
        "qualities": np.array([float(r[2]) for r in body]),
        "embeddings": np.array([[float(v) for v in r[3:]] for r in body]).reshape(len(body), d),
    }


def write_samples_csv(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "true_quality", "magnitude", "cos_theta"])
        for i in range(len(stats.magnitude)):
            w.writerow([i, int(stats.labels[i]), fmt(stats.true_quality[i]),
                        fmt(stats.magnitude[i]), fmt(stats.cos_theta[i])])


def write_reject_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reject_fraction", "fnmr", "valid"])
        for r, f, v in zip(curve.reject_fractions, curve.fnmr_values, curve.valid):
            w.writerow([fmt(r), fmt(f) if v else "nan", "true" if v else "false"])


def read_reject_curve_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["reject_fraction", "fnmr", "valid"]:
        raise DomainError(f"{path}: unexpected reject-curve header")
    body = rows[1:]
    return (np.array([float(r[0]) for r in body]),
            np.array([float(r[1]) for r in body]),
            np.array([r[2] == "true" for r in body]))


def write_model(out_dir, model, meta=None):
    """Writes ``model.bin`` (little-endian float64) and ``model.json`` (shapes)."""
    buf, manifest = model.to_flat()
    out = Path(out_dir)
    (out / "model.bin").write_bytes(buf)
    if meta is not None:
        manifest = dict(manifest, meta=meta)
    write_json(out / "model.json", manifest)


def read_model(model_dir):
    d = Path(model_dir)
    return EmbeddingModel.from_flat((d / "model.bin").read_bytes(), read_json(d / "model.json"))
