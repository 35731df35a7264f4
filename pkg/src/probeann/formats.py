"""Readers and writers for the on-disk formats.

* ``.fvecs``: per row, a little-endian int32 dimension followed by that many
  little-endian float32 values.
* ``.ivecs``: same layout with int32 payloads; rows may differ in length
  (ground-truth lists shorter than ``k``).
* attribute JSON-lines: ``{"labels": [...]}`` or ``{"value": x}`` per item.
* filter JSON-lines: ``{"kind": "range", "l": .., "r": ..}`` or
  ``{"kind": "contain"|"equal", "labels": [...]}`` per query.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import AttributedDataset, AttrKind, FilterConstraint, FilteredQuery
from .errors import ContractViolation


def write_fvecs(path, X) -> None:
    X = np.ascontiguousarray(X, dtype="<f4")
    if X.ndim != 2:
        raise ContractViolation("fvecs rows must form a 2-d matrix")
    n, d = X.shape
    out = np.empty((n, d + 1), dtype="<f4")
    out[:, 0] = np.array([d], dtype="<i4").view("<f4")[0]
    out[:, 1:] = X
    Path(path).write_bytes(out.tobytes())


def read_fvecs(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    d = int(raw[0])
    if d <= 0 or raw.size % (d + 1):
        raise ContractViolation(f"{path}: not a fixed-dimension fvecs file")
    rows = raw.reshape(-1, d + 1)
    if np.any(rows[:, 0] != d):
        raise ContractViolation(f"{path}: inconsistent row dimensions")
    return np.ascontiguousarray(rows[:, 1:].view("<f4"), dtype=np.float32)


def write_ivecs(path, rows) -> None:
    """Write variable-length integer rows."""
    parts = []
    for row in rows:
        row = np.asarray(row, dtype="<i4")
        parts.append(np.array([len(row)], dtype="<i4"))
        parts.append(row)
    data = np.concatenate(parts) if parts else np.zeros(0, dtype="<i4")
    Path(path).write_bytes(data.astype("<i4").tobytes())


def read_ivecs(path) -> list[np.ndarray]:
    raw = np.fromfile(path, dtype="<i4")
    rows, pos = [], 0
    while pos < raw.size:
        count = int(raw[pos])
        if count < 0 or pos + 1 + count > raw.size:
            raise ContractViolation(f"{path}: truncated ivecs row at word {pos}")
        rows.append(raw[pos + 1 : pos + 1 + count].astype(np.int64))
        pos += 1 + count
    return rows


def write_attributes(path, dataset: AttributedDataset) -> None:
    with open(path, "w") as fh:
        for i in range(dataset.n):
            if dataset.attr_kind is AttrKind.NUMERIC:
                fh.write(json.dumps({"value": float(dataset.values[i])}) + "\n")
            else:
                fh.write(json.dumps({"labels": list(dataset.labels_of(i))}) + "\n")


def read_attributes(path) -> tuple[AttrKind, list]:
    kinds, items = set(), []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "labels" in obj:
                kinds.add(AttrKind.LABELS)
                items.append(obj["labels"])
            elif "value" in obj:
                kinds.add(AttrKind.NUMERIC)
                items.append(float(obj["value"]))
            else:
                raise ContractViolation(f"{path}:{lineno + 1}: no labels/value field")
    if len(kinds) != 1:
        raise ContractViolation(f"{path}: attribute kind must be uniform, saw {sorted(k.value for k in kinds)}")
    return kinds.pop(), items


def load_dataset(vectors_path, attributes_path) -> AttributedDataset:
    X = read_fvecs(vectors_path)
    kind, items = read_attributes(attributes_path)
    if len(items) != len(X):
        raise ContractViolation(f"{len(X)} vectors but {len(items)} attributes")
    if kind is AttrKind.NUMERIC:
        return AttributedDataset.from_values(X, np.asarray(items))
    return AttributedDataset.from_labels(X, items)


def save_dataset(vectors_path, attributes_path, dataset: AttributedDataset) -> None:
    write_fvecs(vectors_path, dataset.vectors)
    write_attributes(attributes_path, dataset)


def write_queries(prefix, queries: list[FilteredQuery]) -> None:
    """Write ``<prefix>.fvecs`` and ``<prefix>.filters.jsonl``."""
    prefix = str(prefix)
    write_fvecs(prefix + ".fvecs", np.stack([q.vector for q in queries]))
    with open(prefix + ".filters.jsonl", "w") as fh:
        for q in queries:
            fh.write(json.dumps({**q.constraint.to_json(), "k": q.k}) + "\n")


def read_queries(prefix, k: int | None = None) -> list[FilteredQuery]:
    prefix = str(prefix)
    X = read_fvecs(prefix + ".fvecs")
    out = []
    with open(prefix + ".filters.jsonl") as fh:
        filters = [json.loads(line) for line in fh if line.strip()]
    if len(filters) != len(X):
        raise ContractViolation(f"{prefix}: {len(X)} vectors but {len(filters)} filters")
    for x, obj in zip(X, filters):
        qk = k if k is not None else int(obj.get("k", 10))
        out.append(FilteredQuery(x, FilterConstraint.from_json(obj), qk))
    return out
