"""Schema checks for every CSV the pipeline emits.

Each emitted file is validated right after writing; downstream consumers can
re-validate independently. Checks cover the header, per-row field counts and
parseability, and the small value domains (labels, sources, statuses).
"""

from __future__ import annotations

import csv

DATASET = "dataset"
SAMPLES = "samples"
LATENT = "latent"
THEOREM = "theorem"
RUNRECORD = "runrecord"

HEADERS = {
    DATASET: ["x1_a", "x1_b", "x2"],
    SAMPLES: ["x1_a", "x1_b", "source"],
    LATENT: ["g_a", "g_b", "modality", "label"],
    THEOREM: ["trial", "class", "kind", "bound", "lm", "stderr", "gap",
              "status"],
}

RUNRECORD_PREFIX = ["epoch", "objective"]
RUNRECORD_SUFFIX = ["mean_err_c0", "var_ratio_a_c0", "var_ratio_b_c0",
                    "mean_err_c1", "var_ratio_a_c1", "var_ratio_b_c1",
                    "seconds"]


class SchemaError(ValueError):
    """An emitted CSV does not match its documented schema."""


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return rows[0], rows[1:]


def _float(cell: str, where: str) -> float:
    try:
        return float(cell)
    except ValueError as err:
        raise SchemaError(f"{where}: unparseable real {cell!r}") from err


def validate_csv(path, kind: str) -> int:
    """Validate an emitted file; returns the data-row count."""
    header, rows = _read(path)
    if kind == RUNRECORD:
        return _validate_runrecord(path, header, rows)
    expected = HEADERS.get(kind)
    if expected is None:
        raise SchemaError(f"unknown schema kind {kind!r}")
    if header != expected:
        raise SchemaError(f"{path}: header {header!r} != {expected!r}")
    for i, row in enumerate(rows):
        where = f"{path}:{i + 2}"
        if len(row) != len(expected):
            raise SchemaError(f"{where}: {len(row)} fields, want {len(expected)}")
        if kind == DATASET:
            _float(row[0], where), _float(row[1], where)
            if row[2] not in ("0", "1"):
                raise SchemaError(f"{where}: label {row[2]!r} not in {{0,1}}")
        elif kind == SAMPLES:
            _float(row[0], where), _float(row[1], where)
            if row[2] != "prior" and not row[2].startswith("label:"):
                raise SchemaError(f"{where}: bad source {row[2]!r}")
        elif kind == LATENT:
            _float(row[0], where), _float(row[1], where)
            if row[2] not in ("x1", "x2"):
                raise SchemaError(f"{where}: bad modality {row[2]!r}")
            int(row[3])
        elif kind == THEOREM:
            int(row[0]), int(row[1])
            for cell in row[3:7]:
                _float(cell, where)
            if row[7] not in ("ok", "FAILED"):
                raise SchemaError(f"{where}: bad status {row[7]!r}")
    return len(rows)


def _validate_runrecord(path, header, rows) -> int:
    if header[:2] != RUNRECORD_PREFIX or header[-7:] != RUNRECORD_SUFFIX:
        raise SchemaError(f"{path}: runrecord header malformed: {header!r}")
    prev_epoch = 0
    for i, row in enumerate(rows):
        where = f"{path}:{i + 2}"
        if len(row) != len(header):
            raise SchemaError(f"{where}: {len(row)} fields, want {len(header)}")
        epoch = int(row[0])
        if epoch <= prev_epoch:
            raise SchemaError(f"{where}: epochs not strictly increasing")
        prev_epoch = epoch
        for cell in row[1:]:
            _float(cell, where)
    return len(rows)
