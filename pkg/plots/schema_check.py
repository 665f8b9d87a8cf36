"""Schema validation for the CSV contract between the pipeline and the plot
scripts. The plots never read checkpoints or import pipeline code; these
checks are their only guard against upstream drift, so they fail loudly.
"""

from __future__ import annotations

import csv
import sys

HEADERS = {
    "dataset": ["x1_a", "x1_b", "x2"],
    "samples": ["x1_a", "x1_b", "source"],
    "latent": ["g_a", "g_b", "modality", "label"],
}

RUNRECORD_PREFIX = ["epoch", "objective"]
RUNRECORD_SUFFIX = ["mean_err_c0", "var_ratio_a_c0", "var_ratio_b_c0",
                    "mean_err_c1", "var_ratio_a_c1", "var_ratio_b_c1",
                    "seconds"]


class SchemaError(ValueError):
    pass


def read_rows(path: str, kind: str) -> list[dict]:
    """Parsed rows of a validated CSV; raises SchemaError on any drift."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if kind == "runrecord":
        if header[:2] != RUNRECORD_PREFIX or header[-7:] != RUNRECORD_SUFFIX:
            raise SchemaError(f"{path}: unexpected runrecord header {header!r}")
    elif header != HEADERS[kind]:
        raise SchemaError(f"{path}: header {header!r}, want {HEADERS[kind]!r}")
    out = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaError(f"{path}:{i + 2}: {len(row)} fields, "
                              f"want {len(header)}")
        rec = dict(zip(header, row))
        try:
            if kind in ("dataset", "samples"):
                rec["x1_a"], rec["x1_b"] = float(rec["x1_a"]), float(rec["x1_b"])
            elif kind == "latent":
                rec["g_a"], rec["g_b"] = float(rec["g_a"]), float(rec["g_b"])
                rec["label"] = int(rec["label"])
            else:
                rec = {k: (int(v) if k == "epoch" else float(v))
                       for k, v in rec.items()}
        except ValueError as err:
            raise SchemaError(f"{path}:{i + 2}: {err}") from err
        if kind == "dataset" and rec["x2"] not in ("0", "1"):
            raise SchemaError(f"{path}:{i + 2}: label {rec['x2']!r}")
        if kind == "latent" and rec["modality"] not in ("x1", "x2"):
            raise SchemaError(f"{path}:{i + 2}: modality {rec['modality']!r}")
        out.append(rec)
    return out


def main_guard(fn, argv: list[str], usage: str) -> int:
    if len(argv) != fn.__code__.co_argcount:
        print(f"usage: {usage}", file=sys.stderr)
        return 2
    try:
        fn(*argv)
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0
