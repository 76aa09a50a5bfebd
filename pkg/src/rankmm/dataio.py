"""Long-format CSV ingestion, schema handling, and deterministic result
serialization.

The data file is delimited text with a header row and columns
``individual_id, variable_id, rank_level, alternative`` (one observed
rank slot per row, 1-based).  The schema is a small JSON document listing
the variables in presentation order with their alternative counts and
labels:

    {"variables": [{"id": "drugs", "n_alternatives": 7,
                    "labels": ["a", ..., "g"]}, ...]}

Result documents are JSON with sorted keys and all floating-point values
rounded to 12 significant digits, so identical runs produce byte-identical
files and saved values round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .model import RankDataset

__all__ = [
    "DataError",
    "RunManifest",
    "load_schema",
    "load_dataset",
    "dataset_digest",
    "save_results",
    "load_results",
]

_COLUMNS = ("individual_id", "variable_id", "rank_level", "alternative")


class DataError(ValueError):
    """Malformed input data; message carries the offending record."""


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-exactly.

    Wall-clock time is deliberately not part of the manifest that lands in
    the results file (identical seeds must give byte-identical files); the
    CLI reports timing on stderr instead.
    """

    command: str
    config: dict
    seed: int
    version: str
    dataset_digest: str
    convergence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "dataset_digest": self.dataset_digest,
            "convergence": self.convergence,
        }


def load_schema(path) -> list:
    """Parses and validates the schema document; returns the variable
    descriptions in presentation order."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"schema {path}: invalid JSON ({exc})") from exc
    variables = doc.get("variables")
    if not isinstance(variables, list) or not variables:
        raise DataError(f"schema {path}: needs a non-empty 'variables' list")
    seen = set()
    out = []
    for entry in variables:
        vid = entry.get("id")
        v = entry.get("n_alternatives")
        if not isinstance(vid, str) or not vid:
            raise DataError(f"schema {path}: every variable needs a string id")
        if vid in seen:
            raise DataError(f"schema {path}: duplicate variable id {vid!r}")
        seen.add(vid)
        if not isinstance(v, int) or v < 2:
            raise DataError(f"schema {path}: variable {vid!r} needs n_alternatives >= 2")
        labels = entry.get("labels")
        if labels is not None:
            if len(labels) != v or not all(isinstance(s, str) for s in labels):
                raise DataError(
                    f"schema {path}: variable {vid!r} labels must be {v} strings"
                )
        out.append({"id": vid, "n_alternatives": v, "labels": labels})
    return out


def _parse_rows(path, by_variable):
    """Reads the CSV into {individual: {variable: {level: alternative}}},
    validating per-record invariants as it goes."""
    records = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if tuple(header) != _COLUMNS:
            raise DataError(
                f"{path}: header must be {','.join(_COLUMNS)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            ind, var, level_s, alt_s = (c.strip() for c in row)
            if var not in by_variable:
                raise DataError(f"{path}:{lineno}: unknown variable {var!r}")
            try:
                level = int(level_s)
                alt = int(alt_s)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: rank_level and alternative must be integers"
                ) from None
            if level < 1:
                raise DataError(f"{path}:{lineno}: rank_level must be >= 1")
            v = by_variable[var]
            if not 1 <= alt <= v:
                raise DataError(
                    f"{path}:{lineno}: alternative {alt} outside 1..{v} for {var!r}"
                )
            slots = records.setdefault(ind, {}).setdefault(var, {})
            if level in slots:
                raise DataError(
                    f"{path}:{lineno}: tie — individual {ind!r} variable {var!r} "
                    f"repeats rank_level {level}"
                )
            if alt in slots.values():
                raise DataError(
                    f"{path}:{lineno}: individual {ind!r} variable {var!r} ranks "
                    f"alternative {alt} twice"
                )
            slots[level] = alt
    return records


def load_dataset(path, schema):
    """Loads a long-format CSV against a schema (path or parsed list).

    Returns (RankDataset, report) where the report counts individuals
    dropped for missing variables.  Individuals are ordered by id, so the
    result is invariant to row order in the file.
    """
    if isinstance(schema, (str, bytes)) or hasattr(schema, "__fspath__"):
        schema = load_schema(schema)
    by_variable = {entry["id"]: entry["n_alternatives"] for entry in schema}
    records = _parse_rows(path, by_variable)
    if not records:
        raise DataError(f"{path}: no records")
    variable_ids = [entry["id"] for entry in schema]
    complete, dropped = [], []
    for ind in sorted(records):
        if all(var in records[ind] for var in variable_ids):
            complete.append(ind)
        else:
            dropped.append(ind)
    if not complete:
        raise DataError(f"{path}: every individual is missing at least one variable")
    per_individual = []
    for ind in complete:
        rows = []
        for var in variable_ids:
            slots = records[ind][var]
            levels = sorted(slots)
            if levels != list(range(1, len(levels) + 1)):
                raise DataError(
                    f"{path}: individual {ind!r} variable {var!r} rank levels "
                    f"{levels} are not a contiguous prefix 1..N"
                )
            rows.append([slots[level] for level in levels])
        per_individual.append(rows)
    data = RankDataset.from_rankings(
        per_individual,
        [entry["n_alternatives"] for entry in schema],
        ids=complete,
        variable_ids=variable_ids,
        labels=[entry["labels"] for entry in schema],
    )
    report = {
        "n_individuals": len(complete),
        "n_dropped_incomplete": len(dropped),
        "dropped_ids": dropped,
    }
    return data, report


def dataset_digest(data: RankDataset) -> str:
    """SHA-256 over a canonical rendering of the dataset (id-ordered
    individuals, schema, and rankings)."""
    h = hashlib.sha256()
    h.update(repr(data.n_alternatives).encode())
    h.update(repr(data.variable_ids).encode())
    order = np.argsort(np.asarray(data.ids, dtype=object), kind="stable") if data.ids else np.arange(data.T)
    for i in order:
        key = data.ids[i] if data.ids is not None else i
        h.update(repr(key).encode())
        for j in range(data.J):
            h.update(data.rankings[j][i, : data.lengths[j][i]].tobytes())
    return h.hexdigest()


def _round12(x):
    """Rounds to 12 significant digits; the JSON shortest-repr of the
    rounded value round-trips bit-exactly."""
    if isinstance(x, float):
        if not np.isfinite(x):
            return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.12g}")
    if isinstance(x, (np.floating,)):
        return _round12(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_round12(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_round12(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _round12(v) for k, v in x.items()}
    return x


def save_results(document: dict, path) -> None:
    """Writes a result document as sorted-key JSON with 12-significant-
    digit floats; the output is deterministic given identical inputs."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round12(document), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_results(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
