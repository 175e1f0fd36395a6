"""Labeled feature matrices with a named column schema, and their CSV form."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

KEY_COLUMNS = ("scenario", "entity", "window")
LABEL_COLUMN = "label"


class SchemaMismatchError(ValueError):
    pass


def schema_fingerprint(columns: Sequence[str]) -> str:
    h = hashlib.sha256()
    for name in columns:
        h.update(name.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


def first_schema_difference(expected: Sequence[str], actual: Sequence[str]) -> str:
    for i, (a, b) in enumerate(zip(expected, actual)):
        if a != b:
            return f"column {i}: expected {a!r}, found {b!r}"
    if len(expected) != len(actual):
        i = min(len(expected), len(actual))
        missing = expected[i] if len(expected) > i else actual[i]
        return f"column {i}: {missing!r} present on one side only " \
               f"({len(expected)} vs {len(actual)} columns)"
    return "schemas are equal"


def check_same_schema(expected: Sequence[str], actual: Sequence[str]) -> None:
    if tuple(expected) != tuple(actual):
        raise SchemaMismatchError("schema mismatch at " + first_schema_difference(expected, actual))


def _fmt(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass
class FeatureMatrix:
    """Dense features, one row per prediction unit.

    ``keys`` holds ``(scenario, entity, window)`` per row; ``y`` is 0/1.
    """

    columns: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    keys: list[tuple[str, str, int]] = field(default_factory=list)
    descriptions: tuple[str, ...] = ()

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, len(self.columns))
        self.y = np.asarray(self.y, dtype=np.int8).reshape(-1)
        if len(self.y) != self.X.shape[0]:
            raise ValueError(f"{self.X.shape[0]} rows but {len(self.y)} labels")
        if self.keys and len(self.keys) != self.X.shape[0]:
            raise ValueError(f"{self.X.shape[0]} rows but {len(self.keys)} keys")
        if not self.keys:
            self.keys = [("", "", i) for i in range(self.X.shape[0])]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def fingerprint(self) -> str:
        return schema_fingerprint(self.columns)

    def class_counts(self) -> dict[int, int]:
        return {0: int(np.sum(self.y == 0)), 1: int(np.sum(self.y == 1))}

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return FeatureMatrix(self.columns, self.X[rows], self.y[rows],
                             [self.keys[i] for i in rows], self.descriptions)

    @classmethod
    def concat(cls, parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise ValueError("nothing to concatenate")
        columns = parts[0].columns
        for p in parts[1:]:
            check_same_schema(columns, p.columns)
        return cls(columns,
                   np.vstack([p.X for p in parts]) if parts else np.empty((0, len(columns))),
                   np.concatenate([p.y for p in parts]),
                   [k for p in parts for k in p.keys],
                   parts[0].descriptions)

    def equals(self, other: "FeatureMatrix") -> bool:
        return (self.columns == other.columns and self.keys == other.keys
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y))

    # -- CSV -------------------------------------------------------------

    def write_csv(self, fh: IO[str], metadata: dict | None = None) -> None:
        if metadata is not None:
            fh.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KEY_COLUMNS + self.columns + (LABEL_COLUMN,))
        for key, row, label in zip(self.keys, self.X.tolist(), self.y.tolist()):
            writer.writerow([key[0], key[1], key[2]] + [_fmt(v) for v in row] + [label])

    def to_csv(self, path: str | os.PathLike | None = None, metadata: dict | None = None):
        """Write to ``path``; with no path, return the CSV text."""
        if path is None:
            buf = io.StringIO()
            self.write_csv(buf, metadata)
            return buf.getvalue()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            self.write_csv(fh, metadata)
        return None

    @classmethod
    def read_csv(cls, source: str | os.PathLike | IO[str]) -> "FeatureMatrix":
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source, encoding="utf-8", newline="") as fh:
                return cls._read(fh)
        if isinstance(source, str):
            return cls._read(io.StringIO(source))
        return cls._read(source)

    @classmethod
    def _read(cls, fh: Iterable[str]) -> "FeatureMatrix":
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if tuple(header[:3]) != KEY_COLUMNS or header[-1] != LABEL_COLUMN:
            raise ValueError("CSV header must start with scenario,entity,window and end with label")
        columns = tuple(header[3:-1])
        keys, rows, labels = [], [], []
        for n, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"CSV row {n}: expected {len(header)} fields, found {len(rec)}")
            keys.append((rec[0], rec[1], int(rec[2])))
            rows.append([float(v) for v in rec[3:-1]])
            labels.append(int(rec[-1]))
        X = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
        return cls(columns, X, np.array(labels, dtype=np.int8), keys)

    # -- compact binary form ---------------------------------------------

    def save_npz(self, path: str | os.PathLike) -> None:
        keys = np.array([f"{s}\t{e}\t{w}" for s, e, w in self.keys], dtype=str)
        np.savez_compressed(path, X=self.X, y=self.y, columns=np.array(self.columns, dtype=str),
                            keys=keys)

    @classmethod
    def load_npz(cls, path: str | os.PathLike) -> "FeatureMatrix":
        with np.load(path, allow_pickle=False) as data:
            keys = []
            for k in data["keys"].tolist():
                s, e, w = k.split("\t")
                keys.append((s, e, int(w)))
            return cls(tuple(data["columns"].tolist()), data["X"], data["y"], keys)
