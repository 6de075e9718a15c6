"""Impression records, the columnar dataset and its tab-separated file format.

One line per record::

    user_id item_id category_id brand_id profile... context... seq label timestamp snapshot_id

``seq`` is ``item:category:brand`` triples joined by ``;`` (empty for no
history); an empty field is a missing value and hashes to the reserved
bucket. The first line is a ``#``-prefixed header naming the columns, which
is checked against the feature schema on load.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from moef.errors import DataError, SchemaError
from moef.experts import FeatureSchema

logger = logging.getLogger(__name__)

MISSING = -1


@dataclass(frozen=True)
class SampleRecord:
    user_id: int
    item_id: int
    category_id: int
    brand_id: int
    profile: tuple
    context: tuple
    sequence: tuple
    label: int
    timestamp: int
    snapshot_id: int


@dataclass
class Dataset:
    """Column arrays for ``n`` records; ``sequence`` is (n, m_max, 3) padded with -1."""

    user: np.ndarray
    item: np.ndarray
    context: np.ndarray
    sequence: np.ndarray
    sequence_length: np.ndarray
    label: np.ndarray
    timestamp: np.ndarray
    snapshot: np.ndarray

    def __post_init__(self):
        n = len(self.label)
        for name in ("user", "item", "context", "sequence", "sequence_length", "timestamp", "snapshot"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name!r} has {len(getattr(self, name))} rows, expected {n}")
        if n and not np.isin(self.label, (0, 1)).all():
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.label)

    def take(self, index) -> "Dataset":
        return Dataset(*(getattr(self, f)[index] for f in _COLUMNS))

    @classmethod
    def empty(cls, schema: FeatureSchema) -> "Dataset":
        return cls.from_records([], schema)

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord], schema: FeatureSchema) -> "Dataset":
        n, m = len(records), schema.max_sequence_length
        n_profile, n_ctx = len(schema.user) - 1, len(schema.context)
        user = np.full((n, n_profile + 1), MISSING, dtype=np.int64)
        item = np.empty((n, 3), dtype=np.int64)
        context = np.full((n, n_ctx), MISSING, dtype=np.int64)
        sequence = np.full((n, m, 3), MISSING, dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        for r, rec in enumerate(records):
            if len(rec.profile) != n_profile or len(rec.context) != n_ctx:
                raise SchemaError(
                    f"record has {len(rec.profile)} profile / {len(rec.context)} context values, "
                    f"schema declares {n_profile} / {n_ctx}"
                )
            user[r] = (rec.user_id,) + tuple(rec.profile)
            item[r] = (rec.item_id, rec.category_id, rec.brand_id)
            context[r] = rec.context
            seq = list(rec.sequence)[-m:]
            lengths[r] = len(seq)
            if seq:
                sequence[r, : len(seq)] = seq
        return cls(
            user,
            item,
            context,
            sequence,
            lengths,
            np.array([rec.label for rec in records], dtype=np.int64),
            np.array([rec.timestamp for rec in records], dtype=np.int64),
            np.array([rec.snapshot_id for rec in records], dtype=np.int64),
        )

    def record(self, r: int) -> SampleRecord:
        length = int(self.sequence_length[r])
        return SampleRecord(
            int(self.user[r, 0]),
            int(self.item[r, 0]),
            int(self.item[r, 1]),
            int(self.item[r, 2]),
            tuple(int(v) for v in self.user[r, 1:]),
            tuple(int(v) for v in self.context[r]),
            tuple(tuple(int(v) for v in t) for t in self.sequence[r, :length]),
            int(self.label[r]),
            int(self.timestamp[r]),
            int(self.snapshot[r]),
        )

    def records(self) -> Iterator[SampleRecord]:
        for r in range(len(self)):
            yield self.record(r)


_COLUMNS = ("user", "item", "context", "sequence", "sequence_length", "label", "timestamp", "snapshot")


def concat_datasets(parts: Sequence[Dataset]) -> Dataset:
    return Dataset(*(np.concatenate([getattr(p, f) for p in parts]) for f in _COLUMNS))


def snapshot_batches(dataset: Dataset, batch_size: int, rng: Optional[np.random.Generator] = None) -> list:
    """Index arrays of at most ``batch_size`` records that share one signal snapshot.

    Without ``rng`` the batches follow the dataset's order. With ``rng`` the
    records inside each group are shuffled before chunking and the batches
    are then visited in a random order.
    """
    if batch_size < 1:
        raise DataError("batch size must be >= 1")
    if len(dataset) == 0:
        return []
    snap = dataset.snapshot
    cuts = np.flatnonzero(snap[1:] != snap[:-1]) + 1
    batches = []
    for group in np.split(np.arange(len(dataset)), cuts):
        if rng is not None:
            group = group[rng.permutation(len(group))]
        batches.extend(group[i : i + batch_size] for i in range(0, len(group), batch_size))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


# -- file format -----------------------------------------------------------------
def header_columns(schema: FeatureSchema) -> list:
    return (
        [f.name for f in schema.user[:1]]
        + [f.name for f in schema.item]
        + [f.name for f in schema.user[1:]]
        + [f.name for f in schema.context]
        + ["sequence", "label", "timestamp", "snapshot_id"]
    )


def _fmt(v) -> str:
    return "" if v < 0 else str(int(v))


def write_dataset_file(dataset: Dataset, schema: FeatureSchema, path) -> None:
    lines = ["#" + "\t".join(header_columns(schema))]
    for r in range(len(dataset)):
        seq = ";".join(":".join(_fmt(v) for v in t) for t in dataset.sequence[r, : dataset.sequence_length[r]])
        fields = (
            [_fmt(dataset.user[r, 0])]
            + [_fmt(v) for v in dataset.item[r]]
            + [_fmt(v) for v in dataset.user[r, 1:]]
            + [_fmt(v) for v in dataset.context[r]]
            + [seq, str(int(dataset.label[r])), str(int(dataset.timestamp[r])), str(int(dataset.snapshot[r]))]
        )
        lines.append("\t".join(fields))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write dataset {path}: {exc}") from exc


def _int(field: str, path, lineno: int) -> int:
    if field == "":
        return MISSING
    try:
        return int(field)
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-integer value {field!r}") from None


def read_dataset_file(path, schema: FeatureSchema) -> Dataset:
    if not os.path.exists(path):
        raise DataError(f"dataset file {path} does not exist")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    expected = header_columns(schema)
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing '#' header line")
    found = lines[0][1:].split("\t")
    if found != expected:
        unknown = sorted(set(found) - set(expected))
        raise SchemaError(f"{path}: columns {found} do not match the schema {expected}; unknown: {unknown}")
    n_user, n_ctx = len(schema.user) - 1, len(schema.context)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(expected):
            raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, found {len(parts)}")
        ints = [_int(p, path, lineno) for p in parts[: 4 + n_user + n_ctx]]
        seq = []
        if parts[-4]:
            for triple in parts[-4].split(";"):
                vals = triple.split(":")
                if len(vals) != 3:
                    raise DataError(f"{path}:{lineno}: bad sequence entry {triple!r}")
                seq.append(tuple(_int(v, path, lineno) for v in vals))
        label = _int(parts[-3], path, lineno)
        if label not in (0, 1):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {parts[-3]!r}")
        records.append(
            SampleRecord(
                ints[0],
                ints[1],
                ints[2],
                ints[3],
                tuple(ints[4 : 4 + n_user]),
                tuple(ints[4 + n_user :]),
                tuple(seq),
                label,
                _int(parts[-2], path, lineno),
                _int(parts[-1], path, lineno),
            )
        )
    return Dataset.from_records(records, schema)
