"""Categorical sequence data: alphabets, sequence panels, covariates and CSV ingestion.

Cells are stored as small integers. Non-negative values index the alphabet;
two negative sentinels mark the two kinds of missing value:

* ``UNKNOWN`` -- the state exists but was not observed (interior gaps allowed).
* ``PADDING`` -- technical filler after the end of a shorter sequence. Only a
  contiguous suffix of a row may be padding.
"""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

UNKNOWN = -1
PADDING = -2

UNKNOWN_TOKEN = "·"
PADDING_TOKEN = "%"


@dataclass(frozen=True)
class Alphabet:
    """Ordered set of observed symbol labels, with optional hex colors."""

    symbols: tuple[str, ...]
    colors: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(str(s) for s in self.symbols))
        if not self.symbols:
            raise DataError("alphabet must contain at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError(f"alphabet symbols must be distinct: {self.symbols}")
        if self.colors is not None:
            object.__setattr__(self, "colors", tuple(self.colors))
            if len(self.colors) != len(self.symbols):
                raise DataError("one color per symbol required")

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise DataError(f"unknown symbol {symbol!r}; alphabet is {list(self.symbols)}") from None

    def to_dict(self) -> dict:
        d: dict = {"symbols": list(self.symbols)}
        if self.colors is not None:
            d["colors"] = list(self.colors)
        return d

    @classmethod
    def from_dict(cls, d: Mapping | Sequence) -> "Alphabet":
        if isinstance(d, Mapping):
            return cls(tuple(d["symbols"]), tuple(d["colors"]) if d.get("colors") else None)
        return cls(tuple(d))


def _validate_cells(cells: np.ndarray, n_symbols: int) -> None:
    if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
        raise DataError(f"sequence grid must be N x T with N, T >= 1, got shape {cells.shape}")
    bad = (cells >= n_symbols) | ((cells < 0) & (cells != UNKNOWN) & (cells != PADDING))
    if bad.any():
        raise DataError("cell codes outside the alphabet")
    pad = cells == PADDING
    # once padding starts it must continue to the end of the row
    if (pad[:, :-1] & ~pad[:, 1:]).any():
        raise DataError("padding cells must form a contiguous suffix of each row")


@dataclass(frozen=True, eq=False)
class SequenceSet:
    """Rectangular N x T panel of categorical sequences over an alphabet.

    ``cells`` holds alphabet indices, ``UNKNOWN`` or ``PADDING``. The array is
    made read-only on construction.
    """

    alphabet: Alphabet
    cells: np.ndarray
    ids: tuple[str, ...] = ()
    time_labels: tuple[str, ...] = ()

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int16, copy=True)
        _validate_cells(cells, len(self.alphabet))
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        n, t = cells.shape
        ids = tuple(str(i) for i in self.ids) or tuple(str(i + 1) for i in range(n))
        labels = tuple(str(i) for i in self.time_labels) or tuple(str(i + 1) for i in range(t))
        if len(ids) != n:
            raise DataError(f"{len(ids)} ids for {n} sequences")
        if len(labels) != t:
            raise DataError(f"{len(labels)} time labels for {t} columns")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "time_labels", labels)

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[Sequence[str | None]],
        alphabet: Alphabet | Sequence[str] | None = None,
        missing_token: str | None = "",
        ids: Sequence[str] | None = None,
        time_labels: Sequence[str] | None = None,
    ) -> "SequenceSet":
        """Build from rows of string tokens, applying the missing-value suffix rule.

        Trailing missing tokens become padding, interior ones become unknown.
        ``None`` is always treated as missing. Rows may be ragged; short rows are
        padded to the longest.
        """
        rows = [list(r) for r in rows]
        if not rows:
            raise DataError("no sequences given")
        width = max(len(r) for r in rows)
        if width == 0:
            raise DataError("sequences have no columns")

        def is_missing(tok):
            return tok is None or tok == missing_token

        if alphabet is None:
            tokens = {tok for r in rows for tok in r if not is_missing(tok)}
            if not tokens:
                raise DataError("cannot infer an alphabet from all-missing data")
            alphabet = Alphabet(tuple(sorted(tokens)))
        elif not isinstance(alphabet, Alphabet):
            alphabet = Alphabet(tuple(alphabet))
        lookup = {s: i for i, s in enumerate(alphabet.symbols)}

        cells = np.full((len(rows), width), PADDING, dtype=np.int16)
        for i, row in enumerate(rows):
            observed = [j for j, tok in enumerate(row) if not is_missing(tok)]
            end = observed[-1] + 1 if observed else 0
            for j in range(end):
                tok = row[j]
                if is_missing(tok):
                    cells[i, j] = UNKNOWN
                elif tok in lookup:
                    cells[i, j] = lookup[tok]
                else:
                    raise DataError(
                        f"unknown symbol {tok!r} in row {i + 1}, column {j + 1}; "
                        f"alphabet is {list(alphabet.symbols)}"
                    )
        return cls(alphabet, cells, tuple(ids or ()), tuple(time_labels or ()))

    @property
    def n_sequences(self) -> int:
        return self.cells.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.cells.shape[1]

    def __len__(self) -> int:
        return self.n_sequences

    def __eq__(self, other):
        if not isinstance(other, SequenceSet):
            return NotImplemented
        return (
            self.alphabet == other.alphabet
            and self.ids == other.ids
            and self.time_labels == other.time_labels
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None

    def lengths(self) -> np.ndarray:
        return sequence_lengths(self)

    def subset(self, index) -> "SequenceSet":
        """Rows selected by an integer index array or boolean mask."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        if index.size == 0:
            raise DataError("subset would be empty")
        return SequenceSet(self.alphabet, self.cells[index], tuple(self.ids[i] for i in index), self.time_labels)

    def tokens(self) -> list[list[str]]:
        """Rows as tokens, with the serialization sentinels for missing cells."""
        out = []
        for row in self.cells:
            out.append([
                UNKNOWN_TOKEN if c == UNKNOWN else PADDING_TOKEN if c == PADDING else self.alphabet.symbols[c]
                for c in row
            ])
        return out

    def to_dict(self) -> dict:
        return {
            "alphabet": self.alphabet.to_dict(),
            "ids": list(self.ids),
            "time_labels": list(self.time_labels),
            "cells": self.tokens(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SequenceSet":
        alphabet = Alphabet.from_dict(d["alphabet"])
        lookup = {s: i for i, s in enumerate(alphabet.symbols)}
        lookup[UNKNOWN_TOKEN] = UNKNOWN
        lookup[PADDING_TOKEN] = PADDING
        try:
            cells = np.array([[lookup[tok] for tok in row] for row in d["cells"]], dtype=np.int16)
        except KeyError as exc:
            raise DataError(f"unknown token {exc.args[0]!r} in serialized sequences") from None
        return cls(alphabet, cells, tuple(d.get("ids", ())), tuple(d.get("time_labels", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "SequenceSet":
        return cls.from_dict(json.loads(text))

    def write_csv(self, path: str | Path, missing_token: str = "", id_column: str = "ID") -> None:
        """Write as a wide CSV that :func:`ingest_wide_csv` reads back.

        Unknown and padding cells are both written as ``missing_token``; the
        suffix rule recovers the distinction on ingestion.
        """
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([id_column, *self.time_labels])
            for sid, row in zip(self.ids, self.cells):
                writer.writerow([sid, *(missing_token if c < 0 else self.alphabet.symbols[c] for c in row)])

    def describe(self) -> str:
        lengths = self.lengths()
        return (
            f" [>] {self.n_sequences} sequences in the data set\n"
            f" [>] min/max sequence length: {lengths.min()}/{lengths.max()}"
        )


def sequence_lengths(s: SequenceSet) -> np.ndarray:
    """Index of the first padding cell in each row (T when there is none)."""
    pad = s.cells == PADDING
    return np.where(pad.any(axis=1), pad.argmax(axis=1), s.n_timepoints).astype(int)


def first_state_counts(s: SequenceSet) -> np.ndarray:
    first = s.cells[:, 0]
    first = first[first >= 0]
    return np.bincount(first, minlength=len(s.alphabet)).astype(np.int64)


def first_state_distribution(s: SequenceSet) -> np.ndarray:
    """Empirical distribution of observed first cells; unknown/padding starts are ignored."""
    counts = first_state_counts(s)
    total = counts.sum()
    if total == 0:
        raise DataError("no sequence starts with an observed symbol")
    return counts / total


@dataclass(frozen=True)
class Factor:
    levels: tuple[str, ...]
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        unknown = sorted(set(self.values) - set(self.levels))
        if unknown:
            raise DataError(f"factor values {unknown} are not among levels {list(self.levels)}")

    def codes(self) -> np.ndarray:
        lookup = {lvl: i for i, lvl in enumerate(self.levels)}
        return np.array([lookup[v] for v in self.values], dtype=int)


@dataclass(frozen=True)
class CovariateFrame:
    """Categorical subject-level covariates, aligned by position with a SequenceSet."""

    ids: tuple[str, ...]
    columns: Mapping[str, Factor] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "columns", dict(self.columns))
        for name, factor in self.columns.items():
            if len(factor.values) != len(self.ids):
                raise DataError(f"covariate {name!r} has {len(factor.values)} values for {len(self.ids)} ids")

    @classmethod
    def from_values(
        cls,
        ids: Sequence[str],
        values: Mapping[str, Sequence[str]],
        levels: Mapping[str, Sequence[str]] | None = None,
    ) -> "CovariateFrame":
        levels = levels or {}
        cols = {}
        for name, vals in values.items():
            lv = levels.get(name) or sorted({str(v) for v in vals})
            cols[name] = Factor(tuple(lv), tuple(vals))
        return cls(tuple(ids), cols)

    def __len__(self) -> int:
        return len(self.ids)

    def check_aligned(self, s: SequenceSet) -> None:
        if tuple(self.ids) != tuple(s.ids):
            raise DataError("covariate ids do not match sequence ids in order")

    def subset(self, index) -> "CovariateFrame":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        cols = {n: Factor(f.levels, tuple(f.values[i] for i in index)) for n, f in self.columns.items()}
        return CovariateFrame(tuple(self.ids[i] for i in index), cols)

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "columns": {n: {"levels": list(f.levels), "values": list(f.values)} for n, f in self.columns.items()},
        }


def parse_column_range(spec: str | Sequence[int], width: int) -> list[int]:
    """Turn a 1-based inclusive range like ``"3-22"`` into 0-based column indices."""
    if isinstance(spec, str):
        try:
            lo, hi = (int(x) for x in spec.split("-", 1)) if "-" in spec else (int(spec),) * 2
        except ValueError:
            raise DataError(f"column range must look like '3-22', got {spec!r}") from None
    else:
        lo, hi = spec
    if lo < 1 or hi < lo or hi > width:
        raise DataError(f"sequence columns {lo}-{hi} outside the header width {width}")
    return list(range(lo - 1, hi))


def _read_table(path: str | Path, delimiter: str | None) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter)]
    # leading '#' lines carry provenance written by the CLI
    while rows and rows[0] and rows[0][0].startswith("#"):
        rows.pop(0)
    # tolerate a trailing blank line
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if len(rows) < 2:
        raise DataError(f"{path}: empty file (a header row and at least one data row are required)")
    header, body = rows[0], rows[1:]
    for k, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: ragged row at line {k} ({len(row)} fields, header has {len(header)})")
    return header, body


def ingest_wide_csv(
    path: str | Path,
    seq_columns: str | Sequence[int],
    id_column: str | None = None,
    alphabet: Alphabet | Sequence[str] | None = None,
    missing_token: str = "",
    delimiter: str | None = None,
) -> SequenceSet:
    """Read a wide-format CSV/TSV with one sequence per row.

    Args:
        path: file with a header row.
        seq_columns: 1-based inclusive column range, e.g. ``"3-22"``.
        id_column: header name of the id column; row numbers are used if omitted.
        alphabet: explicit alphabet; inferred (sorted tokens) when omitted.
        missing_token: token marking a missing cell.
        delimiter: defaults to tab for ``.tsv`` files, comma otherwise.
    """
    header, body = _read_table(path, delimiter)
    cols = parse_column_range(seq_columns, len(header))
    if id_column is not None:
        if id_column not in header:
            raise DataError(f"id column {id_column!r} not in header")
        id_idx = header.index(id_column)
        ids = [row[id_idx] for row in body]
    else:
        ids = None
    rows = [[row[j] for j in cols] for row in body]
    s = SequenceSet.from_rows(rows, alphabet, missing_token, ids, [header[j] for j in cols])
    lengths = s.lengths()
    logger.info("%d sequences, min/max length %d/%d", s.n_sequences, lengths.min(), lengths.max())
    if (lengths == 0).any():
        logger.warning("%d all-missing sequences (length 0) are excluded from estimation", int((lengths == 0).sum()))
    return s


def ingest_covariates(
    path: str | Path,
    columns: Sequence[str],
    id_column: str | None = None,
    levels: Mapping[str, Sequence[str]] | None = None,
    delimiter: str | None = None,
) -> CovariateFrame:
    """Read categorical covariate columns from the same kind of file."""
    header, body = _read_table(path, delimiter)
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"covariate columns {missing} not in header")
    if id_column is not None:
        if id_column not in header:
            raise DataError(f"id column {id_column!r} not in header")
        ids = [row[header.index(id_column)] for row in body]
    else:
        ids = [str(i + 1) for i in range(len(body))]
    values = {c: [row[header.index(c)] for row in body] for c in columns}
    return CovariateFrame.from_values(ids, values, levels)
