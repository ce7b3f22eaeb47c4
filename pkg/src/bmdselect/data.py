"""Quantal dose-response datasets: validation, CSV input/output and dose scaling."""

from __future__ import annotations

import csv
import io
import os
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DataError

Source = Union[str, os.PathLike, IO[str]]


class MissingControlWarning(UserWarning):
    """The dataset has no zero-dose group."""


@dataclass(frozen=True, eq=False)
class QuantalDataset:
    """Event counts ``events[j]`` out of ``subjects[j]`` at dose ``doses[j]``.

    Arrays are stored read-only. ``scale`` is the factor that converts the
    stored doses back to the original units (1 unless standardized).
    """

    doses: NDArray[np.float64]
    subjects: NDArray[np.int64]
    events: NDArray[np.int64]
    scale: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        d = np.array(self.doses, dtype=float)
        n_raw = np.asarray(self.subjects)
        y_raw = np.asarray(self.events)
        if d.ndim != 1 or n_raw.shape != d.shape or y_raw.shape != d.shape:
            raise DataError("doses, subjects and events must be 1-d sequences of equal length")
        if d.size < 2:
            raise DataError("at least two dose groups are required")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise DataError("doses must be finite and non-negative")
        if np.any(np.diff(d) <= 0):
            raise DataError("doses must be strictly increasing")
        for label, arr in (("subjects", n_raw), ("events", y_raw)):
            if not np.all(np.asarray(arr, dtype=float) == np.round(np.asarray(arr, dtype=float))):
                raise DataError(f"{label} must be integers")
        n = n_raw.astype(np.int64)
        y = y_raw.astype(np.int64)
        if np.any(n <= 0):
            raise DataError("subjects must be positive")
        if np.any(y < 0):
            raise DataError("events must be non-negative")
        if np.any(y > n):
            j = int(np.flatnonzero(y > n)[0])
            raise DataError(f"events exceed subjects at dose {d[j]:g} ({y[j]} > {n[j]})")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DataError("scale must be positive")
        for arr in (d, n, y):
            arr.setflags(write=False)
        object.__setattr__(self, "doses", d)
        object.__setattr__(self, "subjects", n)
        object.__setattr__(self, "events", y)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def n_groups(self) -> int:
        return int(self.doses.size)

    @property
    def n_total(self) -> int:
        return int(self.subjects.sum())

    @property
    def has_control(self) -> bool:
        return bool(self.doses[0] == 0.0)

    @property
    def original_doses(self) -> NDArray[np.float64]:
        return self.doses * self.scale

    def with_events(self, events: ArrayLike) -> "QuantalDataset":
        """Same design, new event counts."""
        return QuantalDataset(self.doses, self.subjects, np.asarray(events), self.scale, self.name)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantalDataset):
            return NotImplemented
        return (
            np.array_equal(self.doses, other.doses)
            and np.array_equal(self.subjects, other.subjects)
            and np.array_equal(self.events, other.events)
            and self.scale == other.scale
        )

    def __hash__(self) -> int:
        return hash((self.doses.tobytes(), self.subjects.tobytes(), self.events.tobytes(), self.scale))


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

_HEADER = ("dose", "n", "y")


def _open_text(source: Source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline=""), True
    return source, False


def _data_lines(lines: Iterable[str]) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if text and not text.startswith("#"):
            yield lineno, text


def parse_rows(lines: Iterable[str], name: str = "") -> QuantalDataset:
    """Build a dataset from CSV text lines with header ``dose,n,y``."""
    rows = list(_data_lines(lines))
    if not rows:
        raise DataError("empty dataset: expected header 'dose,n,y'")
    header_line, header = rows[0]
    cols = [c.strip().lower() for c in next(csv.reader([header]))]
    if tuple(cols) != _HEADER:
        raise DataError(f"line {header_line}: expected header 'dose,n,y', got {header!r}")

    parsed: list[tuple[float, int, int]] = []
    for lineno, text in rows[1:]:
        fields = [f.strip() for f in next(csv.reader([text]))]
        if len(fields) != 3:
            raise DataError(f"line {lineno}: malformed row {text!r} (expected 3 fields)")
        try:
            dose = float(fields[0])
            n_f, y_f = float(fields[1]), float(fields[2])
        except ValueError:
            raise DataError(f"line {lineno}: malformed row {text!r}") from None
        if not (n_f.is_integer() and y_f.is_integer()):
            raise DataError(f"line {lineno}: counts must be integers in {text!r}")
        n, y = int(n_f), int(y_f)
        if y > n:
            raise DataError(f"line {lineno}: events exceed subjects ({y} > {n})")
        parsed.append((dose, n, y))

    if len(parsed) < 2:
        raise DataError("at least two dose rows are required")
    parsed.sort(key=lambda r: r[0])
    doses = [r[0] for r in parsed]
    for a, b in zip(doses, doses[1:]):
        if a == b:
            raise DataError(f"duplicate dose {a:g}")
    if doses[0] != 0.0:
        warnings.warn(
            "dataset has no zero-dose (control) group; background risk will be extrapolated by the models",
            MissingControlWarning,
            stacklevel=3,
        )
    return QuantalDataset(
        np.array(doses),
        np.array([r[1] for r in parsed]),
        np.array([r[2] for r in parsed]),
        name=name,
    )


def load_dataset(source: Source) -> QuantalDataset:
    """Read a dataset from a path or text stream.

    The file is CSV with the header ``dose,n,y``; blank lines and lines
    starting with ``#`` are ignored and rows may appear in any order.

    Raises
    ------
    DataError
        On a malformed row, duplicate dose, ``y > n`` or fewer than two rows.
    """
    stream, owned = _open_text(source)
    try:
        name = os.path.basename(os.fspath(source)) if owned else getattr(stream, "name", "")
        return parse_rows(stream.readlines(), name=str(name))
    finally:
        if owned:
            stream.close()


def serialize(data: QuantalDataset, target: IO[str] | None = None) -> str:
    """Write ``data`` as ``dose,n,y`` CSV (doses in stored units); returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_HEADER)
    for d, n, y in zip(data.doses, data.subjects, data.events):
        writer.writerow((repr(float(d)), int(n), int(y)))
    text = buf.getvalue()
    if target is not None:
        target.write(text)
    return text


def standardize_doses(data: QuantalDataset) -> QuantalDataset:
    """Divide doses by the largest dose so they lie in ``[0, 1]``.

    The divisor is folded into ``scale`` so that ``original_doses`` is preserved.
    """
    top = float(data.doses[-1])
    if top <= 0.0:
        raise DataError("cannot standardize: all doses are zero")
    if top == 1.0:
        return data
    return QuantalDataset(data.doses / top, data.subjects, data.events, data.scale * top, data.name)
