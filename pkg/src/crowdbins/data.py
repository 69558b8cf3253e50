"""Core data types and file ingestion for count datasets.

Counts, predictions and point annotations are plain records keyed by an
opaque ``image_id`` string; this package never touches image pixels.
Two interchangeable input formats are supported for tabular data: CSV
with a header row, and JSON-lines.  Bin configurations round-trip
through a small JSON document.
"""

from __future__ import annotations

import csv
import io
import json
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Sequence

__all__ = [
    "DataFormatError",
    "CountRecord",
    "CountHistogram",
    "PredictionRecord",
    "PointAnnotatedRecord",
    "BinSpec",
    "assign_bin",
    "build_histogram",
    "histogram_from_counts",
    "load_counts",
    "load_predictions",
    "load_points",
    "load_bins",
    "save_bins",
]


class DataFormatError(ValueError):
    """Raised when an input file violates its declared schema."""


@dataclass(frozen=True)
class CountRecord:
    """Ground-truth people count for a single image."""

    image_id: str
    count: int

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be a non-empty string")
        if self.count < 0:
            raise ValueError(f"count must be non-negative, got {self.count}")


@dataclass(frozen=True)
class CountHistogram:
    """Count-frequency table: ordered (count, frequency) pairs.

    ``entries`` must be strictly increasing in the count value and every
    frequency must be positive.  The histogram is the compact stand-in
    for the underlying multiset of per-image counts.
    """

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("histogram must contain at least one entry")
        prev = -1
        for value, freq in self.entries:
            if value <= prev:
                raise ValueError("histogram counts must be strictly increasing")
            if value < 0:
                raise ValueError("histogram counts must be non-negative")
            if freq < 1:
                raise ValueError("histogram frequencies must be positive")
            prev = value

    @property
    def total(self) -> int:
        """Number of samples represented (sum of frequencies)."""
        return sum(f for _, f in self.entries)

    @property
    def max_count(self) -> int:
        return self.entries[-1][0]

    @property
    def num_distinct(self) -> int:
        return len(self.entries)

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self.entries)

    @property
    def frequencies(self) -> tuple[int, ...]:
        return tuple(f for _, f in self.entries)

    def expand(self) -> list[int]:
        """Rebuild the multiset of counts (each value repeated its frequency)."""
        out: list[int] = []
        for value, freq in self.entries:
            out.extend([value] * freq)
        return out


@dataclass(frozen=True)
class PredictionRecord:
    """Ground-truth / predicted count pair for one image.

    Predicted counts may be fractional (e.g. sums of density maps).
    """

    image_id: str
    gt_count: int
    pred_count: float

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be a non-empty string")
        if self.gt_count < 0:
            raise ValueError(f"gt_count must be non-negative, got {self.gt_count}")
        if self.pred_count < 0:
            raise ValueError(f"pred_count must be non-negative, got {self.pred_count}")


@dataclass(frozen=True)
class PointAnnotatedRecord:
    """Per-image ground-truth and predicted head coordinates.

    Points live in the half-open image rectangle [0, width) x [0, height).
    """

    image_id: str
    width: float
    height: float
    gt_points: tuple[tuple[float, float], ...]
    pred_points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be a non-empty string")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        for name, points in (("gt_points", self.gt_points), ("pred_points", self.pred_points)):
            for x, y in points:
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValueError(
                        f"{name} contains ({x}, {y}) outside "
                        f"[0, {self.width}) x [0, {self.height})"
                    )


@dataclass(frozen=True)
class BinSpec:
    """A contiguous, exhaustive partition of the count range [0, C].

    ``edges`` is an ordered list of inclusive integer intervals
    [lo, hi]; the first interval starts at 0 and consecutive intervals
    abut exactly.  ``gamma``/``alpha``/``beta`` record the prior and
    smoothing settings the partition was fitted with, ``meta`` carries
    free-form provenance (dataset id, fit timestamp, seed, ...).
    """

    edges: tuple[tuple[int, int], ...]
    gamma: float
    alpha: int
    beta: int
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.edges:
            raise ValueError("bin edges must be non-empty")
        if self.edges[0][0] != 0:
            raise ValueError("first bin must start at 0")
        prev_hi = -1
        for lo, hi in self.edges:
            if lo != prev_hi + 1:
                raise ValueError("bins must be contiguous and non-overlapping")
            if hi < lo:
                raise ValueError(f"bin [{lo}, {hi}] is empty")
            prev_hi = hi
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.alpha < len(self.edges):
            raise ValueError("alpha must be at least the number of bins")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def num_bins(self) -> int:
        return len(self.edges)

    @property
    def max_count(self) -> int:
        return self.edges[-1][1]

    def assign(self, count: int, clamp: bool = True) -> int:
        return assign_bin(count, self, clamp=clamp)

    def to_dict(self) -> dict[str, Any]:
        return {
            "edges": [[lo, hi] for lo, hi in self.edges],
            "gamma": self.gamma,
            "alpha": self.alpha,
            "beta": self.beta,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "BinSpec":
        try:
            edges = tuple((int(lo), int(hi)) for lo, hi in payload["edges"])
            return cls(
                edges=edges,
                gamma=float(payload["gamma"]),
                alpha=int(payload["alpha"]),
                beta=int(payload["beta"]),
                meta=dict(payload.get("meta", {})),
            )
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"malformed bins document: {exc}") from exc


def assign_bin(count: int, bins: BinSpec, clamp: bool = True) -> int:
    """Index of the bin whose [lo, hi] interval contains ``count``.

    Counts above the top edge clamp into the last bin by default (test
    sets may exceed the range the bins were fitted on); pass
    ``clamp=False`` to treat them as an error instead.
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    his = [hi for _, hi in bins.edges]
    idx = bisect_left(his, count)
    if idx == len(his):
        if not clamp:
            raise ValueError(f"count {count} exceeds the binned range [0, {his[-1]}]")
        return len(his) - 1
    return idx


def build_histogram(records: Iterable[CountRecord]) -> CountHistogram:
    """Collapse records into their count-frequency histogram."""
    counter = Counter(r.count for r in records)
    if not counter:
        raise ValueError("cannot build a histogram from an empty record list")
    return CountHistogram(tuple(sorted(counter.items())))


def histogram_from_counts(counts: Iterable[int]) -> CountHistogram:
    """Histogram of a bare count multiset (no image ids)."""
    counter = Counter(int(c) for c in counts)
    if not counter:
        raise ValueError("cannot build a histogram from an empty count list")
    return CountHistogram(tuple(sorted(counter.items())))


# ---------------------------------------------------------------------------
# file ingestion


def _open_text(source: str | Path | IO[str] | IO[bytes]) -> tuple[IO[str], bool]:
    """Return a text handle plus whether the caller owns closing it."""
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    data = source.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataFormatError(f"input is not valid UTF-8: {exc}") from exc
    return io.StringIO(data), True


def _iter_csv(handle: IO[str], expected_header: Sequence[str]) -> Iterator[tuple[int, list[str]]]:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError(f"missing header row (expected {','.join(expected_header)})")
    header = [h.strip() for h in header]
    if header != list(expected_header):
        raise DataFormatError(
            f"unexpected header {','.join(header)!r}; expected {','.join(expected_header)!r}"
        )
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(expected_header):
            raise DataFormatError(f"line {lineno}: expected {len(expected_header)} fields, got {len(row)}")
        yield lineno, row


def _iter_jsonl(handle: IO[str]) -> Iterator[tuple[int, dict[str, Any]]]:
    for lineno, line in enumerate(handle, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DataFormatError(f"line {lineno}: expected a JSON object")
        yield lineno, obj


def _parse_int(text: Any, what: str, lineno: int) -> int:
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"line {lineno}: {what} {text!r} is not an integer") from None
    return value


def _parse_float(text: Any, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"line {lineno}: {what} {text!r} is not a number") from None
    return value


def load_counts(source: str | Path | IO[str] | IO[bytes], format: str = "csv") -> list[CountRecord]:
    """Read ``image_id,count`` rows (CSV header or JSONL keys).

    Rejects negative counts and duplicate image ids, reporting the
    offending line number.
    """
    handle, owned = _open_text(source)
    try:
        records: list[CountRecord] = []
        seen: set[str] = set()

        def add(image_id: str, count: int, lineno: int) -> None:
            if not image_id:
                raise DataFormatError(f"line {lineno}: empty image_id")
            if count < 0:
                raise DataFormatError(f"negative count at line {lineno}")
            if image_id in seen:
                raise DataFormatError(f"line {lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            records.append(CountRecord(image_id, count))

        if format == "csv":
            for lineno, row in _iter_csv(handle, ("image_id", "count")):
                add(row[0].strip(), _parse_int(row[1].strip(), "count", lineno), lineno)
        elif format == "jsonl":
            for lineno, obj in _iter_jsonl(handle):
                add(str(obj.get("image_id", "")), _parse_int(obj.get("count"), "count", lineno), lineno)
        else:
            raise ValueError(f"unknown format {format!r} (expected 'csv' or 'jsonl')")
        return records
    finally:
        if owned:
            handle.close()


def load_predictions(
    source: str | Path | IO[str] | IO[bytes], format: str = "csv"
) -> list[PredictionRecord]:
    """Read ``image_id,gt_count,pred_count`` rows (CSV header or JSONL keys)."""
    handle, owned = _open_text(source)
    try:
        records: list[PredictionRecord] = []
        seen: set[str] = set()

        def add(image_id: str, gt: int, pred: float, lineno: int) -> None:
            if not image_id:
                raise DataFormatError(f"line {lineno}: empty image_id")
            if gt < 0:
                raise DataFormatError(f"negative gt_count at line {lineno}")
            if pred < 0:
                raise DataFormatError(f"negative pred_count at line {lineno}")
            if image_id in seen:
                raise DataFormatError(f"line {lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            records.append(PredictionRecord(image_id, gt, pred))

        if format == "csv":
            for lineno, row in _iter_csv(handle, ("image_id", "gt_count", "pred_count")):
                add(
                    row[0].strip(),
                    _parse_int(row[1].strip(), "gt_count", lineno),
                    _parse_float(row[2].strip(), "pred_count", lineno),
                    lineno,
                )
        elif format == "jsonl":
            for lineno, obj in _iter_jsonl(handle):
                add(
                    str(obj.get("image_id", "")),
                    _parse_int(obj.get("gt_count"), "gt_count", lineno),
                    _parse_float(obj.get("pred_count"), "pred_count", lineno),
                    lineno,
                )
        else:
            raise ValueError(f"unknown format {format!r} (expected 'csv' or 'jsonl')")
        return records
    finally:
        if owned:
            handle.close()


def load_points(source: str | Path | IO[str] | IO[bytes]) -> list[PointAnnotatedRecord]:
    """Read point-annotated records from JSONL.

    Each line is an object with keys ``image_id``, ``width``, ``height``,
    ``gt_points`` and ``pred_points`` (arrays of [x, y] pairs).
    """
    handle, owned = _open_text(source)
    try:
        records: list[PointAnnotatedRecord] = []
        seen: set[str] = set()
        for lineno, obj in _iter_jsonl(handle):
            image_id = str(obj.get("image_id", ""))
            if not image_id:
                raise DataFormatError(f"line {lineno}: empty image_id")
            if image_id in seen:
                raise DataFormatError(f"line {lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            width = _parse_float(obj.get("width"), "width", lineno)
            height = _parse_float(obj.get("height"), "height", lineno)

            def parse_points(key: str) -> tuple[tuple[float, float], ...]:
                raw = obj.get(key)
                if not isinstance(raw, list):
                    raise DataFormatError(f"line {lineno}: {key} must be an array of [x, y] pairs")
                points = []
                for pair in raw:
                    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                        raise DataFormatError(f"line {lineno}: {key} must be an array of [x, y] pairs")
                    points.append((float(pair[0]), float(pair[1])))
                return tuple(points)

            try:
                records.append(
                    PointAnnotatedRecord(
                        image_id=image_id,
                        width=width,
                        height=height,
                        gt_points=parse_points("gt_points"),
                        pred_points=parse_points("pred_points"),
                    )
                )
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
        return records
    finally:
        if owned:
            handle.close()


def load_bins(source: str | Path | IO[str] | IO[bytes]) -> BinSpec:
    """Read a bin configuration from its JSON document."""
    handle, owned = _open_text(source)
    try:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid bins JSON: {exc.msg}") from exc
        if not isinstance(payload, dict):
            raise DataFormatError("bins document must be a JSON object")
        try:
            return BinSpec.from_dict(payload)
        except ValueError as exc:
            raise DataFormatError(str(exc)) from exc
    finally:
        if owned:
            handle.close()


def save_bins(bins: BinSpec, dest: str | Path) -> None:
    """Write a bin configuration as formatted JSON."""
    Path(dest).write_text(json.dumps(bins.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
