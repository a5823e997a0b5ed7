"""Typed records for the track catalog and the weekly chart archive.

Both parsers are total: every data row either becomes a record or lands in
the rejection log as ``{"row", "field", "reason"}``.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, fields

import yaml

logger = logging.getLogger(__name__)

GENRES = ("pop", "rap", "rock", "latin", "edm", "rnb")
_GENRE_ALIASES = {"r&b": "rnb", "r and b": "rnb", "r'n'b": "rnb", "randb": "rnb"}

UNIT_DESCRIPTORS = (
    "acousticness",
    "danceability",
    "energy",
    "instrumentalness",
    "liveness",
    "speechiness",
    "valence",
)
MAX_DURATION_MS = 6e5
MIN_YEAR = 1985

CATALOG_FIELDS = (
    "track_id",
    "title",
    "artist",
    "release_date",
    "genre",
    *UNIT_DESCRIPTORS,
    "loudness",
    "popularity",
    "tempo",
    "mode",
    "key",
    "duration",
)
ARCHIVE_FIELDS = ("chart_date", "rank", "title", "artist")

# Column layout of the public 30k Spotify songs export.
SCHEMA_PRESETS = {
    "canonical": {name: name for name in CATALOG_FIELDS},
    "spotify30k": {
        **{name: name for name in CATALOG_FIELDS},
        "title": "track_name",
        "artist": "track_artist",
        "release_date": "track_album_release_date",
        "genre": "playlist_genre",
        "popularity": "track_popularity",
        "duration": "duration_ms",
    },
}
_ARCHIVE_ALIASES = {
    "chart_date": ("chart_date", "date", "week", "chart_week"),
    "rank": ("rank", "position", "this_week"),
    "title": ("title", "song", "track", "song_name"),
    "artist": ("artist", "performer", "artists"),
}


class SchemaError(ValueError):
    """The input file lacks a required column."""


class RowError(ValueError):
    def __init__(self, field, reason):
        super().__init__(reason)
        self.field = field
        self.reason = reason


@dataclass(frozen=True)
class TrackRecord:
    track_id: str
    title: str
    artist: str
    release_date: dt.date
    genre: str
    acousticness: float
    danceability: float
    energy: float
    instrumentalness: float
    liveness: float
    speechiness: float
    valence: float
    loudness: float
    popularity: float
    tempo: float
    mode: int
    key: int
    duration: float
    month_imputed: bool = False

    @property
    def month(self) -> int:
        return self.release_date.month


@dataclass(frozen=True)
class ChartEntry:
    chart_date: dt.date
    rank: int
    title: str
    artist: str


def validate_record(record: TrackRecord) -> list[str]:
    """Return one message per violated invariant (empty when valid)."""
    problems = []
    for name in UNIT_DESCRIPTORS:
        value = getattr(record, name)
        if not 0.0 <= value <= 1.0:
            problems.append(f"{name} out of [0,1]")
    if not -60.0 <= record.loudness <= 0.0:
        problems.append("loudness out of [-60,0]")
    if not 0.0 <= record.popularity <= 100.0:
        problems.append("popularity out of [0,100]")
    if not record.tempo > 0.0:
        problems.append("tempo must be positive")
    if record.mode not in (0, 1):
        problems.append("mode out of {0,1}")
    if record.key not in range(12):
        problems.append("key out of {0..11}")
    if not record.duration > 0.0:
        problems.append("duration must be positive")
    elif record.duration >= MAX_DURATION_MS:
        problems.append("duration exceeds 6e5 ms")
    if record.genre not in GENRES:
        problems.append(f"genre {record.genre!r} not in {GENRES}")
    if record.release_date.year < MIN_YEAR:
        problems.append(f"release year before {MIN_YEAR}")
    return problems


def _field_of(problem: str) -> str:
    return problem.split(" ", 1)[0]


def parse_date(text: str) -> tuple[dt.date, bool]:
    """Parse ``YYYY-MM-DD``, ``YYYY-MM`` or ``YYYY``.

    The flag is True when the month was imputed (year-only input).
    """
    text = text.strip()
    parts = text.split("-")
    try:
        if len(parts) == 1 and len(text) == 4:
            return dt.date(int(text), 1, 1), True
        if len(parts) == 2:
            return dt.date(int(parts[0]), int(parts[1]), 1), False
        return dt.date.fromisoformat(text), False
    except ValueError:
        raise ValueError(f"malformed date {text!r}") from None


def _parse_float(name, text):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise RowError(name, f"{name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise RowError(name, f"{name} is not finite")
    return value


def _parse_int(name, text):
    value = _parse_float(name, text)
    if not value.is_integer():
        raise RowError(name, f"{name} is not an integer: {text!r}")
    return int(value)


def normalize_genre(text: str) -> str:
    genre = text.strip().lower()
    return _GENRE_ALIASES.get(genre, genre)


def load_schema(schema=None) -> dict[str, str]:
    """Resolve a schema given as a preset name, a mapping, or a YAML/JSON file."""
    if schema is None:
        return dict(SCHEMA_PRESETS["canonical"])
    if isinstance(schema, dict):
        mapping = dict(SCHEMA_PRESETS["canonical"])
        mapping.update(schema)
        return mapping
    if str(schema) in SCHEMA_PRESETS:
        return dict(SCHEMA_PRESETS[str(schema)])
    with open(schema, encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh) or {}
    if not isinstance(loaded, dict):
        raise SchemaError(f"schema file {schema} must hold a field -> column mapping")
    return load_schema(loaded)


_CLAMP_BOUNDS = {
    **{name: (0.0, 1.0) for name in UNIT_DESCRIPTORS},
    "loudness": (-60.0, 0.0),
    "popularity": (0.0, 100.0),
}


def _track_from_row(row: dict, columns: dict, clamp: bool, notes: list):
    values = {}
    for name in ("track_id", "title", "artist"):
        values[name] = row[columns[name]].strip()
    if not values["track_id"]:
        raise RowError("track_id", "empty track_id")
    try:
        values["release_date"], values["month_imputed"] = parse_date(row[columns["release_date"]])
    except ValueError as exc:
        raise RowError("release_date", str(exc)) from None
    values["genre"] = normalize_genre(row[columns["genre"]])
    for name in (*UNIT_DESCRIPTORS, "loudness", "popularity", "tempo", "duration"):
        values[name] = _parse_float(name, row[columns[name]])
    for name in ("mode", "key"):
        values[name] = _parse_int(name, row[columns[name]])
    if clamp:
        for name, (lo, hi) in _CLAMP_BOUNDS.items():
            if not lo <= values[name] <= hi:
                notes.append((name, f"{name} clamped to [{lo:g},{hi:g}]"))
                values[name] = min(max(values[name], lo), hi)
    record = TrackRecord(**values)
    problems = validate_record(record)
    if problems:
        raise RowError(_field_of(problems[0]), "; ".join(problems))
    return record


def _open_rows(path):
    fh = open(path, newline="", encoding="utf-8-sig")
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        fh.close()
        raise SchemaError(f"{path}: missing header row")
    return fh, reader


def parse_catalog(path, schema=None, clamp=False):
    """Parse the track catalog CSV.

    Returns ``(records, rejections)``.  With ``clamp=True`` out-of-range
    bounded descriptors are clipped and noted in the log instead of rejected.
    """
    columns = load_schema(schema)
    fh, reader = _open_rows(path)
    with fh:
        missing = [
            f"{name} (column {columns[name]!r})"
            for name in CATALOG_FIELDS
            if columns[name] not in reader.fieldnames
        ]
        if missing:
            raise SchemaError(f"{path}: missing required columns: {', '.join(missing)}")
        records, rejections = [], []
        for i, row in enumerate(reader):
            notes = []
            try:
                records.append(_track_from_row(row, columns, clamp, notes))
            except RowError as exc:
                rejections.append({"row": i, "field": exc.field, "reason": exc.reason})
                continue
            for name, reason in notes:
                rejections.append({"row": i, "field": name, "reason": reason, "kept": True})
    n_rejected = sum(1 for r in rejections if not r.get("kept"))
    logger.info("catalog %s: %d accepted, %d rejected", path, len(records), n_rejected)
    return records, rejections


def _resolve_archive_columns(fieldnames, path):
    present = {name.strip().lower(): name for name in fieldnames}
    columns = {}
    for name, aliases in _ARCHIVE_ALIASES.items():
        for alias in aliases:
            if alias in present:
                columns[name] = present[alias]
                break
        else:
            raise SchemaError(f"{path}: missing required column {name!r}")
    return columns


def parse_chart_archive(path):
    """Parse the weekly chart archive CSV into ``(entries, rejections)``.

    Repeated weeks of the same song are kept as separate entries.
    """
    fh, reader = _open_rows(path)
    with fh:
        columns = _resolve_archive_columns(reader.fieldnames, path)
        entries, rejections = [], []
        for i, row in enumerate(reader):
            try:
                entries.append(_entry_from_row(row, columns))
            except RowError as exc:
                rejections.append({"row": i, "field": exc.field, "reason": exc.reason})
    total = len(entries) + len(rejections)
    logger.info(
        "archive %s: %d accepted, %d rejected (%.2f%%)",
        path,
        len(entries),
        len(rejections),
        100.0 * len(rejections) / total if total else 0.0,
    )
    return entries, rejections


def _entry_from_row(row, columns):
    try:
        chart_date, imputed = parse_date(row[columns["chart_date"]])
    except ValueError as exc:
        raise RowError("chart_date", str(exc)) from None
    if imputed:
        raise RowError("chart_date", "chart_date needs a full date")
    rank = _parse_int("rank", row[columns["rank"]])
    if not 1 <= rank <= 100:
        raise RowError("rank", "rank out of [1,100]")
    return ChartEntry(
        chart_date, rank, row[columns["title"]].strip(), row[columns["artist"]].strip()
    )


def format_date(value: dt.date, month_imputed=False) -> str:
    return str(value.year) if month_imputed else value.isoformat()


def track_to_row(record: TrackRecord) -> dict:
    row = {}
    for f in fields(TrackRecord):
        if f.name == "month_imputed":
            continue
        value = getattr(record, f.name)
        if f.name == "release_date":
            value = format_date(value, record.month_imputed)
        elif isinstance(value, float):
            value = repr(value)
        row[f.name] = value
    return row


def write_catalog(records, path, extra_columns=None):
    """Write records in canonical column layout; ``parse_catalog`` reads it back."""
    extra_columns = extra_columns or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=[*CATALOG_FIELDS, *extra_columns], lineterminator="\n"
        )
        writer.writeheader()
        for i, record in enumerate(records):
            row = track_to_row(record)
            for name, column in extra_columns.items():
                row[name] = column[i]
            writer.writerow(row)


def write_archive(entries, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ARCHIVE_FIELDS)
        for e in entries:
            writer.writerow([e.chart_date.isoformat(), e.rank, e.title, e.artist])


def write_rejections(rejections, path):
    with open(path, "w", encoding="utf-8") as fh:
        for item in rejections:
            fh.write(json.dumps(item, sort_keys=True) + "\n")


def read_catalog_with_columns(path, extra: tuple[str, ...]):
    """Read a canonical catalog carrying extra columns (e.g. ``charted``).

    Every row must be valid; this is for files this package wrote itself.
    """
    records, rejections = parse_catalog(path)
    if rejections:
        first = rejections[0]
        raise ValueError(f"{path}: row {first['row']}: {first['reason']}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [name for name in extra if name not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        columns = {name: [] for name in extra}
        for row in reader:
            for name in extra:
                columns[name].append(row[name])
    return records, columns
