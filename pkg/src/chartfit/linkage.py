"""Title/artist matching between the catalog and the chart archive."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .ingest import TrackRecord, read_catalog_with_columns, write_catalog

logger = logging.getLogger(__name__)

_DASHES = "-\u2010\u2011\u2012\u2013\u2014\u2015"


def load_descriptor_phrases(path=None) -> tuple[str, ...]:
    """Read the descriptor list (one phrase per line, ``#`` comments)."""
    if path is None:
        text = resources.files("chartfit.data").joinpath("descriptors.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    phrases = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().casefold()
        if line:
            phrases.append(" ".join(line.split()))
    return tuple(phrases)


DEFAULT_PHRASES = load_descriptor_phrases()


class _Stripper:
    def __init__(self, phrases):
        alternatives = "|".join(
            r"\s+".join(re.escape(word) for word in phrase.split()) for phrase in phrases
        )
        self.phrase = re.compile(rf"\b(?:{alternatives})\b") if phrases else None
        self.group = re.compile(r"[(\[]([^()\[\]]*)[)\]]")
        self.dash = re.compile(rf"\s+[{_DASHES}]\s*([^{_DASHES}]*)$")

    def __call__(self, text: str) -> str:
        if self.phrase is None:
            return text
        text = self.group.sub(lambda m: " " if self.phrase.search(m.group(1)) else m.group(0), text)
        while True:
            m = self.dash.search(text)
            if m is None or not self.phrase.search(m.group(1)):
                return text
            text = text[: m.start()]


_strippers: dict[tuple[str, ...], _Stripper] = {}


def _stripper(phrases) -> _Stripper:
    key = tuple(phrases)
    if key not in _strippers:
        _strippers[key] = _Stripper(key)
    return _strippers[key]


def _fold(text: str) -> str:
    text = unicodedata.normalize("NFKD", text.casefold())
    return "".join(ch for ch in text if not unicodedata.combining(ch))


def _keep_word_chars(text: str) -> str:
    return "".join(ch if ch.isalnum() else " " if ch.isspace() else "" for ch in text)


def normalize_text(raw: str, phrases=DEFAULT_PHRASES) -> str:
    """Lowercase, strip accents and version descriptors, drop punctuation.

    The result holds only letters, digits and single spaces, and
    ``normalize_text`` is idempotent on it.
    """
    text = _stripper(phrases)(_fold(raw))
    text = _keep_word_chars(text)
    # folding can expose characters that fold again (e.g. modifier letters)
    for _ in range(4):
        folded = _keep_word_chars(_fold(text))
        if folded == text:
            break
        text = folded
    return " ".join(text.split())


class MatchKey(NamedTuple):
    norm_title: str
    norm_artist: str


def make_key(title: str, artist: str, phrases=DEFAULT_PHRASES) -> MatchKey | None:
    """Normalized (title, artist) key, or ``None`` when both parts are empty."""
    key = MatchKey(normalize_text(title, phrases), normalize_text(artist, phrases))
    if not key.norm_title and not key.norm_artist:
        return None
    return key


@dataclass
class LinkageResult:
    labeled: list[tuple[TrackRecord, bool]]
    n_positive: int
    unkeyable: list[str] = field(default_factory=list)
    duplicate_ids: list[str] = field(default_factory=list)

    @property
    def positive_share(self) -> float:
        return self.n_positive / len(self.labeled) if self.labeled else 0.0


def label_tracks(catalog, archive, phrases=DEFAULT_PHRASES) -> LinkageResult:
    """Flag each catalog track whose key equals some archive entry's key.

    Tracks without a usable key and repeated track ids are left out and
    listed on the result.
    """
    chart_keys = set()
    for entry in archive:
        key = make_key(entry.title, entry.artist, phrases)
        if key is not None:
            chart_keys.add(key)

    labeled, unkeyable, duplicates = [], [], []
    seen = set()
    for record in catalog:
        if record.track_id in seen:
            duplicates.append(record.track_id)
            continue
        seen.add(record.track_id)
        key = make_key(record.title, record.artist, phrases)
        if key is None:
            unkeyable.append(record.track_id)
            continue
        labeled.append((record, key in chart_keys))
    n_positive = sum(charted for _, charted in labeled)
    if unkeyable:
        logger.warning("%d catalog tracks have no usable title/artist key", len(unkeyable))
    logger.info(
        "linked %d tracks: %d charted (%.1f%%)",
        len(labeled),
        n_positive,
        100.0 * n_positive / max(len(labeled), 1),
    )
    return LinkageResult(labeled, n_positive, unkeyable, duplicates)


@dataclass
class LabeledDataset:
    """Balanced dataset: every charted track plus an equal-size negative sample."""

    positives: list[TrackRecord]
    negatives: list[TrackRecord]
    seed: int

    def __post_init__(self):
        if len(self.positives) != len(self.negatives):
            raise ValueError(
                f"unbalanced dataset: {len(self.positives)} positives vs "
                f"{len(self.negatives)} negatives"
            )
        ids = [r.track_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("a track_id appears more than once")

    @property
    def records(self) -> list[TrackRecord]:
        return [*self.positives, *self.negatives]

    @property
    def labels(self) -> np.ndarray:
        return np.repeat(np.array([1, 0]), [len(self.positives), len(self.negatives)])

    def items(self) -> list[tuple[TrackRecord, bool]]:
        return [(r, True) for r in self.positives] + [(r, False) for r in self.negatives]

    def __len__(self):
        return len(self.positives) + len(self.negatives)


def balance(labeled, seed: int) -> LabeledDataset:
    """Keep all positives and draw as many negatives uniformly without replacement."""
    positives = [r for r, charted in labeled if charted]
    negatives = [r for r, charted in labeled if not charted]
    if len(negatives) < len(positives):
        raise ValueError(
            f"only {len(negatives)} negatives for {len(positives)} positives; "
            "undersample the positives instead"
        )
    if len(negatives) > len(positives):
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(negatives), size=len(positives), replace=False))
        negatives = [negatives[i] for i in keep]
    return LabeledDataset(positives, negatives, seed)


def write_labeled(dataset: LabeledDataset, path) -> None:
    """Write the dataset CSV (catalog columns + ``charted``) and its sidecar JSON."""
    path = Path(path)
    charted = ["true"] * len(dataset.positives) + ["false"] * len(dataset.negatives)
    write_catalog(dataset.records, path, extra_columns={"charted": charted})
    sidecar = {
        "seed": dataset.seed,
        "n_positive": len(dataset.positives),
        "n_negative": len(dataset.negatives),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def read_labeled(path) -> LabeledDataset:
    path = Path(path)
    records, columns = read_catalog_with_columns(path, ("charted",))
    flags = [value.strip().lower() in ("true", "1") for value in columns["charted"]]
    sidecar = path.with_suffix(".json")
    seed = json.loads(sidecar.read_text(encoding="utf-8"))["seed"] if sidecar.exists() else 0
    positives = [r for r, f in zip(records, flags) if f]
    negatives = [r for r, f in zip(records, flags) if not f]
    return LabeledDataset(positives, negatives, seed)
