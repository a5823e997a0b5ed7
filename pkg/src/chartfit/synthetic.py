"""Synthetic balanced catalog where popularity carries most of the signal.

Used by the ``demo`` command and the end-to-end tests, since the real joined
dataset cannot be redistributed.
"""

from __future__ import annotations

import datetime as dt

import numpy as np

from .ingest import GENRES, TrackRecord
from .linkage import LabeledDataset

# class-conditional genre and release-month weights (charted, non-charted)
_GENRE_WEIGHTS = {
    True: [0.30, 0.20, 0.10, 0.10, 0.10, 0.20],
    False: [1 / 6] * 6,
}
_MONTH_WEIGHTS = {
    True: [1.7, 1, 1.1, 1, 1.1, 1, 1, 1, 1, 1, 1, 1],
    False: [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2.0],
}


def _tracks(rng, n, charted, start_id):
    if charted:
        popularity = rng.normal(68, 11, n)
        instrumental = rng.beta(0.5, 60, n)
        duration = rng.normal(225e3, 30e3, n)
        valence = rng.beta(5, 4, n)
        speech = rng.beta(2, 20, n)
    else:
        low = rng.random(n) < 0.25
        popularity = np.where(low, rng.normal(12, 8, n), rng.normal(44, 13, n))
        instrumental = np.where(rng.random(n) < 0.2, rng.beta(2, 2, n), rng.beta(0.5, 40, n))
        duration = rng.normal(205e3, 45e3, n)
        valence = rng.beta(4, 4, n)
        speech = rng.beta(2, 14, n)
    popularity = np.clip(np.round(popularity), 0, 100)
    duration = np.clip(np.round(duration), 6e4, 5.9e5)
    loudness = np.clip(rng.normal(-6.5, 2.5, n), -60, 0)
    tempo = np.clip(rng.normal(120, 25, n), 40, 250)
    genre_idx = rng.choice(len(GENRES), size=n, p=np.array(_GENRE_WEIGHTS[charted]))
    month_p = np.array(_MONTH_WEIGHTS[charted])
    months = rng.choice(12, size=n, p=month_p / month_p.sum()) + 1
    years = rng.integers(1985, 2021, n)
    days = rng.integers(1, 29, n)
    mode = (rng.random(n) < 0.55).astype(int)
    key = rng.integers(0, 12, n)
    shared = {
        name: rng.beta(a, b, n)
        for name, (a, b) in {
            "acousticness": (1, 4),
            "danceability": (6, 4),
            "energy": (6, 3),
            "liveness": (2, 10),
        }.items()
    }
    tag = "hit" if charted else "track"
    return [
        TrackRecord(
            track_id=f"demo-{start_id + i:06d}",
            title=f"Demo {tag} {start_id + i}",
            artist=f"Artist {int(rng.integers(0, 2000))}",
            release_date=dt.date(int(years[i]), int(months[i]), int(days[i])),
            genre=GENRES[genre_idx[i]],
            acousticness=float(shared["acousticness"][i]),
            danceability=float(shared["danceability"][i]),
            energy=float(shared["energy"][i]),
            instrumentalness=float(instrumental[i]),
            liveness=float(shared["liveness"][i]),
            speechiness=float(speech[i]),
            valence=float(valence[i]),
            loudness=float(loudness[i]),
            popularity=float(popularity[i]),
            tempo=float(tempo[i]),
            mode=int(mode[i]),
            key=int(key[i]),
            duration=float(duration[i]),
        )
        for i in range(n)
    ]


def make_demo_dataset(n_per_class: int = 3590, seed: int = 0) -> LabeledDataset:
    """Balanced synthetic dataset with ``n_per_class`` tracks in each class."""
    rng = np.random.default_rng(seed)
    positives = _tracks(rng, n_per_class, True, 0)
    negatives = _tracks(rng, n_per_class, False, n_per_class)
    return LabeledDataset(positives, negatives, seed)
