"""Model inputs: cyclic key/month, boundary months, one-hot genre, z-scores."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ingest import GENRES, TrackRecord

FEATURE_NAMES = (
    "x_pop_z",
    "x_dur_z",
    "x_ins",
    "x_spc",
    "x_val",
    "x_ldn",
    "x_acn",
    "x_mod",
    "x_key_cos",
    "x_key_sin",
    "x_mon_cos",
    "x_mon_sin",
    "x_jan",
    "x_dec",
    *(f"x_g_{g}" for g in GENRES),
)
N_FEATURES = len(FEATURE_NAMES)
LOUDNESS_INDEX = FEATURE_NAMES.index("x_ldn")


def encode_cyclic(value: int, period: int) -> tuple[float, float]:
    if period <= 0:
        raise ValueError("period must be positive")
    if value < 0:
        raise ValueError("value must be non-negative")
    angle = 2.0 * math.pi * value / period
    return math.cos(angle), math.sin(angle)


def encode_boundary_months(month: int) -> tuple[int, int]:
    if month not in range(1, 13):
        raise ValueError(f"month {month!r} out of 1..12")
    return int(month == 1), int(month == 12)


def encode_genre(genre: str) -> list[int]:
    if genre not in GENRES:
        raise ValueError(f"unknown genre {genre!r}; expected one of {GENRES}")
    return [int(g == genre) for g in GENRES]


@dataclass(frozen=True)
class StandardizationParams:
    mu_pop: float
    sigma_pop: float
    mu_dur: float
    sigma_dur: float

    def __post_init__(self):
        if not (self.sigma_pop > 0 and self.sigma_dur > 0):
            raise ValueError("standard deviations must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StandardizationParams":
        return cls(**{k: float(data[k]) for k in ("mu_pop", "sigma_pop", "mu_dur", "sigma_dur")})


def _mean_std(values, name):
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean()
    sigma = values.std()  # population standard deviation
    if not sigma > 0:
        raise ValueError(f"zero variance in {name}; cannot standardize")
    return float(mu), float(sigma)


def fit_standardizer(train) -> StandardizationParams:
    """Mean and population std of popularity and duration over ``train``."""
    train = list(train)
    if not train:
        raise ValueError("cannot fit standardization on an empty training split")
    mu_pop, sigma_pop = _mean_std([r.popularity for r in train], "popularity")
    mu_dur, sigma_dur = _mean_std([r.duration for r in train], "duration")
    return StandardizationParams(mu_pop, sigma_pop, mu_dur, sigma_dur)


def assemble(track: TrackRecord, params: StandardizationParams) -> np.ndarray:
    """The 20-component input vector in fixed order (see ``FEATURE_NAMES``)."""
    key_cos, key_sin = encode_cyclic(track.key, 12)
    mon_cos, mon_sin = encode_cyclic(track.month, 12)
    jan, dec = encode_boundary_months(track.month)
    return np.array(
        [
            (track.popularity - params.mu_pop) / params.sigma_pop,
            (track.duration - params.mu_dur) / params.sigma_dur,
            track.instrumentalness,
            track.speechiness,
            track.valence,
            track.loudness,
            track.acousticness,
            track.mode,
            key_cos,
            key_sin,
            mon_cos,
            mon_sin,
            jan,
            dec,
            *encode_genre(track.genre),
        ],
        dtype=np.float64,
    )


class TrackFeaturizer(TransformerMixin, BaseEstimator):
    """Turn ``TrackRecord`` lists into model matrices.

    Standardization statistics come from the records passed to ``fit`` only;
    ``transform`` never refits them.

    Parameters
    ----------
    drop_loudness : bool, default=False
        Leave the raw loudness column out of the output.
    """

    def __init__(self, drop_loudness=False):
        self.drop_loudness = drop_loudness

    def fit(self, X, y=None):
        self.standardizer_ = fit_standardizer(X)
        self.n_features_out_ = N_FEATURES - int(self.drop_loudness)
        return self

    def transform(self, X):
        check_is_fitted(self, "standardizer_")
        rows = [assemble(r, self.standardizer_) for r in X]
        out = np.vstack(rows) if rows else np.empty((0, N_FEATURES))
        if self.drop_loudness:
            out = np.delete(out, LOUDNESS_INDEX, axis=1)
        return out

    def get_feature_names_out(self, input_features=None):
        names = list(FEATURE_NAMES)
        if self.drop_loudness:
            names.remove("x_ldn")
        return np.array(names, dtype=object)


def write_features(X, y, path, names=FEATURE_NAMES) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, "label"])
        for row, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_features(path):
    """Read a featurized CSV back into ``(X, y, names)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        rows = [[float(v) for v in line] for line in reader if line]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return data[:, :-1], data[:, -1].astype(int), tuple(header[:-1])
