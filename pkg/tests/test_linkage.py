import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartfit.ingest import ChartEntry
from chartfit.linkage import (
    DEFAULT_PHRASES,
    LabeledDataset,
    MatchKey,
    balance,
    label_tracks,
    load_descriptor_phrases,
    make_key,
    normalize_text,
    read_labeled,
    write_labeled,
)


# alphabet biased toward the characters normalization treats specially
def test_default_phrases_file():
    assert load_descriptor_phrases() == DEFAULT_PHRASES
    assert "radio edit" in DEFAULT_PHRASES


from oracles import fuzz_corpus


@pytest.mark.parametrize(
    "raw, expected",
    [
        (" Héllo, World (Radio Edit) ", "hello world"),
        ("Song Name - Remastered", "song name"),
        ("abc", "abc"),
        ("Song (Live Version) - Remix", "song"),
        ("Song (Extended Mix)", "song extended mix"),
        ("Remix", "remix"),
    ],
)
def test_normalize_text_examples(raw, expected):
    assert normalize_text(raw) == expected


def test_normalize_text_idempotent_on_fuzz_corpus():
    failures = [s for s in fuzz_corpus() if normalize_text(normalize_text(s)) != normalize_text(s)]
    assert failures == []


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=40))
def test_normalize_text_idempotent_property(raw):
    once = normalize_text(raw)
    assert normalize_text(once) == once
    assert once == once.strip() and "  " not in once


@pytest.mark.parametrize(
    "title, artist, expected",
    [
        ("Hello (Remix)", "ADELE", MatchKey("hello", "adele")),
        ("A", "B", MatchKey("a", "b")),
        ("(Remix)", "", None),
    ],
)
def test_make_key(title, artist, expected):
    assert make_key(title, artist) == expected


def test_label_tracks(track_factory):
    catalog = [
        track_factory(track_id="1", title="Hello (Remix)", artist="Adele"),
        track_factory(track_id="2", title="Other", artist="Nobody"),
        track_factory(track_id="1", title="dupe", artist="dupe"),
        track_factory(track_id="3", title="(Remix)", artist=""),
    ]
    archive = [ChartEntry(catalog[0].release_date, 1, "HELLO", "adele")]
    result = label_tracks(catalog, archive)
    assert [(r.track_id, c) for r, c in result.labeled] == [("1", True), ("2", False)]
    assert result.n_positive == 1
    assert result.duplicate_ids == ["1"]
    assert result.unkeyable == ["3"]


def _labeled(track_factory, n_pos, n_neg):
    return [(track_factory(track_id=f"p{i}"), True) for i in range(n_pos)] + [
        (track_factory(track_id=f"n{i}"), False) for i in range(n_neg)
    ]


def test_balance_sizes_and_determinism(track_factory):
    labeled = _labeled(track_factory, 5, 40)
    a, b = balance(labeled, seed=3), balance(labeled, seed=3)
    assert len(a.positives) == len(a.negatives) == 5
    assert {r.track_id for r in a.negatives} == {r.track_id for r in b.negatives}
    assert {r.track_id for r in balance(labeled, seed=4).negatives} != {
        r.track_id for r in a.negatives
    }


def test_balance_identity_when_already_balanced(track_factory):
    labeled = _labeled(track_factory, 2, 2)
    ds = balance(labeled, seed=0)
    assert [r.track_id for r in ds.records] == ["p0", "p1", "n0", "n1"]


def test_balance_too_few_negatives(track_factory):
    with pytest.raises(ValueError):
        balance(_labeled(track_factory, 3, 2), seed=0)


def test_labeled_dataset_invariants(track_factory):
    with pytest.raises(ValueError):
        LabeledDataset([track_factory(track_id="a")], [], 0)
    with pytest.raises(ValueError):
        LabeledDataset([track_factory(track_id="a")], [track_factory(track_id="a")], 0)


def test_labeled_round_trip(tmp_path, track_factory):
    ds = balance(_labeled(track_factory, 3, 7), seed=1)
    write_labeled(ds, tmp_path / "labeled.csv")
    again = read_labeled(tmp_path / "labeled.csv")
    assert again.records == ds.records
    assert np.array_equal(again.labels, ds.labels)
    assert again.seed == 1
