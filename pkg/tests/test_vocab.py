import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ltvrr.vocab import (ClassVocabulary, FrequencyBands, class_weights, load_vocab, save_vocab,
                         split_bands)


def write_tsv(tmp_path, rows):
    p = tmp_path / "vocab.tsv"
    p.write_text("".join(f"{a}\t{b}\n" for a, b in rows), encoding="utf-8")
    return p


def vocab_of(freqs):
    width = len(str(len(freqs)))
    return ClassVocabulary(tuple(f"c{i:0{width}d}" for i in range(len(freqs))), tuple(freqs)).sorted()


def test_load_sorts_by_frequency(tmp_path):
    v = load_vocab(write_tsv(tmp_path, [("dog", 10), ("cat", 30)]))
    assert v.labels == ("cat", "dog")
    assert v.frequencies == (30, 10)


def test_load_breaks_ties_by_label(tmp_path):
    v = load_vocab(write_tsv(tmp_path, [("b", 5), ("a", 5)]))
    assert v.labels == ("a", "b")


def test_load_rejects_duplicate(tmp_path):
    with pytest.raises(ValueError, match="'a'"):
        load_vocab(write_tsv(tmp_path, [("a", 5), ("a", 7)]))


def test_load_rejects_negative(tmp_path):
    with pytest.raises(ValueError, match="negative"):
        load_vocab(write_tsv(tmp_path, [("a", -1)]))


def test_save_load_roundtrip(tmp_path):
    v = vocab_of([9, 4, 4, 1])
    save_vocab(v, tmp_path / "v.tsv")
    assert load_vocab(tmp_path / "v.tsv") == v


@pytest.mark.parametrize("k, sizes", [(1703, (86, 255, 1362)), (310, (16, 46, 248)), (20, (1, 3, 16))])
def test_band_sizes(k, sizes):
    assert split_bands(vocab_of(list(range(k, 0, -1)))).sizes() == sizes


def test_bands_need_three_classes():
    with pytest.raises(ValueError):
        split_bands(vocab_of([3, 2]))


def test_bands_hold_most_and_least_frequent():
    b = split_bands(vocab_of(list(range(20, 0, -1))))
    assert b.many == (0,)
    assert b.few == tuple(range(4, 20))


@given(st.lists(st.integers(0, 1000), min_size=3, max_size=200), st.integers(1, 50))
def test_bands_partition_and_scale_invariance(freqs, scale):
    v = vocab_of(freqs)
    b = split_bands(v)
    assert sum(b.sizes()) == len(freqs)
    assert sorted(b.many + b.medium + b.few) == list(range(len(freqs)))
    f = np.array(v.frequencies)
    if b.medium:
        assert f[list(b.many)].min() >= f[list(b.medium)].max() >= f[list(b.few)].max()
    scaled = ClassVocabulary(v.labels, tuple(x * scale for x in v.frequencies))
    assert split_bands(scaled) == b


def test_bands_json_roundtrip():
    v = vocab_of(list(range(20, 0, -1)))
    b = split_bands(v)
    data = json.loads(b.to_json(v))
    assert data["many"] == [v.labels[0]]
    assert FrequencyBands.from_json(b.to_json(v), v) == b


def test_weights_uniform_and_symmetric():
    assert class_weights(vocab_of([10, 10]), "inverse_frequency").tolist() == [1.0, 1.0]
    assert class_weights(vocab_of([30, 10]), "uniform").tolist() == [1.0, 1.0]


def test_weights_inverse_frequency():
    np.testing.assert_allclose(class_weights(vocab_of([30, 10]), "inverse_frequency"), [0.5, 1.5])


def test_weights_reject_zero_count():
    with pytest.raises(ValueError):
        class_weights(vocab_of([5, 0]), "inverse_frequency")


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=100))
def test_inverse_weights_properties(freqs):
    v = vocab_of(freqs)
    w = class_weights(v, "inverse_frequency")
    prod = w * np.array(v.frequencies)
    assert np.all(w > 0)
    assert abs(w.mean() - 1.0) < 1e-9
    np.testing.assert_allclose(prod, prod[0], rtol=1e-9)


def test_vocabulary_invariants():
    with pytest.raises(ValueError):
        ClassVocabulary(("a", ""), (1, 1))
    with pytest.raises(ValueError):
        ClassVocabulary(("a",), (1, 2))
