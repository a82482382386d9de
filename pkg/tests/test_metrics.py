import itertools
import math

import numpy as np
import pytest

from ltvrr.metrics import (PredictionRecord, average_precision_at, band_report, band_table_csv,
                           grouped_pair_accuracy, per_class_accuracy, per_example_accuracy,
                           read_predictions, relevance, soft_ap, soft_ap_csv, triplet_accuracy,
                           write_predictions)
from ltvrr.vocab import FrequencyBands


def rec(i, gold, pred, k=(5, 5, 5)):
    """Record whose ranking puts ``pred`` first, then the remaining classes in order."""
    rank = {}
    for role, p, n in zip("sro", pred, k):
        rank[role] = [p] + [c for c in range(n) if c != p]
    return PredictionRecord(i, dict(zip("sro", gold)), rank)


def naive_ap(rel, k):
    # written straight from the definition, with python loops
    total = sum(rel)
    if total == 0:
        return 0.0
    acc = 0.0
    for r in range(1, k + 1):
        if rel[r - 1]:
            acc += sum(rel[:r]) / r
    return acc / min(total, k)


def test_per_class_hand_case():
    acc = per_class_accuracy([0, 1, 1], [0, 0, 1], 2)
    assert acc.tolist() == [50.0, 100.0]


def test_absent_class_is_nan():
    acc = per_class_accuracy([0, 0], [0, 0], 3)
    assert acc[0] == 100.0 and np.isnan(acc[1:]).all()


def test_majority_predictor_divergence():
    gold = np.array([0] * 90 + [1] * 10)
    pred = np.zeros(100, dtype=int)
    assert per_example_accuracy(pred, gold) == pytest.approx(90.0)
    assert np.nanmean(per_class_accuracy(pred, gold, 2)) == pytest.approx(50.0)


def test_misaligned_and_out_of_range():
    with pytest.raises(ValueError):
        per_class_accuracy([0, 1], [0], 2)
    with pytest.raises(ValueError):
        per_class_accuracy([0, 2], [0, 1], 2)


def test_band_report_uniform():
    bands = FrequencyBands((0,), (1, 2), (3, 4, 5), 6)
    rep = band_report(np.full(6, 50.0), bands)
    assert all(v == pytest.approx(50.0) for v in rep.values())


def test_band_report_unweighted_over_classes():
    bands = FrequencyBands((0,), (), (1, 2), 3)
    rep = band_report(np.array([100.0, 0.0, 0.0]), bands)
    assert rep["many"] == 100.0 and rep["few"] == 0.0
    assert rep["medium"] is None
    assert rep["all"] == pytest.approx(100 / 3)


def test_band_report_absent_band():
    bands = FrequencyBands((0,), (1,), (2,), 3)
    rep = band_report(np.array([80.0, np.nan, np.nan]), bands)
    assert rep["medium"] is None and rep["few"] is None and rep["all"] == 80.0


def test_triplet_accuracy_two_of_three():
    records = [rec(0, (1, 2, 3), (1, 2, 3)), rec(1, (0, 0, 0), (0, 0, 0)),
               rec(2, (1, 1, 1), (1, 4, 1))]
    overall, bands = triplet_accuracy(records)
    assert overall == pytest.approx(200 / 3) and bands is None


def test_triplet_bands_counts_unseen_as_zero():
    records = [rec(0, (1, 2, 3), (1, 2, 3)), rec(1, (0, 0, 0), (0, 1, 0))]
    counts = {"1|2|3": 50, "4|4|4": 10, "2|2|2": 5}
    overall, bands = triplet_accuracy(records, counts)
    assert overall == 50.0
    # four triplet classes -> many 1, medium 0, few 3; the unseen 0|0|0 is tail
    assert bands["many"] == 100.0
    assert bands["medium"] is None
    assert bands["few"] == 0.0
    assert bands["all"] == 50.0


def test_grouped_pairs():
    # two SO groups, one fully right and one fully wrong
    records = [rec(0, (1, 0, 2), (1, 0, 2)), rec(1, (1, 1, 2), (1, 1, 2)),
               rec(2, (3, 0, 4), (3, 1, 4))]
    assert grouped_pair_accuracy(records, "SO") == pytest.approx(50.0)
    # three groups with accuracies 1, 0.5, 0 -> mean 50
    records = [rec(0, (0, 0, 0), (0, 0, 0)),
               rec(1, (1, 0, 1), (1, 0, 1)), rec(2, (1, 1, 1), (1, 2, 1)),
               rec(3, (2, 0, 2), (2, 1, 2))]
    assert grouped_pair_accuracy(records, "SO") == pytest.approx(50.0)
    with pytest.raises(ValueError):
        grouped_pair_accuracy(records, "XY")


def test_single_group_equals_triplet_accuracy(rng):
    records = [rec(i, (0, int(g), 0), (0, int(p), 0))
               for i, (g, p) in enumerate(zip(rng.integers(5, size=30), rng.integers(5, size=30)))]
    assert grouped_pair_accuracy(records, "SO") == pytest.approx(triplet_accuracy(records)[0])


def test_ap_hand_case():
    rel = np.zeros(10, dtype=bool)
    rel[[0, 2]] = True
    assert average_precision_at(rel, 5) == pytest.approx((1 + 2 / 3) / 2)


def test_ap_nothing_relevant_and_cutoff_guard():
    assert average_precision_at(np.zeros(4, dtype=bool), 2) == 0.0
    with pytest.raises(ValueError):
        average_precision_at(np.ones(3, dtype=bool), 4)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_ap_matches_bruteforce_over_all_orderings(n):
    for n_rel in range(n + 1):
        base = [True] * n_rel + [False] * (n - n_rel)
        for perm in set(itertools.permutations(base)):
            for k in range(1, n + 1):
                assert average_precision_at(np.array(perm), k) == pytest.approx(naive_ap(list(perm), k))


def test_relevant_first_gives_one():
    rel = np.array([True, True, True, False, False])
    for k in range(1, 6):
        assert average_precision_at(rel, k) == pytest.approx(1.0)


def test_relevance_tie_break_and_full_pool():
    sim = np.array([1.0, 0.5, 0.5, 0.1])
    rel = relevance([3, 2, 1, 0], 0, sim, T=1)
    assert rel.tolist() == [False, False, True, True]
    assert relevance([3, 2, 1, 0], 0, sim, T=3).all()


def test_soft_ap_T_pool_is_one(rng):
    k = 8
    sim = np.eye(k)
    records = [PredictionRecord(i, {"s": int(rng.integers(k)), "r": 0, "o": int(rng.integers(k))},
                                {r: list(rng.permutation(k)) for r in "sro"}) for i in range(10)]
    out = soft_ap(records, sim, T=k, cutoffs=(1, 5))
    assert out == {1: pytest.approx(1.0), 5: pytest.approx(1.0)}
    exact = soft_ap(records, sim, T=0, cutoffs=(k,))
    ranks = [rec.rank[r].index(rec.gold[r]) + 1 for rec in records for r in "so"]
    assert exact[k] == pytest.approx(np.mean([1 / q for q in ranks]))


def test_order_invariance(rng):
    records = [rec(i, tuple(rng.integers(5, size=3)), tuple(rng.integers(5, size=3)))
               for i in range(40)]
    shuffled = [records[i] for i in rng.permutation(40)]
    counts = {"0|0|0": 9, "1|1|1": 4}
    assert triplet_accuracy(records, counts) == triplet_accuracy(shuffled, counts)
    sim = np.eye(5)
    assert soft_ap(records, sim, 1, (1, 3)) == soft_ap(shuffled, sim, 1, (1, 3))


def test_jsonl_roundtrip(tmp_path, rng):
    labels = {"s": ["a", "b", "c"], "r": ["x", "y", "z"], "o": ["a", "b", "c"]}
    records = [PredictionRecord(i, {r: int(rng.integers(3)) for r in "sro"},
                                {r: [int(c) for c in rng.permutation(3)] for r in "sro"},
                                {r: [0.5, 0.25, 0.125] for r in "sro"}) for i in range(5)]
    write_predictions(records, tmp_path / "p.jsonl", labels)
    back = read_predictions(tmp_path / "p.jsonl", labels)
    assert [(b.id, b.gold, b.rank, b.score) for b in back] == \
           [(a.id, a.gold, a.rank, a.score) for a in records]
    assert '"a"' in (tmp_path / "p.jsonl").read_text() or '"b"' in (tmp_path / "p.jsonl").read_text()


def test_csv_writers():
    text = band_table_csv({"s": {"many": 10.0, "medium": None, "few": math.nan, "all": 5.0}})
    assert text.splitlines() == ["branch,many,medium,few,all", "s,10.0000,NA,NA,5.0000"]
    assert soft_ap_csv({"wup": {1: 0.5}}).splitlines()[1] == "wup,1,0.5000"
