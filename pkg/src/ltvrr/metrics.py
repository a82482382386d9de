"""Long-tail evaluation: per-class accuracy, frequency bands, triplets, soft AP."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .vocab import ClassVocabulary, FrequencyBands, split_bands

ROLES = ("s", "r", "o")
BAND_NAMES = ("many", "medium", "few", "all")
DEFAULT_CUTOFFS = (1, 5, 20, 50)
POOL_SIZE = 250
PREDICTIONS_SCHEMA = 1


@dataclass
class PredictionRecord:
    id: int
    gold: dict                       # role -> class index
    rank: dict                       # role -> ranked class indices (best first)
    score: dict = field(default_factory=dict)  # role -> scores parallel to rank

    def to_json(self, labels: Mapping[str, Sequence[str]] | None = None) -> str:
        def name(role, i):
            return labels[role][i] if labels else int(i)
        return json.dumps({
            "id": int(self.id),
            "gold": {r: name(r, self.gold[r]) for r in ROLES},
            "rank": {r: [name(r, i) for i in self.rank[r]] for r in ROLES},
            "score": {r: [float(v) for v in self.score.get(r, ())] for r in ROLES},
        })

    @classmethod
    def from_json(cls, line: str, labels: Mapping[str, Sequence[str]] | None = None):
        rec = json.loads(line)
        index = None
        if labels:
            index = {r: {lab: i for i, lab in enumerate(labels[r])} for r in ROLES}

        def idx(role, v):
            return index[role][v] if index else int(v)
        return cls(
            rec["id"],
            {r: idx(r, rec["gold"][r]) for r in ROLES},
            {r: [idx(r, v) for v in rec["rank"][r]] for r in ROLES},
            {r: list(rec.get("score", {}).get(r, [])) for r in ROLES},
        )


def write_predictions(records: Iterable[PredictionRecord], path, labels=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json(labels) + "\n")


def read_predictions(path, labels=None) -> list[PredictionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [PredictionRecord.from_json(line, labels) for line in fh if line.strip()]


def top1(records: Sequence[PredictionRecord], role: str) -> np.ndarray:
    return np.array([rec.rank[role][0] for rec in records], dtype=np.int64)


def gold(records: Sequence[PredictionRecord], role: str) -> np.ndarray:
    return np.array([rec.gold[role] for rec in records], dtype=np.int64)


def per_class_accuracy(preds, gold_labels, num_classes: int) -> np.ndarray:
    """Accuracy (percent) for each class; ``nan`` marks classes absent from ``gold_labels``."""
    preds = np.asarray(preds, dtype=np.int64)
    gold_labels = np.asarray(gold_labels, dtype=np.int64)
    if preds.shape != gold_labels.shape:
        raise ValueError("predictions and gold labels are not aligned")
    for arr in (preds, gold_labels):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"label out of range [0, {num_classes})")
    count = np.bincount(gold_labels, minlength=num_classes).astype(np.float64)
    correct = np.bincount(gold_labels[preds == gold_labels], minlength=num_classes)
    acc = np.full(num_classes, np.nan)
    present = count > 0
    acc[present] = 100.0 * correct[present] / count[present]
    return acc


def per_example_accuracy(preds, gold_labels) -> float:
    preds = np.asarray(preds)
    gold_labels = np.asarray(gold_labels)
    if preds.shape != gold_labels.shape:
        raise ValueError("predictions and gold labels are not aligned")
    if preds.size == 0:
        return float("nan")
    return 100.0 * float(np.mean(preds == gold_labels))


def _mean_present(values):
    values = values[~np.isnan(values)]
    return float(values.mean()) if values.size else None


def band_report(acc, bands: FrequencyBands) -> dict:
    """Unweighted mean accuracy of present classes per band and overall; ``None`` when a band has none."""
    acc = np.asarray(acc, dtype=np.float64)
    out = {name: _mean_present(acc[list(idx)]) for name, idx in bands.items()}
    out["all"] = _mean_present(acc)
    return out


def triplet_correct(records: Sequence[PredictionRecord]) -> np.ndarray:
    ok = np.ones(len(records), dtype=bool)
    for role in ROLES:
        ok &= top1(records, role) == gold(records, role)
    return ok


def triplet_key(s, r, o) -> str:
    return f"{s}|{r}|{o}"


def triplet_accuracy(records: Sequence[PredictionRecord],
                     train_triplet_counts: Mapping[str, int] | None = None):
    """Whole-triplet accuracy (percent), plus a band report over SRO triplet classes.

    Bands come from :func:`split_bands` over training triplet counts (test
    triplets never seen in training count as frequency 0); each band value
    is the mean per-triplet-class accuracy over triplets present in the
    records.
    """
    ok = triplet_correct(records)
    overall = 100.0 * float(ok.mean()) if len(ok) else float("nan")
    if train_triplet_counts is None:
        return overall, None
    keys = [triplet_key(rec.gold["s"], rec.gold["r"], rec.gold["o"]) for rec in records]
    counts = dict(train_triplet_counts)
    for key in keys:
        counts.setdefault(key, 0)
    if len(counts) < 3:
        return overall, None
    vocab = ClassVocabulary(tuple(counts), tuple(counts.values())).sorted()
    pos = {lab: i for i, lab in enumerate(vocab.labels)}
    cls = np.array([pos[k] for k in keys], dtype=np.int64)
    preds = np.where(ok, cls, -1)
    n = len(vocab)
    count = np.bincount(cls, minlength=n).astype(np.float64)
    correct = np.bincount(cls[preds == cls], minlength=n)
    acc = np.full(n, np.nan)
    acc[count > 0] = 100.0 * correct[count > 0] / count[count > 0]
    return overall, band_report(acc, split_bands(vocab))


_PAIRS = {"SO": ("s", "o"), "SR": ("s", "r"), "OR": ("o", "r")}


def grouped_pair_accuracy(records: Sequence[PredictionRecord], group_by: str) -> float:
    """Triplet accuracy within each gold pair group, averaged unweighted over groups."""
    try:
        a, b = _PAIRS[group_by]
    except KeyError:
        raise ValueError(f"group_by must be one of {sorted(_PAIRS)}") from None
    ok = triplet_correct(records)
    groups: dict = {}
    for rec, hit in zip(records, ok):
        groups.setdefault((rec.gold[a], rec.gold[b]), []).append(hit)
    if not groups:
        return float("nan")
    return 100.0 * float(np.mean([np.mean(v) for v in groups.values()]))


def relevance(ranking: Sequence[int], gold_label: int, sim_row, T: int) -> np.ndarray:
    """Binary relevance of each ranked candidate: the gold label plus the ``T``
    candidates most similar to it (ties to the smaller class index)."""
    ranking = np.asarray(ranking, dtype=np.int64)
    rel = ranking == gold_label
    others = [int(c) for c in ranking if c != gold_label]
    if T > 0 and others:
        sims = np.asarray(sim_row, dtype=np.float64)
        chosen = sorted(others, key=lambda c: (-sims[c], c))[:T]
        rel |= np.isin(ranking, chosen)
    return rel


def average_precision_at(rel, k: int) -> float:
    """AP@k for one binary relevance vector over the full candidate pool.

    Sum of precision@r over relevant ranks r <= k, divided by
    min(#relevant in pool, k); 0 when nothing in the pool is relevant.
    """
    rel = np.asarray(rel, dtype=bool)
    if k > len(rel):
        raise ValueError(f"cutoff {k} exceeds candidate list of length {len(rel)}")
    n_rel = int(rel.sum())
    if n_rel == 0:
        return 0.0
    head = rel[:k]
    hits = np.cumsum(head)
    ranks = np.arange(1, k + 1)
    return float(np.sum((hits / ranks)[head]) / min(n_rel, k))


def soft_ap(records: Sequence[PredictionRecord], sim: np.ndarray, T: int,
            cutoffs: Sequence[int] = DEFAULT_CUTOFFS, roles: Sequence[str] = ("s", "o")) -> dict:
    """Mean soft AP at each cutoff over the given roles of every record."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    sim = np.asarray(sim, dtype=np.float64)
    terms = {k: [] for k in cutoffs}
    for rec in records:
        for role in roles:
            rel = relevance(rec.rank[role], rec.gold[role], sim[rec.gold[role]], T)
            for k in cutoffs:
                terms[k].append(average_precision_at(rel, k))
    # fsum keeps the result independent of record order
    return {k: (math.fsum(v) / len(v) if v else float("nan")) for k, v in terms.items()}


def _fmt(v):
    return "NA" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.4f}"


def band_table_csv(rows: Mapping[str, Mapping[str, float | None]]) -> str:
    """``branch,many,medium,few,all`` table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["branch", *BAND_NAMES])
    for branch, rep in rows.items():
        w.writerow([branch, *(_fmt(rep.get(b)) for b in BAND_NAMES)])
    return buf.getvalue()


def soft_ap_csv(results: Mapping[str, Mapping[int, float]]) -> str:
    """``metric,cutoff,ap`` table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "cutoff", "ap"])
    for metric, by_cut in results.items():
        for k, ap in by_cut.items():
            w.writerow([metric, k, _fmt(ap)])
    return buf.getvalue()
