"""Class vocabularies, frequency bands and class weights."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ENTITY = "entity"
RELATION = "relation"
BRANCHES = (ENTITY, RELATION)

MANY_FRACTION = 0.05
FEW_FRACTION = 0.80


@dataclass(frozen=True)
class ClassVocabulary:
    labels: tuple[str, ...]
    frequencies: tuple[int, ...]
    branch: str = ENTITY

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "frequencies", tuple(int(f) for f in self.frequencies))
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch {self.branch!r}")
        if len(self.labels) != len(self.frequencies):
            raise ValueError("labels and frequencies differ in length")
        seen = set()
        for label in self.labels:
            if not isinstance(label, str) or not label:
                raise ValueError(f"invalid label {label!r}")
            if label in seen:
                raise ValueError(f"duplicate label {label!r}")
            seen.add(label)
        for label, freq in zip(self.labels, self.frequencies):
            if freq < 0:
                raise ValueError(f"negative count {freq} for label {label!r}")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None

    def sorted(self) -> "ClassVocabulary":
        """Descending frequency, ties broken by label."""
        order = sorted(range(len(self)), key=lambda i: (-self.frequencies[i], self.labels[i]))
        return ClassVocabulary(
            tuple(self.labels[i] for i in order),
            tuple(self.frequencies[i] for i in order),
            self.branch,
        )

    def is_sorted(self) -> bool:
        keys = [(-f, lab) for lab, f in zip(self.labels, self.frequencies)]
        return keys == sorted(keys)


@dataclass(frozen=True)
class FrequencyBands:
    many: tuple[int, ...]
    medium: tuple[int, ...]
    few: tuple[int, ...]
    num_classes: int = field(default=0)

    def __post_init__(self):
        for name in ("many", "medium", "few"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        k = len(self.many) + len(self.medium) + len(self.few)
        if not self.num_classes:
            object.__setattr__(self, "num_classes", k)
        union = set(self.many) | set(self.medium) | set(self.few)
        if len(union) != k or union != set(range(self.num_classes)):
            raise ValueError("bands must partition the class indices")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.many), len(self.medium), len(self.few)

    def items(self):
        return (("many", self.many), ("medium", self.medium), ("few", self.few))

    def band_of(self) -> np.ndarray:
        """Array mapping class index to 0 (many), 1 (medium) or 2 (few)."""
        out = np.empty(self.num_classes, dtype=np.int64)
        for code, (_, idx) in enumerate(self.items()):
            out[list(idx)] = code
        return out

    def to_json(self, vocab: ClassVocabulary) -> str:
        return json.dumps(
            {name: [vocab.labels[i] for i in idx] for name, idx in self.items()},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str, vocab: ClassVocabulary) -> "FrequencyBands":
        data = json.loads(text)
        return cls(
            *(tuple(vocab.index(lab) for lab in data[name]) for name in ("many", "medium", "few")),
            num_classes=len(vocab),
        )


def band_sizes(k: int) -> tuple[int, int, int]:
    if k < 3:
        raise ValueError(f"need at least 3 classes to split into bands, got {k}")
    many = math.ceil(MANY_FRACTION * k - 1e-9)
    few = math.floor(FEW_FRACTION * k + 1e-9)
    return many, k - many - few, few


def split_bands(vocab: ClassVocabulary) -> FrequencyBands:
    """Partition class indices into many / medium / few bands.

    ``many`` holds the ceil(5%) most frequent classes, ``few`` the floor(80%)
    least frequent, ``medium`` the rest. The vocabulary order (descending
    frequency, label tie-break) decides boundary ties.
    """
    k = len(vocab)
    n_many, n_medium, _ = band_sizes(k)
    order = sorted(range(k), key=lambda i: (-vocab.frequencies[i], vocab.labels[i]))
    return FrequencyBands(
        tuple(sorted(order[:n_many])),
        tuple(sorted(order[n_many:n_many + n_medium])),
        tuple(sorted(order[n_many + n_medium:])),
        num_classes=k,
    )


def class_weights(vocab: ClassVocabulary, mode: str = "uniform") -> np.ndarray:
    """Per-class loss weights with mean 1."""
    freqs = np.asarray(vocab.frequencies, dtype=np.float64)
    if mode == "uniform":
        return np.ones(len(freqs))
    if mode == "inverse_frequency":
        if np.any(freqs <= 0):
            bad = [vocab.labels[i] for i in np.flatnonzero(freqs <= 0)]
            raise ValueError(f"inverse-frequency weights need positive counts; zero for {bad[:5]}")
        w = 1.0 / freqs
        return w / w.mean()
    raise ValueError(f"unknown weighting mode {mode!r}")


def load_vocab(path, branch: str = ENTITY) -> ClassVocabulary:
    labels, freqs = [], []
    seen = set()
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'label<TAB>count'")
            label, count = parts[0], int(parts[1])
            if label in seen:
                raise ValueError(f"{path}:{lineno}: duplicate label {label!r}")
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count for {label!r}")
            seen.add(label)
            labels.append(label)
            freqs.append(count)
    return ClassVocabulary(tuple(labels), tuple(freqs), branch).sorted()


def save_vocab(vocab: ClassVocabulary, path) -> None:
    Path(path).write_text(
        "".join(f"{lab}\t{f}\n" for lab, f in zip(vocab.labels, vocab.frequencies)),
        encoding="utf-8",
    )
