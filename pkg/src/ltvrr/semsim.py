"""Taxonomy and embedding similarity oracles.

Conventions follow the usual lexical-database ones: the root has depth 1,
path lengths count edges, and Leacock-Chodorow scales by twice the
taxonomy's maximum depth (in nodes).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

TAXONOMY_METRICS = ("path", "wup", "lch", "res", "jcn", "lin")
JCN_CAP = 1e12
JCN_EPS = 1e-12


class Taxonomy:
    """Single-rooted tree over string node ids."""

    def __init__(self, parent: Mapping[str, str]):
        self.parent = dict(parent)
        nodes = set(self.parent) | set(self.parent.values())
        roots = sorted(n for n in nodes if n not in self.parent)
        if len(roots) != 1:
            raise ValueError(f"taxonomy must have exactly one root, found {roots[:5]}")
        self.root = roots[0]
        self.nodes = frozenset(nodes)
        self._ancestors: dict[str, tuple[str, ...]] = {}
        for node in sorted(nodes):
            self._ancestors[node] = self._walk(node)
        self.max_depth = max(len(a) for a in self._ancestors.values())

    def _walk(self, node):
        chain = [node]
        seen = {node}
        while chain[-1] != self.root:
            nxt = self.parent[chain[-1]]
            if nxt in seen:
                raise ValueError(f"cycle in taxonomy through {nxt!r}")
            seen.add(nxt)
            chain.append(nxt)
        return tuple(chain)

    def _check(self, node):
        if node not in self.nodes:
            raise KeyError(f"unknown taxonomy node {node!r}")

    def ancestors(self, node: str) -> tuple[str, ...]:
        """Path from ``node`` up to the root, both included."""
        self._check(node)
        return self._ancestors[node]

    def depth(self, node: str) -> int:
        return len(self.ancestors(node))

    def lcs(self, a: str, b: str) -> str:
        up_b = set(self.ancestors(b))
        for node in self.ancestors(a):
            if node in up_b:
                return node
        raise AssertionError("single-rooted tree always has a common ancestor")

    def distance(self, a: str, b: str) -> int:
        return self.depth(a) + self.depth(b) - 2 * self.depth(self.lcs(a, b))

    @classmethod
    def load(cls, path) -> "Taxonomy":
        parent: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                child, _, par = line.partition("\t")
                if not par:
                    raise ValueError(f"{path}:{lineno}: expected 'child<TAB>parent'")
                if child in parent and parent[child] != par:
                    raise ValueError(f"{path}:{lineno}: {child!r} has two parents")
                parent[child] = par
        return cls(parent)

    def save(self, path) -> None:
        Path(path).write_text(
            "".join(f"{c}\t{p}\n" for c, p in sorted(self.parent.items())), encoding="utf-8"
        )


def load_ic(path) -> dict[str, float]:
    ic = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                node, value = line.split("\t")
                ic[node] = float(value)
    return ic


def save_ic(ic: Mapping[str, float], path) -> None:
    Path(path).write_text(
        "".join(f"{n}\t{v!r}\n" for n, v in sorted(ic.items())), encoding="utf-8"
    )


def path_similarity(tax: Taxonomy, a: str, b: str) -> float:
    return 1.0 / (1.0 + tax.distance(a, b))


def wup_similarity(tax: Taxonomy, a: str, b: str) -> float:
    lcs_depth = tax.depth(tax.lcs(a, b))
    return 2.0 * lcs_depth / (tax.depth(a) + tax.depth(b))


def lch_from_distance(distance: int, max_depth: int) -> float:
    if max_depth < 1:
        raise ValueError("max depth must be at least 1")
    return -math.log((distance + 1) / (2.0 * max_depth))


def lch_similarity(tax: Taxonomy, a: str, b: str) -> float:
    return lch_from_distance(tax.distance(a, b), tax.max_depth)


def ic_similarity(tax: Taxonomy, ic: Mapping[str, float], a: str, b: str,
                  kind: str, jcn_cap: float = JCN_CAP) -> float:
    lcs = tax.lcs(a, b)
    try:
        ic_a, ic_b, ic_lcs = ic[a], ic[b], ic[lcs]
    except KeyError as exc:
        raise KeyError(f"missing information content for {exc.args[0]!r}") from None
    if kind == "res":
        return ic_lcs
    if kind == "lin":
        denom = ic_a + ic_b
        if denom <= 0.0:
            return 1.0 if a == b else 0.0
        return 2.0 * ic_lcs / denom
    if kind == "jcn":
        dist = ic_a + ic_b - 2.0 * ic_lcs
        if dist < JCN_EPS:
            return jcn_cap
        return 1.0 / dist
    raise ValueError(f"unknown IC similarity {kind!r}")


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read ``label d v1 ... vd`` lines."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            label, dim = parts[0], int(parts[1])
            if len(parts) != dim + 2:
                raise ValueError(f"{path}:{lineno}: expected {dim} values for {label!r}")
            out[label] = np.array([float(x) for x in parts[2:]])
    return out


def save_embeddings(vectors: Mapping[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, vec in vectors.items():
            fh.write(f"{label} {len(vec)} " + " ".join(repr(float(x)) for x in vec) + "\n")


@dataclass
class SimilarityMatrix:
    labels: tuple[str, ...]
    sim: np.ndarray
    metric_name: str
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.sim = np.asarray(self.sim, dtype=np.float64)
        k = len(self.labels)
        if self.sim.shape != (k, k):
            raise ValueError(f"matrix shape {self.sim.shape} does not match {k} labels")
        if self.check:
            if not np.allclose(self.sim, self.sim.T, rtol=0.0, atol=1e-9):
                raise ValueError("similarity matrix is not symmetric")
            if np.any(np.diag(self.sim) < self.sim.max(axis=1) - 1e-9):
                raise ValueError("diagonal entries must be row maxima")

    def reindex(self, labels: Sequence[str]) -> "SimilarityMatrix":
        pos = {lab: i for i, lab in enumerate(self.labels)}
        missing = [lab for lab in labels if lab not in pos]
        if missing:
            raise KeyError(f"label {missing[0]!r} not found in similarity matrix")
        idx = np.array([pos[lab] for lab in labels], dtype=np.int64)
        return SimilarityMatrix(tuple(labels), self.sim[np.ix_(idx, idx)], self.metric_name)

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.metric_name, *self.labels])
            for lab, row in zip(self.labels, self.sim):
                w.writerow([lab, *(repr(float(x)) for x in row)])

    @classmethod
    def load_csv(cls, path) -> "SimilarityMatrix":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        labels = header[1:]
        if [r[0] for r in rows[1:]] != labels:
            raise ValueError(f"{path}: row labels differ from column labels")
        sim = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
        return cls(tuple(labels), sim, header[0] or "precomputed")

    def save_raw(self, path) -> None:
        """Little-endian float64 block plus ``<path>.labels`` sidecar."""
        path = Path(path)
        path.write_bytes(self.sim.astype("<f8").tobytes(order="C"))
        Path(str(path) + ".labels").write_text(
            f"# metric={self.metric_name}\n" + "".join(f"{lab}\n" for lab in self.labels),
            encoding="utf-8",
        )

    @classmethod
    def load_raw(cls, path) -> "SimilarityMatrix":
        lines = Path(str(path) + ".labels").read_text(encoding="utf-8").splitlines()
        metric = "precomputed"
        if lines and lines[0].startswith("# metric="):
            metric = lines.pop(0)[len("# metric="):]
        k = len(lines)
        sim = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
        if sim.size != k * k:
            raise ValueError(f"{path}: {sim.size} values for {k} labels")
        return cls(tuple(lines), sim.reshape(k, k).astype(np.float64), metric)

    @classmethod
    def load(cls, path) -> "SimilarityMatrix":
        if str(path).endswith(".csv"):
            return cls.load_csv(path)
        return cls.load_raw(path)


class TaxonomySource:
    def __init__(self, taxonomy: Taxonomy, metric: str, ic: Mapping[str, float] | None = None,
                 jcn_cap: float = JCN_CAP):
        if metric not in TAXONOMY_METRICS:
            raise ValueError(f"unknown taxonomy metric {metric!r}")
        if metric in ("res", "jcn", "lin") and ic is None:
            raise ValueError(f"metric {metric!r} needs an information-content table")
        self.taxonomy, self.name, self.ic, self.jcn_cap = taxonomy, metric, ic, jcn_cap

    def resolve(self, label):
        if label not in self.taxonomy.nodes:
            raise KeyError(f"label {label!r} not found in taxonomy")

    def __call__(self, a, b):
        tax = self.taxonomy
        if self.name == "path":
            return path_similarity(tax, a, b)
        if self.name == "wup":
            return wup_similarity(tax, a, b)
        if self.name == "lch":
            return lch_similarity(tax, a, b)
        return ic_similarity(tax, self.ic, a, b, self.name, self.jcn_cap)


class EmbeddingSource:
    name = "cosine"

    def __init__(self, vectors: Mapping[str, np.ndarray], name: str = "cosine"):
        self.vectors, self.name = vectors, name

    def resolve(self, label):
        if label not in self.vectors:
            raise KeyError(f"label {label!r} has no embedding")

    def __call__(self, a, b):
        return cosine_similarity(self.vectors[a], self.vectors[b])


def build_similarity_matrix(labels: Sequence[str], source) -> SimilarityMatrix:
    """Materialize a K x K similarity table in ``labels`` order.

    ``source`` is a :class:`TaxonomySource`, an :class:`EmbeddingSource` or an
    existing :class:`SimilarityMatrix` (reindexed to ``labels``).
    """
    labels = tuple(getattr(labels, "labels", labels))
    if isinstance(source, SimilarityMatrix):
        return source.reindex(labels)
    for lab in labels:
        source.resolve(lab)
    if isinstance(source, EmbeddingSource):
        mat = np.stack([np.asarray(source.vectors[lab], dtype=np.float64) for lab in labels])
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0.0):
            raise ValueError(f"zero embedding for {labels[int(np.argmin(norms))]!r}")
        unit = mat / norms[:, None]
        sim = np.clip(unit @ unit.T, -1.0, 1.0)
        sim = (sim + sim.T) / 2.0
        np.fill_diagonal(sim, 1.0)
        return SimilarityMatrix(labels, sim, source.name)
    k = len(labels)
    sim = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            sim[i, j] = sim[j, i] = source(labels[i], labels[j])
    return SimilarityMatrix(labels, sim, source.name)


def minmax_normalize(matrix: SimilarityMatrix) -> SimilarityMatrix:
    lo, hi = matrix.sim.min(), matrix.sim.max()
    scaled = np.zeros_like(matrix.sim) if hi == lo else (matrix.sim - lo) / (hi - lo)
    return SimilarityMatrix(matrix.labels, scaled, matrix.metric_name)


def average_matrices(matrices: Sequence[SimilarityMatrix], name: str = "mean") -> SimilarityMatrix:
    """Mean of per-metric min-max normalized matrices (all in the same label order)."""
    first = matrices[0]
    for m in matrices[1:]:
        if m.labels != first.labels:
            raise ValueError("matrices must share label order")
    stacked = np.mean([minmax_normalize(m).sim for m in matrices], axis=0)
    return SimilarityMatrix(first.labels, stacked, name)
