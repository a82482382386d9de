"""Deterministic long-tail scene-graph generator."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .semsim import Taxonomy, save_embeddings, save_ic
from .vocab import ENTITY, RELATION, ClassVocabulary, save_vocab

ROLES = ("s", "r", "o")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class GenConfig:
    k_ent: int = 100
    k_rel: int = 30
    zipf_s: float = 1.5
    d_in: int = 32
    noise_sigma: float = 0.5
    n_train: int = 20000
    n_val: int = 4000
    n_test: int = 4000
    scenes_per_image: float = 8.0
    seed: int = 0
    rel_noise: float = 0.1
    test_zipf_s: float | None = None
    group_scale: float = 0.6
    super_scale: float = 0.3

    def __post_init__(self):
        for name in ("k_ent", "k_rel", "d_in", "n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.zipf_s < 0 or self.noise_sigma < 0:
            raise ValueError("zipf_s and noise_sigma must be nonnegative")
        if not 0 <= self.rel_noise <= 1:
            raise ValueError("rel_noise must lie in [0, 1]")
        if self.scenes_per_image < 1:
            raise ValueError("scenes_per_image must be at least 1")


@dataclass
class TripletData:
    """Column-oriented split: ``x[role]`` is (N, d_in), ``y[role]`` is (N,)."""

    ids: np.ndarray
    x: dict
    y: dict
    scene: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "TripletData":
        idx = np.asarray(idx)
        return TripletData(
            self.ids[idx],
            {r: self.x[r][idx] for r in ROLES},
            {r: self.y[r][idx] for r in ROLES},
            None if self.scene is None else self.scene[idx],
        )

    def to_jsonl(self, path, ent_labels, rel_labels) -> None:
        labels = {"s": ent_labels, "r": rel_labels, "o": ent_labels}
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(len(self)):
                rec = {"id": int(self.ids[i])}
                if self.scene is not None:
                    rec["scene"] = int(self.scene[i])
                for r in ROLES:
                    rec[r] = labels[r][int(self.y[r][i])]
                for r in ROLES:
                    rec[f"x_{r}"] = [float(v) for v in self.x[r][i]]
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path, ent_vocab: ClassVocabulary, rel_vocab: ClassVocabulary) -> "TripletData":
        index = {
            "s": {lab: i for i, lab in enumerate(ent_vocab.labels)},
            "r": {lab: i for i, lab in enumerate(rel_vocab.labels)},
            "o": {lab: i for i, lab in enumerate(ent_vocab.labels)},
        }
        ids, scenes = [], []
        xs = {r: [] for r in ROLES}
        ys = {r: [] for r in ROLES}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                ids.append(rec["id"])
                scenes.append(rec.get("scene"))
                for r in ROLES:
                    try:
                        ys[r].append(index[r][rec[r]])
                    except KeyError:
                        raise ValueError(f"{path}:{lineno}: unknown label {rec[r]!r}") from None
                    xs[r].append(rec[f"x_{r}"])
        has_scene = all(s is not None for s in scenes) and scenes
        return cls(
            np.asarray(ids, dtype=np.int64),
            {r: np.asarray(xs[r], dtype=np.float64) for r in ROLES},
            {r: np.asarray(ys[r], dtype=np.int64) for r in ROLES},
            np.asarray(scenes, dtype=np.int64) if has_scene else None,
        )


@dataclass
class SyntheticWorld:
    """Everything :func:`generate_dataset` produces."""

    config: GenConfig
    splits: dict
    ent_vocab: ClassVocabulary
    rel_vocab: ClassVocabulary
    taxonomies: dict = field(default_factory=dict)
    ic: dict = field(default_factory=dict)
    word_vectors: dict = field(default_factory=dict)
    class_means: dict = field(default_factory=dict)

    @property
    def train(self):
        return self.splits["train"]

    @property
    def val(self):
        return self.splits["val"]

    @property
    def test(self):
        return self.splits["test"]


def zipf_weights(k, s):
    w = 1.0 / np.arange(1, k + 1, dtype=np.float64) ** s
    return w / w.sum()


def zipf_frequencies(k: int, s: float, total: int) -> np.ndarray:
    """Integer counts proportional to ``1 / rank**s`` summing to ``total``, each at least 1."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if total < k:
        raise ValueError(f"total ({total}) must be at least the class count ({k})")
    quota = total * zipf_weights(k, s)
    counts = np.floor(quota).astype(np.int64)
    short = int(total - counts.sum())
    if short:
        frac = quota - counts
        order = sorted(range(k), key=lambda i: (-frac[i], i))
        counts[order[:short]] += 1
    for i in np.flatnonzero(counts < 1):
        # take from the last of the largest classes so counts stay non-increasing
        counts[int(np.flatnonzero(counts == counts.max())[-1])] -= 1
        counts[i] = 1
    return counts


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _hierarchy(k):
    """Group and super-group index per class; classes are dealt round-robin."""
    n_groups = max(1, math.ceil(math.sqrt(k)))
    n_super = max(1, math.ceil(math.sqrt(n_groups)))
    group = np.arange(k) % n_groups
    sup = np.arange(n_groups) % n_super
    return group, sup


def _structured_vectors(rng, k, d, group, sup, g_scale, s_scale):
    n_groups, n_super = group.max() + 1, sup.max() + 1
    s_dir = _unit(rng.standard_normal((n_super, d)))
    g_dir = _unit(rng.standard_normal((n_groups, d)))
    own = _unit(rng.standard_normal((k, d)))
    return _unit(own + g_scale * g_dir[group] + s_scale * s_dir[sup[group]])


def _taxonomy(prefix, labels, group, sup, weights):
    root = f"{prefix}:root"
    parent = {}
    mass = {root: 1.0}
    for gi in range(group.max() + 1):
        gname, sname = f"{prefix}:group{gi:03d}", f"{prefix}:super{sup[gi]:03d}"
        parent[gname] = sname
        parent[sname] = root
    for k, lab in enumerate(labels):
        gname = f"{prefix}:group{group[k]:03d}"
        parent[lab] = gname
        for node in (lab, gname, parent[gname]):
            mass[node] = mass.get(node, 0.0) + weights[k]
    ic = {node: max(0.0, -math.log(m)) for node, m in mass.items()}
    ic[root] = 0.0
    return Taxonomy(parent), ic


def _scene_ids(rng, n, mean_size, start):
    scene = np.empty(n, dtype=np.int64)
    pos, sid = 0, start
    while pos < n:
        size = 1 + int(rng.poisson(mean_size - 1.0))
        scene[pos:pos + size] = sid
        pos += size
        sid += 1
    return scene, sid


def _pair_relation_table(w_ent, w_rel):
    """Latent (subject, object) -> relation map and the pair order it is built on.

    Pairs sorted by probability mass are laid end to end on [0, 1] and each
    takes the relation whose cumulative-mass interval holds its midpoint, so
    frequent pairs carry frequent relations.
    """
    k = len(w_ent)
    mass = np.outer(w_ent, w_ent).ravel()
    order = np.lexsort((np.arange(k * k), -mass))
    mid = np.cumsum(mass[order]) - mass[order] / 2.0
    rel_of_sorted = np.searchsorted(np.cumsum(w_rel), mid, side="right")
    rel_of_sorted = np.minimum(rel_of_sorted, len(w_rel) - 1)
    table = np.empty(k * k, dtype=np.int64)
    table[order] = rel_of_sorted
    rank = np.empty(k * k, dtype=np.int64)
    rank[order] = np.arange(k * k)
    return table.reshape(k, k), rank.reshape(k, k)


def generate_dataset(config: GenConfig) -> SyntheticWorld:
    c = config
    rng = np.random.default_rng(c.seed)
    ent_labels = tuple(f"e{i:0{len(str(c.k_ent - 1))}d}" for i in range(c.k_ent))
    rel_labels = tuple(f"r{i:0{len(str(c.k_rel - 1))}d}" for i in range(c.k_rel))
    w_ent, w_rel = zipf_weights(c.k_ent, c.zipf_s), zipf_weights(c.k_rel, c.zipf_s)

    means, words, taxes, ics = {}, {}, {}, {}
    for name, k, labels, w in ((ENTITY, c.k_ent, ent_labels, w_ent),
                               (RELATION, c.k_rel, rel_labels, w_rel)):
        group, sup = _hierarchy(k)
        means[name] = _structured_vectors(rng, k, c.d_in, group, sup, c.group_scale, c.super_scale)
        words[name] = _structured_vectors(rng, k, c.d_in, group, sup, c.group_scale, c.super_scale)
        taxes[name], ics[name] = _taxonomy(name[:3], labels, group, sup, w)
    table, pair_rank = _pair_relation_table(w_ent, w_rel)

    # training labels: exact Zipf counts for the pooled subject/object slots
    ent_counts = zipf_frequencies(c.k_ent, c.zipf_s, 2 * c.n_train)
    slots = rng.permutation(np.repeat(np.arange(c.k_ent), ent_counts))
    ys, yo = slots[:c.n_train], slots[c.n_train:]
    rel_counts = zipf_frequencies(c.k_rel, c.zipf_s, c.n_train)
    by_pair = np.lexsort((np.arange(c.n_train), pair_rank[ys, yo]))
    yr = np.empty(c.n_train, dtype=np.int64)
    yr[by_pair] = np.repeat(np.arange(c.k_rel), rel_counts)
    noisy = rng.choice(c.n_train, size=int(round(c.rel_noise * c.n_train)), replace=False)
    yr[noisy] = yr[rng.permutation(noisy)]
    perm = rng.permutation(c.n_train)
    labels = {"train": {"s": ys[perm], "r": yr[perm], "o": yo[perm]}}

    w_test = w_ent if c.test_zipf_s is None else zipf_weights(c.k_ent, c.test_zipf_s)
    for split, n in (("val", c.n_val), ("test", c.n_test)):
        s_ = rng.choice(c.k_ent, size=n, p=w_test)
        o_ = rng.choice(c.k_ent, size=n, p=w_test)
        r_ = table[s_, o_].copy()
        flip = rng.random(n) < c.rel_noise
        r_[flip] = rng.choice(c.k_rel, size=int(flip.sum()), p=w_rel)
        labels[split] = {"s": s_, "r": r_, "o": o_}

    splits = {}
    next_id, next_scene = 0, 0
    for split in SPLITS:
        y = labels[split]
        n = len(y["s"])
        x = {}
        for role in ROLES:
            mu = means[RELATION if role == "r" else ENTITY]
            x[role] = mu[y[role]] + c.noise_sigma * rng.standard_normal((n, c.d_in))
        scene, next_scene = _scene_ids(rng, n, c.scenes_per_image, next_scene)
        splits[split] = TripletData(np.arange(next_id, next_id + n, dtype=np.int64), x,
                                    {r: np.asarray(y[r], dtype=np.int64) for r in ROLES}, scene)
        next_id += n

    train = labels["train"]
    ent_freq = np.bincount(train["s"], minlength=c.k_ent) + np.bincount(train["o"], minlength=c.k_ent)
    rel_freq = np.bincount(train["r"], minlength=c.k_rel)
    return SyntheticWorld(
        c, splits,
        ClassVocabulary(ent_labels, tuple(int(f) for f in ent_freq), ENTITY),
        ClassVocabulary(rel_labels, tuple(int(f) for f in rel_freq), RELATION),
        taxes, ics, words, means,
    )


def save_world(world: SyntheticWorld, out_dir) -> dict:
    """Write splits, vocabularies and oracle inputs; returns the file manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ent, rel = world.ent_vocab, world.rel_vocab
    files = {}
    for split, data in world.splits.items():
        data.to_jsonl(out / f"{split}.jsonl", ent.labels, rel.labels)
        files[split] = f"{split}.jsonl"
    for name, vocab in ((ENTITY, ent), (RELATION, rel)):
        save_vocab(vocab, out / f"{name}_vocab.tsv")
        world.taxonomies[name].save(out / f"{name}_taxonomy.tsv")
        save_ic(world.ic[name], out / f"{name}_ic.tsv")
        save_embeddings(dict(zip(vocab.labels, world.word_vectors[name])),
                        out / f"{name}_embeddings.txt")
        files[f"{name}_vocab"] = f"{name}_vocab.tsv"
        files[f"{name}_taxonomy"] = f"{name}_taxonomy.tsv"
        files[f"{name}_ic"] = f"{name}_ic.tsv"
        files[f"{name}_embeddings"] = f"{name}_embeddings.txt"
    manifest = {"generator": "ltvrr.synthgen", "config": asdict(world.config), "files": files,
                "sha256": {k: hashlib.sha256((out / v).read_bytes()).hexdigest()
                           for k, v in sorted(files.items())}}
    (out / "gen_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass
class DataDir:
    path: Path
    splits: dict
    ent_vocab: ClassVocabulary
    rel_vocab: ClassVocabulary
    manifest: dict


def load_data_dir(path, splits=SPLITS) -> DataDir:
    from .vocab import load_vocab

    path = Path(path)
    for required in ("entity_vocab.tsv", "relation_vocab.tsv"):
        if not (path / required).exists():
            raise FileNotFoundError(str(path / required))
    ent = load_vocab(path / "entity_vocab.tsv", ENTITY)
    rel = load_vocab(path / "relation_vocab.tsv", RELATION)
    loaded = {}
    for split in splits:
        f = path / f"{split}.jsonl"
        if not f.exists():
            raise FileNotFoundError(str(f))
        loaded[split] = TripletData.from_jsonl(f, ent, rel)
    manifest_path = path / "gen_manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    return DataDir(path, loaded, ent, rel, manifest)
