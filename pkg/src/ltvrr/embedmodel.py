"""Joint visual/language embedding scorer.

Visual features are projected per branch (subject and object share one
projector, relations have their own) and scored against a table of class
embeddings by dot product.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"LTVRCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIII")


@dataclass
class Projector:
    """Affine map ``W x + b``, optionally preceded by a ReLU hidden layer."""

    W: np.ndarray
    b: np.ndarray
    W_h: np.ndarray | None = None
    b_h: np.ndarray | None = None

    @property
    def d_in(self):
        return (self.W_h if self.W_h is not None else self.W).shape[1]

    def named(self, prefix):
        out = []
        if self.W_h is not None:
            out += [(f"{prefix}.W_h", self.W_h), (f"{prefix}.b_h", self.b_h)]
        return out + [(f"{prefix}.W", self.W), (f"{prefix}.b", self.b)]

    def forward(self, X):
        """Return ``(E, cache)`` for a batch ``X`` of shape (n, d_in)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise ValueError(f"expected features of dimension {self.d_in}, got {X.shape}")
        if self.W_h is None:
            return X @ self.W.T + self.b, (X, None)
        pre = X @ self.W_h.T + self.b_h
        H = np.maximum(pre, 0.0)
        return H @ self.W.T + self.b, (X, pre)

    def backward(self, dE, cache, grads, prefix):
        X, pre = cache
        H = X if pre is None else np.maximum(pre, 0.0)
        _acc(grads, f"{prefix}.W", dE.T @ H)
        _acc(grads, f"{prefix}.b", dE.sum(axis=0))
        if pre is not None:
            dpre = (dE @ self.W) * (pre > 0.0)
            _acc(grads, f"{prefix}.W_h", dpre.T @ X)
            _acc(grads, f"{prefix}.b_h", dpre.sum(axis=0))


@dataclass
class LanguageTable:
    """Class-embedding matrix; in ``affine`` mode it is ``V A^T + c`` over fixed word vectors."""

    mode: str
    Y: np.ndarray | None = None
    V: np.ndarray | None = None
    A: np.ndarray | None = None
    c: np.ndarray | None = None

    def matrix(self):
        if self.mode == "copy":
            return self.Y
        return self.V @ self.A.T + self.c

    @property
    def num_classes(self):
        return (self.Y if self.mode == "copy" else self.V).shape[0]

    def named(self, prefix):
        if self.mode == "copy":
            return [(f"{prefix}.Y", self.Y)]
        return [(f"{prefix}.A", self.A), (f"{prefix}.c", self.c)]

    def buffers(self, prefix):
        return [] if self.mode == "copy" else [(f"{prefix}.V", self.V)]

    def backward(self, dY, grads, prefix):
        if self.mode == "copy":
            _acc(grads, f"{prefix}.Y", dY)
        else:
            _acc(grads, f"{prefix}.A", dY.T @ self.V)
            _acc(grads, f"{prefix}.c", dY.sum(axis=0))


def _acc(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def init_language_embeddings(word_vectors, mode: str = "copy", num_classes: int | None = None) -> LanguageTable:
    V = np.array(word_vectors, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError("word vectors must be a 2-D matrix")
    if num_classes is not None and V.shape[0] != num_classes:
        raise ValueError(f"expected {num_classes} word vectors, got {V.shape[0]}")
    if mode == "copy":
        return LanguageTable("copy", Y=V)
    if mode == "affine":
        d = V.shape[1]
        return LanguageTable("affine", V=V, A=np.eye(d), c=np.zeros(d))
    raise ValueError(f"unknown language-embedding mode {mode!r}")


@dataclass
class ModelParams:
    ent: Projector
    rel: Projector
    lang_ent: LanguageTable
    lang_rel: LanguageTable
    normalize: bool = False
    config: dict = field(default_factory=dict)

    @property
    def d_in(self):
        return self.ent.d_in

    @property
    def d_emb(self):
        return self.ent.W.shape[0]

    @property
    def hidden(self):
        return 0 if self.ent.W_h is None else self.ent.W_h.shape[0]

    def projector(self, branch):
        return self.rel if branch in ("r", "relation") else self.ent

    def language(self, branch):
        return self.lang_rel if branch in ("r", "relation") else self.lang_ent

    def named_parameters(self):
        """Trainable arrays in checkpoint order; subject/object share ``ent.*``."""
        return (self.ent.named("ent") + self.rel.named("rel")
                + self.lang_ent.named("lang_ent") + self.lang_rel.named("lang_rel"))

    def named_buffers(self):
        return self.lang_ent.buffers("lang_ent") + self.lang_rel.buffers("lang_rel")

    def copy(self) -> "ModelParams":
        def cp(x):
            return None if x is None else x.copy()
        return ModelParams(
            Projector(cp(self.ent.W), cp(self.ent.b), cp(self.ent.W_h), cp(self.ent.b_h)),
            Projector(cp(self.rel.W), cp(self.rel.b), cp(self.rel.W_h), cp(self.rel.b_h)),
            LanguageTable(self.lang_ent.mode, cp(self.lang_ent.Y), cp(self.lang_ent.V),
                          cp(self.lang_ent.A), cp(self.lang_ent.c)),
            LanguageTable(self.lang_rel.mode, cp(self.lang_rel.Y), cp(self.lang_rel.V),
                          cp(self.lang_rel.A), cp(self.lang_rel.c)),
            self.normalize,
            dict(self.config),
        )


def _init_projector(rng, d_in, d_emb, hidden):
    if hidden:
        s1 = 1.0 / np.sqrt(d_in)
        s2 = 1.0 / np.sqrt(hidden)
        return Projector(rng.uniform(-s2, s2, (d_emb, hidden)), np.zeros(d_emb),
                         rng.uniform(-s1, s1, (hidden, d_in)), np.zeros(hidden))
    s = 1.0 / np.sqrt(d_in)
    return Projector(rng.uniform(-s, s, (d_emb, d_in)), np.zeros(d_emb))


def init_params(d_in, ent_vectors, rel_vectors, *, hidden=0, lang_mode="copy",
                normalize=False, seed=0) -> ModelParams:
    """Fresh parameters; embedding width follows the word vectors."""
    ent_vectors = np.asarray(ent_vectors, dtype=np.float64)
    rel_vectors = np.asarray(rel_vectors, dtype=np.float64)
    d_emb = ent_vectors.shape[1]
    if rel_vectors.shape[1] != d_emb:
        raise ValueError("entity and relation word vectors must share a dimension")
    rng = np.random.default_rng(seed)
    return ModelParams(
        _init_projector(rng, d_in, d_emb, hidden),
        _init_projector(rng, d_in, d_emb, hidden),
        init_language_embeddings(ent_vectors, lang_mode),
        init_language_embeddings(rel_vectors, lang_mode),
        normalize,
        {"d_in": int(d_in), "d_emb": int(d_emb), "hidden": int(hidden),
         "lang_mode": lang_mode, "normalize": bool(normalize), "seed": int(seed)},
    )


def embed_visual(params: ModelParams, x, branch: str):
    x = np.asarray(x, dtype=np.float64)
    E, _ = params.projector(branch).forward(np.atleast_2d(x))
    return E[0] if x.ndim == 1 else E


def score(embedding, Y):
    embedding = np.asarray(embedding, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if embedding.shape[-1] != Y.shape[1]:
        raise ValueError(f"embedding dimension {embedding.shape[-1]} does not match {Y.shape[1]}")
    return embedding @ Y.T


def _unit_rows(M):
    n = np.linalg.norm(M, axis=1, keepdims=True)
    return M / np.maximum(n, 1e-12), n


def _unit_rows_backward(dU, U, n):
    return (dU - U * (dU * U).sum(axis=1, keepdims=True)) / np.maximum(n, 1e-12)


def forward_logits(params: ModelParams, X, branch):
    """Logits for a feature batch plus a cache for :func:`backward_logits`."""
    E, pcache = params.projector(branch).forward(X)
    Y = params.language(branch).matrix()
    if params.normalize:
        Eu, En = _unit_rows(E)
        Yu, Yn = _unit_rows(Y)
        return Eu @ Yu.T, (pcache, E, Y, (Eu, En, Yu, Yn))
    return E @ Y.T, (pcache, E, Y, None)


def backward_logits(params: ModelParams, dZ, cache, branch, grads):
    pcache, E, Y, norm = cache
    if norm is None:
        dE, dY = dZ @ Y, dZ.T @ E
    else:
        Eu, En, Yu, Yn = norm
        dE = _unit_rows_backward(dZ @ Yu, Eu, En)
        dY = _unit_rows_backward(dZ.T @ Eu, Yu, Yn)
    is_rel = branch in ("r", "relation")
    params.projector(branch).backward(dE, pcache, grads, "rel" if is_rel else "ent")
    params.language(branch).backward(dY, grads, "lang_rel" if is_rel else "lang_ent")


def predict_topk(logits, k: int):
    """Indices of the ``k`` largest logits, descending, ties to the smaller index."""
    logits = np.asarray(logits, dtype=np.float64)
    K = logits.shape[-1]
    if not 1 <= k <= K:
        raise ValueError(f"k must be in [1, {K}], got {k}")
    order = np.argsort(-logits, axis=-1, kind="stable")
    return order[..., :k]


def save_checkpoint(params: ModelParams, path, extra_config: dict | None = None) -> None:
    """Binary tensor file plus ``<path>.json`` config sidecar."""
    path = Path(path)
    flags = (1 if params.lang_ent.mode == "affine" else 0) | (2 if params.normalize else 0)
    tensors = params.named_parameters() + params.named_buffers()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.d_in, params.d_emb,
                              params.hidden, params.lang_ent.num_classes,
                              params.lang_rel.num_classes, flags, len(tensors)))
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
    config = dict(params.config)
    config.update(extra_config or {})
    config["tensors"] = [[name, list(arr.shape)] for name, arr in tensors]
    Path(str(path) + ".json").write_text(json.dumps(config, indent=2, sort_keys=True))


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    magic, version, d_in, d_emb, hidden, k_ent, k_rel, flags, n_tensors = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    mode = "affine" if flags & 1 else "copy"
    shapes = []
    h = hidden
    for prefix in ("ent", "rel"):
        if h:
            shapes += [(f"{prefix}.W_h", (h, d_in)), (f"{prefix}.b_h", (h,)),
                       (f"{prefix}.W", (d_emb, h)), (f"{prefix}.b", (d_emb,))]
        else:
            shapes += [(f"{prefix}.W", (d_emb, d_in)), (f"{prefix}.b", (d_emb,))]
    for prefix, k in (("lang_ent", k_ent), ("lang_rel", k_rel)):
        if mode == "copy":
            shapes.append((f"{prefix}.Y", (k, d_emb)))
        else:
            shapes += [(f"{prefix}.A", (d_emb, d_emb)), (f"{prefix}.c", (d_emb,))]
    if mode == "affine":
        shapes += [("lang_ent.V", (k_ent, d_emb)), ("lang_rel.V", (k_rel, d_emb))]
    if len(shapes) != n_tensors:
        raise ValueError(f"{path}: header declares {n_tensors} tensors, expected {len(shapes)}")
    offset = _HEADER.size
    t = {}
    for name, shape in shapes:
        n = int(np.prod(shape))
        t[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensors")
    sidecar = Path(str(path) + ".json")
    config = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    config.pop("tensors", None)

    def proj(prefix):
        return Projector(t[f"{prefix}.W"], t[f"{prefix}.b"], t.get(f"{prefix}.W_h"), t.get(f"{prefix}.b_h"))

    def lang(prefix):
        if mode == "copy":
            return LanguageTable("copy", Y=t[f"{prefix}.Y"])
        return LanguageTable("affine", V=t[f"{prefix}.V"], A=t[f"{prefix}.A"], c=t[f"{prefix}.c"])

    return ModelParams(proj("ent"), proj("rel"), lang("lang_ent"), lang("lang_rel"),
                       bool(flags & 2), config)
