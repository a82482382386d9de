"""Minibatch SGD over the three triplet branches, gradient checks and evaluation."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import embedmodel as em
from .losses import LossConfig, base_loss, loss_components, vilhub_loss
from .metrics import (POOL_SIZE, PredictionRecord, band_report, grouped_pair_accuracy,
                      per_class_accuracy, per_example_accuracy, triplet_accuracy, triplet_key)
from .relmix import MixIndex, RelMixConfig, mix_arrays
from .synthgen import ROLES, TripletData
from .vocab import ClassVocabulary, class_weights, split_bands

log = logging.getLogger(__name__)

ENTITY_ROLES = ("s", "o")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 32
    epochs: int = 20
    loss: LossConfig = field(default_factory=LossConfig)
    relmix: RelMixConfig | None = None
    seed: int = 0
    eval_every: int = 1
    momentum: float = 0.0
    hidden: int = 0
    lang_mode: str = "copy"
    normalize: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossConfig(**d.get("loss", {}))
        if d.get("relmix") is not None:
            d["relmix"] = RelMixConfig(**d["relmix"])
        return cls(**d)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "branch", "total", "base", "vilhub",
               "val_many", "val_med", "val_few", "val_all")

    def add(self, epoch, branch, total, base, vilhub, report=None):
        report = report or {}
        self.rows.append({
            "epoch": epoch, "branch": branch, "total": total, "base": base, "vilhub": vilhub,
            "val_many": report.get("many"), "val_med": report.get("medium"),
            "val_few": report.get("few"), "val_all": report.get("all"),
        })

    def epoch_totals(self):
        out = {}
        for row in self.rows:
            out[row["epoch"]] = out.get(row["epoch"], 0.0) + row["total"]
        return [out[e] for e in sorted(out)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows:
            w.writerow(["" if row[c] is None else (f"{row[c]:.10g}" if isinstance(row[c], float) else row[c])
                        for c in self.COLUMNS])
        return buf.getvalue()


def branch_weights(ent_vocab, rel_vocab, loss: LossConfig):
    if loss.kind != "weighted":
        return {r: None for r in ROLES}
    w_ent = class_weights(ent_vocab, "inverse_frequency")
    w_rel = class_weights(rel_vocab, "inverse_frequency")
    return {"s": w_ent, "o": w_ent, "r": w_rel}


def objective(params: em.ModelParams, x: dict, targets: dict, loss: LossConfig, weights: dict,
              need_grad: bool = True, roles=ROLES):
    """Summed s/r/o loss for one batch.

    Returns ``(total, parts, grads)``; ``parts[role]`` holds ``(base, vilhub)``
    and ``grads`` maps parameter names to gradients. With ``need_grad`` off
    (value-only probes) ``grads`` is empty and an unused VilHub term reads 0.
    """
    total = 0.0
    parts = {}
    grads: dict = {}
    for role in roles:
        Z, cache = em.forward_logits(params, x[role], role)
        if need_grad:
            base, hub, dZ = loss_components(Z, targets[role], loss, weights[role])
        else:
            base = base_loss(Z, targets[role], loss, weights[role])[0]
            hub = vilhub_loss(Z)[0] if loss.gamma_vilhub > 0.0 else 0.0
        parts[role] = (base, hub)
        total += base + loss.gamma_vilhub * hub
        if need_grad:
            em.backward_logits(params, dZ, cache, role, grads)
    return total, parts, grads


def sgd_step(params: em.ModelParams, grads: dict, lr: float, velocity: dict | None = None,
             momentum: float = 0.0) -> None:
    """In-place update; shared arrays stay shared."""
    for name, arr in params.named_parameters():
        g = grads.get(name)
        if g is None:
            continue
        if momentum:
            v = velocity.setdefault(name, np.zeros_like(arr))
            v *= momentum
            v += g
            g = v
        arr -= lr * g


def _initial_params(ent_vectors, rel_vectors, d_in, config: TrainConfig):
    return em.init_params(d_in, ent_vectors, rel_vectors, hidden=config.hidden,
                          lang_mode=config.lang_mode, normalize=config.normalize,
                          seed=config.seed)


def train(train_data: TripletData, ent_vocab: ClassVocabulary, rel_vocab: ClassVocabulary,
          config: TrainConfig, ent_vectors, rel_vectors, val_data: TripletData | None = None,
          params: em.ModelParams | None = None):
    """Train all three branches jointly; returns ``(params, history)``.

    ``ent_vectors`` / ``rel_vectors`` are per-class word vectors that seed the
    class-embedding tables.
    """
    if len(train_data) == 0:
        raise ValueError("empty training split")
    if params is None:
        params = _initial_params(ent_vectors, rel_vectors, train_data.x["s"].shape[1], config)
    rng = np.random.default_rng(config.seed)
    weights = branch_weights(ent_vocab, rel_vocab, config.loss)
    k = {"s": len(ent_vocab), "o": len(ent_vocab), "r": len(rel_vocab)}
    mix_index, mix_rng, mix_bands = None, None, None
    if config.relmix is not None and config.relmix.eta > 0:
        mix_bands = split_bands(rel_vocab if config.relmix.band_role == "r" else ent_vocab)
        mix_index = MixIndex(train_data, mix_bands, config.relmix.band_role, config.relmix.same_scene)
        mix_rng = np.random.default_rng(config.relmix.seed)
    velocity: dict = {}
    history = TrainHistory()

    for epoch in range(1, config.epochs + 1):
        x_all, t_all = train_data.x, train_data.y
        if mix_index is not None:
            mx, my, *_ = mix_arrays(train_data, mix_bands, k, config.relmix, mix_rng, mix_index)
            x_all = {r: np.concatenate([train_data.x[r], mx[r]]) for r in ROLES}
            t_all = {r: np.concatenate([np.eye(k[r])[train_data.y[r]], my[r]]) for r in ROLES}
        total_n = len(x_all["s"])
        order = rng.permutation(total_n)
        sums = {r: [0.0, 0.0] for r in ROLES}
        n_batches = 0
        for b, start in enumerate(range(0, total_n, config.batch_size)):
            rows = order[start:start + config.batch_size]
            xb = {r: x_all[r][rows] for r in ROLES}
            tb = {r: t_all[r][rows] for r in ROLES}
            total, parts, grads = objective(params, xb, tb, config.loss, weights)
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b}: "
                    + ", ".join(f"{r}: base={p[0]:.6g} vilhub={p[1]:.6g}" for r, p in parts.items()))
            sgd_step(params, grads, config.lr, velocity, config.momentum)
            for r in ROLES:
                sums[r][0] += parts[r][0]
                sums[r][1] += parts[r][1]
            n_batches += 1

        reports = {}
        if val_data is not None and len(val_data) and epoch % config.eval_every == 0:
            reports = evaluate(params, val_data, ent_vocab, rel_vocab, pool=1)["bands"]
        for r in ROLES:
            base, hub = sums[r][0] / n_batches, sums[r][1] / n_batches
            history.add(epoch, r, base + config.loss.gamma_vilhub * hub, base, hub, reports.get(r))
        log.info("epoch %d loss %.5f", epoch, sum(history.rows[-i]["total"] for i in (1, 2, 3)))
    return params, history


def branch_logits(params: em.ModelParams, data: TripletData) -> dict:
    return {r: em.forward_logits(params, data.x[r], r)[0] for r in ROLES}


def evaluate(params: em.ModelParams, data: TripletData, ent_vocab: ClassVocabulary,
             rel_vocab: ClassVocabulary, pool: int | None = None,
             train_triplet_counts: dict | None = None, records: bool = False) -> dict:
    """Score every branch, rank the top ``min(pool, K)`` classes and compute metrics.

    Returns a dict with ``bands`` (role -> band report), ``per_class``,
    ``per_example``, ``triplet`` and, if ``records`` is set, the list of
    :class:`PredictionRecord`.
    """
    if len(data) == 0:
        raise ValueError("empty evaluation split")
    logits = branch_logits(params, data)
    sizes = {"s": len(ent_vocab), "o": len(ent_vocab), "r": len(rel_vocab)}
    bands = {"s": split_bands(ent_vocab), "o": split_bands(ent_vocab), "r": split_bands(rel_vocab)}
    depth = {r: min(pool or POOL_SIZE, sizes[r]) for r in ROLES}
    ranked = {r: em.predict_topk(logits[r], depth[r]) for r in ROLES}
    out = {"bands": {}, "per_class": {}, "per_example": {}}
    for r in ROLES:
        acc = per_class_accuracy(ranked[r][:, 0], data.y[r], sizes[r])
        out["per_class"][r] = acc
        out["bands"][r] = band_report(acc, bands[r])
        out["per_example"][r] = per_example_accuracy(ranked[r][:, 0], data.y[r])
    recs = [
        PredictionRecord(
            int(data.ids[i]),
            {r: int(data.y[r][i]) for r in ROLES},
            {r: ranked[r][i].tolist() for r in ROLES},
            {r: logits[r][i, ranked[r][i]].tolist() for r in ROLES},
        )
        for i in range(len(data))
    ]
    overall, trip_bands = triplet_accuracy(recs, train_triplet_counts)
    out["triplet"] = {"accuracy": overall, "bands": trip_bands,
                      **{f"pairs_{g}": grouped_pair_accuracy(recs, g) for g in ("SO", "SR", "OR")}}
    if records:
        out["records"] = recs
    return out


def triplet_counts(data: TripletData) -> dict:
    counts: dict = {}
    for s, r, o in zip(data.y["s"], data.y["r"], data.y["o"]):
        key = triplet_key(int(s), int(r), int(o))
        counts[key] = counts.get(key, 0) + 1
    return counts


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)`` over the concatenated entries."""
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - n) / scale)


def finite_difference(f, arr, h=1e-6):
    """Central differences of scalar ``f()`` with respect to every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GradcheckReport:
    max_rel_error: float
    errors: list

    def passed(self, tol=1e-5):
        return self.max_rel_error < tol


def gradcheck(loss: LossConfig, trials: int = 10, *, soft_targets: bool = False, weighted: bool = False,
              hidden: int = 0, lang_mode: str = "copy", normalize: bool = False, seed: int = 0,
              d_in: int = 4, d_emb: int = 3, k_ent: int = 5, k_rel: int = 4, batch: int = 6,
              h: float = 1e-6) -> GradcheckReport:
    """Compare analytical parameter gradients of :func:`objective` with central differences."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    errors = []
    sizes = {"s": k_ent, "o": k_ent, "r": k_rel}
    for t in range(trials):
        params = em.init_params(d_in, rng.standard_normal((k_ent, d_emb)),
                                rng.standard_normal((k_rel, d_emb)), hidden=hidden,
                                lang_mode=lang_mode, normalize=normalize, seed=seed * 100003 + t)
        for _, arr in params.named_parameters():
            arr += 0.1 * rng.standard_normal(arr.shape)
        x = {r: rng.standard_normal((batch, d_in)) for r in ROLES}
        if soft_targets:
            targets = {}
            for r in ROLES:
                raw = rng.random((batch, sizes[r])) * (rng.random((batch, sizes[r])) < 0.5)
                raw[np.arange(batch), rng.integers(sizes[r], size=batch)] += 0.5
                targets[r] = raw / raw.sum(axis=1, keepdims=True)
        else:
            targets = {r: rng.integers(sizes[r], size=batch) for r in ROLES}
        weights = {r: None for r in ROLES}
        if weighted or loss.kind == "weighted":
            w_ent, w_rel = rng.uniform(0.2, 3.0, k_ent), rng.uniform(0.2, 3.0, k_rel)
            weights = {"s": w_ent / w_ent.mean(), "o": w_ent / w_ent.mean(), "r": w_rel / w_rel.mean()}
        _, _, grads = objective(params, x, targets, loss, weights)

        analytic, numeric = [], []
        for name, arr in params.named_parameters():
            # probe only the branches this parameter feeds
            roles = ("r",) if name.startswith(("rel.", "lang_rel.")) else ENTITY_ROLES
            numeric.append(finite_difference(
                lambda: objective(params, x, targets, loss, weights, False, roles)[0], arr, h))
            analytic.append(grads.get(name, np.zeros_like(arr)))
        errors.append(relative_error(analytic, numeric))
    return GradcheckReport(max(errors), errors)
