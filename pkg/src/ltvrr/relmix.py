"""Tail-biased three-way feature/label mixing for relationship triplets."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .synthgen import ROLES, TripletData
from .vocab import FrequencyBands


@dataclass(frozen=True)
class RelMixConfig:
    lambda_min: float = 0.7
    lambda_max: float = 0.8
    alpha_p: float = 0.5
    eta: float = 0.5
    seed: int = 0
    band_role: str = "r"
    same_scene: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lambda_min <= self.lambda_max <= 1.0:
            raise ValueError("need 0 <= lambda_min <= lambda_max <= 1")
        if not 0.0 <= self.alpha_p <= 1.0:
            raise ValueError("alpha_p must lie in [0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.band_role not in ROLES:
            raise ValueError(f"band_role must be one of {ROLES}")


@dataclass
class AugmentedExample:
    x: dict            # role -> mixed feature vector
    y: dict            # role -> soft label distribution
    sources: tuple     # (i, j, k) row indices into the source split
    lam: float
    alpha: int

    @property
    def coefficients(self):
        return (self.lam, (1.0 - self.lam) * self.alpha, (1.0 - self.lam) * (1 - self.alpha))


class MixIndex:
    """Rows eligible as mixing sources, grouped by scene when scene ids exist.

    ``head`` rows (first two sources) carry a medium- or few-band label;
    ``tail`` rows (third source) carry a few-band label.
    """

    def __init__(self, data: TripletData, bands: FrequencyBands, role: str = "r",
                 same_scene: bool = True):
        band = bands.band_of()[data.y[role]]
        self.pool_ij = np.flatnonzero(band >= 1)
        self.pool_k = np.flatnonzero(band == 2)
        if len(self.pool_k) == 0:
            raise ValueError("no training example has a few-band label; "
                             "regenerate the data with more classes or examples")
        self.by_scene = None
        if same_scene and data.scene is not None:
            scenes = data.scene
            self.by_scene = {}
            for row in self.pool_ij:
                self.by_scene.setdefault(int(scenes[row]), []).append(int(row))
            self.scene_of = scenes

    def sample(self, rng):
        k = int(self.pool_k[rng.integers(len(self.pool_k))])
        pool = self.pool_ij if self.by_scene is None else self.by_scene[int(self.scene_of[k])]
        i = int(pool[rng.integers(len(pool))])
        j = int(pool[rng.integers(len(pool))])
        return i, j, k


def sample_mix_indices(index: MixIndex, rng):
    return index.sample(rng)


def relmix(x_i, x_j, x_k, y_i, y_j, y_k, lam: float, alpha: int) -> AugmentedExample:
    """Mix three triplets; each argument maps role -> vector (features or one-hot labels)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if alpha not in (0, 1):
        raise ValueError("alpha must be 0 or 1")
    c_i, c_j, c_k = lam, (1.0 - lam) * alpha, (1.0 - lam) * (1 - alpha)
    xs, ys = {}, {}
    for role in ROLES:
        parts = [np.asarray(v[role], dtype=np.float64) for v in (x_i, x_j, x_k)]
        labels = [np.asarray(v[role], dtype=np.float64) for v in (y_i, y_j, y_k)]
        if len({p.shape for p in parts}) != 1 or len({q.shape for q in labels}) != 1:
            raise ValueError(f"dimension mismatch in role {role!r}")
        xs[role] = c_i * parts[0] + c_j * parts[1] + c_k * parts[2]
        ys[role] = c_i * labels[0] + c_j * labels[1] + c_k * labels[2]
    return AugmentedExample(xs, ys, (), float(lam), int(alpha))


def augment_epoch(data: TripletData, bands: FrequencyBands, num_classes: dict,
                  config: RelMixConfig, rng, index: MixIndex | None = None):
    """Draw ``round(eta * N)`` mixed examples.

    ``num_classes`` maps role -> vocabulary size. Returns a list of
    :class:`AugmentedExample`.
    """
    n_aug = int(round(config.eta * len(data)))
    if n_aug == 0:
        return []
    if index is None:
        index = MixIndex(data, bands, config.band_role, config.same_scene)
    out = []
    for _ in range(n_aug):
        i, j, k = index.sample(rng)
        lam = float(rng.uniform(config.lambda_min, config.lambda_max))
        alpha = int(rng.random() < config.alpha_p)
        feats = [{r: data.x[r][n] for r in ROLES} for n in (i, j, k)]
        hots = [{r: np.eye(num_classes[r])[data.y[r][n]] for r in ROLES} for n in (i, j, k)]
        ex = relmix(*feats, *hots, lam, alpha)
        ex.sources = (i, j, k)
        out.append(ex)
    return out


def mix_arrays(data: TripletData, bands: FrequencyBands, num_classes: dict,
               config: RelMixConfig, rng, index: MixIndex | None = None):
    """Vectorized :func:`augment_epoch`: returns ``(x, soft_y, sources, lam, alpha)``.

    Consumes the RNG stream in the same order as :func:`augment_epoch`, so
    both draw the same sources and coefficients for the same seed.
    """
    n_aug = int(round(config.eta * len(data)))
    if index is None:
        index = MixIndex(data, bands, config.band_role, config.same_scene)
    src = np.empty((n_aug, 3), dtype=np.int64)
    lam = np.empty(n_aug)
    alpha = np.empty(n_aug, dtype=np.int64)
    for n in range(n_aug):
        src[n] = index.sample(rng)
        lam[n] = rng.uniform(config.lambda_min, config.lambda_max)
        alpha[n] = int(rng.random() < config.alpha_p)
    coef = np.stack([lam, (1.0 - lam) * alpha, (1.0 - lam) * (1 - alpha)], axis=1)
    x, y = {}, {}
    for role in ROLES:
        x[role] = np.einsum("nc,ncd->nd", coef, data.x[role][src])
        soft = np.zeros((n_aug, num_classes[role]))
        for c in range(3):
            np.add.at(soft, (np.arange(n_aug), data.y[role][src[:, c]]), coef[:, c])
        y[role] = soft
    return x, y, src, lam, alpha


def dump_jsonl(examples, path) -> None:
    """Audit log of mixing coefficients and source rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"sources": list(ex.sources), "lambda": ex.lam,
                                 "alpha": ex.alpha, "coefficients": list(ex.coefficients)}) + "\n")
