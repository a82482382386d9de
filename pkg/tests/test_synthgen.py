import hashlib

import numpy as np
import pytest
from scipy.stats import spearmanr

from ltvrr.synthgen import (GenConfig, TripletData, generate_dataset, load_data_dir, save_world,
                            zipf_frequencies, zipf_weights)
from ltvrr.vocab import split_bands

SMALL = GenConfig(k_ent=20, k_rel=8, d_in=8, n_train=2000, n_val=300, n_test=300, seed=3)


def test_zipf_weights_formula():
    w = zipf_weights(4, 2.0)
    ref = np.array([1, 1 / 4, 1 / 9, 1 / 16])
    np.testing.assert_allclose(w, ref / ref.sum())


def test_zipf_counts_hand_case():
    # quotas 6, 3, 2 exactly for weights 1, 1/2, 1/3 over 11
    assert zipf_frequencies(3, 1.0, 11).tolist() == [6, 3, 2]


def test_zipf_flat_exponent_near_uniform():
    c = zipf_frequencies(7, 0.0, 100)
    assert c.max() - c.min() <= 1 and c.sum() == 100


@pytest.mark.parametrize("k,s,total", [(10, 1.5, 10), (50, 2.0, 60), (100, 1.1, 12345)])
def test_zipf_counts_sum_and_floor(k, s, total):
    c = zipf_frequencies(k, s, total)
    assert c.sum() == total and c.min() >= 1
    assert np.all(np.diff(c) <= 0)


def test_zipf_total_below_k_raises():
    with pytest.raises(ValueError):
        zipf_frequencies(5, 1.0, 4)


def test_noise_free_features_recover_classes():
    world = generate_dataset(GenConfig(k_ent=15, k_rel=6, d_in=8, n_train=500, n_val=50,
                                       n_test=50, noise_sigma=0.0, seed=1))
    for role, key in (("s", "entity"), ("o", "entity"), ("r", "relation")):
        mu = world.class_means[key]
        x, y = world.train.x[role], world.train.y[role]
        d = ((x[:, None, :] - mu[None]) ** 2).sum(-1)
        assert np.array_equal(d.argmin(1), y)


def _hash(data: TripletData):
    h = hashlib.sha256()
    for r in "sro":
        h.update(data.x[r].tobytes())
        h.update(data.y[r].tobytes())
    return h.hexdigest()


def test_same_seed_same_bytes():
    a, b = generate_dataset(SMALL), generate_dataset(SMALL)
    assert all(_hash(a.splits[s]) == _hash(b.splits[s]) for s in a.splits)
    c = generate_dataset(GenConfig(**{**SMALL.__dict__, "seed": 4}))
    assert _hash(c.train) != _hash(a.train)


def test_empirical_frequencies_follow_target_ranks():
    world = generate_dataset(GenConfig(n_train=50000, n_val=10, n_test=10, seed=0))
    for vocab, k in ((world.ent_vocab, 100), (world.rel_vocab, 30)):
        rho = spearmanr(vocab.frequencies, zipf_weights(k, 1.5)).statistic
        assert rho > 0.99


def test_splits_disjoint_and_bands_nonempty():
    world = generate_dataset(SMALL)
    ids = [set(world.splits[s].ids.tolist()) for s in ("train", "val", "test")]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    for vocab in (world.ent_vocab, world.rel_vocab):
        bands = split_bands(vocab)
        assert len(bands.few) > 0
        few_total = sum(vocab.frequencies[i] for i in bands.few)
        assert few_total > 0


def test_vocab_sorted_and_counts_match_train():
    world = generate_dataset(SMALL)
    assert world.ent_vocab.is_sorted() and world.rel_vocab.is_sorted()
    tr = world.train
    assert sum(world.ent_vocab.frequencies) == 2 * len(tr)
    assert list(world.rel_vocab.frequencies) == np.bincount(tr.y["r"], minlength=8).tolist()


def test_save_load_roundtrip(tmp_path):
    world = generate_dataset(SMALL)
    manifest = save_world(world, tmp_path)
    assert "sha256" in manifest and (tmp_path / "gen_manifest.json").exists()
    loaded = load_data_dir(tmp_path)
    assert loaded.ent_vocab == world.ent_vocab and loaded.rel_vocab == world.rel_vocab
    for split in ("train", "val", "test"):
        a, b = world.splits[split], loaded.splits[split]
        assert np.array_equal(a.ids, b.ids) and np.array_equal(a.scene, b.scene)
        for r in "sro":
            assert np.array_equal(a.y[r], b.y[r])
            np.testing.assert_array_equal(a.x[r], b.x[r])


def test_missing_data_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="entity_vocab.tsv"):
        load_data_dir(tmp_path)


def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(k_ent=0)
    with pytest.raises(ValueError):
        GenConfig(rel_noise=1.5)
