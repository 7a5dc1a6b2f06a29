import json
from collections import Counter

import numpy as np
import pytest

from arpgnet.data import (
    DatasetError,
    SynthTaskConfig,
    collate,
    load_dataset,
    sample_dilated,
    sample_sparse_test,
    sample_sparse_train,
    save_dataset,
    single_stream_margin,
    stratified_split,
    synth_generate,
    synth_oracle_predict,
)
from arpgnet.model import FeatureBatch


# -- sampling -----------------------------------------------------------------------------

def test_sparse_train_identity_when_lengths_match():
    assert sample_sparse_train(16, 16, np.random.default_rng(0)) == list(range(16))


def test_sparse_train_two_frame_segments():
    idx = sample_sparse_train(32, 16, np.random.default_rng(1))
    assert all(v in (2 * i, 2 * i + 1) for i, v in enumerate(idx))


def test_sparse_train_offsets_uniform():
    rng = np.random.default_rng(2)
    n, T, draws = 40, 8, 10_000
    counts = Counter()
    for _ in range(draws):
        idx = sample_sparse_train(n, T, rng)
        counts.update(v - 5 * i for i, v in enumerate(idx))  # 5 frames per segment
    expected = draws * T / 5
    sigma = np.sqrt(draws * T * (1 / 5) * (4 / 5))
    assert set(counts) == set(range(5))
    assert all(abs(c - expected) < 3 * sigma for c in counts.values())


def test_sparse_train_short_video_round_robin():
    idx = sample_sparse_train(3, 8, np.random.default_rng(0))
    assert idx == sorted(idx) and len(idx) == 8 and set(idx) == {0, 1, 2}


def test_sparse_test_centres():
    assert sample_sparse_test(16, 16) == list(range(16))
    assert sample_sparse_test(32, 16) == list(range(1, 32, 2))
    assert sample_sparse_test(100, 7) == sample_sparse_test(100, 7)


@pytest.mark.parametrize("n, T", [(1, 4), (5, 5), (17, 4), (100, 16)])
def test_sampling_bounds_and_order(n, T):
    rng = np.random.default_rng(n)
    for idx in (sample_sparse_train(n, T, rng), sample_sparse_test(n, T)):
        assert len(idx) == T and idx == sorted(idx) and 0 <= min(idx) and max(idx) < n


def test_dilated_window():
    assert sample_dilated(12, 100) == [0, 3, 6, 9, 12, 15, 18, 21]
    assert sample_dilated(0, 100)[:5] == [0, 0, 0, 0, 0]
    assert sample_dilated(99, 100)[-3:] == [99, 99, 99]
    assert all(len(sample_dilated(c, 30)) == 8 for c in range(30))


# -- archive -------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small():
    return synth_generate(SynthTaskConfig(samples_per_class=6, seed=3))


def test_round_trip_bit_exact(small, tmp_path):
    loaded = load_dataset(save_dataset(small, tmp_path / "ds"))
    assert [s.sample_id for s in loaded.samples] == [s.sample_id for s in small.samples]
    assert loaded.labels.tolist() == small.labels.tolist()
    assert loaded.subject_ids == small.subject_ids
    x0, _ = collate(small, [(i, range(16)) for i in range(len(small))])
    x1, _ = collate(loaded, [(i, range(16)) for i in range(len(loaded))])
    assert x0.app.tobytes() == x1.app.tobytes() and x0.rel.tobytes() == x1.rel.tobytes()


def test_image_round_trip(tmp_path):
    ds = synth_generate(SynthTaskConfig(mode="image", samples_per_class=2, T=10, pair_gap=4, image_size=16))
    loaded = load_dataset(save_dataset(ds, tmp_path / "img"))
    a, _ = collate(ds, [(1, [0, 4, 9])])
    b, _ = collate(loaded, [(1, [0, 4, 9])])
    assert a.shape == (1, 3, 1, 16, 16) and a.tobytes() == b.tobytes()


def test_empty_dir_has_no_manifest(tmp_path):
    with pytest.raises(DatasetError, match="no manifest"):
        load_dataset(tmp_path)


def test_bad_label_names_sample(small, tmp_path):
    root = save_dataset(small, tmp_path / "ds")
    manifest = json.loads((root / "manifest.json").read_text())
    manifest["samples"][2]["label"] = 9
    (root / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetError, match=manifest["samples"][2]["id"]):
        load_dataset(root)


def test_missing_tensor_file_detected(small, tmp_path):
    root = save_dataset(small, tmp_path / "ds")
    (root / small[0].sample_id / "rel.bin").unlink()
    with pytest.raises(DatasetError, match="rel.bin"):
        load_dataset(root)


def test_collate_features_batch(small):
    x, y = collate(small, [(0, range(16)), (1, range(16))])
    assert isinstance(x, FeatureBatch) and x.app.shape == (2, 16, 16) and y.shape == (2,)


def test_stratified_split_balanced(small):
    tr, te = stratified_split(small, 0.5, 0)
    assert len(tr) == len(te) == 6
    assert np.bincount(te.labels).tolist() == [3, 3]
    assert not {s.sample_id for s in tr.samples} & {s.sample_id for s in te.samples}


# -- synthetic task ------------------------------------------------------------------------------

def test_synth_same_seed_same_bytes():
    a = synth_generate(SynthTaskConfig(samples_per_class=5, seed=11))
    b = synth_generate(SynthTaskConfig(samples_per_class=5, seed=11))
    for s, t in zip(a.samples, b.samples):
        assert s.arrays["app"].tobytes() == t.arrays["app"].tobytes()
        assert s.arrays["rel"].tobytes() == t.arrays["rel"].tobytes()


def test_synth_balanced_and_subjects():
    ds = synth_generate(SynthTaskConfig(n_classes=3, dim=12, samples_per_class=8, n_subjects=4))
    assert np.bincount(ds.labels).tolist() == [8, 8, 8]
    assert ds.subjects() == ["subj00", "subj01", "subj02", "subj03"]


@pytest.mark.parametrize("K", [2, 3, 4])
def test_noiseless_oracle_is_perfect(K):
    cfg = SynthTaskConfig(n_classes=K, dim=4 * K, noise_sigma=0.0, evidence_window=0, samples_per_class=30)
    ds = synth_generate(cfg)
    preds = [synth_oracle_predict(cfg, s.arrays) for s in ds.samples]
    assert preds == ds.labels.tolist()


def test_single_stream_oracles_near_designed_margin():
    cfg = SynthTaskConfig(samples_per_class=1500, seed=5)
    ds = synth_generate(cfg)
    for stream in ("app", "rel"):
        acc = np.mean([synth_oracle_predict(cfg, s.arrays, stream) == s.label for s in ds.samples])
        target = single_stream_margin(cfg, stream)
        assert abs(acc - target) < 0.04, (stream, acc, target)
    both = np.mean([synth_oracle_predict(cfg, s.arrays) == s.label for s in ds.samples])
    assert both > 0.99


def test_synth_config_problems():
    with pytest.raises(ValueError):
        SynthTaskConfig(n_classes=1, dim=3, mode="video").validate()
