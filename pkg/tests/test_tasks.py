"""Synthetic task generators: validation, determinism, split hygiene,
content addressing, the on-disk cache, and the Bayes-rate integrator."""

import struct

import numpy as np
import pytest

from oracles import bayes_accuracy_reference, binomial_interval
from spglab import tasks as tk
from spglab.rng import RngStream


def test_spec_validation():
    ok = dict(kind="classification", seed=1, train_samples=10, val_samples=5,
              test_samples=5, noise=1.0)
    tk.TaskSpec(**ok)
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**ok, "kind": "regression"})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**ok, "val_samples": 0})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**ok, "classes": 1})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**ok, "input_dim": 1})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**ok, "noise": 0.0})
    seg = dict(kind="segmentation", seed=1, train_samples=4, val_samples=2,
               test_samples=2, noise=0.1, height=10, width=10)
    tk.TaskSpec(**seg)
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**seg, "height": 3})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**seg, "noise": -0.1})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**seg, "shapes_per_image": 5})  # 125 cells > 100
    lm = dict(kind="language-modeling", seed=1, train_samples=4, val_samples=2,
              test_samples=2, noise=0.1, context_len=6, vocab=6)
    tk.TaskSpec(**lm)
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**lm, "vocab": 1})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**lm, "context_len": 1})
    with pytest.raises(ValueError):
        tk.TaskSpec(**{**lm, "noise": 1.0})


def test_head_classes_and_split_samples(blobs_spec, lm_spec):
    assert blobs_spec.head_classes == 3
    assert lm_spec.head_classes == lm_spec.vocab
    assert blobs_spec.split_samples("train") == blobs_spec.train_samples
    assert blobs_spec.split_samples("test") == blobs_spec.test_samples
    with pytest.raises(ValueError):
        blobs_spec.split_samples("holdout")


def test_content_hash_tracks_every_field(blobs_spec):
    from dataclasses import replace
    base = blobs_spec.content_hash()
    assert base == blobs_spec.content_hash()  # stable
    for change in (dict(seed=12), dict(noise=1.5), dict(train_samples=241)):
        assert replace(blobs_spec, **change).content_hash() != base


def test_blobs_balanced_and_deterministic(blobs_spec):
    ds = tk.generate_dataset(blobs_spec, "train")
    again = tk.generate_dataset(blobs_spec, "train")
    assert ds.features.tobytes() == again.features.tobytes()
    assert ds.targets.tobytes() == again.targets.tobytes()
    assert ds.features.shape == (blobs_spec.train_samples, blobs_spec.input_dim)
    counts = np.bincount(ds.targets, minlength=3)
    assert counts.max() - counts.min() <= 1
    assert ds.clean is None


def test_blobs_class_means_recoverable():
    spec = tk.blobs_overlap_spec(seed=5)
    ds = tk.generate_dataset(spec, "train")
    means = tk.blobs_means(spec)
    for k in range(spec.classes):
        got = ds.features[ds.targets == k].mean(axis=0)
        assert np.linalg.norm(got - means[k]) < 0.15  # sigma/sqrt(1000) ~ 0.03


def test_continuous_splits_share_no_rows(blobs_spec, seg_spec):
    for spec in (blobs_spec, seg_spec):
        rows = {}
        for split in tk.SPLITS:
            ds = tk.generate_dataset(spec, split)
            flat = ds.features.reshape(len(ds), -1)
            rows[split] = {row.tobytes() for row in flat}
        assert not rows["train"] & rows["val"]
        assert not rows["train"] & rows["test"]
        assert not rows["val"] & rows["test"]


def test_segmentation_geometry_and_labels(seg_spec):
    ds = tk.generate_dataset(seg_spec, "train")
    n, h, w = len(ds), seg_spec.height, seg_spec.width
    assert ds.features.shape == (n, h, w, tk.SEG_FEATURE_DIM)
    assert ds.targets.shape == (n, h, w)
    assert set(np.unique(ds.targets)) <= {0, 1, 2}
    assert (ds.targets > 0).any()  # shapes actually drawn
    assert np.all(np.isfinite(ds.features))


def test_segmentation_center_channel_is_intensity():
    spec = tk.TaskSpec(kind="segmentation", seed=3, train_samples=6,
                       val_samples=1, test_samples=1, noise=0.0,
                       height=12, width=12, shapes_per_image=1)
    ds = tk.generate_dataset(spec, "train")
    center = ds.features[..., 4]  # middle of the 3x3 patch
    assert np.all(center[ds.targets == 0] == 0.0)
    assert np.all(center[ds.targets == 1] == 1.0)
    assert np.all(center[ds.targets == 2] >= 2.0)  # cross arms overlap at center
    rows, cols = ds.features[..., 9], ds.features[..., 10]
    assert rows.min() == 0.0 and rows.max() == 1.0
    assert np.all(np.diff(rows[0, :, 0]) > 0)
    assert np.all(np.diff(cols[0, 0, :]) > 0)


def test_language_modeling_targets_and_clean_flags(lm_spec):
    ds = tk.generate_dataset(lm_spec, "train")
    length = lm_spec.context_len
    assert ds.features.shape == (len(ds), length)
    assert ds.targets.shape == (len(ds), length)
    assert ds.clean.shape == (len(ds), length)
    assert ds.features.min() >= 0 and ds.features.max() < lm_spec.vocab
    assert ds.targets.min() >= 0 and ds.targets.max() < lm_spec.vocab
    # next-token consistency: inner tokens appear in both views
    np.testing.assert_array_equal(ds.features[:, 1:], ds.targets[:, :-1])
    # clean positions follow the motif exactly
    motif = tk.lm_motif(lm_spec)
    base_targets = motif[(np.arange(1, length + 1)) % motif.shape[0]]
    clean = ds.clean.astype(bool)
    want = np.broadcast_to(base_targets, ds.targets.shape)
    assert np.array_equal(ds.targets[clean], want[clean])
    assert not np.array_equal(ds.targets, want)  # noise actually hit


def test_language_modeling_zero_noise_is_pure_motif():
    spec = tk.TaskSpec(kind="language-modeling", seed=2, train_samples=5,
                       val_samples=1, test_samples=1, noise=0.0,
                       context_len=7, vocab=5)
    ds = tk.generate_dataset(spec, "train")
    motif = tk.lm_motif(spec)
    want = motif[np.arange(spec.context_len) % motif.shape[0]]
    assert np.array_equal(ds.features, np.broadcast_to(want, ds.features.shape))
    assert np.all(ds.clean == 1)


def test_language_modeling_clean_rate_matches_noise():
    spec = tk.TaskSpec(kind="language-modeling", seed=8, train_samples=2000,
                       val_samples=1, test_samples=1, noise=0.3,
                       context_len=10, vocab=6)
    ds = tk.generate_dataset(spec, "train")
    lo, hi = binomial_interval(0.7, ds.clean.size, 4.0)
    assert lo < ds.clean.mean() < hi


def test_dataset_cache_roundtrip(tmp_path, blobs_spec, seg_spec, lm_spec):
    for spec in (blobs_spec, seg_spec, lm_spec):
        ds = tk.generate_dataset(spec, "val")
        path = str(tmp_path / f"{spec.kind}.spgd")
        tk.save_dataset(path, ds)
        back = tk.load_dataset(path)
        assert back.split == "val"
        assert back.features.tobytes() == ds.features.tobytes()
        assert back.features.dtype == ds.features.dtype
        assert back.targets.tobytes() == ds.targets.tobytes()
        if ds.clean is None:
            assert back.clean is None
        else:
            assert back.clean.tobytes() == ds.clean.tobytes()


def test_dataset_file_rejects_bad_magic_and_version(tmp_path, blobs_spec):
    ds = tk.generate_dataset(blobs_spec, "val")
    path = str(tmp_path / "ds.spgd")
    tk.save_dataset(path, ds)
    raw = bytearray(open(path, "rb").read())
    bad_magic = tmp_path / "bad_magic.spgd"
    bad_magic.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(ValueError):
        tk.load_dataset(str(bad_magic))
    bad_version = tmp_path / "bad_version.spgd"
    bad_version.write_bytes(bytes(raw[:4]) + struct.pack("<I", 99) + bytes(raw[8:]))
    with pytest.raises(ValueError):
        tk.load_dataset(str(bad_version))
    truncated = tmp_path / "trunc.spgd"
    truncated.write_bytes(bytes(raw[: len(raw) // 2]))
    with pytest.raises((ValueError, struct.error)):
        tk.load_dataset(str(truncated))


def test_load_or_generate_uses_cache(tmp_path, blobs_spec):
    cache = str(tmp_path / "cache")
    first = tk.load_or_generate(blobs_spec, "val", cache)
    path = tmp_path / "cache" / f"{blobs_spec.content_hash()}-val.spgd"
    assert path.exists()
    # prove the second call reads the file: plant different data at the key
    planted = tk.Dataset(first.features + 1.0, first.targets, "val")
    tk.save_dataset(str(path), planted)
    second = tk.load_or_generate(blobs_spec, "val", cache)
    assert np.array_equal(second.features, first.features + 1.0)
    # no cache dir: pure generation
    assert np.array_equal(tk.load_or_generate(blobs_spec, "val").features,
                          first.features)


def test_bayes_accuracy_matches_independent_quadrature():
    spec = tk.blobs_overlap_spec(seed=1)
    got = tk.bayes_accuracy_blobs(spec)
    want = bayes_accuracy_reference(tk.blobs_means(spec), spec.noise)
    assert abs(got - want) < 2e-3
    assert 0.90 < got < 0.94


def test_build_network_matches_task_geometry(blobs_spec, seg_spec, lm_spec):
    rng = RngStream(17, "test/build")
    net_cls = tk.build_network(blobs_spec, 16, rng)
    assert net_cls.classes == 3
    ds = tk.generate_dataset(blobs_spec, "val")
    (stream,) = net_cls.streams(ds.features[:4], ds.targets[:4])
    assert stream.hidden.shape == (4, 16)

    net_seg = tk.build_network(seg_spec, 16, RngStream(18, "b"))
    seg = tk.generate_dataset(seg_spec, "val")
    streams = net_seg.streams(seg.features[:2], seg.targets[:2])
    assert [s.tag for s in streams] == ["main", "aux"]
    units = 2 * seg_spec.height * seg_spec.width
    assert all(s.hidden.shape == (units, 16) for s in streams)

    net_lm = tk.build_network(lm_spec, 16, RngStream(19, "c"))
    assert net_lm.classes == lm_spec.vocab
    lm = tk.generate_dataset(lm_spec, "val")
    (ls,) = net_lm.streams(lm.features[:3], lm.targets[:3])
    assert ls.hidden.shape == (3 * lm_spec.context_len, 16)
    assert ls.targets.shape == (3 * lm_spec.context_len,)
