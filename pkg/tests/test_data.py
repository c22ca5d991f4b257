"""Data module tests: IDX decoding against an independent reference
decoder, CSV ingestion, synthetic generator structure verified by a
linear-probe oracle, split/batch determinism and the cache format."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from featprior.data import (
    Dataset,
    FeatureCache,
    dataset_fingerprint,
    load_csv,
    load_idx,
    read_cache,
    serialize_cache,
    split_and_batch,
    synth_blobs,
    synth_rings,
    write_cache,
)
from featprior.errors import (
    BadMagic,
    BatchTooSmall,
    ConfigError,
    CorruptFile,
    CountMismatch,
    FingerprintMismatch,
    LabelOutOfRange,
    NonNumericCell,
    RaggedRows,
    TruncatedFile,
    UnknownLabelColumn,
)

from oracles import decode_idx_reference, linear_probe_accuracy


def idx_image_bytes(images: np.ndarray) -> bytes:
    n, rows, cols = images.shape
    return struct.pack(">IIII", 0x803, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_label_bytes(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", 0x801, labels.size) + labels.tobytes()


class TestLoadIdx:
    def test_single_saturated_image(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(idx_image_bytes(np.full((1, 2, 2), 255)))
        lab.write_bytes(idx_label_bytes([1]))
        ds = load_idx(img, lab)
        np.testing.assert_array_equal(ds.inputs, [[1.0, 1.0, 1.0, 1.0]])
        assert ds.labels.tolist() == [1]

    def test_hand_scaled_pixels(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(idx_image_bytes(np.array([[[0, 128], [255, 0]]])))
        lab.write_bytes(idx_label_bytes([0]))
        ds = load_idx(img, lab)
        np.testing.assert_allclose(ds.inputs, [[0.0, 128 / 255, 1.0, 0.0]],
                                   atol=1e-9)
        assert ds.inputs[0, 1] == pytest.approx(0.501961, abs=1e-6)

    def test_count_mismatch(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(idx_image_bytes(np.zeros((2, 2, 2))))
        lab.write_bytes(idx_label_bytes([0, 1, 1]))
        with pytest.raises(CountMismatch):
            load_idx(img, lab)

    def test_bad_magic(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(struct.pack(">IIII", 0x804, 1, 1, 1) + b"\x00")
        lab.write_bytes(idx_label_bytes([0]))
        with pytest.raises(BadMagic):
            load_idx(img, lab)

    def test_truncated(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(idx_image_bytes(np.zeros((2, 3, 3)))[:-4])
        lab.write_bytes(idx_label_bytes([0, 1]))
        with pytest.raises(TruncatedFile):
            load_idx(img, lab)

    def test_truncated_labels(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(idx_image_bytes(np.zeros((2, 3, 3))))
        lab.write_bytes(idx_label_bytes([0, 1])[:-1])
        with pytest.raises(TruncatedFile):
            load_idx(img, lab)

    def test_agrees_with_reference_decoder(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
        labels = rng.integers(0, 7, size=5).astype(np.uint8)
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(idx_image_bytes(images))
        lab.write_bytes(idx_label_bytes(labels))

        ds = load_idx(img, lab)
        ref_inputs, ref_labels = decode_idx_reference(img.read_bytes(),
                                                      lab.read_bytes())
        np.testing.assert_array_equal(ds.inputs, ref_inputs)
        np.testing.assert_array_equal(ds.labels, ref_labels)


class TestLoadCsv:
    def test_two_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,y\n1.0,2.0,0\n3.5,4.5,1\n")
        ds = load_csv(p, "y")
        np.testing.assert_allclose(ds.inputs, [[1.0, 2.0], [3.5, 4.5]])
        assert ds.labels.tolist() == [0, 1]
        assert ds.class_count == 2

    def test_label_column_mid_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y,b\n1.0,0,2.0\n3.5,1,4.5\n")
        ds = load_csv(p, "y")
        np.testing.assert_allclose(ds.inputs, [[1.0, 2.0], [3.5, 4.5]])

    def test_ragged_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,y\n1.0,2.0,0\n3.5,1\n")
        with pytest.raises(RaggedRows):
            load_csv(p, "y")

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y\nfoo,0\n")
        with pytest.raises(NonNumericCell):
            load_csv(p, "y")

    def test_unknown_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(UnknownLabelColumn):
            load_csv(p, "label")

    def test_fractional_label_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y\n1.0,0.5\n")
        with pytest.raises(NonNumericCell):
            load_csv(p, "y")

    def test_negative_label_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y\n1.0,-1\n")
        with pytest.raises(LabelOutOfRange):
            load_csv(p, "y")


class TestSynthBlobs:
    def test_wide_separation_linearly_separable(self):
        ds = synth_blobs(100, 2, 2, separation=10.0, seed=0)
        parts = split_and_batch(ds, 0.5, 16, seed=1)
        acc = linear_probe_accuracy(parts.train.inputs, parts.train.labels,
                                    parts.test.inputs, parts.test.labels,
                                    ds.class_count)
        assert acc >= 0.999

    def test_tiny_separation_near_chance(self):
        ds = synth_blobs(200, 2, 2, separation=0.01, seed=0)
        parts = split_and_batch(ds, 0.5, 16, seed=1)
        acc = linear_probe_accuracy(parts.train.inputs, parts.train.labels,
                                    parts.test.inputs, parts.test.labels,
                                    ds.class_count)
        assert acc <= 0.6

    def test_deterministic(self):
        a = synth_blobs(10, 3, 4, 2.0, seed=7)
        b = synth_blobs(10, 3, 4, 2.0, seed=7)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_separation_must_be_positive(self):
        with pytest.raises(ConfigError):
            synth_blobs(10, 2, 2, 0.0, seed=0)


class TestSynthRings:
    def test_zero_noise_radius_determines_class(self):
        ds = synth_rings(50, 3, noise=0.0, seed=3)
        radii = np.linalg.norm(ds.inputs, axis=1)
        np.testing.assert_allclose(radii, ds.labels + 1.0, atol=1e-12)

    def test_linear_probe_fails_on_rings(self):
        ds = synth_rings(200, 3, noise=0.1, seed=4)
        parts = split_and_batch(ds, 0.5, 16, seed=5)
        acc = linear_probe_accuracy(parts.train.inputs, parts.train.labels,
                                    parts.test.inputs, parts.test.labels,
                                    ds.class_count)
        assert acc <= 0.6

    def test_deterministic(self):
        a = synth_rings(10, 2, 0.2, seed=8)
        b = synth_rings(10, 2, 0.2, seed=8)
        np.testing.assert_array_equal(a.inputs, b.inputs)


class TestSplitAndBatch:
    def test_half_split_of_ten(self):
        ds = synth_blobs(5, 2, 2, 1.0, seed=0)
        parts = split_and_batch(ds, 0.5, 2, seed=0)
        assert parts.train.n == 5
        assert parts.test.n == 5

    def test_split_is_partition(self):
        ds = synth_blobs(20, 2, 2, 1.0, seed=0)
        parts = split_and_batch(ds, 0.3, 4, seed=1)
        train_ids = set(parts.train.source_indices.tolist())
        test_ids = set(parts.test.source_indices.tolist())
        assert train_ids.isdisjoint(test_ids)
        assert train_ids | test_ids == set(range(ds.n))

    def test_epoch_batches_partition_train(self):
        ds = synth_blobs(20, 2, 2, 1.0, seed=0)
        parts = split_and_batch(ds, 0.25, 7, seed=2)
        for epoch in (0, 1, 5):
            batches = parts.schedule.epoch_batches(epoch)
            flat = np.concatenate(batches)
            assert sorted(flat.tolist()) == sorted(
                parts.train.source_indices.tolist())

    def test_same_seed_same_schedule(self):
        ds = synth_blobs(20, 2, 2, 1.0, seed=0)
        a = split_and_batch(ds, 0.25, 8, seed=3)
        b = split_and_batch(ds, 0.25, 8, seed=3)
        np.testing.assert_array_equal(a.train.source_indices,
                                      b.train.source_indices)
        for ba, bb in zip(a.schedule.epoch_batches(4), b.schedule.epoch_batches(4)):
            np.testing.assert_array_equal(ba, bb)

    def test_batch_too_small(self):
        ds = synth_blobs(10, 2, 2, 1.0, seed=0)
        with pytest.raises(BatchTooSmall):
            split_and_batch(ds, 0.5, 1, seed=0)

    def test_bad_fraction(self):
        ds = synth_blobs(10, 2, 2, 1.0, seed=0)
        with pytest.raises(ConfigError):
            split_and_batch(ds, 1.5, 2, seed=0)


class TestFeatureCache:
    def make_cache(self):
        rng = np.random.default_rng(5)
        return FeatureCache(
            groups={0: rng.standard_normal((6, 4)).astype(np.float32),
                    2: rng.standard_normal((6, 8)).astype(np.float32)},
            dataset_fingerprint=bytes(range(32)),
            teacher_fingerprint=bytes(range(32, 64)),
        )

    def test_round_trip_bitwise(self, tmp_path):
        cache = self.make_cache()
        path = tmp_path / "c.fpfc"
        write_cache(path, cache)
        restored = read_cache(path)
        assert set(restored.groups) == {0, 2}
        for gid in (0, 2):
            np.testing.assert_array_equal(restored.groups[gid],
                                          cache.groups[gid])
        assert restored.dataset_fingerprint == cache.dataset_fingerprint
        assert restored.teacher_fingerprint == cache.teacher_fingerprint
        assert serialize_cache(restored) == serialize_cache(cache)

    def test_group_shapes_recovered(self, tmp_path):
        cache = self.make_cache()
        path = tmp_path / "c.fpfc"
        write_cache(path, cache)
        restored = read_cache(path)
        assert restored.groups[0].shape == (6, 4)
        assert restored.groups[2].shape == (6, 8)

    def test_tampered_fingerprint_detected(self, tmp_path):
        cache = self.make_cache()
        path = tmp_path / "c.fpfc"
        blob = bytearray(serialize_cache(cache))
        blob[10] ^= 0xFF  # inside the dataset fingerprint
        path.write_bytes(bytes(blob))
        ds = synth_blobs(3, 2, 2, 1.0, seed=0)
        with pytest.raises(FingerprintMismatch):
            read_cache(path, expect_dataset=ds)

    def test_corrupt_payload(self, tmp_path):
        cache = self.make_cache()
        path = tmp_path / "c.fpfc"
        write_cache(path, cache)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CorruptFile):
            read_cache(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.fpfc"
        path.write_bytes(b"NOPE" + bytes(80))
        with pytest.raises(BadMagic):
            read_cache(path)

    def test_fingerprint_sensitive_to_labels(self):
        ds = synth_blobs(5, 2, 2, 1.0, seed=0)
        permuted = Dataset(inputs=ds.inputs, labels=ds.labels[::-1].copy(),
                           class_count=ds.class_count)
        assert dataset_fingerprint(ds) != dataset_fingerprint(permuted)

    def test_golden_byte_layout(self):
        cache = FeatureCache(
            groups={3: np.array([[1.5], [-2.0]], dtype=np.float32)},
            dataset_fingerprint=bytes(range(32)),
            teacher_fingerprint=bytes(range(32, 64)),
        )
        expected = b"".join([
            b"FPFC",
            struct.pack("<I", 1),
            bytes(range(32)),
            bytes(range(32, 64)),
            struct.pack("<I", 1),
            struct.pack("<IQI", 3, 2, 1),
            struct.pack("<2f", 1.5, -2.0),
        ])
        assert serialize_cache(cache) == expected
