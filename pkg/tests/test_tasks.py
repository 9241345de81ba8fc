import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poperm.linalg import HardPermutation
from poperm.tasks.evaluate import evaluate, evaluate_batch, kendall_tau
from poperm.tasks.idx import IdxFormatError, find_mnist, load_idx, parse_idx, read_idx, write_idx
from poperm.tasks.mosaic import (
    TileEncoderParams,
    encode_tiles,
    encode_tiles_vjp,
    make_mosaic,
    prepare_image,
    synthetic_images,
)
from poperm.tasks.sorting import EVAL_INTERVALS, SortTaskConfig, gen_sort_batch

from conftest import central_diff, grads_close


class TestSorting:
    def test_deterministic(self):
        cfg = SortTaskConfig(n=5, seed=3)
        a, _ = gen_sort_batch(cfg, 2)
        b, _ = gen_sort_batch(cfg, 2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, gen_sort_batch(cfg, 3)[0])

    def test_splits_differ(self):
        cfg = SortTaskConfig(n=5)
        assert not np.array_equal(gen_sort_batch(cfg, 0)[0], gen_sort_batch(cfg, 0, split="eval")[0])

    def test_target_of_example(self):
        X = np.array([0.9, 0.1, 0.5])
        np.testing.assert_array_equal(np.sort(X), [0.1, 0.5, 0.9])

    def test_intervals(self):
        assert EVAL_INTERVALS == ((0, 1), (0, 10), (0, 1000), (1, 2), (10, 11), (100, 101), (1000, 1001))
        cfg = SortTaskConfig(n=4)
        X, _ = gen_sort_batch(cfg, 0, interval=(1000.0, 1001.0), split="eval", size=50)
        assert X.dtype == np.float64 and X.min() >= 1000 and X.max() < 1001

    def test_unique_at_float64(self):
        cfg = SortTaskConfig(n=128)
        X, _ = gen_sort_batch(cfg, 0, interval=(1000.0, 1001.0), split="eval", size=1000)
        unique = sum(len(np.unique(x)) == 128 for x in X[..., 0])
        assert unique >= 999

    def test_last_batch_is_partial(self):
        cfg = SortTaskConfig(n=3, train_sets=1000, batch_size=512)
        assert cfg.batches_per_epoch == 2
        assert gen_sort_batch(cfg, 1)[0].shape == (488, 3, 1)

    def test_validation(self):
        with pytest.raises(ValueError):
            SortTaskConfig(n=1)
        with pytest.raises(ValueError):
            SortTaskConfig(n=3, lo=1.0, hi=1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 1000), st.integers(0, 50))
    def test_targets_are_sorted_inputs(self, n, seed, index):
        X, target = gen_sort_batch(SortTaskConfig(n=n, seed=seed, batch_size=8), index)
        np.testing.assert_array_equal(target[..., 0], np.array([sorted(x) for x in X[..., 0]]))


def idx_fixture():
    pixels = np.arange(32, dtype=np.uint8).reshape(2, 4, 4) * 8
    return struct.pack(">HBB", 0, 8, 3) + struct.pack(">3I", 2, 4, 4) + pixels.tobytes(), pixels


class TestIdx:
    def test_fixture_shape(self, tmp_path):
        data, pixels = idx_fixture()
        path = tmp_path / "imgs"
        path.write_bytes(data)
        np.testing.assert_array_equal(read_idx(path), pixels)
        x = load_idx(path)
        assert x.shape == (2, 4, 4)
        assert abs(x.mean()) < 1e-12 and x.std() == pytest.approx(1.0)

    def test_labels(self, tmp_path):
        path = tmp_path / "labels"
        path.write_bytes(struct.pack(">HBB", 0, 8, 1) + struct.pack(">I", 3) + bytes([7, 0, 9]))
        np.testing.assert_array_equal(load_idx(path), [7, 0, 9])

    def test_bad_magic(self):
        with pytest.raises(IdxFormatError, match="magic"):
            parse_idx(b"\x00\x00\x00\x00" + b"\x00" * 16)

    def test_truncated(self):
        data, _ = idx_fixture()
        with pytest.raises(IdxFormatError, match="truncated"):
            parse_idx(data[:-1])
        with pytest.raises(IdxFormatError):
            parse_idx(data[:6])

    def test_unsupported_type(self):
        with pytest.raises(IdxFormatError, match="type"):
            parse_idx(struct.pack(">HBB", 0, 0x0D, 1) + struct.pack(">I", 1) + b"\x00" * 4)

    def test_round_trip_bytes(self, tmp_path):
        data, pixels = idx_fixture()
        path = tmp_path / "out"
        write_idx(path, pixels)
        assert path.read_bytes() == data

    def test_find_mnist(self, tmp_path, monkeypatch):
        (tmp_path / "t10k-images-idx3-ubyte").write_bytes(b"")
        monkeypatch.setenv("POPERM_DATA_DIR", str(tmp_path))
        assert set(find_mnist()) == {"test"}
        monkeypatch.delenv("POPERM_DATA_DIR")
        assert find_mnist() == {}

    def test_official_mnist_if_present(self):
        files = find_mnist()
        if "train" not in files:
            pytest.skip("MNIST IDX files not supplied")
        raw = read_idx(files["train"])
        assert raw.shape == (60000, 28, 28)
        # the first rows of the first digit are background
        assert raw[0, 0, 0] == 0 and raw[0, :4].sum() == 0


class TestMosaic:
    def test_two_by_two(self):
        m = make_mosaic(np.arange(784.0).reshape(28, 28), 2, 2, seed=0)
        assert m.tiles.shape == (4, 196) and m.tile_shape == (14, 14)

    def test_three_by_three_upscales(self):
        img = np.arange(784.0).reshape(28, 28)
        assert prepare_image(img, 3, 3).shape == (30, 30)
        m = make_mosaic(img, 3, 3, seed=0)
        assert m.tiles.shape == (9, 100)

    def test_identity_order(self):
        m = make_mosaic(np.arange(16.0).reshape(4, 4), 2, 2, order=[0, 1, 2, 3])
        assert m.truth == HardPermutation.identity(4)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            make_mosaic(np.ones((1, 5)), 2, 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
    def test_unshuffle_reproduces_image(self, rows, cols, seed):
        img = np.random.default_rng(seed).random((28, 28))
        m = make_mosaic(img, rows, cols, seed=seed)
        np.testing.assert_array_equal(m.reassemble(), prepare_image(img, rows, cols))

    def test_synthetic_seeded(self):
        a = synthetic_images(3, 5)
        np.testing.assert_array_equal(a, synthetic_images(3, 5))
        assert a.shape == (3, 28, 28)
        assert not np.array_equal(a, synthetic_images(3, 5, stream=1))

    def test_blank_quadrants(self):
        for img in synthetic_images(5, 0, blank_quadrants=True):
            quads = [img[:14, :14], img[:14, 14:], img[14:, :14], img[14:, 14:]]
            assert sum(np.all(q == 0.0) for q in quads) >= 2


class TestEncoder:
    def test_zero_params(self, rng):
        feats, _ = encode_tiles(TileEncoderParams(np.zeros((3, 4)), np.zeros(3)), rng.random((5, 4)))
        assert np.all(feats == 0)

    def test_identity(self, rng):
        tiles = rng.random((5, 4))
        feats, _ = encode_tiles(TileEncoderParams(np.eye(4), np.zeros(4)), tiles)
        np.testing.assert_array_equal(feats, tiles)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            encode_tiles(TileEncoderParams(np.zeros((3, 4)), np.zeros(3)), rng.random((5, 6)))

    def test_matches_fd(self, rng):
        W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        tiles = rng.normal(size=(2, 5, 4))
        up = rng.normal(size=(2, 5, 3))

        def loss():
            return float((up * encode_tiles(TileEncoderParams(W, b), tiles)[0]).sum())

        params = TileEncoderParams(W, b)
        _, pre = encode_tiles(params, tiles)
        assert np.min(np.abs(pre)) > 1e-4
        dW, db, dt = encode_tiles_vjp(params, tiles, pre, up)
        assert grads_close(dW, central_diff(loss, W))
        assert grads_close(db, central_diff(loss, b))
        assert grads_close(dt, central_diff(loss, tiles))


class TestEvaluate:
    def test_correct_hard_permutation(self):
        values = np.array([0.9, 0.1, 0.5])
        truth = HardPermutation((1, 2, 0))
        r = evaluate(truth.matrix(), values, target=np.sort(values))
        assert r["accuracy"] == 1.0 and r["mse_hard"] == 0.0 and r["mse_soft"] == 0.0
        assert r["kendall_tau"] == 1.0

    def test_uniform_soft_mse_is_variance(self, rng):
        values = rng.random(6)
        r = evaluate(np.full((6, 6), 1 / 6), values, target=np.sort(values))
        assert r["mse_soft"] == pytest.approx(values.var(), abs=1e-15)

    def test_reversed_scores_zero(self):
        values = np.array([0.1, 0.2, 0.3, 0.4])
        rev = HardPermutation((3, 2, 1, 0))
        r = evaluate(rev.matrix(), values, target=values)
        assert r["accuracy"] == 0.0 and r["kendall_tau"] == -1.0

    def test_index_truth_invariant_to_shuffle(self, rng):
        img = rng.random((8, 8))
        for seed in range(5):
            m = make_mosaic(img, 2, 2, seed=seed)
            r = evaluate(m.truth.matrix(), m.tiles, truth=m.truth)
            assert r["accuracy"] == 1.0 and r["mse_hard"] == 0.0

    def test_batch_means(self):
        values = np.array([[0.3, 0.1], [0.1, 0.3]])
        good = [HardPermutation((1, 0)).matrix(), np.eye(2)]
        bad = [np.eye(2), HardPermutation((1, 0)).matrix()]
        targets = np.sort(values, axis=1)
        assert evaluate_batch(np.stack(good), values, targets)["accuracy"] == 1.0
        out = evaluate_batch(np.stack([good[0], bad[1]]), values, targets)
        assert out["accuracy"] == 0.5 and out["count"] == 2

    def test_kendall(self):
        assert kendall_tau([0, 1, 2], [0, 1, 2]) == 1.0
        assert kendall_tau([1, 0, 2], [0, 1, 2]) == pytest.approx(1 / 3)
        assert kendall_tau([0], [0]) == 1.0
