import gzip
import struct

import numpy as np
import pytest

from wpflsim.data import (IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, load_idx,
                          partition_noniid, synthetic_gen)
from wpflsim.errors import DataFormatError
from wpflsim.models import MLRModel
from wpflsim.rng import substream


def write_idx_pair(tmp_path, images, labels, gz=False, image_magic=IDX_IMAGE_MAGIC):
    n, rows, cols = images.shape
    img_bytes = struct.pack(">IIII", image_magic, n, rows, cols) + images.astype(np.uint8).tobytes()
    lbl_bytes = struct.pack(">II", IDX_LABEL_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()
    img_path = tmp_path / ("img.idx.gz" if gz else "img.idx")
    lbl_path = tmp_path / ("lbl.idx.gz" if gz else "lbl.idx")
    img_path.write_bytes(gzip.compress(img_bytes) if gz else img_bytes)
    lbl_path.write_bytes(gzip.compress(lbl_bytes) if gz else lbl_bytes)
    return img_path, lbl_path


class TestLoadIdx:
    def test_small_fixture(self, tmp_path):
        images = (np.arange(4 * 28 * 28) % 256).astype(np.uint8).reshape(4, 28, 28)
        labels = np.array([3, 1, 4, 1], dtype=np.uint8)
        x, y = load_idx(*write_idx_pair(tmp_path, images, labels))
        assert x.shape == (4, 784)
        assert list(y) == [3, 1, 4, 1]

    def test_pixel_scaling(self, tmp_path):
        images = np.full((1, 2, 2), 255, dtype=np.uint8)
        x, _ = load_idx(*write_idx_pair(tmp_path, images, np.array([0])))
        assert np.all(x == 1.0)

    def test_gzip_transparent(self, tmp_path):
        images = np.zeros((2, 3, 3), dtype=np.uint8)
        x, y = load_idx(*write_idx_pair(tmp_path, images, np.array([1, 2]), gz=True))
        assert x.shape == (2, 9) and list(y) == [1, 2]

    def test_bad_magic(self, tmp_path):
        images = np.zeros((1, 2, 2), dtype=np.uint8)
        paths = write_idx_pair(tmp_path, images, np.array([0]), image_magic=0xDEADBEEF)
        with pytest.raises(DataFormatError):
            load_idx(*paths)

    def test_truncated(self, tmp_path):
        images = np.zeros((4, 28, 28), dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, np.array([0, 1, 2, 3]))
        img.write_bytes(img.read_bytes()[:100])
        with pytest.raises(DataFormatError):
            load_idx(img, lbl)

    def test_count_mismatch(self, tmp_path):
        # three images but a two-entry label file
        images = np.zeros((3, 2, 2), dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, np.array([0, 1]))
        with pytest.raises(DataFormatError):
            load_idx(img, lbl)


class TestSynthetic:
    def test_deterministic(self):
        a = synthetic_gen(10, 16, 500, substream(0, "d"))
        b = synthetic_gen(10, 16, 500, substream(0, "d"))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_labels_roughly_uniform(self):
        _, y = synthetic_gen(10, 8, 100_000, substream(1, "d"))
        counts = np.bincount(y, minlength=10)
        se = np.sqrt(0.1 * 0.9 / 100_000)
        assert np.all(np.abs(counts / 100_000 - 0.1) <= 3 * se)

    def test_separable_clusters_learnable(self):
        x, y = synthetic_gen(5, 10, 400, substream(2, "d"), separation=10.0)
        model = MLRModel(10, 5)
        w = model.init_params(substream(3, "d"))
        for _ in range(200):
            w = w - 0.5 * model.grad(w, x, y)
        assert model.accuracy(w, x, y) > 0.99


class TestPartition:
    def setup_method(self):
        self.x, self.y = synthetic_gen(10, 8, 2000, substream(4, "d"))

    def test_label_cap(self):
        clients = partition_noniid(self.x, self.y, 20, 2, substream(5, "d"))
        for c in clients:
            labels = set(c.train_y) | set(c.test_y)
            assert len(labels) <= 2

    def test_nearly_iid_when_cap_is_all_classes(self):
        clients = partition_noniid(self.x, self.y, 5, 10, substream(6, "d"))
        for c in clients:
            assert len(set(c.train_y) | set(c.test_y)) == 10

    def test_true_partition(self):
        clients = partition_noniid(self.x, self.y, 20, 2, substream(7, "d"))
        seen = []
        for c in clients:
            seen.extend(map(tuple, c.train_x))
            seen.extend(map(tuple, c.test_x))
        assert len(seen) == len(set(seen))
        n_each = {len(c.train_y) + len(c.test_y) for c in clients}
        assert len(n_each) == 1  # equal sizes

    def test_deterministic(self):
        a = partition_noniid(self.x, self.y, 20, 2, substream(8, "d"))
        b = partition_noniid(self.x, self.y, 20, 2, substream(8, "d"))
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.train_x, cb.train_x)
            assert np.array_equal(ca.test_y, cb.test_y)

    def test_holdout_fraction(self):
        clients = partition_noniid(self.x, self.y, 20, 2, substream(9, "d"),
                                   test_fraction=0.2)
        for c in clients:
            total = len(c.train_y) + len(c.test_y)
            assert len(c.test_y) == max(1, round(0.2 * total))

    def test_not_enough_samples(self):
        with pytest.raises(DataFormatError):
            partition_noniid(self.x[:10], self.y[:10], 20, 2, substream(10, "d"))
