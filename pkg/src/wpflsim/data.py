"""Dataset loading (IDX binary format), synthetic generation, and non-IID splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class ClientDataset:
    """One client's local data with a held-out test split."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.train_y)


def _read_binary(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == b"\x1f\x8b":
            return gzip.decompress(f.read())
        return f.read()


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair into (X in [0,1], y) arrays."""
    raw_img = _read_binary(images_path)
    raw_lbl = _read_binary(labels_path)
    if len(raw_img) < 16 or len(raw_lbl) < 8:
        raise DataFormatError("IDX file truncated: header incomplete")
    magic, n_img, rows, cols = struct.unpack(">IIII", raw_img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"bad image magic 0x{magic:08x}")
    lmagic, n_lbl = struct.unpack(">II", raw_lbl[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise DataFormatError(f"bad label magic 0x{lmagic:08x}")
    if n_img != n_lbl:
        raise DataFormatError(f"image/label count mismatch: {n_img} vs {n_lbl}")
    need = 16 + n_img * rows * cols
    if len(raw_img) < need:
        raise DataFormatError("IDX image file truncated")
    if len(raw_lbl) < 8 + n_lbl:
        raise DataFormatError("IDX label file truncated")
    pixels = np.frombuffer(raw_img, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    x = pixels.reshape(n_img, rows * cols).astype(float) / 255.0
    y = np.frombuffer(raw_lbl, dtype=np.uint8, count=n_lbl, offset=8).astype(int)
    return x, y


def synthetic_gen(n_classes: int, dim: int, n_samples: int, rng: np.random.Generator,
                  separation: float = 6.0, scale: float = 1.0,
                  difficulty_jitter: float = 0.0, label_noise: float = 0.0):
    """Gaussian class clusters: unit noise around mutually orthogonal means.

    ``separation`` controls class overlap (difficulty); ``scale`` multiplies
    the finished features, moving the loss curvature without changing the
    Bayes error; ``difficulty_jitter`` spreads the per-class mean norms over
    [1-j, 1+j] * separation so that some classes are harder than others;
    ``label_noise`` relabels that fraction of samples uniformly at random,
    giving every client the same irreducible loss floor.
    """
    if n_classes <= dim:
        basis, _ = np.linalg.qr(rng.normal(0.0, 1.0, (dim, n_classes)))
        means = separation * basis.T
    else:
        means = rng.normal(0.0, 1.0, (n_classes, dim))
        means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    if difficulty_jitter > 0:
        means *= rng.uniform(1 - difficulty_jitter, 1 + difficulty_jitter,
                             (n_classes, 1))
    y = rng.integers(0, n_classes, n_samples)
    x = means[y] + rng.normal(0.0, 1.0, (n_samples, dim))
    if label_noise > 0:
        flip = rng.random(n_samples) < label_noise
        y = np.where(flip, rng.integers(0, n_classes, n_samples), y)
    return x * scale, y


def partition_noniid(x: np.ndarray, y: np.ndarray, n_clients: int,
                     labels_per_client: int, rng: np.random.Generator,
                     test_fraction: float = 0.2):
    """Label-shard split: each client receives ``labels_per_client`` single-label
    shards of equal size, so it holds at most that many distinct labels.

    Shards are carved within each label block (remainders truncated) and dealt
    out at random. Each client's samples are further split into train/test.
    """
    if labels_per_client < 1:
        raise ValueError("labels_per_client must be >= 1")
    n_shards = n_clients * labels_per_client
    shard_size = len(y) // n_shards
    labels = np.unique(y)
    by_label = {lab: np.flatnonzero(y == lab) for lab in labels}

    def carve(size):
        shards = []
        for lab in labels:
            idx = by_label[lab]
            for i in range(len(idx) // size):
                shards.append(idx[i * size:(i + 1) * size])
        return shards

    while shard_size >= 1 and len(carve(shard_size)) < n_shards:
        shard_size -= 1
    if shard_size < 1:
        raise DataFormatError("not enough samples per shard for this partition")
    pools = {}
    for lab in labels:
        idx = by_label[lab]
        chunks = [idx[i * shard_size:(i + 1) * shard_size]
                  for i in range(len(idx) // shard_size)]
        pools[lab] = [chunks[i] for i in rng.permutation(len(chunks))]

    clients = []
    for c in range(n_clients):
        held = set()
        take = []
        for _ in range(labels_per_client):
            # deal shards label by label, preferring labels the client does
            # not hold yet and, among those, the largest remaining supply
            available = [lab for lab in labels if pools[lab]]
            fresh = [lab for lab in available if lab not in held] or available
            supply = max(len(pools[lab]) for lab in fresh)
            best = [lab for lab in fresh if len(pools[lab]) == supply]
            lab = best[rng.integers(len(best))]
            take.append(pools[lab].pop())
            held.add(lab)
        idx = np.concatenate(take)
        idx = idx[rng.permutation(len(idx))]
        n_test = max(1, int(round(test_fraction * len(idx))))
        test_idx, train_idx = idx[:n_test], idx[n_test:]
        clients.append(ClientDataset(
            train_x=x[train_idx], train_y=y[train_idx],
            test_x=x[test_idx], test_y=y[test_idx],
        ))
    return clients
