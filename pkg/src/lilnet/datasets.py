"""Toy manifolds with hierarchical labels, MNIST IDX I/O, CSV export, batching."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import Rng, gaussian_sample

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; ``field`` names the offending header entry or payload."""

    def __init__(self, path, field: str, message: str):
        super().__init__(f"{path}: {field}: {message}")
        self.path = str(path)
        self.field = field


@dataclass
class LabeledDataset:
    points: np.ndarray
    labels: list[np.ndarray]  # coarse -> fine
    split: np.ndarray          # per-row "train" / "test"
    kind: str = "custom"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        n = self.points.shape[0]
        self.labels = [np.asarray(lv, dtype=np.int64).ravel() for lv in self.labels]
        if isinstance(self.split, str):
            self.split = np.full(n, self.split)
        self.split = np.asarray(self.split).astype(str)
        if self.points.ndim != 2:
            raise ValueError("points must be an N x D matrix")
        for k, lv in enumerate(self.labels):
            if lv.shape[0] != n:
                raise ValueError(f"label level {k} has {lv.shape[0]} entries for {n} points")
        if self.split.shape[0] != n:
            raise ValueError("split tags must have one entry per point")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.labels)

    def num_classes(self, level: int) -> int:
        return int(self.labels[level].max()) + 1 if len(self) else 0

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.points[index], [lv[index] for lv in self.labels], self.split[index], self.kind)

    def select_split(self, name: str) -> "LabeledDataset":
        if name == "all":
            return self
        return self.subset(np.flatnonzero(self.split == name))

    def refines(self) -> bool:
        """True if every finer level's classes each sit inside exactly one coarser class."""
        for coarse, fine in zip(self.labels[:-1], self.labels[1:]):
            for c in np.unique(fine):
                if np.unique(coarse[fine == c]).size != 1:
                    return False
        return True


def random_split(n: int, rng: Rng, test_fraction: float = 0.2) -> np.ndarray:
    split = np.full(n, "train", dtype="<U5")
    n_test = int(round(test_fraction * n))
    split[rng.permutation(n)[:n_test]] = "test"
    return split


def gen_entangled_rings(n_per_ring: int, noise_variance: float, rng: Rng, test_fraction: float = 0.2) -> LabeledDataset:
    """Two linked unit circles: A in the z=0 plane at the origin, B in the y=0 plane centred at (1, 0, 0)."""
    if n_per_ring < 3:
        raise ValueError(f"n_per_ring must be >= 3, got {n_per_ring}")
    if noise_variance < 0:
        raise ValueError(f"noise_variance must be >= 0, got {noise_variance}")
    t = rng.uniform(0.0, 2 * np.pi, size=(2, n_per_ring))
    zeros = np.zeros(n_per_ring)
    ring_a = np.stack([np.cos(t[0]), np.sin(t[0]), zeros], axis=1)
    ring_b = np.stack([1.0 + np.cos(t[1]), zeros, np.sin(t[1])], axis=1)
    pts = np.vstack([ring_a, ring_b])
    pts = pts + gaussian_sample(rng, pts.shape[0], 3, 0.0, noise_variance)
    labels = np.repeat([0, 1], n_per_ring)
    return LabeledDataset(pts, [labels], random_split(len(pts), rng, test_fraction), kind="rings")


def torus_point(theta, phi, R: float, r: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    ring = R + r * np.cos(theta)
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), r * np.sin(theta)], axis=-1)


def gen_torus(n: int, R: float, r: float, noise_variance: float, rng: Rng, test_fraction: float = 0.2) -> LabeledDataset:
    """Torus samples labelled by the angle around the central axis.

    Level 0 splits into two half tori, level 1 into four quarter tori.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not (R > r > 0):
        raise ValueError(f"need R > r > 0, got R={R}, r={r}")
    if noise_variance < 0:
        raise ValueError(f"noise_variance must be >= 0, got {noise_variance}")
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    pts = torus_point(theta, phi, R, r) + gaussian_sample(rng, n, 3, 0.0, noise_variance)
    quarter = np.minimum((phi // (np.pi / 2)).astype(np.int64), 3)
    half = quarter // 2
    return LabeledDataset(pts, [half, quarter], random_split(n, rng, test_fraction), kind="torus")


def make_batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """One epoch of shuffled index batches; the last batch may be short."""
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must lie in [1, {n}], got {batch_size}")
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


# MNIST IDX ---------------------------------------------------------------

def _read_header(path, blob: bytes, magic: int, n_dims: int) -> tuple[int, ...]:
    need = 4 + 4 * n_dims
    if len(blob) >= 4:
        (got,) = struct.unpack(">I", blob[:4])
        if got != magic:
            raise IdxFormatError(path, "magic", f"expected 0x{magic:08X}, got 0x{got:08X}")
    if len(blob) < need:
        raise IdxFormatError(path, "header", f"file has {len(blob)} bytes, header needs {need}")
    return struct.unpack(f">{n_dims}I", blob[4:need])


def parse_idx_images(blob: bytes, path="<bytes>") -> np.ndarray:
    count, rows, cols = _read_header(path, blob, IDX_IMAGES_MAGIC, 3)
    payload = blob[16:]
    if len(payload) != count * rows * cols:
        raise IdxFormatError(path, "pixels", f"expected {count * rows * cols} pixel bytes for {count} images, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def parse_idx_labels(blob: bytes, path="<bytes>") -> np.ndarray:
    (count,) = _read_header(path, blob, IDX_LABELS_MAGIC, 1)
    payload = blob[8:]
    if len(payload) != count:
        raise IdxFormatError(path, "labels", f"expected {count} label bytes, got {len(payload)}")
    labels = np.frombuffer(payload, dtype=np.uint8)
    if labels.size and labels.max() > 9:
        raise IdxFormatError(path, "labels", f"label value {int(labels.max())} outside 0-9")
    return labels


def images_to_idx(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    return struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes()


def labels_to_idx(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def load_mnist_idx(images_path, labels_path, split: str = "train") -> LabeledDataset:
    images = parse_idx_images(Path(images_path).read_bytes(), images_path)
    labels = parse_idx_labels(Path(labels_path).read_bytes(), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(labels_path, "count", f"{labels.shape[0]} labels for {images.shape[0]} images")
    pts = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(pts, [labels.astype(np.int64)], split, kind="mnist")


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist_dir(directory, split: str) -> LabeledDataset:
    img, lab = MNIST_FILES[split]
    d = Path(directory)
    return load_mnist_idx(d / img, d / lab, split=split)


def subsample(ds: LabeledDataset, n: int, rng: Rng) -> LabeledDataset:
    if n >= len(ds):
        return ds
    return ds.subset(np.sort(rng.permutation(len(ds))[:n]))


# CSV ---------------------------------------------------------------------

def write_dataset_csv(ds: LabeledDataset, path) -> None:
    d = ds.points.shape[1]
    header = [f"x_{i}" for i in range(d)] + [f"label_{k}" for k in range(ds.n_levels)] + ["split"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            w.writerow([repr(float(v)) for v in ds.points[i]] + [int(lv[i]) for lv in ds.labels] + [ds.split[i]])


def read_dataset_csv(path, kind: str | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    lcols = [i for i, h in enumerate(header) if h.startswith("label_")]
    if not xcols or not lcols or "split" not in header:
        raise ValueError(f"{path}: expected columns x_*, label_*, split")
    scol = header.index("split")
    pts = np.array([[float(r[i]) for i in xcols] for r in body]).reshape(len(body), len(xcols))
    labels = [np.array([int(r[i]) for r in body], dtype=np.int64) for i in lcols]
    split = np.array([r[scol] for r in body])
    return LabeledDataset(pts, labels, split, kind=kind or "csv")
