import struct

import numpy as np
import pytest

from lilnet.datasets import (
    IdxFormatError,
    LabeledDataset,
    gen_entangled_rings,
    gen_torus,
    images_to_idx,
    labels_to_idx,
    load_mnist_idx,
    make_batches,
    parse_idx_images,
    parse_idx_labels,
    read_dataset_csv,
    torus_point,
    write_dataset_csv,
)
from lilnet.linalg import make_rng


def test_ring_parametrisation_endpoints():
    ds = gen_entangled_rings(3, 0.0, make_rng(0))
    # t=0 on each ring, by hand
    assert np.allclose([np.cos(0), np.sin(0), 0], [1, 0, 0])
    assert np.allclose([1 + np.cos(0), 0, np.sin(0)], [2, 0, 0])
    a, b = ds.points[ds.labels[0] == 0], ds.points[ds.labels[0] == 1]
    assert np.allclose(np.linalg.norm(a[:, :2], axis=1), 1.0)
    assert np.allclose(np.hypot(b[:, 0] - 1, b[:, 2]), 1.0)


def test_noise_free_rings_are_planar():
    ds = gen_entangled_rings(100, 0.0, make_rng(1))
    assert np.all(ds.points[ds.labels[0] == 0][:, 2] == 0)
    assert np.all(ds.points[ds.labels[0] == 1][:, 1] == 0)


def test_rings_are_linked_and_disjoint():
    # ring B crosses ring A's plane z=0 at (2,0,0) and (0,0,0); exactly one crossing
    # lies inside A's unit disc, which is what makes the pair linked
    t = np.linspace(0, 2 * np.pi, 20001)
    ring_b = np.stack([1 + np.cos(t), np.zeros_like(t), np.sin(t)], axis=1)
    crossings = np.flatnonzero(np.sign(ring_b[:-1, 2]) * np.sign(ring_b[1:, 2]) < 0)
    crossings = crossings[np.abs(ring_b[crossings, 2]) < 1e-3]
    inside = np.linalg.norm(ring_b[crossings, :2], axis=1) < 1
    plane_hits = ring_b[np.abs(ring_b[:, 2]) < 1e-12]
    assert len(plane_hits) >= 2
    assert inside.sum() == 1
    ring_a = np.stack([np.cos(t[::20]), np.sin(t[::20]), np.zeros(t[::20].size)], axis=1)
    gaps = np.linalg.norm(ring_a[:, None, :] - ring_b[None, ::20, :], axis=2)
    assert gaps.min() > 0.5


def test_rings_validation():
    with pytest.raises(ValueError):
        gen_entangled_rings(2, 0.0, make_rng(0))
    with pytest.raises(ValueError):
        gen_entangled_rings(10, -1.0, make_rng(0))


def test_torus_point_hand_value():
    assert torus_point(0.0, 0.0, 2.0, 1.0).tolist() == [3.0, 0.0, 0.0]


def test_torus_on_surface_and_refined():
    ds = gen_torus(500, 2.0, 1.0, 0.0, make_rng(3))
    x, y, z = ds.points.T
    assert np.all(np.abs((np.hypot(x, y) - 2.0) ** 2 + z**2 - 1.0) < 1e-9)
    assert ds.refines()
    assert np.all(ds.labels[0][ds.labels[1] == 3] == 1)
    assert np.all(ds.labels[1] // 2 == ds.labels[0])


def test_torus_label_balance():
    ds = gen_torus(1600, 2.0, 1.0, 0.001, make_rng(7))
    for level, k in ((0, 2), (1, 4)):
        frac = np.bincount(ds.labels[level], minlength=k) / 1600
        assert np.all(np.abs(frac - 1 / k) < 0.05)


def test_torus_validation():
    with pytest.raises(ValueError):
        gen_torus(10, 1.0, 1.0, 0.0, make_rng(0))


def test_generators_are_seeded():
    a = gen_torus(50, 2, 1, 0.001, make_rng(5))
    b = gen_torus(50, 2, 1, 0.001, make_rng(5))
    assert np.array_equal(a.points, b.points) and np.array_equal(a.split, b.split)


def test_split_is_80_20():
    ds = gen_entangled_rings(400, 1e-4, make_rng(0))
    assert (ds.split == "test").sum() == 160 and (ds.split == "train").sum() == 640


def test_dataset_shape_checks():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), [np.zeros(2)], "train")


# batching ----------------------------------------------------------------

def test_full_batch_is_permutation():
    (batch,) = make_batches(10, 10, make_rng(0))
    assert sorted(batch.tolist()) == list(range(10))


def test_singleton_batches():
    batches = make_batches(6, 1, make_rng(0))
    assert len(batches) == 6 and all(len(b) == 1 for b in batches)


def test_short_final_batch():
    assert [len(b) for b in make_batches(10, 3, make_rng(0))] == [3, 3, 3, 1]


@pytest.mark.parametrize("size", [0, 11])
def test_invalid_batch_size(size):
    with pytest.raises(ValueError):
        make_batches(10, size, make_rng(0))


# IDX ---------------------------------------------------------------------

def test_idx_header_count():
    blob = bytes.fromhex("00000803 0000EA60 0000001C 0000001C".replace(" ", ""))
    assert struct.unpack(">I", blob[4:8])[0] == 60000
    with pytest.raises(IdxFormatError) as exc:
        parse_idx_images(blob)
    assert exc.value.field == "pixels"


def _write_idx(tmp_path, images, labels):
    ip, lp = tmp_path / "img", tmp_path / "lab"
    ip.write_bytes(images_to_idx(images))
    lp.write_bytes(labels_to_idx(labels))
    return ip, lp


def test_idx_scaling_and_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    images[0, 0, 0], images[0, 0, 1] = 255, 0
    labels = np.array([0, 3, 9, 1, 4], dtype=np.uint8)
    ip, lp = _write_idx(tmp_path, images, labels)
    ds = load_mnist_idx(ip, lp)
    assert ds.points.shape == (5, 784)
    assert ds.points[0, 0] == 1.0 and ds.points[0, 1] == 0.0
    assert ds.labels[0].tolist() == labels.tolist()
    back_img = images_to_idx(np.rint(ds.points * 255).astype(np.uint8).reshape(5, 28, 28))
    assert back_img == ip.read_bytes()
    assert labels_to_idx(ds.labels[0]) == lp.read_bytes()


def test_idx_errors(tmp_path):
    images = np.zeros((2, 28, 28), dtype=np.uint8)
    ip, lp = _write_idx(tmp_path, images, np.array([1, 2], dtype=np.uint8))
    with pytest.raises(IdxFormatError) as exc:
        parse_idx_images(labels_to_idx(np.array([1], dtype=np.uint8)))
    assert exc.value.field == "magic"
    with pytest.raises(IdxFormatError) as exc:
        parse_idx_labels(labels_to_idx(np.array([1, 12], dtype=np.uint8)))
    assert exc.value.field == "labels"
    with pytest.raises(IdxFormatError) as exc:
        parse_idx_images(ip.read_bytes()[:-5])
    assert exc.value.field == "pixels"
    with pytest.raises(IdxFormatError) as exc:
        parse_idx_labels(b"\x00\x00")
    assert exc.value.field == "header"
    lp.write_bytes(labels_to_idx(np.array([1, 2, 3], dtype=np.uint8)))
    with pytest.raises(IdxFormatError) as exc:
        load_mnist_idx(ip, lp)
    assert exc.value.field == "count"


def test_csv_round_trip(tmp_path):
    ds = gen_torus(30, 2, 1, 0.001, make_rng(0))
    path = tmp_path / "t.csv"
    write_dataset_csv(ds, path)
    header = path.read_text().splitlines()[0]
    assert header == "x_0,x_1,x_2,label_0,label_1,split"
    back = read_dataset_csv(path)
    assert np.array_equal(back.points, ds.points)
    assert all(np.array_equal(a, b) for a, b in zip(back.labels, ds.labels))
    assert np.array_equal(back.split, ds.split)
