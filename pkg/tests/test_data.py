"""Dataset generators and loaders: margins, determinism, IDX/CSV round-trips."""

import struct

import numpy as np
import pytest

from advlab.data import (
    LINEAR_NORMAL,
    BlobSpec,
    Dataset,
    batch_iter,
    blob_centers,
    gen_blob_mixture,
    gen_gaussian_blobs,
    gen_linear_margin,
    load_csv,
    load_idx,
    split,
)
from advlab.errors import ConfigurationError, DataFormatError
from advlab.net import Network, accuracy, backward, forward, sgd_step


# ---------------------------------------------------------------- linear margin


def test_linear_margin_min_distance_is_exact():
    ds = gen_linear_margin(400, margin=1.75, seed=0)
    # brute-force distance scan against the stored hyperplane
    w = np.array(ds.meta["normal"])
    dist = np.abs(ds.x @ w - ds.meta["offset"])
    assert dist.min() >= 1.75 - 1e-9
    assert abs(dist.min() - 1.75) < 1e-9


def test_linear_margin_sides_match_labels():
    ds = gen_linear_margin(100, margin=1.75, seed=3)
    signed = ds.x @ LINEAR_NORMAL
    assert np.all((signed > 0) == (ds.labels == 1))


def test_linear_margin_deterministic():
    a = gen_linear_margin(50, 1.75, seed=9)
    b = gen_linear_margin(50, 1.75, seed=9)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.labels, b.labels)


def test_linear_margin_is_linearly_separable_by_training():
    # a standard-trained linear classifier reaches 100% train accuracy
    ds = gen_linear_margin(100, margin=1.75, seed=1)
    net = Network([np.zeros((2, 2))], [np.zeros(2)], ["identity"])
    onehot = np.eye(2)[ds.labels]
    for _ in range(200):
        tr = forward(net, ds.x)
        net, _ = sgd_step(net, backward(net, tr, onehot, "ce"), lr=0.5)
    assert accuracy(net, ds.x, ds.labels) == 1.0


def test_linear_margin_rejects_bad_margin():
    with pytest.raises(ConfigurationError):
        gen_linear_margin(10, margin=0.0, seed=0)
    with pytest.raises(ConfigurationError):
        gen_linear_margin(10, margin=100.0, seed=0)  # larger than the box diagonal


def test_linear_margin_counts_balanced():
    ds = gen_linear_margin(37, 1.75, seed=5)
    assert ds.n == 74
    assert int((ds.labels == 0).sum()) == 37


# ---------------------------------------------------------------- blobs


def test_blobs_sigma_small_points_near_centers():
    centers = blob_centers(2, 3, separation=2.0)
    ds = gen_gaussian_blobs(20, 2, 3, centers, sigma=1e-12, seed=0)
    for k in range(2):
        pts = ds.x[ds.labels == k]
        assert np.allclose(pts, centers[k], atol=1e-9)


def test_blobs_deterministic():
    centers = blob_centers(3, 4, separation=1.0)
    a = gen_gaussian_blobs(10, 3, 4, centers, 0.5, seed=2)
    b = gen_gaussian_blobs(10, 3, 4, centers, 0.5, seed=2)
    assert np.array_equal(a.x, b.x)


def test_blobs_well_separated_nearest_center_perfect():
    # pairwise center distance > 10 sigma: nearest-center classification is exact
    sigma = 0.05
    centers = blob_centers(2, 5, separation=20 * sigma)
    ds = gen_gaussian_blobs(200, 2, 5, centers, sigma, seed=7)
    d2 = ((ds.x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(np.argmin(d2, axis=1), ds.labels)


def test_blobs_reject_bad_args():
    centers = blob_centers(2, 3, 1.0)
    with pytest.raises(ConfigurationError):
        gen_gaussian_blobs(5, 2, 3, centers, sigma=0.0, seed=0)
    with pytest.raises(ConfigurationError):
        gen_gaussian_blobs(5, 3, 3, centers, sigma=1.0, seed=0)  # wrong center count


# ---------------------------------------------------------------- mixtures


def test_mixture_counts_labels_and_anisotropy():
    comps = [
        BlobSpec(0, 50, np.array([-1.0, 0.0]), np.array([1e-12, 1e-12])),
        BlobSpec(0, 30, np.array([-3.0, 0.0]), np.array([1e-12, 1e-12])),
        BlobSpec(1, 80, np.array([1.0, 0.0]), np.array([0.01, 2.0])),
    ]
    ds = gen_blob_mixture(comps, num_classes=2, seed=5)
    assert ds.n == 160 and ds.num_classes == 2
    assert (ds.labels == 0).sum() == 80 and (ds.labels == 1).sum() == 80
    # degenerate-scale components sit on their centers
    assert np.allclose(ds.x[:50], [-1.0, 0.0], atol=1e-9)
    assert np.allclose(ds.x[50:80], [-3.0, 0.0], atol=1e-9)
    # anisotropic component: tight on axis 0, wide on axis 1
    wide = ds.x[80:]
    assert wide[:, 0].std() < 0.1 < wide[:, 1].std()


def test_mixture_component_streams_independent():
    # growing one component must not reshuffle another's draw
    a = gen_blob_mixture(
        [BlobSpec(0, 10, np.zeros(2), np.ones(2)), BlobSpec(1, 10, np.zeros(2), np.ones(2))],
        num_classes=2, seed=3)
    b = gen_blob_mixture(
        [BlobSpec(0, 25, np.zeros(2), np.ones(2)), BlobSpec(1, 10, np.zeros(2), np.ones(2))],
        num_classes=2, seed=3)
    assert np.array_equal(a.x[10:20], b.x[25:35])
    assert np.array_equal(a.x[:10], b.x[:10])


def test_mixture_deterministic_and_meta():
    comps = [BlobSpec(1, 8, np.array([0.5, -0.5, 0.0]), np.array([0.1, 0.2, 0.3]))]
    a = gen_blob_mixture(comps, num_classes=2, seed=9)
    b = gen_blob_mixture(comps, num_classes=2, seed=9)
    assert np.array_equal(a.x, b.x)
    assert a.meta["kind"] == "mixture"
    assert a.meta["components"][0]["scale"] == [0.1, 0.2, 0.3]


def test_mixture_rejects_bad_specs():
    ok = BlobSpec(0, 5, np.zeros(2), np.ones(2))
    with pytest.raises(ConfigurationError):
        gen_blob_mixture([], num_classes=2, seed=0)
    with pytest.raises(ConfigurationError):
        gen_blob_mixture([BlobSpec(2, 5, np.zeros(2), np.ones(2))], num_classes=2, seed=0)
    with pytest.raises(ConfigurationError):
        gen_blob_mixture([BlobSpec(0, 5, np.zeros(2), np.array([1.0, 0.0]))], num_classes=2, seed=0)
    with pytest.raises(ConfigurationError):
        gen_blob_mixture([ok, BlobSpec(1, 5, np.zeros(3), np.ones(3))], num_classes=2, seed=0)
    with pytest.raises(ConfigurationError):
        gen_blob_mixture([BlobSpec(0, 0, np.zeros(2), np.ones(2))], num_classes=2, seed=0)


# ---------------------------------------------------------------- idx


def write_idx_pair(tmp_path, images, labels):
    n, rows, cols = images.shape
    ip = tmp_path / "imgs.idx"
    lp = tmp_path / "lbls.idx"
    ip.write_bytes(struct.pack(">IIII", 0x803, n, rows, cols) + images.tobytes())
    lp.write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())
    return str(ip), str(lp)


def test_load_idx_fixture(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1], dtype=np.uint8)
    ip, lp = write_idx_pair(tmp_path, images, labels)
    ds = load_idx(ip, lp)
    assert ds.n == 4 and ds.dim == 784
    assert list(ds.labels) == [0, 1, 2, 1]
    assert np.array_equal(ds.domain_lo, np.zeros(784))
    assert np.array_equal(ds.domain_hi, np.ones(784))


def test_load_idx_pixel_scaling(tmp_path):
    images = np.zeros((1, 2, 2), dtype=np.uint8)
    images[0, 0, 0] = 255
    ip, lp = write_idx_pair(tmp_path, images, np.array([0], dtype=np.uint8))
    ds = load_idx(ip, lp, num_classes=2)
    assert ds.x[0, 0] == 1.0
    assert ds.x[0, 1] == 0.0


def test_load_idx_truncated(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    ip, lp = write_idx_pair(tmp_path, images, np.array([0, 1], dtype=np.uint8))
    data = open(ip, "rb").read()
    open(ip, "wb").write(data[:-5])
    with pytest.raises(DataFormatError):
        load_idx(ip, lp)


def test_load_idx_bad_magic(tmp_path):
    ip = tmp_path / "bad.idx"
    ip.write_bytes(struct.pack(">IIII", 0x999, 1, 2, 2) + b"\x00" * 4)
    lp = tmp_path / "l.idx"
    lp.write_bytes(struct.pack(">II", 0x801, 1) + b"\x00")
    with pytest.raises(DataFormatError):
        load_idx(str(ip), str(lp))


def test_load_idx_count_mismatch(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    ip, _ = write_idx_pair(tmp_path, images, np.zeros(3, dtype=np.uint8))
    lp = tmp_path / "short.idx"
    lp.write_bytes(struct.pack(">II", 0x801, 2) + b"\x00\x01")
    with pytest.raises(DataFormatError):
        load_idx(ip, str(lp))


# ---------------------------------------------------------------- csv


def test_load_csv_roundtrip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,f0,f1\n0,1.5,-2.0\n1,0.25,3.5\n")
    ds = load_csv(str(p))
    assert ds.n == 2 and ds.dim == 2 and ds.num_classes == 2
    assert np.allclose(ds.x, [[1.5, -2.0], [0.25, 3.5]])
    assert ds.domain_lo is None


def test_load_csv_bad_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("class,a,b\n0,1,2\n")
    with pytest.raises(DataFormatError):
        load_csv(str(p))


def test_load_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,f0,f1\n0,1.0\n")
    with pytest.raises(DataFormatError):
        load_csv(str(p))


# ---------------------------------------------------------------- split / batches


def test_split_sizes_and_id_union():
    ds = gen_linear_margin(5, 1.0, seed=0)  # n = 10
    tr, te = split(ds, 0.5, seed=1)
    assert tr.n == 5 and te.n == 5
    assert tr.split == "train" and te.split == "test"
    assert sorted(np.concatenate([tr.ids, te.ids]).tolist()) == sorted(ds.ids.tolist())


def test_split_deterministic():
    ds = gen_linear_margin(20, 1.0, seed=0)
    a1, b1 = split(ds, 0.7, seed=4)
    a2, b2 = split(ds, 0.7, seed=4)
    assert np.array_equal(a1.ids, a2.ids)
    assert np.array_equal(b1.x, b2.x)


def test_split_rejects_bad_fraction():
    ds = gen_linear_margin(5, 1.0, seed=0)
    for frac in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigurationError):
            split(ds, frac, seed=0)


def test_batch_iter_single_batch_when_size_is_n():
    ds = gen_linear_margin(5, 1.0, seed=0)
    batches = list(batch_iter(ds, ds.n, epoch_seed=0))
    assert len(batches) == 1
    assert batches[0].x.shape == (10, 2)


def test_batch_iter_covers_every_sample_once():
    ds = gen_linear_margin(13, 1.0, seed=0)  # n = 26, ragged last batch
    batches = list(batch_iter(ds, 8, epoch_seed=3))
    seen = np.concatenate([b.ids for b in batches])
    assert sorted(seen.tolist()) == sorted(ds.ids.tolist())
    assert sum(len(b.x) for b in batches) == ds.n


def test_batch_iter_epoch_seeds_reorder_same_multiset():
    ds = gen_linear_margin(16, 1.0, seed=0)
    o1 = np.concatenate([b.ids for b in batch_iter(ds, 8, epoch_seed=1)])
    o2 = np.concatenate([b.ids for b in batch_iter(ds, 8, epoch_seed=2)])
    assert not np.array_equal(o1, o2)
    assert sorted(o1.tolist()) == sorted(o2.tolist())


# ---------------------------------------------------------------- dataset validation


def test_dataset_rejects_bad_labels():
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), np.array([0, 1]), num_classes=2)


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((2, 2)), np.array([0, 1]), np.array([3, 3]), num_classes=2)


def test_dataset_rejects_out_of_domain():
    with pytest.raises(DataFormatError):
        Dataset(np.array([[2.0, 0.0]]), np.array([0]), np.array([0]), num_classes=2,
                domain_lo=np.zeros(2), domain_hi=np.ones(2))
