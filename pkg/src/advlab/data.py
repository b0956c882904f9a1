"""Synthetic dataset generators and small-file loaders.

Two generators cover the reproducible experiments: a linearly separable
two-class set with a known exact margin, and Gaussian blobs as the desk-scale
stand-in for image-data trends. Loaders handle IDX (the MNIST container
format) and a plain CSV layout. Datasets are immutable after construction
and fully determined by their arguments, seed included.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .streams import stream


class Sample(NamedTuple):
    x: np.ndarray
    y: int
    id: int


class Batch(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    index: int


@dataclass
class Dataset:
    """Fixed-order collection of samples with optional per-coordinate bounds.

    ``ids`` are stable integer handles (the epsilon ledger is keyed by them);
    they survive splits and shuffles. ``domain_lo``/``domain_hi`` are (d,)
    arrays when the domain is bounded (images: [0,1]) and None otherwise.
    """

    x: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    num_classes: int
    domain_lo: np.ndarray | None = None
    domain_hi: np.ndarray | None = None
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.ids = np.asarray(self.ids, dtype=int)
        if self.x.ndim != 2 or len(self.labels) != len(self.x) or len(self.ids) != len(self.x):
            raise DataFormatError("x/labels/ids lengths disagree")
        if not np.isfinite(self.x).all():
            raise DataFormatError("non-finite feature values")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError("label outside [0, num_classes)")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataFormatError("duplicate sample ids")
        if (self.domain_lo is None) != (self.domain_hi is None):
            raise DataFormatError("domain bounds must be given together")
        if self.domain_lo is not None:
            self.domain_lo = np.asarray(self.domain_lo, dtype=float)
            self.domain_hi = np.asarray(self.domain_hi, dtype=float)
            if self.domain_lo.shape != (self.dim,) or self.domain_hi.shape != (self.dim,):
                raise DataFormatError("domain bounds must be (d,) arrays")
            if np.any(self.x < self.domain_lo) or np.any(self.x > self.domain_hi):
                raise DataFormatError("sample outside domain bounds")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(self.x[i], int(self.labels[i]), int(self.ids[i]))

    def take(self, indices: np.ndarray, split: str | None = None) -> "Dataset":
        return Dataset(
            self.x[indices].copy(),
            self.labels[indices].copy(),
            self.ids[indices].copy(),
            self.num_classes,
            None if self.domain_lo is None else self.domain_lo.copy(),
            None if self.domain_hi is None else self.domain_hi.copy(),
            self.split if split is None else split,
            dict(self.meta),
        )


# ------------------------------------------------------------------ generators

# Ground-truth boundary for the linear-margin set: through the origin with
# this fixed unit normal. Class 1 on the positive side.
LINEAR_NORMAL = np.array([1.0, 1.0]) / np.sqrt(2.0)
LINEAR_BOX_HALF = 8.0


def gen_linear_margin(
    n_per_class: int, margin: float, seed: int, box_half: float = LINEAR_BOX_HALF
) -> Dataset:
    """Two linearly separable classes in the plane with an exact known margin.

    Points are drawn uniformly in [-box_half, box_half]^2 and rejected while
    their distance to the ground-truth hyperplane is below ``margin``; the
    closest surviving point of each class is then projected onto the margin
    line so the dataset's true margin equals ``margin`` exactly.
    """
    if margin <= 0:
        raise ConfigurationError("margin must be positive")
    if margin >= box_half * np.sqrt(2.0):
        raise ConfigurationError("margin leaves no room inside the sampling box")
    rng = stream(seed, "linear-margin")
    xs = {0: [], 1: []}
    while len(xs[0]) < n_per_class or len(xs[1]) < n_per_class:
        pts = rng.uniform(-box_half, box_half, size=(4 * n_per_class, 2))
        signed = pts @ LINEAR_NORMAL
        for p, s in zip(pts, signed):
            cls = 1 if s > 0 else 0
            if abs(s) >= margin and len(xs[cls]) < n_per_class:
                xs[cls].append(p)
    x = np.array(xs[0] + xs[1])
    labels = np.array([0] * n_per_class + [1] * n_per_class)

    # anchor the closest point of each class exactly onto the margin line
    signed = x @ LINEAR_NORMAL
    for cls, sign in ((0, -1.0), (1, +1.0)):
        idx = np.where(labels == cls)[0]
        i = idx[np.argmin(np.abs(signed[idx]))]
        x[i] = x[i] + (sign * margin - signed[i]) * LINEAR_NORMAL

    dist = np.abs(x @ LINEAR_NORMAL)
    if dist.min() < margin - 1e-9:
        raise DataFormatError("generated point inside the margin band")
    return Dataset(
        x, labels, np.arange(len(x)), num_classes=2,
        meta={
            "kind": "linear-margin",
            "normal": LINEAR_NORMAL.tolist(),
            "offset": 0.0,
            "margin": float(margin),
            "box_half": float(box_half),
            "true_min_distance": float(dist.min()),
        },
    )


def blob_centers(num_classes: int, d: int, separation: float) -> np.ndarray:
    """Canonical blob centers: K=2 mirrored along the all-ones direction,
    otherwise evenly spaced on the first axis."""
    if num_classes == 2:
        u = np.ones(d) / np.sqrt(d)
        return np.stack([-0.5 * separation * u, 0.5 * separation * u])
    centers = np.zeros((num_classes, d))
    centers[:, 0] = (np.arange(num_classes) - (num_classes - 1) / 2) * separation
    return centers


def gen_gaussian_blobs(
    n_per_class: int,
    num_classes: int,
    d: int,
    centers: np.ndarray,
    sigma: float,
    seed: int,
) -> Dataset:
    """Seed-deterministic isotropic Gaussian clusters, one per class."""
    centers = np.asarray(centers, dtype=float)
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    if centers.shape != (num_classes, d):
        raise ConfigurationError(f"need {num_classes} centers of dim {d}, got {centers.shape}")
    xs, labels = [], []
    for k in range(num_classes):
        rng = stream(seed, "blobs", k)
        xs.append(centers[k] + sigma * rng.normal(size=(n_per_class, d)))
        labels.append(np.full(n_per_class, k))
    return Dataset(
        np.concatenate(xs), np.concatenate(labels), np.arange(n_per_class * num_classes),
        num_classes=num_classes,
        meta={"kind": "blobs", "sigma": float(sigma), "centers": centers.tolist()},
    )


class BlobSpec(NamedTuple):
    """One mixture component: ``n`` points of class ``label`` drawn around
    ``center`` with per-coordinate standard deviations ``scale``."""

    label: int
    n: int
    center: np.ndarray
    scale: np.ndarray


def gen_blob_mixture(components: list[BlobSpec], num_classes: int, seed: int) -> Dataset:
    """Gaussian mixture with per-component counts, centers, and axis scales.

    Generalizes ``gen_gaussian_blobs``: a class may own several components,
    and each component may be anisotropic. Component i draws from its own
    substream, so editing one component's count never reshuffles the points
    of the others.
    """
    if not components:
        raise ConfigurationError("mixture needs at least one component")
    d = len(np.asarray(components[0].center, dtype=float))
    xs, labels = [], []
    for i, comp in enumerate(components):
        center = np.asarray(comp.center, dtype=float)
        scale = np.asarray(comp.scale, dtype=float)
        if center.shape != (d,) or scale.shape != (d,):
            raise ConfigurationError(f"component {i}: center/scale must be ({d},) arrays")
        if np.any(scale <= 0):
            raise ConfigurationError(f"component {i}: scales must be positive")
        if not 0 <= comp.label < num_classes:
            raise ConfigurationError(f"component {i}: label {comp.label} outside [0, {num_classes})")
        if comp.n < 0:
            raise ConfigurationError(f"component {i}: negative count")
        rng = stream(seed, "mixture", i)
        xs.append(center + scale * rng.normal(size=(comp.n, d)))
        labels.append(np.full(comp.n, comp.label))
    x = np.concatenate(xs)
    if not len(x):
        raise ConfigurationError("mixture is empty")
    return Dataset(
        x, np.concatenate(labels), np.arange(len(x)), num_classes=num_classes,
        meta={
            "kind": "mixture",
            "components": [
                {"label": int(c.label), "n": int(c.n),
                 "center": np.asarray(c.center, dtype=float).tolist(),
                 "scale": np.asarray(c.scale, dtype=float).tolist()}
                for c in components
            ],
        },
    )


# ------------------------------------------------------------------ loaders

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx_images(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise DataFormatError(f"cannot read IDX images {path}: {e}") from e
    if len(buf) < 16:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad images magic 0x{magic:08x}")
    expected = 16 + n * rows * cols
    if len(buf) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(buf)}")
    raw = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return raw.reshape(n, rows * cols).astype(float) / 255.0


def _read_idx_labels(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise DataFormatError(f"cannot read IDX labels {path}: {e}") from e
    if len(buf) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad labels magic 0x{magic:08x}")
    if len(buf) != 8 + n:
        raise DataFormatError(f"{path}: expected {8 + n} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(int)


def load_idx(images_path: str, labels_path: str, num_classes: int | None = None) -> Dataset:
    """Load an IDX image/label file pair; pixels scaled to [0,1], domain [0,1]."""
    x = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(x) != len(labels):
        raise DataFormatError(f"{len(x)} images but {len(labels)} labels")
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    d = x.shape[1]
    return Dataset(
        x, labels, np.arange(len(x)), num_classes=k,
        domain_lo=np.zeros(d), domain_hi=np.ones(d),
        meta={"kind": "idx", "images_path": images_path, "labels_path": labels_path},
    )


def load_csv(path: str, num_classes: int | None = None) -> Dataset:
    """Load `label,f0,f1,...` rows; no domain bounds are assumed."""
    try:
        f = open(path, newline="")
    except OSError as e:
        raise DataFormatError(f"cannot read CSV {path}: {e}") from e
    with f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        expected = ["label"] + [f"f{i}" for i in range(len(header) - 1)]
        if [h.strip() for h in header] != expected:
            raise DataFormatError(f"{path}: header must be label,f0,f1,... got {header}")
        d = len(header) - 1
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    labels = np.array(labels)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(np.array(rows), labels, np.arange(len(rows)), num_classes=k,
                   meta={"kind": "csv", "path": path})


# ------------------------------------------------------------------ reshuffling


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; ids are preserved, not renumbered."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigurationError(f"train_fraction {train_fraction} outside (0, 1)")
    perm = stream(seed, "split").permutation(dataset.n)
    n_train = int(np.floor(dataset.n * train_fraction))
    return (
        dataset.take(perm[:n_train], split="train"),
        dataset.take(perm[n_train:], split="test"),
    )


def batch_iter(dataset: Dataset, batch_size: int, epoch_seed: int) -> Iterator[Batch]:
    """Yield every sample exactly once in a deterministic per-epoch order."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    perm = stream(epoch_seed, "batch-order").permutation(dataset.n)
    for bi, start in enumerate(range(0, dataset.n, batch_size)):
        idx = perm[start:start + batch_size]
        yield Batch(dataset.x[idx], dataset.labels[idx], dataset.ids[idx], bi)
