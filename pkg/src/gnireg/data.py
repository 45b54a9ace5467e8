"""Synthetic tasks, external ingestion (CSV / IDX), and batching."""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FormatError
from .linalg import RandomSource

DEFAULT_TONES = tuple(range(5, 51, 5))


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, d)
    targets: np.ndarray  # (N, m) float for regression, (N,) int for classification
    task: str  # "regression" | "classification"
    n_classes: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ArgumentError("inputs must be a non-empty (N, d) array")
        if self.task == "classification":
            self.targets = np.asarray(self.targets).astype(int).reshape(-1)
            if self.n_classes is None:
                self.n_classes = int(self.targets.max()) + 1
            if np.any(self.targets < 0) or np.any(self.targets >= self.n_classes):
                raise ArgumentError("class index out of range")
        else:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.ndim == 1:
                self.targets = self.targets[:, None]
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ArgumentError("inputs and targets disagree on N")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def loss_kind(self) -> str:
        return "cross_entropy" if self.task == "classification" else "mse"


def sinusoid_fn(freqs, phases):
    """z -> sum_i sin(2 pi r_i z + phi_i), vectorised."""
    freqs = np.asarray(freqs, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.float64)

    def fn(z):
        z = np.asarray(z, dtype=np.float64)
        return np.sin(2.0 * np.pi * np.outer(z, freqs) + phases).sum(axis=1)

    return fn


def gen_sinusoid(points: int, freqs=None, phases=None, z_range=(0.0, 1.0),
                 seed: int = 0) -> Dataset:
    """Multi-tone 1-D regression task.

    Inputs are uniform draws on z_range; targets sum unit-amplitude sines at
    `freqs` (default tones 5, 10, .., 50). `phases` may be a sequence, an int
    (a separate phase seed), or None to derive phases from `seed`. Phases are
    drawn once per dataset and recorded in meta.
    """
    if freqs is None:
        freqs = DEFAULT_TONES
    freqs = tuple(float(f) for f in freqs)
    if not freqs:
        raise ArgumentError("freqs must be non-empty")
    if phases is None or isinstance(phases, int):
        phase_seed = seed if phases is None else phases
        rs = RandomSource(phase_seed, (101,))
        phases = rs.uniform(len(freqs), 0.0, 2.0 * np.pi)
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != (len(freqs),):
        raise ArgumentError("phases must match freqs in length")
    z = RandomSource(seed, (102,)).uniform(int(points), z_range[0], z_range[1])
    y = sinusoid_fn(freqs, phases)(z)
    return Dataset(z[:, None], y[:, None], "regression",
                   meta={"freqs": list(freqs), "phases": phases.tolist(),
                         "z_range": list(z_range), "seed": seed})


def gen_blobs(classes: int, per_class: int, dim: int = 2, separation: float = 2.0,
              seed: int = 0, cluster_sigma: float = 1.0) -> Dataset:
    """Gaussian clusters with centres at radius `separation` on a circle."""
    if classes < 2:
        raise ArgumentError("need at least 2 classes")
    rs = RandomSource(seed, (103,))
    centers = np.zeros((classes, dim))
    angles = 2.0 * np.pi * np.arange(classes) / classes
    if dim == 1:
        centers[:, 0] = separation * (np.arange(classes) - (classes - 1) / 2.0)
    else:
        centers[:, 0] = separation * np.cos(angles)
        centers[:, 1] = separation * np.sin(angles)
    xs, ys = [], []
    for c in range(classes):
        xs.append(centers[c] + rs.normal((per_class, dim), cluster_sigma))
        ys.append(np.full(per_class, c))
    return Dataset(np.vstack(xs), np.concatenate(ys), "classification", classes,
                   meta={"separation": separation, "seed": seed,
                         "cluster_sigma": cluster_sigma})


def _parse_float(cell: str, line_no: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise FormatError(f"non-numeric value {cell!r} at line {line_no}") from None


def load_csv(path, target_cols=-1, task: str = "regression") -> Dataset:
    """Numeric CSV; `target_cols` picks target column index/indices (rest are inputs).

    A non-numeric first row is treated as a header. Ragged rows raise a format
    error naming the line.
    """
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        rows = [(i + 1, row) for i, row in enumerate(reader) if row]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = None
    first = rows[0][1]
    try:
        [float(c) for c in first]
    except ValueError:
        header = first
        rows = rows[1:]
        if not rows:
            raise FormatError(f"{path}: header only, no data rows")
    width = len(rows[0][1])
    data = np.empty((len(rows), width))
    for r, (line_no, row) in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"{path}: ragged row at line {line_no} ({len(row)} fields, expected {width})"
            )
        data[r] = [_parse_float(c, line_no) for c in row]
    cols = [target_cols] if isinstance(target_cols, int) else list(target_cols)
    cols = [c % width for c in cols]
    mask = np.zeros(width, dtype=bool)
    mask[cols] = True
    inputs, targets = data[:, ~mask], data[:, mask]
    meta = {"path": str(path), "header": header, "target_cols": cols}
    if task == "classification":
        return Dataset(inputs, targets[:, 0], "classification", meta=meta)
    return Dataset(inputs, targets, "regression", meta=meta)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, expect_magic: int, n_dims: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    head = 4 + 4 * n_dims
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expect_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at byte 0")
    dims = struct.unpack(f">{n_dims}i", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) != head + count:
        raise FormatError(
            f"{path}: payload length {len(raw) - head} at byte {head}, expected {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """IDX image/label pair; features are scaled to [0, 1] by dividing by 255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    n = images.shape[0]
    inputs = images.reshape(n, -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(int), "classification",
                   meta={"images": str(images_path), "labels": str(labels_path)})


def save_idx_images(path, images: np.ndarray):
    """Write a uint8 (N, rows, cols) array in IDX image format."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">i", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3i", *images.shape))
        fh.write(images.tobytes())


def save_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">i", IDX_LABELS_MAGIC))
        fh.write(struct.pack(">i", labels.shape[0]))
        fh.write(labels.tobytes())


def batches(ds: Dataset, size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded full-pass permutation split into index batches; short tail kept."""
    if size < 1:
        raise ArgumentError("batch size must be >= 1")
    perm = RandomSource(seed, (104, epoch)).permutation(ds.n)
    return [perm[i:i + size] for i in range(0, ds.n, size)]
