"""Datasets: synthetic generators and IDX / CSV readers."""

import csv
import gzip
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import DatasetError, FormatError
from .rng import make_rng

_IDX_DTYPES = {0x08: (">u1", 1), 0x09: (">i1", 1), 0x0B: (">i2", 2), 0x0C: (">i4", 4),
               0x0D: (">f4", 4), 0x0E: (">f8", 8)}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DatasetError(f"inputs must be a non-empty [N, n] array, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise DatasetError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if y.min() < 0:
            raise DatasetError("labels must be non-negative")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    def standardized(self, mean=None, std=None):
        """Per-feature z-scoring; pass training stats to transform a test split."""
        mean = self.inputs.mean(axis=0) if mean is None else np.asarray(mean)
        std = self.inputs.std(axis=0) if std is None else np.asarray(std)
        safe = np.where(std > 0, std, 1.0)
        return replace(self, inputs=(self.inputs - mean) / safe, mean=mean, std=std)

    def swapped_labels(self):
        """Binary datasets only: relabel 0 <-> 1."""
        return replace(self, labels=1 - self.labels)


def gen_two_clusters(seed, n_per_cluster=100, centers=((2.0, 2.0), (-2.0, -2.0)), std=0.5,
                     stream="clusters"):
    """Two isotropic Gaussian clouds labelled 0 (first center) and 1."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] != 2 or np.allclose(centers[0], centers[1]):
        raise DatasetError("need two distinct centers")
    if std < 0:
        raise DatasetError("std must be non-negative")
    rng = make_rng(seed, stream)
    noise = rng.standard_normal((2, n_per_cluster, centers.shape[1])) * std
    x = np.concatenate([centers[0] + noise[0], centers[1] + noise[1]])
    y = np.repeat([0, 1], n_per_cluster)
    return Dataset(x, y)


def gen_rings(seed, n_per_ring=100, radii=(1.0, 2.0), noise=0.15, stream="rings"):
    """Concentric noisy circles in R^2, one class per ring."""
    rng = make_rng(seed, stream)
    xs, ys = [], []
    for label, r in enumerate(radii):
        theta = rng.uniform(0.0, 2 * np.pi, n_per_ring)
        rad = r + noise * rng.standard_normal(n_per_ring)
        xs.append(np.stack([rad * np.cos(theta), rad * np.sin(theta)], axis=1))
        ys.append(np.full(n_per_ring, label))
    return Dataset(np.concatenate(xs), np.concatenate(ys))


def _open(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path):
    """Parse an IDX file into an ndarray of its declared type and shape.

    Header: two zero bytes, a type code, the number of dimensions, then one
    big-endian uint32 per dimension.
    """
    raw = _open(path)
    if len(raw) < 4:
        raise FormatError("IDX header truncated", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic: first two bytes must be zero", offset=0)
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise FormatError(f"unknown IDX type code 0x{code:02x}", offset=2)
    if ndim < 1:
        raise FormatError("IDX file declares zero dimensions", offset=3)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError("IDX dimension header truncated", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype, width = _IDX_DTYPES[code]
    expected = int(np.prod(dims)) * width
    body = raw[header_end:]
    if len(body) != expected:
        raise FormatError(
            f"IDX payload has {len(body)} bytes, dims {dims} need {expected}",
            offset=header_end + min(len(body), expected),
        )
    return np.frombuffer(body, dtype=dtype).reshape(dims)


def load_idx(images_path, labels_path, standardize=False):
    """Images flattened to rows and scaled from bytes to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.dtype != np.uint8:
        raise FormatError("IDX images must be unsigned bytes", offset=2)
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise FormatError(
            f"label file holds {labels.shape} but there are {images.shape[0]} images", offset=4
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    ds = Dataset(x, labels.astype(np.int64))
    return ds.standardized() if standardize else ds


def load_csv(path, standardize=False):
    """Rows of ``label,feature_1,...,feature_n``; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or widths.pop() < 2:
        raise DatasetError(f"{path}: rows must all have a label and the same number of features")
    try:
        arr = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    labels = arr[:, 0]
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise DatasetError(f"{path}: labels must be non-negative integers")
    ds = Dataset(arr[:, 1:], labels.astype(np.int64))
    return ds.standardized() if standardize else ds
