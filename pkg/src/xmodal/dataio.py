"""Feature sets, the XMF1 binary format, pooling, synthetic data and splits.

Samples are held in memory as float64 matrices of shape ``(L_i, d)``.  The
on-disk format stores binary32, so a set survives ``save``/``load``
bit-exactly whenever its values are binary32-representable (true for every
set that was itself loaded from disk).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    ClassTooSmall,
    DataError,
    DimMismatch,
    IndexOutOfRange,
    InvalidConfig,
    IoFailure,
    NonFinite,
    TruncatedFile,
)

MAGIC = b"XMF1"
_HEADER = struct.Struct("<4sIII")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """One modality: ``M`` frame matrices of shape ``(L_i, d)`` plus labels."""

    samples: tuple
    labels: np.ndarray

    def __post_init__(self):
        samples = tuple(_frozen(np.array(s, dtype=np.float64, ndmin=2)) for s in self.samples)
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or len(labels) != len(samples) or len(samples) < 1:
            raise DataError(
                f"need M >= 1 samples and one label each, got {len(samples)} samples, "
                f"{labels.size} labels"
            )
        if not np.all(np.mod(labels, 1) == 0) or labels.min() < 0:
            raise DataError("labels must be non-negative integers")
        dims = {s.shape[1] for s in samples}
        if len(dims) != 1:
            raise DimMismatch(f"samples disagree on feature dim: {sorted(dims)}")
        if any(s.shape[0] < 1 for s in samples) or dims == {0}:
            raise DataError("every sample needs L >= 1 frames and d >= 1")
        for i, s in enumerate(samples):
            if not np.all(np.isfinite(s)):
                raise NonFinite(f"sample {i} contains NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

    @classmethod
    def from_matrix(cls, X, labels) -> "FeatureSet":
        """Pooled set from an ``M x d`` matrix."""
        X = np.asarray(X, dtype=np.float64)
        return cls(tuple(row[None, :] for row in X), labels)

    @property
    def M(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples[0].shape[1]

    @property
    def frames(self) -> list[int]:
        return [s.shape[0] for s in self.samples]

    @property
    def pooled(self) -> bool:
        return all(s.shape[0] == 1 for s in self.samples)

    def matrix(self) -> np.ndarray:
        """``M x d`` matrix; only defined for pooled sets."""
        if not self.pooled:
            raise DataError("set is not pooled; call mean_pool first")
        return np.vstack(self.samples)

    def subset(self, indices: Sequence[int]) -> "FeatureSet":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.M):
            raise IndexOutOfRange(f"index out of range for M={self.M}")
        return FeatureSet(tuple(self.samples[i] for i in idx), self.labels[idx])

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.M == other.M
            and np.array_equal(self.labels, other.labels)
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in zip(self.samples, other.samples)
            )
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PairedDataset:
    """Two aligned views; sample ``i`` of ``a`` is the true match of sample ``i`` of ``b``."""

    a: FeatureSet
    b: FeatureSet

    def __post_init__(self):
        if self.a.M != self.b.M:
            raise DataError(f"views disagree on M: {self.a.M} vs {self.b.M}")
        if not np.array_equal(self.a.labels, self.b.labels):
            raise DataError("views disagree on labels")

    @property
    def labels(self) -> np.ndarray:
        return self.a.labels

    @property
    def M(self) -> int:
        return self.a.M

    def subset(self, indices) -> "PairedDataset":
        return PairedDataset(self.a.subset(indices), self.b.subset(indices))

    def pooled(self) -> "PairedDataset":
        return PairedDataset(mean_pool(self.a), mean_pool(self.b))

    def __eq__(self, other):
        if not isinstance(other, PairedDataset):
            return NotImplemented
        return self.a == other.a and self.b == other.b

    __hash__ = None


# --------------------------------------------------------------------------
# XMF1 files


def save_feature_file(fs: FeatureSet, path) -> None:
    if not path or not str(path).strip():
        raise IoFailure("empty output path")
    lengths = fs.frames
    uniform = lengths[0] if len(set(lengths)) == 1 else 0
    parts = [_HEADER.pack(MAGIC, fs.M, fs.dim, uniform)]
    for s in fs.samples:
        if not uniform:
            parts.append(struct.pack("<I", s.shape[0]))
        parts.append(s.astype("<f4").tobytes())
    parts.append(fs.labels.astype("<u4").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_feature_file(path) -> FeatureSet:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if buf[:4] != MAGIC:
        raise BadMagic(f"{path}: not an XMF1 file (magic {buf[:4]!r})")
    if len(buf) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, M, d, L = _HEADER.unpack_from(buf, 0)
    if M < 1 or d < 1:
        raise DataError(f"{path}: header declares M={M}, d={d}")
    off = _HEADER.size
    samples = []
    for i in range(M):
        n_frames = L
        if L == 0:
            if off + 4 > len(buf):
                raise TruncatedFile(f"{path}: payload ends before sample {i}")
            (n_frames,) = struct.unpack_from("<I", buf, off)
            off += 4
        nbytes = 4 * n_frames * d
        if off + nbytes > len(buf):
            raise TruncatedFile(f"{path}: payload ends inside sample {i} of {M}")
        frames = np.frombuffer(buf, dtype="<f4", count=n_frames * d, offset=off)
        samples.append(frames.reshape(n_frames, d).astype(np.float64))
        off += nbytes
    if off + 4 * M > len(buf):
        raise TruncatedFile(f"{path}: label block truncated")
    labels = np.frombuffer(buf, dtype="<u4", count=M, offset=off).astype(np.int64)
    off += 4 * M
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes after label block")
    for i, s in enumerate(samples):
        if not np.all(np.isfinite(s)):
            raise NonFinite(f"{path}: sample {i} contains NaN or Inf")
    return FeatureSet(tuple(samples), labels)


def load_csv(path) -> FeatureSet:
    """Pooled rows, one per line, label in the last column."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no rows")
    try:
        values = np.array([[float(c) for c in r[:-1]] for r in rows])
        labels = np.array([int(r[-1]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if values.ndim != 2:
        raise DimMismatch(f"{path}: rows have differing column counts")
    return FeatureSet.from_matrix(values, labels)


def load_features(path, fmt: str = "xmf") -> FeatureSet:
    if fmt == "xmf":
        return load_feature_file(path)
    if fmt == "csv":
        return load_csv(path)
    raise InvalidConfig(f"unknown feature format {fmt!r}")


# --------------------------------------------------------------------------
# transforms


def mean_pool(fs: FeatureSet) -> FeatureSet:
    """Average each sample over its frames."""
    if fs.pooled:
        return fs
    return FeatureSet(tuple(s.mean(axis=0, keepdims=True) for s in fs.samples), fs.labels)


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 4
    per_class: int = 50
    dimA: int = 128
    dimB: int = 1024
    latent_dim: int = 10
    noise_sigma: float = 0.5
    frames: int = 1
    center_spread: float = 1.0
    instance_sigma: float = 1.0
    frame_jitter: float = 0.1

    def validate(self) -> None:
        if self.classes < 2:
            raise InvalidConfig("classes must be >= 2")
        if self.per_class < 2:
            raise InvalidConfig("per_class must be >= 2")
        if min(self.dimA, self.dimB, self.latent_dim) < 1:
            raise InvalidConfig("dimensions must be >= 1")
        if self.latent_dim > min(self.dimA, self.dimB):
            raise InvalidConfig("latent_dim must not exceed min(dimA, dimB)")
        if self.noise_sigma < 0 or self.instance_sigma < 0 or self.frame_jitter < 0:
            raise InvalidConfig("noise scales must be >= 0")
        if self.frames < 1:
            raise InvalidConfig("frames must be >= 1")


def generate_synthetic(cfg: SynthConfig, seed: int) -> PairedDataset:
    """Shared-latent linear-Gaussian paired data.

    Each class gets a latent center; an instance draws ``z = center + e`` and
    the views are ``A z + noise`` and ``B z + noise`` for fixed random maps.
    With ``frames > 1`` every sample is that vector plus zero-mean jitter, so
    mean pooling recovers it.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=cfg.center_spread, size=(cfg.classes, cfg.latent_dim))
    map_a = rng.normal(size=(cfg.dimA, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    map_b = rng.normal(size=(cfg.dimB, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    labels = np.repeat(np.arange(cfg.classes), cfg.per_class)
    M = labels.size
    z = centers[labels] + rng.normal(scale=cfg.instance_sigma, size=(M, cfg.latent_dim))
    xa = z @ map_a.T + rng.normal(scale=cfg.noise_sigma, size=(M, cfg.dimA))
    xb = z @ map_b.T + rng.normal(scale=cfg.noise_sigma, size=(M, cfg.dimB))
    return PairedDataset(_with_frames(xa, labels, cfg, rng), _with_frames(xb, labels, cfg, rng))


def _with_frames(X, labels, cfg: SynthConfig, rng) -> FeatureSet:
    if cfg.frames == 1:
        return FeatureSet.from_matrix(X, labels)
    samples = []
    for row in X:
        jitter = rng.normal(scale=cfg.frame_jitter, size=(cfg.frames, X.shape[1]))
        samples.append(row + (jitter - jitter.mean(axis=0)))
    return FeatureSet(tuple(samples), labels)


def split(ds: PairedDataset, train_fraction: float, seed: int):
    """Stratified train/test split; both parts keep ascending sample order."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidConfig(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < 2:
            raise ClassTooSmall(f"class {c} has {idx.size} sample(s); need >= 2")
        idx = rng.permutation(idx)
        n_train = min(max(int(round(train_fraction * idx.size)), 1), idx.size - 1)
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    return ds.subset(np.sort(train)), ds.subset(np.sort(test))
