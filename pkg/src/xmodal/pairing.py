"""Class-informed cross-modal correspondences (Cluster-CCA style)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import FeatureSet, PairedDataset
from .errors import IndexOutOfRange, InvalidConfig, NoOverlap

FULLCROSS = "fullcross"
ONETOONE = "onetoone"
MODES = (FULLCROSS, ONETOONE)


@dataclass(frozen=True, eq=False)
class PairList:
    pairs: np.ndarray  # (P, 2) int64 rows of (indexA, indexB)
    mode: str

    def __len__(self):
        return len(self.pairs)


def build_correspondences(labels_a, labels_b, mode: str = FULLCROSS, seed: int = 0,
                          max_pairs_per_class: int | None = None) -> PairList:
    """All within-class pairs, or a seeded random matching per class.

    ``fullcross`` yields pairs ordered by (class, indexA, indexB); when
    ``max_pairs_per_class`` is set, larger classes are subsampled (seeded)
    without disturbing that order.  ``onetoone`` matches ``min(countA,
    countB)`` samples per class, each index used at most once per side.
    """
    if mode not in MODES:
        raise InvalidConfig(f"unknown pairing mode {mode!r}")
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    shared = np.intersect1d(labels_a, labels_b)
    if shared.size == 0:
        raise NoOverlap("label sets of the two views share no class")
    rng = np.random.default_rng(seed)
    chunks = []
    for c in shared:
        ia = np.flatnonzero(labels_a == c)
        ib = np.flatnonzero(labels_b == c)
        if mode == FULLCROSS:
            grid = np.stack(np.meshgrid(ia, ib, indexing="ij"), axis=-1).reshape(-1, 2)
            if max_pairs_per_class is not None and len(grid) > max_pairs_per_class:
                keep = np.sort(rng.choice(len(grid), size=max_pairs_per_class, replace=False))
                grid = grid[keep]
        else:
            m = min(ia.size, ib.size)
            grid = np.column_stack([rng.permutation(ia)[:m], rng.permutation(ib)[:m]])
            grid = grid[np.argsort(grid[:, 0], kind="stable")]
        chunks.append(grid)
    return PairList(np.concatenate(chunks).astype(np.int64), mode)


def ground_truth_pairs(M: int) -> PairList:
    idx = np.arange(M, dtype=np.int64)
    return PairList(np.column_stack([idx, idx]), ONETOONE)


def with_ground_truth(pl: PairList, M: int) -> PairList:
    """Ground-truth ``(i, i)`` pairs first, then the remaining pairs of ``pl``."""
    gt = ground_truth_pairs(M).pairs
    rest = pl.pairs[pl.pairs[:, 0] != pl.pairs[:, 1]]
    return PairList(np.concatenate([gt, rest]), pl.mode)


def materialize(ds: PairedDataset, pl: PairList) -> PairedDataset:
    """Row ``i`` of the result is ``(A[pairs[i, 0]], B[pairs[i, 1]])``."""
    return materialize_views(ds.a, ds.b, pl)


def materialize_views(a: FeatureSet, b: FeatureSet, pl: PairList) -> PairedDataset:
    """As :func:`materialize`, for two views whose label lists differ."""
    p = pl.pairs
    if p.size and (p.min() < 0 or p[:, 0].max() >= a.M or p[:, 1].max() >= b.M):
        raise IndexOutOfRange("pair index outside the dataset")
    return PairedDataset(a.subset(p[:, 0]), b.subset(p[:, 1]))
