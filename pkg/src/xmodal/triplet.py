"""Cross-modal triplet refinement of frozen joint embeddings.

Anchors come from one view, positives and negatives from the other.  Each
view has its own refiner network; both are trained with the hinge
``max(0, d(a, p) - d(a, n) + margin)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import nn
from .errors import DimMismatch, InvalidConfig, NonFiniteLoss, SingleClass, ZeroVector

DISTANCES = ("cosine", "sqeuclidean")


@dataclass(frozen=True)
class TnnConfig:
    margin: float = 0.2
    distance: str = "cosine"
    triplets_per_anchor: int = 4
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    k_t: int = 10
    hidden_sizes: tuple = (128,)
    activation: str = "relu"
    mining: str = "random"
    batch_size: int = 256
    init: str = "identity"
    init_noise: float = 1e-2
    optimizer: str = "adam"

    def validate(self):
        if self.margin <= 0:
            raise InvalidConfig("tnn.margin must be > 0")
        if self.distance not in DISTANCES:
            raise InvalidConfig(f"unknown distance {self.distance!r}")
        if self.triplets_per_anchor < 1:
            raise InvalidConfig("tnn.triplets_per_anchor must be >= 1")
        if self.epochs < 0 or self.learning_rate < 0 or self.batch_size < 1:
            raise InvalidConfig("tnn.epochs/learning_rate must be >= 0, batch_size >= 1")
        if self.mining not in ("random", "hard"):
            raise InvalidConfig(f"unknown mining scheme {self.mining!r}")
        if self.init not in ("identity", "glorot"):
            raise InvalidConfig(f"unknown init {self.init!r}")


class Triplet(NamedTuple):
    anchor_view: str
    anchor_idx: int
    positive_idx: int
    negative_idx: int


@dataclass(frozen=True, eq=False)
class Triplets:
    """Column-wise triplet storage; ``view`` is 0 for A-anchored, 1 for B-anchored."""

    view: np.ndarray
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __len__(self):
        return len(self.anchor)

    def __iter__(self):
        for v, a, p, n in zip(self.view, self.anchor, self.positive, self.negative):
            yield Triplet("AB"[v], int(a), int(p), int(n))

    def take(self, idx) -> "Triplets":
        return Triplets(self.view[idx], self.anchor[idx], self.positive[idx], self.negative[idx])


@dataclass(frozen=True, eq=False)
class TnnModel:
    refinerA: nn.BranchNetwork
    refinerB: nn.BranchNetwork
    margin: float
    distance: str
    training_trace: tuple = field(default=())


# --------------------------------------------------------------------------
# distances and loss


def _distance(X, Y, kind):
    """Row-wise distance and its gradients with respect to X and Y."""
    if kind == "sqeuclidean":
        diff = X - Y
        return np.sum(diff * diff, axis=1), 2.0 * diff, -2.0 * diff
    nx = np.linalg.norm(X, axis=1, keepdims=True)
    ny = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ZeroVector("cosine distance is undefined for a zero vector")
    cos = np.sum(X * Y, axis=1, keepdims=True) / (nx * ny)
    gx = -(Y / (nx * ny) - cos * X / nx ** 2)
    gy = -(X / (nx * ny) - cos * Y / ny ** 2)
    return 1.0 - cos[:, 0], gx, gy


def distance_matrix(X, Y, kind):
    if kind == "sqeuclidean":
        return (np.sum(X ** 2, 1)[:, None] + np.sum(Y ** 2, 1)[None, :] - 2.0 * X @ Y.T)
    nx = np.linalg.norm(X, axis=1, keepdims=True)
    ny = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ZeroVector("cosine distance is undefined for a zero vector")
    return 1.0 - (X / nx) @ (Y / ny).T


def triplet_losses(A, P, N, margin: float, distance: str = "cosine"):
    """Per-row hinge losses and gradients for stacked triplets."""
    dap, ga_p, gp = _distance(A, P, distance)
    dan, ga_n, gn = _distance(A, N, distance)
    loss = np.maximum(dap - dan + margin, 0.0)
    active = (loss > 0)[:, None]
    return loss, (ga_p - ga_n) * active, gp * active, -gn * active


def triplet_loss(a, p, n, cfg: TnnConfig = TnnConfig()):
    """Hinge loss for one triplet: ``(loss, grad_a, grad_p, grad_n)``."""
    loss, ga, gp, gn = triplet_losses(
        np.atleast_2d(a).astype(np.float64), np.atleast_2d(p).astype(np.float64),
        np.atleast_2d(n).astype(np.float64), cfg.margin, cfg.distance,
    )
    return float(loss[0]), ga[0], gp[0], gn[0]


# --------------------------------------------------------------------------
# sampling


def sample_triplets(embA, embB, labels, cfg: TnnConfig = TnnConfig(), seed: int = 0) -> Triplets:
    """Cross-modal triplets, A-anchored first then B-anchored.

    Each anchor's first triplet uses its ground-truth partner as positive;
    the remaining ``triplets_per_anchor - 1`` draw uniform same-class
    positives.  Negatives are uniform different-class samples, or with
    ``mining="hard"`` the closest different-class samples.
    """
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise SingleClass("triplets need at least two distinct labels")
    rng = np.random.default_rng(seed)
    t = cfg.triplets_per_anchor
    cols = ([], [], [], [])
    for view, (src, dst) in enumerate(((embA, embB), (embB, embA))):
        dist = distance_matrix(np.asarray(src), np.asarray(dst), cfg.distance) \
            if cfg.mining == "hard" else None
        for i, c in enumerate(labels):
            same = np.flatnonzero(labels == c)
            other = np.flatnonzero(labels != c)
            pos = np.concatenate([[i], rng.choice(same, size=t - 1)])
            if dist is None:
                neg = rng.choice(other, size=t)
            else:
                order = other[np.argsort(dist[i, other], kind="stable")]
                neg = np.resize(order[:t], t)
            cols[0].append(np.full(t, view))
            cols[1].append(np.full(t, i))
            cols[2].append(pos)
            cols[3].append(neg)
    return Triplets(*(np.concatenate(c).astype(np.int64) for c in cols))


# --------------------------------------------------------------------------
# training


def _gather(RA, RB, trip: Triplets):
    """Anchor rows from their own view, positive/negative rows from the other."""
    a_view = trip.view == 0
    A = np.where(a_view[:, None], RA[trip.anchor], RB[trip.anchor])
    P = np.where(a_view[:, None], RB[trip.positive], RA[trip.positive])
    N = np.where(a_view[:, None], RB[trip.negative], RA[trip.negative])
    return A, P, N


def _scatter(shapeA, shapeB, trip: Triplets, ga, gp, gn):
    gA = np.zeros(shapeA)
    gB = np.zeros(shapeB)
    a_view = trip.view == 0
    b_view = ~a_view
    np.add.at(gA, trip.anchor[a_view], ga[a_view])
    np.add.at(gB, trip.positive[a_view], gp[a_view])
    np.add.at(gB, trip.negative[a_view], gn[a_view])
    np.add.at(gB, trip.anchor[b_view], ga[b_view])
    np.add.at(gA, trip.positive[b_view], gp[b_view])
    np.add.at(gA, trip.negative[b_view], gn[b_view])
    return gA, gB


def _make_refiner(k, cfg: TnnConfig, rng):
    if cfg.init == "identity":
        if cfg.k_t != k:
            raise InvalidConfig(f"identity init needs k_t == input dim ({cfg.k_t} != {k})")
        return nn.identity_branch(k, cfg.hidden_sizes, cfg.activation, cfg.init_noise, rng)
    return nn.init_branch(k, cfg.hidden_sizes, cfg.k_t, cfg.activation, rng)


def train_tnn(embA, embB, labels, cfg: TnnConfig = TnnConfig()) -> TnnModel:
    """Train both refiners on freshly sampled triplets every epoch."""
    cfg.validate()
    embA = np.asarray(embA, dtype=np.float64)
    embB = np.asarray(embB, dtype=np.float64)
    if embA.shape != embB.shape:
        raise DimMismatch(f"embedding shapes differ: {embA.shape} vs {embB.shape}")
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise SingleClass("triplets need at least two distinct labels")
    rng = np.random.default_rng(cfg.seed)
    k = embA.shape[1]
    refA = _make_refiner(k, cfg, rng)
    refB = _make_refiner(k, cfg, rng)
    n_a = len(refA.params())
    opt = nn.Optimizer(refA.params() + refB.params(), cfg.optimizer, cfg.learning_rate)
    trace = []
    for epoch in range(cfg.epochs):
        refA = refA.with_params(opt.params[:n_a])
        refB = refB.with_params(opt.params[n_a:])
        if cfg.mining == "hard":
            src = (nn.forward(refA, embA), nn.forward(refB, embB))
        else:
            src = (embA, embB)
        trip = sample_triplets(*src, labels, cfg, seed=int(rng.integers(2 ** 31)))
        trip = trip.take(rng.permutation(len(trip)))
        total = 0.0
        for start in range(0, len(trip), cfg.batch_size):
            batch = trip.take(slice(start, start + cfg.batch_size))
            RA, actsA = nn.forward(refA, embA, cache=True)
            RB, actsB = nn.forward(refB, embB, cache=True)
            loss, ga, gp, gn = triplet_losses(*_gather(RA, RB, batch), cfg.margin, cfg.distance)
            m = len(batch)
            gA, gB = _scatter(RA.shape, RB.shape, batch, ga / m, gp / m, gn / m)
            total += float(loss.sum())
            opt.step(nn.backward(refA, actsA, gA) + nn.backward(refB, actsB, gB))
            if not all(np.all(np.isfinite(p)) for p in opt.params):
                raise NonFiniteLoss(f"non-finite refiner parameters at epoch {epoch}", trace)
            refA = refA.with_params(opt.params[:n_a])
            refB = refB.with_params(opt.params[n_a:])
        mean_loss = total / len(trip)
        if not np.isfinite(mean_loss):
            raise NonFiniteLoss(f"triplet loss diverged at epoch {epoch}", trace)
        trace.append((epoch, mean_loss))
    refA = refA.with_params(opt.params[:n_a])
    refB = refB.with_params(opt.params[n_a:])
    return TnnModel(refA, refB, float(cfg.margin), cfg.distance, tuple(trace))


def refine(model: TnnModel, E, view: str) -> np.ndarray:
    if view not in ("A", "B"):
        raise ValueError(f"view must be 'A' or 'B', got {view!r}")
    return nn.forward(model.refinerA if view == "A" else model.refinerB, E)
