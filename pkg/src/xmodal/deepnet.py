"""Deep CCA: two MLP branches trained to maximise total canonical correlation.

The supervised variant (S-DCCA) runs the same trainer on an expanded set of
class-informed correspondences built by :mod:`xmodal.pairing`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .cca import CcaConfig, CcaModel, fit_cca, project, whiten_pair
from .dataio import PairedDataset
from .errors import DataError, InvalidConfig, NonFiniteLoss, TooFewSamples
from .pairing import (
    build_correspondences,
    ground_truth_pairs,
    materialize,
    with_ground_truth,
)

log = logging.getLogger(__name__)

PAIRING_MODES = ("fullcross", "onetoone", "groundtruth")


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple = (512, 512)
    activation: str = "relu"
    epochs: int = 100
    learning_rate: float = 1e-3
    reg_out: float = 1e-4
    k: int = 10
    seed: int = 0
    optimizer: str = "adam"

    def validate(self):
        if self.epochs < 0:
            raise InvalidConfig("train.epochs must be >= 0")
        if self.learning_rate <= 0:
            raise InvalidConfig("train.learning_rate must be > 0")
        if self.reg_out < 0:
            raise InvalidConfig("train.reg_out must be >= 0")
        if self.k < 1:
            raise InvalidConfig("train.k must be >= 1")
        if self.activation not in nn.ACTIVATIONS:
            raise InvalidConfig(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidConfig(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True, eq=False)
class DccaModel:
    netA: nn.BranchNetwork
    netB: nn.BranchNetwork
    cca_head: CcaModel
    training_trace: tuple = field(default=())

    @property
    def k(self) -> int:
        return self.cca_head.k


def corr_objective(Hx, Hy, k: int, reg_out: float):
    """Negative sum of the top-``k`` canonical correlations and its gradients.

    Returns ``(loss, dloss/dHx, dloss/dHy)``.  Covariances use the 1/(n-1)
    convention with ``reg_out`` on the auto-covariance diagonals, exactly as
    :func:`xmodal.cca.fit_cca` does.
    """
    w = whiten_pair(Hx, Hy, reg_out)
    if k > min(w.T.shape):
        raise InvalidConfig(f"k={k} exceeds output dims {w.T.shape}")
    n = w.Xc.shape[0]
    U, S, Vt = np.linalg.svd(w.T, full_matrices=False)
    Uk, Sk, Vk = U[:, :k], S[:k], Vt[:k].T
    d12 = w.Kx @ Uk @ Vk.T @ w.Ky
    d11 = -0.5 * (w.Kx @ (Uk * Sk) @ Uk.T @ w.Kx)
    d22 = -0.5 * (w.Ky @ (Vk * Sk) @ Vk.T @ w.Ky)
    gx = (2.0 * w.Xc @ d11 + w.Yc @ d12.T) / (n - 1)
    gy = (2.0 * w.Yc @ d22 + w.Xc @ d12) / (n - 1)
    return -float(Sk.sum()), -gx, -gy


def train_dcca(train: PairedDataset, cfg: TrainConfig = TrainConfig()) -> DccaModel:
    """Full-batch training of both branches, then a CCA head on their outputs."""
    cfg.validate()
    if not (train.a.pooled and train.b.pooled):
        raise DataError("train_dcca expects pooled views")
    XA, XB = train.a.matrix(), train.b.matrix()
    n = XA.shape[0]
    if n < 2 * cfg.k:
        raise TooFewSamples(f"need n >= 2k = {2 * cfg.k} training rows, got {n}")
    rng = np.random.default_rng(cfg.seed)
    netA = nn.init_branch(XA.shape[1], cfg.hidden_sizes, cfg.k, cfg.activation, rng)
    netB = nn.init_branch(XB.shape[1], cfg.hidden_sizes, cfg.k, cfg.activation, rng)
    n_a = len(netA.params())
    opt = nn.Optimizer(netA.params() + netB.params(), cfg.optimizer, cfg.learning_rate)
    trace = []
    for epoch in range(cfg.epochs):
        netA = netA.with_params(opt.params[:n_a])
        netB = netB.with_params(opt.params[n_a:])
        HA, actsA = nn.forward(netA, XA, cache=True)
        HB, actsB = nn.forward(netB, XB, cache=True)
        if not (np.all(np.isfinite(HA)) and np.all(np.isfinite(HB))):
            raise NonFiniteLoss(f"non-finite branch output at epoch {epoch}", trace)
        loss, gA, gB = corr_objective(HA, HB, cfg.k, cfg.reg_out)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"objective diverged at epoch {epoch}", trace)
        trace.append((epoch, loss))
        opt.step(nn.backward(netA, actsA, gA) + nn.backward(netB, actsB, gB))
        if not all(np.all(np.isfinite(p)) for p in opt.params):
            raise NonFiniteLoss(f"non-finite parameters after epoch {epoch}", trace)
        if epoch % 50 == 0:
            log.debug("dcca epoch %d loss %.6f", epoch, loss)
    netA = netA.with_params(opt.params[:n_a])
    netB = netB.with_params(opt.params[n_a:])
    head = fit_cca(nn.forward(netA, XA), nn.forward(netB, XB), CcaConfig(cfg.k, cfg.reg_out))
    return DccaModel(netA, netB, head, tuple(trace))


def sdcca_pairs(labels, mode: str, seed: int, max_pairs_per_class: int | None = 256):
    """Training correspondences for S-DCCA; ground-truth pairs always come first."""
    if mode not in PAIRING_MODES:
        raise InvalidConfig(f"unknown pairing mode {mode!r}")
    M = len(labels)
    if mode == "groundtruth":
        return ground_truth_pairs(M)
    pl = build_correspondences(labels, labels, mode, seed, max_pairs_per_class)
    return with_ground_truth(pl, M)


def fit_sdcca(ds: PairedDataset, pairing_mode: str = "fullcross",
              cfg: TrainConfig = TrainConfig(),
              max_pairs_per_class: int | None = 256) -> DccaModel:
    """S-DCCA: DCCA trained on the class-expanded correspondence set."""
    ds = ds.pooled()
    pl = sdcca_pairs(ds.labels, pairing_mode, cfg.seed, max_pairs_per_class)
    return train_dcca(materialize(ds, pl), cfg)


def embed(model: DccaModel, Z, view: str) -> np.ndarray:
    if view not in ("A", "B"):
        raise ValueError(f"view must be 'A' or 'B', got {view!r}")
    net = model.netA if view == "A" else model.netB
    return project(model.cca_head, nn.forward(net, Z), view)
