"""Regularised linear CCA via symmetric whitening and an SVD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariance, DimMismatch, InvalidConfig, TooFewSamples

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class CcaConfig:
    k: int = 10
    reg: float = 1e-4

    def validate(self):
        if self.k < 1:
            raise InvalidConfig("cca.k must be >= 1")
        if self.reg < 0:
            raise InvalidConfig("cca.reg must be >= 0")


@dataclass(frozen=True, eq=False)
class CcaModel:
    Wx: np.ndarray
    Wy: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    correlations: np.ndarray
    reg: float

    @property
    def k(self) -> int:
        return self.Wx.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.Wx.shape[0], self.Wy.shape[0]


def covariance(X, center: bool = True):
    """Unbiased ``(1/(n-1)) X~^T X~`` and the column means subtracted."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples(f"covariance needs n >= 2 rows, got shape {X.shape}")
    mean = X.mean(axis=0) if center else np.zeros(X.shape[1])
    Xc = X - mean
    return Xc.T @ Xc / (X.shape[0] - 1), mean


def inv_sqrt(S, reg: float):
    """``(S + reg I)^(-1/2)`` by symmetric eigendecomposition.

    Eigenvalues below ``1e-12 * lambda_max`` are floored when ``reg > 0``;
    with ``reg == 0`` they make the whitening undefined.
    """
    S = S + reg * np.eye(S.shape[0])
    evals, evecs = np.linalg.eigh(S)
    floor = EIG_FLOOR * max(evals[-1], 0.0)
    if evals[0] <= floor:
        if reg == 0 or evals[-1] <= 0:
            raise DegenerateCovariance(
                f"covariance is rank deficient (min eigenvalue {evals[0]:.3e}); "
                "use a positive regulariser"
            )
        evals = np.maximum(evals, floor)
    return (evecs / np.sqrt(evals)) @ evecs.T


@dataclass
class Whitened:
    """Intermediate quantities shared by CCA fitting and the DCCA objective."""

    Xc: np.ndarray
    Yc: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    Sxy: np.ndarray
    Kx: np.ndarray  # Sxx^(-1/2)
    Ky: np.ndarray
    T: np.ndarray


def whiten_pair(X, Y, reg: float) -> Whitened:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DimMismatch(f"paired views need equal row counts, got {X.shape} and {Y.shape}")
    n = X.shape[0]
    if n < 2:
        raise TooFewSamples(f"need n >= 2 paired rows, got {n}")
    Sxx, mx = covariance(X)
    Syy, my = covariance(Y)
    Xc, Yc = X - mx, Y - my
    Sxy = Xc.T @ Yc / (n - 1)
    Kx = inv_sqrt(Sxx, reg)
    Ky = inv_sqrt(Syy, reg)
    return Whitened(Xc, Yc, mx, my, Sxy, Kx, Ky, Kx @ Sxy @ Ky)


def fit_cca(X, Y, cfg: CcaConfig = CcaConfig()) -> CcaModel:
    cfg.validate()
    w = whiten_pair(X, Y, cfg.reg)
    k = min(cfg.k, w.Sxy.shape[0], w.Sxy.shape[1])
    U, S, Vt = np.linalg.svd(w.T, full_matrices=False)
    Wx = w.Kx @ U[:, :k]
    Wy = w.Ky @ Vt[:k].T
    # largest-magnitude entry of each Wx column made non-negative
    pivot = np.argmax(np.abs(Wx), axis=0)
    signs = np.where(Wx[pivot, np.arange(k)] < 0, -1.0, 1.0)
    return CcaModel(
        Wx=Wx * signs,
        Wy=Wy * signs,
        mean_x=w.mean_x,
        mean_y=w.mean_y,
        correlations=S[:k].copy(),
        reg=float(cfg.reg),
    )


def project(model: CcaModel, Z, view: str) -> np.ndarray:
    """Embed rows of ``Z`` from view ``"A"`` (X side) or ``"B"`` (Y side)."""
    if view not in ("A", "B"):
        raise ValueError(f"view must be 'A' or 'B', got {view!r}")
    W, mean = (model.Wx, model.mean_x) if view == "A" else (model.Wy, model.mean_y)
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != W.shape[0]:
        raise DimMismatch(f"view {view} expects dim {W.shape[0]}, got {Z.shape[1]}")
    return (Z - mean) @ W


def total_correlation(model: CcaModel) -> float:
    return float(np.sum(model.correlations))
