"""Similarity matrices, ranking lists, AP/mAP and bidirectional reports."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimMismatch, IndexOutOfRange, InvalidConfig, ZeroVector

METRICS = ("cosine", "dot", "negative_euclidean")
RELEVANCE = ("class", "instance")


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    S: np.ndarray
    metric: str


def similarity_matrix(EA, EB, metric: str = "cosine") -> SimilarityMatrix:
    EA = np.atleast_2d(np.asarray(EA, dtype=np.float64))
    EB = np.atleast_2d(np.asarray(EB, dtype=np.float64))
    if EA.shape[1] != EB.shape[1]:
        raise DimMismatch(f"embedding dims differ: {EA.shape[1]} vs {EB.shape[1]}")
    if metric == "cosine":
        na = np.linalg.norm(EA, axis=1, keepdims=True)
        nb = np.linalg.norm(EB, axis=1, keepdims=True)
        if np.any(na == 0) or np.any(nb == 0):
            raise ZeroVector("cosine similarity is undefined for a zero embedding")
        S = (EA / na) @ (EB / nb).T
    elif metric == "dot":
        S = EA @ EB.T
    elif metric == "negative_euclidean":
        S = -np.sqrt(np.sum((EA[:, None, :] - EB[None, :, :]) ** 2, axis=-1))
    else:
        raise InvalidConfig(f"unknown metric {metric!r}")
    if not np.all(np.isfinite(S)):
        raise DataError("similarity matrix has non-finite entries")
    return SimilarityMatrix(S, metric)


def _rank(scores) -> np.ndarray:
    # stable sort of negated scores: descending, ties by ascending index
    return np.argsort(-scores, kind="stable")


def rank_list(sim: SimilarityMatrix, query_index: int, direction: str = "AB") -> np.ndarray:
    """Target indices by descending similarity; A->B queries are rows, B->A columns."""
    if direction not in ("AB", "BA"):
        raise InvalidConfig(f"direction must be 'AB' or 'BA', got {direction!r}")
    S = sim.S if direction == "AB" else sim.S.T
    if not 0 <= query_index < S.shape[0]:
        raise IndexOutOfRange(f"query {query_index} out of range for {S.shape[0]} queries")
    return _rank(S[query_index])


def _ap_from_relevance(rel: np.ndarray):
    R = int(rel.sum())
    if R == 0:
        return None
    hits = np.cumsum(rel)
    pos = np.flatnonzero(rel) + 1
    return float(np.sum(hits[pos - 1] / pos) / R)


def average_precision(ranked_labels, query_label):
    """AP of one ranking; ``None`` when nothing in the list is relevant."""
    ranked_labels = np.asarray(ranked_labels)
    if ranked_labels.size == 0:
        raise DataError("ranking list is empty")
    return _ap_from_relevance(ranked_labels == query_label)


@dataclass(frozen=True, eq=False)
class EvalReport:
    map_ab: float | None
    map_ba: float | None
    ap_ab: list
    ap_ba: list
    precision_at: dict
    precision_at_ba: dict
    skipped_ab: list
    skipped_ba: list
    metric: str = "cosine"
    relevance: str = "class"
    similarity: SimilarityMatrix | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "map_ab": self.map_ab,
            "map_ba": self.map_ba,
            "ap_ab": self.ap_ab,
            "ap_ba": self.ap_ba,
            "precision_at": self.precision_at,
            "precision_at_ba": self.precision_at_ba,
            "skipped": self.skipped_ab,
            "skipped_ba": self.skipped_ba,
            "metric": self.metric,
            "relevance": self.relevance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["direction", "query", "ap"])
            for direction, aps in (("a_to_b", self.ap_ab), ("b_to_a", self.ap_ba)):
                for q, ap in enumerate(aps):
                    w.writerow([direction, q, "" if ap is None else repr(ap)])

    def table(self, names=("audio", "visual")) -> str:
        """Two-column summary: A->B and B->A mAP in percent."""
        a, b = names
        h1, h2 = f"{a}-{b}", f"{b}-{a}"
        fmt = lambda v: "n/a" if v is None else f"{100 * v:.2f}%"
        width = max(len(h1), len(h2), 8)
        lines = [
            f"{'':<8}|{h1:^{width + 2}}|{h2:^{width + 2}}",
            "-" * (8 + 2 * (width + 3)),
            f"{'mAP':<8}|{fmt(self.map_ab):^{width + 2}}|{fmt(self.map_ba):^{width + 2}}",
        ]
        return "\n".join(lines)


def _direction(S, q_labels, t_labels, relevance, cutoffs, workers):
    """Per-query AP and precision@K for queries along the rows of ``S``."""

    def run(rows):
        out = []
        for i in rows:
            order = _rank(S[i])
            if relevance == "class":
                rel = t_labels[order] == q_labels[i]
            else:
                rel = order == i
            ap = _ap_from_relevance(rel)
            prec = {c: float(rel[:min(c, rel.size)].sum()) / min(c, rel.size) for c in cutoffs}
            out.append((ap, prec))
        return out

    chunks = np.array_split(np.arange(S.shape[0]), max(1, workers))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    results = [r for part in parts for r in part]
    aps = [ap for ap, _ in results]
    kept = [i for i, ap in enumerate(aps) if ap is not None]
    skipped = [i for i, ap in enumerate(aps) if ap is None]
    mAP = float(np.mean([aps[i] for i in kept])) if kept else None
    prec_at = {
        str(c): (float(np.mean([results[i][1][c] for i in kept])) if kept else None)
        for c in cutoffs
    }
    return mAP, aps, prec_at, skipped


def evaluate(EA, EB, labels_a, labels_b=None, metric: str = "cosine",
             relevance: str = "class", workers: int = 1) -> EvalReport:
    """Bidirectional retrieval: A->B ranks rows of S, B->A ranks its columns."""
    return evaluate_similarity(similarity_matrix(EA, EB, metric), labels_a, labels_b,
                               relevance, workers)


def evaluate_similarity(sim: SimilarityMatrix, labels_a, labels_b=None,
                        relevance: str = "class", workers: int = 1) -> EvalReport:
    if relevance not in RELEVANCE:
        raise InvalidConfig(f"unknown relevance {relevance!r}")
    if workers < 1:
        raise InvalidConfig("workers must be >= 1")
    labels_a = np.asarray(labels_a)
    labels_b = labels_a if labels_b is None else np.asarray(labels_b)
    Ma, Mb = sim.S.shape
    if len(labels_a) != Ma or len(labels_b) != Mb:
        raise DimMismatch("label counts do not match embedding counts")
    if relevance == "instance" and Ma != Mb:
        raise DimMismatch("instance relevance needs aligned views")
    cutoffs_ab = sorted({1, 5, 10, Mb})
    cutoffs_ba = sorted({1, 5, 10, Ma})
    m_ab, ap_ab, p_ab, s_ab = _direction(sim.S, labels_a, labels_b, relevance, cutoffs_ab, workers)
    m_ba, ap_ba, p_ba, s_ba = _direction(sim.S.T, labels_b, labels_a, relevance, cutoffs_ba, workers)
    return EvalReport(m_ab, m_ba, ap_ab, ap_ba, p_ab, p_ba, s_ab, s_ba, sim.metric, relevance, sim)
