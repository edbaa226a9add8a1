"""Centroid co-regularized multi-view spectral clustering and branch-count selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .affinity import AffinityMatrix
from .errors import ConfigurationError, NumericError, ValidationError

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-9


@dataclass
class SpectralEmbedding:
    U: np.ndarray
    view_id: int | str = "centroid"
    eigenvalues: np.ndarray | None = None


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]
    d: int

    def groups(self) -> list[list[int]]:
        return [[i for i, c in enumerate(self.labels) if c == g] for g in range(self.d)]

    def to_dict(self) -> dict[str, int]:
        return {str(i): int(c) for i, c in enumerate(self.labels)}


@dataclass
class CoregResult:
    embeddings: list[SpectralEmbedding]
    centroid: SpectralEmbedding
    assignment: ClusterAssignment
    objective_history: list[float]

    @property
    def iterations(self) -> int:
        return len(self.objective_history) - 1


@dataclass
class SplitDecision:
    d: int
    assignment: ClusterAssignment
    loss: float
    candidates: list[dict] = field(default_factory=list)


def _entries(aff) -> np.ndarray:
    return aff.entries if isinstance(aff, AffinityMatrix) else np.asarray(aff, dtype=np.float64)


def normalized_laplacian(aff) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} with D the diagonal of row sums."""
    a = _entries(aff)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"affinity must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValidationError("affinity must be symmetric")
    if np.any(a < 0):
        raise ValidationError("affinity must be nonnegative")
    deg = a.sum(axis=1)
    zero = np.flatnonzero(deg <= 0)
    if zero.size:
        raise ValidationError(f"subject {int(zero[0])} has zero total affinity")
    inv = 1.0 / np.sqrt(deg)
    lap = inv[:, None] * a * inv[None, :]
    return (lap + lap.T) / 2.0


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)  # first index among equal magnitudes
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _top_eigvecs(mat: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    order = np.argsort(-vals, kind="stable")[:k]
    return vals[order], _sign_fix(vecs[:, order])


def spectral_embed(lap: np.ndarray, k: int, view_id: int | str = "centroid") -> SpectralEmbedding:
    lap = np.asarray(lap, dtype=np.float64)
    t = lap.shape[0]
    if not 1 <= k <= t:
        raise ConfigurationError(f"need 1 <= k <= {t}, got k={k}", key="k")
    try:
        vals, U = _top_eigvecs(lap, k)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    return SpectralEmbedding(U, view_id, vals)


def coreg_objective(laplacians, lambdas, embeddings, centroid) -> float:
    pc = centroid @ centroid.T
    total = 0.0
    for L, lam, U in zip(laplacians, lambdas, embeddings):
        total += np.trace(U.T @ L @ U) + lam * np.trace(U @ U.T @ pc)
    return float(total)


def kmeans_rows(embedding, k: int, seed: int, max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's k-means from a seeded farthest-point start.

    Clusters are relabelled in order of their smallest member index, and no
    returned cluster is empty.
    """
    X = np.asarray(embedding, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    t = X.shape[0]
    if k < 1:
        raise ConfigurationError(f"k must be at least 1, got {k}", key="k")
    if k > t:
        raise ConfigurationError(f"k={k} exceeds the {t} rows to cluster", key="k")
    if k == t:
        return ClusterAssignment(tuple(range(t)), t)

    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(t))]
    mind = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        cand = mind.copy()
        cand[chosen] = -1.0
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        mind = np.minimum(mind, ((X - X[nxt]) ** 2).sum(axis=1))
    centers = X[chosen].copy()

    labels = None
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        new = _fill_empty(new, dist, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.stack([X[labels == c].mean(axis=0) for c in range(k)])

    # relabel by smallest member index
    order = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    return ClusterAssignment(tuple(order[int(lab)] for lab in labels), k)


def _fill_empty(labels: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        own = dist[np.arange(len(labels)), labels]
        movable = counts[labels] > 1
        own = np.where(movable, own, -1.0)
        labels[int(np.argmax(own))] = c
    return labels


def coreg_cluster(laplacians: Sequence[np.ndarray], lambdas: Sequence[float], k: int, max_iters: int = 100,
                  tol: float = 1e-10, seed: int = 0) -> CoregResult:
    """Alternating maximisation of the centroid co-regularized spectral objective

        sum_i tr(U_i' L_i U_i) + sum_i lambda_i tr(U_i U_i' U_c U_c')

    then k-means on the rows of the consensus embedding U_c. U_c starts from
    the embedding of the view with the largest lambda.
    """
    laps = [np.asarray(L, dtype=np.float64) for L in laplacians]
    lams = np.asarray(lambdas, dtype=np.float64)
    if not laps:
        raise ConfigurationError("at least one view is required")
    if len(lams) != len(laps):
        raise ConfigurationError("one lambda per view is required", key="lambdas")
    if np.any(lams < 0):
        raise ConfigurationError("lambdas must be nonnegative", key="lambdas")
    t = laps[0].shape[0]
    if any(L.shape != (t, t) for L in laps):
        raise ValidationError(f"laplacians must all be {t}x{t}")
    if not 1 <= k <= t:
        raise ConfigurationError(f"need 1 <= k <= {t}, got k={k}", key="k")

    lead = int(np.argmax(lams))
    Us = [spectral_embed(L, k, view_id=i).U for i, L in enumerate(laps)]
    Uc = Us[lead].copy()
    history = [coreg_objective(laps, lams, Us, Uc)]
    for it in range(1, max_iters + 1):
        try:
            pc = Uc @ Uc.T
            Us = [_top_eigvecs(L + lam * pc, k)[1] for L, lam in zip(laps, lams)]
            if lams.sum() > 0:
                Uc = _top_eigvecs(sum(lam * U @ U.T for lam, U in zip(lams, Us)), k)[1]
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigen-solve failed at iteration {it}: {exc}") from exc
        obj = coreg_objective(laps, lams, Us, Uc)
        if obj < history[-1] - MONOTONE_SLACK:
            raise NumericError(f"objective decreased at iteration {it}: {history[-1]} -> {obj}")
        history.append(obj)
        if obj - history[-2] < tol:
            break
    assignment = kmeans_rows(Uc, k, seed)
    embeds = [SpectralEmbedding(U, i) for i, U in enumerate(Us)]
    return CoregResult(embeds, SpectralEmbedding(Uc, "centroid"), assignment, history)


SEPARATION_REDUCERS = ("max", "mean")


def separation_penalty(assignment: ClusterAssignment, branch_aff, reduce: str = "max") -> float:
    """Cluster incoherence 1 - mean_k min_{l != k} A(k, l), reduced over clusters.

    Self-pairs are left out of the inner min, so a singleton cluster costs 0.
    ``reduce="max"`` scores a grouping by its least coherent cluster;
    ``reduce="mean"`` averages the clusters.
    """
    if reduce not in SEPARATION_REDUCERS:
        raise ConfigurationError(f"unknown separation reduction {reduce!r}", key="separation_reduce")
    a = _entries(branch_aff)
    if len(assignment.labels) != a.shape[0]:
        raise ValidationError(f"assignment covers {len(assignment.labels)} branches, affinity has {a.shape[0]}")
    per_cluster = []
    for members in assignment.groups():
        if len(members) < 2:
            per_cluster.append(0.0)
            continue
        sub = a[np.ix_(members, members)].copy()
        np.fill_diagonal(sub, np.inf)
        per_cluster.append(1.0 - float(sub.min(axis=1).mean()))
    return float(max(per_cluster) if reduce == "max" else np.mean(per_cluster))


def combine_affinities(affinities: Sequence, weights: Sequence[float]) -> np.ndarray:
    mats = [_entries(a) for a in affinities]
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        w = np.ones(len(mats))
    w = w / w.sum()
    return sum(wi * m for wi, m in zip(w, mats))


def select_branching(branch_affs: Sequence, view_weights: Sequence[float], base_cost: float, alpha: float,
                     p_t: int, d_range: tuple[int, int], seed: int, max_iters: int = 100,
                     tol: float = 1e-10, reduce: str = "max") -> SplitDecision:
    """Pick the cluster count d minimising (d-1) * base_cost * 2**p_t + alpha * separation.

    ``view_weights`` are the co-regularization weights lambda_i; the separation
    penalty is measured on the lambda-weighted average of the per-view branch
    affinities. Ties go to the smaller d.
    """
    if base_cost < 0:
        raise ConfigurationError("base_cost (L_0) must be nonnegative", key="base_cost")
    if alpha < 0:
        raise ConfigurationError("alpha must be nonnegative", key="alpha")
    c = _entries(branch_affs[0]).shape[0]
    lo, hi = int(d_range[0]), min(int(d_range[1]), c)
    lo = max(lo, 1)
    if lo > hi:
        raise ConfigurationError(f"empty candidate range {tuple(d_range)} for {c} branches", key="d_range")
    laps = [normalized_laplacian(a) for a in branch_affs]
    fused = combine_affinities(branch_affs, view_weights)
    best = None
    table = []
    for d in range(lo, hi + 1):
        res = coreg_cluster(laps, view_weights, d, max_iters=max_iters, tol=tol, seed=seed)
        structural = (d - 1) * base_cost * 2.0 ** p_t
        sep = separation_penalty(res.assignment, fused, reduce)
        loss = structural + alpha * sep
        table.append({"d": d, "structural": structural, "separation": sep, "loss": loss,
                      "assignment": list(res.assignment.labels)})
        if best is None or loss < best[0]:
            best = (loss, d, res.assignment)
    loss, d, assignment = best
    logger.debug("branch selection: %s -> d=%d", [(r["d"], round(r["loss"], 4)) for r in table], d)
    return SplitDecision(d, assignment, loss, table)
