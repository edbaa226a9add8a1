"""Error-margin indicators, task affinities and branch affinities.

A task pair is affine when the two tasks find the same examples hard: for
each task the examples whose error margin exceeds the task's mean margin are
flagged, and affinity is the fraction of examples on which the flags agree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError


@dataclass
class IndicatorStream:
    indicators: np.ndarray  # N×T in {0, 1}
    margins: np.ndarray  # N×T
    mean_margins: np.ndarray  # T


@dataclass
class AffinityMatrix:
    entries: np.ndarray
    subject: str = "tasks"  # or "branches"
    view_id: int | str = "fused"

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def compute_indicators(labels, predictions) -> IndicatorStream:
    t = np.asarray(labels, dtype=np.float64)
    s = np.asarray(predictions, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if s.ndim == 1:
        s = s[:, None]
    if t.shape != s.shape:
        raise ValidationError(f"labels {t.shape} and predictions {s.shape} differ in shape")
    if t.shape[0] == 0:
        raise ValidationError("no examples given")
    if not np.all((t == 0) | (t == 1)):
        raise ValidationError("labels must be binary")
    if not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1:
        raise ValidationError("predictions must lie in [0, 1]")
    margins = np.abs(t - s)
    mean = margins.mean(axis=0)
    # ties with the mean count as "not hard"
    ind = (margins > mean).astype(np.int8)
    return IndicatorStream(ind, margins, mean)


def task_affinity(ind: IndicatorStream, view_id: int | str = "fused") -> AffinityMatrix:
    e = np.asarray(ind.indicators, dtype=np.int64)
    n = e.shape[0]
    if n == 0:
        raise ValidationError("empty indicator stream")
    both = e.T @ e
    neither = (1 - e).T @ (1 - e)
    # integer counts, one division: exact and symmetric
    return AffinityMatrix((both + neither) / n, "tasks", view_id)


def directed_branch_affinity(task_aff: AffinityMatrix | np.ndarray, grouping: Sequence[Sequence[int]]) -> np.ndarray:
    """Entry (k, l) is the mean over tasks of branch k of their min affinity to branch l."""
    a = task_aff.entries if isinstance(task_aff, AffinityMatrix) else np.asarray(task_aff, dtype=np.float64)
    groups = [list(g) for g in grouping]
    for k, g in enumerate(groups):
        if not g:
            raise ValidationError(f"branch {k} has no tasks")
    c = len(groups)
    directed = np.empty((c, c))
    for k, gk in enumerate(groups):
        for l, gl in enumerate(groups):
            directed[k, l] = a[np.ix_(gk, gl)].min(axis=1).mean()
    return directed


def branch_affinity(task_aff: AffinityMatrix | np.ndarray, grouping: Sequence[Sequence[int]],
                    view_id: int | str | None = None) -> AffinityMatrix:
    """Symmetric branch affinity: average of the two directed mean-of-min scores."""
    if view_id is None:
        view_id = task_aff.view_id if isinstance(task_aff, AffinityMatrix) else "fused"
    directed = directed_branch_affinity(task_aff, grouping)
    return AffinityMatrix((directed + directed.T) / 2.0, "branches", view_id)


def impute_missing(view_matrices: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                   view_weights: Sequence[float]) -> list[np.ndarray]:
    """Fill unobserved entries from the views that observe them.

    ``masks[v][i, j]`` is True when view v observed entry (i, j). A missing
    entry becomes the view-weight-weighted average of the observed values at
    the same position; observed entries are kept, and each output matrix is
    re-symmetrised by averaging with its transpose.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in view_matrices]
    obs = [np.asarray(m, dtype=bool) for m in masks]
    w = np.asarray(view_weights, dtype=np.float64)
    if len(mats) != len(obs) or len(mats) != len(w):
        raise ValidationError("one mask and one weight per view are required")
    if np.any(w < 0):
        raise ValidationError("view weights must be nonnegative")
    stack = np.stack(mats)
    ostack = np.stack(obs)
    seen = ostack.any(axis=0)
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise ValidationError(f"affinity entry ({i}, {j}) is missing in every view")
    wts = np.where(ostack, w[:, None, None], 0.0)
    denom = wts.sum(axis=0)
    counts = ostack.sum(axis=0)
    plain = np.where(ostack, stack, 0.0).sum(axis=0) / counts
    weighted = np.divide((wts * np.where(ostack, stack, 0.0)).sum(axis=0), denom,
                         out=plain.copy(), where=denom > 0)
    out = []
    for v in range(len(mats)):
        if obs[v].all():
            out.append(mats[v].copy())
            continue
        filled = np.where(obs[v], mats[v], weighted)
        out.append((filled + filled.T) / 2.0)
    return out


def write_affinity_csv(aff: AffinityMatrix | np.ndarray, path, ids: Sequence | None = None):
    a = aff.entries if isinstance(aff, AffinityMatrix) else np.asarray(aff)
    ids = list(range(a.shape[0])) if ids is None else list(ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *ids])
        for i, row in zip(ids, a):
            w.writerow([i, *(repr(float(x)) for x in row)])


def read_affinity_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read affinity CSV {path}: {exc}", path=path) from exc
    if not rows or len(rows[0]) < 2:
        raise FormatError(f"{path}: missing header row", path=path)
    ids = rows[0][1:]
    body = rows[1:]
    if len(body) != len(ids) or any(len(r) != len(ids) + 1 for r in body):
        raise FormatError(f"{path}: expected a {len(ids)}x{len(ids)} matrix", path=path)
    try:
        a = np.array([[float(x) for x in r[1:]] for r in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})", path=path) from exc
    if [r[0] for r in body] != ids:
        raise FormatError(f"{path}: row ids do not match header ids", path=path)
    if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0 or a.max(initial=0.0) > 1:
        raise FormatError(f"{path}: affinities must lie in [0, 1]", path=path)
    if not np.array_equal(a, a.T):
        raise FormatError(f"{path}: affinity matrix is not symmetric", path=path)
    return ids, a
