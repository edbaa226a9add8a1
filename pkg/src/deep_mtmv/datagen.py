"""
Synthetic multi-view multi-task data, parity view extraction, and dataset I/O.

Tensor files (``*.mtmv``) are laid out as::

    b"MTMV" | version u32 | rank u8 | rank x dim u64 | float64 values, row-major

with every integer and float little-endian. A dataset directory holds one
tensor per view, one label tensor per task, and ``manifest.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError, ValidationError
from .nets import MODALITY_RANK

MAGIC = b"MTMV"
VERSION = 1
MANIFEST = "manifest.json"
SPLITS = ("train", "valid", "test")


# --------------------------------------------------------------------------
# tensor files


def write_tensor(path, array) -> Path:
    arr = np.asarray(array, dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))
    return path


def read_tensor(path, expected_shape: Sequence[int] | None = None) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read tensor file {path}: {exc}", path=path) from exc
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an MTMV tensor file (bad magic)", path=path)
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported tensor version {version}", path=path)
    rank = raw[8]
    header = 9 + 8 * rank
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header", path=path)
    shape = struct.unpack_from(f"<{rank}Q", raw, 9)
    if expected_shape is not None and tuple(shape) != tuple(expected_shape):
        raise FormatError(f"{path}: expected shape {tuple(expected_shape)}, found {tuple(shape)}", path=path)
    count = int(np.prod(shape)) if rank else 1
    body = len(raw) - header
    if body != 8 * count:
        raise FormatError(f"{path}: shape {tuple(shape)} needs {8 * count} data bytes, found {body}", path=path)
    return np.frombuffer(raw, dtype="<f8", offset=header).reshape(shape).astype(np.float64)


# --------------------------------------------------------------------------
# dataset container


@dataclass
class MultiViewDataset:
    """All tasks share one pool of N examples, so X_i^j is the view-i array for every j."""

    views: list[np.ndarray]  # view i: N × input_shape_i
    modalities: list[str]
    labels: np.ndarray  # N × T, entries 0/1
    splits: np.ndarray  # N strings from SPLITS
    task_groups: list[list[int]] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.splits = np.asarray(self.splits, dtype=object)
        n = self.labels.shape[0]
        if len(self.views) != len(self.modalities):
            raise DimensionError("one modality per view is required")
        for i, x in enumerate(self.views):
            if x.shape[0] != n:
                raise DimensionError(f"view {i} has {x.shape[0]} examples, labels have {n}")
        if self.splits.shape != (n,):
            raise DimensionError(f"{self.splits.shape[0]} split tags for {n} examples")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValidationError("labels must be 0 or 1")

    @property
    def m(self) -> int:
        return len(self.views)

    @property
    def T(self) -> int:
        return self.labels.shape[1]

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def X(self, view: int, task: int) -> np.ndarray:
        return self.views[view]

    def Y(self, task: int) -> np.ndarray:
        return self.labels[:, task]

    def input_shapes(self) -> list[tuple[int, ...]]:
        return [tuple(x.shape[1:]) for x in self.views]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    def part(self, split: str) -> tuple[list[np.ndarray], np.ndarray]:
        idx = self.indices(split)
        return [x[idx] for x in self.views], self.labels[idx]

    def select_views(self, ids: Sequence[int]) -> "MultiViewDataset":
        ids = list(ids)
        for i in ids:
            if not 0 <= i < self.m:
                raise ConfigurationError(f"view {i} does not exist (dataset has {self.m})", key="views")
        return MultiViewDataset([self.views[i] for i in ids], [self.modalities[i] for i in ids],
                                self.labels, self.splits, self.task_groups)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiViewDataset):
            return NotImplemented
        return (self.m == other.m and self.modalities == other.modalities
                and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.views, other.views))
                and np.array_equal(self.labels, other.labels)
                and list(self.splits) == list(other.splits)
                and self.task_groups == other.task_groups)


# --------------------------------------------------------------------------
# synthetic generation


@dataclass
class PlantedSpec:
    task_groups: list[list[int]]
    signal: list[float]  # per-view signal strength s_i in [0, 1]
    noise: float = 0.1
    seed: int = 0
    latent_dim: int = 4
    task_jitter: float = 0.25
    test_fraction: float = 0.2
    valid_fraction: float = 0.2  # of the non-test examples

    def __post_init__(self):
        flat = [t for g in self.task_groups for t in g]
        if not self.task_groups or any(not g for g in self.task_groups):
            raise ConfigurationError("task_groups must be nonempty groups", key="task_groups")
        if sorted(flat) != list(range(len(flat))):
            raise ConfigurationError("task_groups must partition tasks 0..T-1", key="task_groups")
        if any(not 0 <= s <= 1 for s in self.signal):
            raise ConfigurationError("signal strengths must lie in [0, 1]", key="signal")
        if self.noise < 0:
            raise ConfigurationError("noise must be nonnegative", key="noise")
        if self.latent_dim < len(self.task_groups):
            raise ConfigurationError("latent_dim must be at least the number of groups", key="latent_dim")
        if not 0 <= self.test_fraction < 1 or not 0 <= self.valid_fraction < 1:
            raise ConfigurationError("split fractions must lie in [0, 1)", key="test_fraction")

    @property
    def n_tasks(self) -> int:
        return sum(len(g) for g in self.task_groups)

    def to_dict(self) -> dict:
        return {"task_groups": self.task_groups, "signal": list(self.signal), "noise": self.noise,
                "seed": self.seed, "latent_dim": self.latent_dim, "task_jitter": self.task_jitter,
                "test_fraction": self.test_fraction, "valid_fraction": self.valid_fraction}


def _modality_for(shape: tuple[int, ...]) -> str:
    for name, rank in MODALITY_RANK.items():
        if rank == len(shape):
            return name
    raise ConfigurationError(f"no modality has rank {len(shape)} (shape {shape})", key="dims")


def assign_splits(n: int, test_fraction: float, valid_fraction: float, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    n_valid = int(round(valid_fraction * (n - n_test)))
    tags = np.full(n, "train", dtype=object)
    tags[order[:n_test]] = "test"
    tags[order[n_test:n_test + n_valid]] = "valid"
    return tags


def gen_synthetic(spec: PlantedSpec, n_per_task: int, dims: Sequence[Sequence[int]]) -> MultiViewDataset:
    """Planted task groups over m views.

    Every example has an independent Gaussian latent per view. Tasks of one
    group share a latent direction per view (plus a small task-specific
    jitter); directions of different groups are orthogonal. A task's label is
    the sign of the signal-weighted sum of its per-view projections plus label
    noise, so a view with signal 0 carries no label information and several
    informative views are complementary. Features are a fixed random linear
    map of the view latent plus feature noise, reshaped to the view's shape;
    sequence views are rows of unit-norm token embeddings.
    """
    dims = [tuple(int(s) for s in d) for d in dims]
    if len(dims) != len(spec.signal):
        raise ConfigurationError(f"{len(dims)} view shapes for {len(spec.signal)} signal strengths", key="dims")
    if n_per_task < 10:
        raise ConfigurationError("n_per_task must be at least 10", key="n_per_task")
    for d in dims:
        if not d or any(s < 1 for s in d):
            raise ConfigurationError(f"degenerate view shape {d}", key="dims")
    modalities = [_modality_for(d) for d in dims]
    rng = np.random.default_rng(spec.seed)
    m, r, n = len(dims), spec.latent_dim, n_per_task
    groups = spec.task_groups
    T = spec.n_tasks

    # orthonormal group directions per view
    directions = []
    for _ in range(m):
        q, _ = np.linalg.qr(rng.standard_normal((r, r)))
        directions.append(q[:, :len(groups)].T)
    task_dirs = np.zeros((m, T, r))
    for g, tasks in enumerate(groups):
        for t in tasks:
            for v in range(m):
                u = directions[v][g] + spec.task_jitter * rng.standard_normal(r) / np.sqrt(r)
                task_dirs[v, t] = u / np.linalg.norm(u)

    latents = rng.standard_normal((m, n, r))
    s = np.asarray(spec.signal, dtype=np.float64)
    scores = np.einsum("v,vnr,vtr->nt", s, latents, task_dirs)
    norm = np.sqrt(np.sum(s * s))
    if norm > 0:
        scores = scores / norm
    scores = scores + spec.noise * rng.standard_normal((n, T))
    labels = (scores > 0).astype(np.float64)

    views = []
    for v, shape in enumerate(dims):
        size = int(np.prod(shape))
        mixing = rng.standard_normal((r, size)) / np.sqrt(r)
        flat = latents[v] @ mixing + spec.noise * rng.standard_normal((n, size))
        x = flat.reshape((n, *shape))
        if modalities[v] == "sequence1d":
            x = x / np.linalg.norm(x, axis=2, keepdims=True)
        views.append(x)
    splits = assign_splits(n, spec.test_fraction, spec.valid_fraction, rng)
    return MultiViewDataset(views, modalities, labels, splits, [list(g) for g in groups])


# --------------------------------------------------------------------------
# parity views


def extract_views_by_parity(images, mode: str = "two") -> list[np.ndarray]:
    """Non-overlapping pixel subsets of n×c×h×w images.

    ``two``: columns 0,2,4,... and 1,3,5,...; ``four``: the (row parity,
    column parity) subsamples in order (0,0), (0,1), (1,0), (1,1).
    """
    x = np.asarray(images)
    if x.ndim != 4:
        raise DimensionError(f"expected n×c×h×w images, got shape {x.shape}")
    _, _, h, w = x.shape
    if mode == "two":
        if w < 2:
            raise DimensionError(f"width {w} too small for two parity views")
        return [x[..., 0::2].copy(), x[..., 1::2].copy()]
    if mode == "four":
        if h < 2 or w < 2:
            raise DimensionError(f"image {h}x{w} too small for four parity views")
        return [x[:, :, r::2, c::2].copy() for r in (0, 1) for c in (0, 1)]
    raise ConfigurationError(f"unknown parity mode {mode!r}", key="mode")


def interleave_views(views: Sequence[np.ndarray], mode: str = "two") -> np.ndarray:
    """Inverse of :func:`extract_views_by_parity`."""
    if mode == "two":
        even, odd = views
        n, c, h = even.shape[:3]
        out = np.empty((n, c, h, even.shape[3] + odd.shape[3]), dtype=even.dtype)
        out[..., 0::2] = even
        out[..., 1::2] = odd
        return out
    if mode == "four":
        v00, v01, v10, v11 = views
        n, c = v00.shape[:2]
        out = np.empty((n, c, v00.shape[2] + v10.shape[2], v00.shape[3] + v01.shape[3]), dtype=v00.dtype)
        out[:, :, 0::2, 0::2] = v00
        out[:, :, 0::2, 1::2] = v01
        out[:, :, 1::2, 0::2] = v10
        out[:, :, 1::2, 1::2] = v11
        return out
    raise ConfigurationError(f"unknown parity mode {mode!r}", key="mode")


# --------------------------------------------------------------------------
# dataset directories


def save_dataset(ds: MultiViewDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    views = []
    for i, (x, modality) in enumerate(zip(ds.views, ds.modalities)):
        name = f"view{i}.mtmv"
        write_tensor(directory / name, x)
        views.append({"id": i, "modality": modality, "shape": list(x.shape[1:]), "path": name})
    tasks = []
    for j in range(ds.T):
        name = f"task{j}_labels.mtmv"
        write_tensor(directory / name, ds.labels[:, j])
        tasks.append({"id": j, "labels": name})
    manifest = {
        "format": "mtmv-dataset",
        "version": VERSION,
        "n_examples": ds.n,
        "views": views,
        "tasks": tasks,
        # every task reads the shared per-view tensor
        "features": {str(i): {str(j): v["path"] for j in range(ds.T)} for i, v in enumerate(views)},
        "splits": [str(s) for s in ds.splits],
        "task_groups": ds.task_groups,
    }
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(directory) -> MultiViewDataset:
    directory = Path(directory)
    path = directory / MANIFEST if directory.is_dir() else directory
    directory = path.parent
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}", path=path) from exc
    try:
        if manifest.get("format") != "mtmv-dataset":
            raise FormatError(f"{path}: not a dataset manifest", path=path)
        n = int(manifest["n_examples"])
        views, modalities = [], []
        for v in manifest["views"]:
            views.append(read_tensor(directory / v["path"], (n, *v["shape"])))
            modalities.append(v["modality"])
        labels = np.stack([read_tensor(directory / t["labels"], (n,)) for t in manifest["tasks"]], axis=1) \
            if manifest["tasks"] else np.zeros((n, 0))
        splits = np.array(manifest["splits"], dtype=object)
        if len(splits) != n or any(s not in SPLITS for s in splits):
            raise FormatError(f"{path}: split tags must be {n} entries from {SPLITS}", path=path)
        groups = manifest.get("task_groups")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc!r})", path=path) from exc
    return MultiViewDataset(views, modalities, labels, splits, groups)
