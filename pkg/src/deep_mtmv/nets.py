"""Per-view feature networks, the fusion (regularization) head and cross-stitch units."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError, DimensionError

MODALITY_RANK = {"vector": 1, "sequence1d": 2, "image2d": 3}
LAYER_KINDS = ("dense", "conv2d", "conv1d", "flatten")


@dataclass
class LayerSpec:
    kind: str
    width: int = 0  # units for dense, filters for convolutions
    kernel: tuple[int, ...] = ()
    stride: int = 1
    activation: str = "relu"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "width": self.width, "kernel": list(self.kernel),
                "stride": self.stride, "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(kind=d["kind"], width=int(d.get("width", 0)), kernel=tuple(d.get("kernel", ())),
                   stride=int(d.get("stride", 1)), activation=d.get("activation", "relu"))


@dataclass
class ViewSpec:
    view_id: int
    modality: str
    input_shape: tuple[int, ...]
    layer_plan: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.modality not in MODALITY_RANK:
            raise ConfigurationError(f"view {self.view_id}: unknown modality {self.modality!r}", key="modality")
        if len(self.input_shape) != MODALITY_RANK[self.modality]:
            raise ConfigurationError(
                f"view {self.view_id}: modality {self.modality} needs rank {MODALITY_RANK[self.modality]} "
                f"input, got shape {self.input_shape}", key="input_shape")

    def to_dict(self) -> dict:
        return {"view_id": self.view_id, "modality": self.modality, "input_shape": list(self.input_shape),
                "layer_plan": [layer.to_dict() for layer in self.layer_plan]}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSpec":
        return cls(view_id=int(d["view_id"]), modality=d["modality"], input_shape=tuple(d["input_shape"]),
                   layer_plan=[LayerSpec.from_dict(x) for x in d["layer_plan"]])


def default_plan(modality: str, hidden: int = 16, features: int = 8) -> list[LayerSpec]:
    if modality == "vector":
        return [LayerSpec("dense", hidden), LayerSpec("dense", features)]
    if modality == "image2d":
        return [LayerSpec("conv2d", 4, (3, 3)), LayerSpec("flatten"), LayerSpec("dense", features)]
    return [LayerSpec("conv1d", 4, (2,)), LayerSpec("flatten"), LayerSpec("dense", features)]


class Block:
    """One parametric layer, its activation, and an optional trailing flatten.

    Blocks are the unit of depth: splitting a depth replicates one block per view.
    """

    def __init__(self, spec: LayerSpec, in_shape: tuple[int, ...], weight: Parameter, bias: Parameter,
                 flatten_after: bool = False):
        self.spec = spec
        self.in_shape = in_shape
        self.weight = weight
        self.bias = bias
        self.flatten_after = flatten_after

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    @property
    def out_shape(self) -> tuple[int, ...]:
        shape = _layer_out_shape(self.spec, self.in_shape)
        return (int(np.prod(shape)),) if self.flatten_after else shape

    def forward(self, x) -> Tensor:
        kind = self.spec.kind
        if kind == "dense":
            z = ad.dense(x, self.weight, self.bias)
        elif kind == "conv2d":
            z = ad.conv2d(x, self.weight, self.bias, stride=self.spec.stride)
        else:
            z = ad.conv1d(x, self.weight, self.bias)
        z = ad.activation(z, self.spec.activation)
        return ad.flatten(z) if self.flatten_after else z

    def copy(self, prefix: str) -> "Block":
        return Block(self.spec, self.in_shape, self.weight.copy(f"{prefix}.weight"),
                     self.bias.copy(f"{prefix}.bias"), self.flatten_after)

    def rename(self, prefix: str):
        self.weight.name = f"{prefix}.weight"
        self.bias.name = f"{prefix}.bias"


def _layer_out_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    if spec.kind == "dense":
        return (spec.width,)
    if spec.kind == "conv2d":
        _, h, w = in_shape
        kh, kw = spec.kernel
        return (spec.width, (h - kh) // spec.stride + 1, (w - kw) // spec.stride + 1)
    if spec.kind == "conv1d":
        return (spec.width, in_shape[0] - spec.kernel[0] + 1)
    raise ConfigurationError(f"no output shape for layer kind {spec.kind!r}")


def _check_layer(spec: LayerSpec, shape: tuple[int, ...], view_id: int):
    where = f"view {view_id}: {spec.kind} layer on per-sample shape {shape}"
    if spec.kind not in LAYER_KINDS:
        raise ConfigurationError(f"view {view_id}: unknown layer kind {spec.kind!r}", key="layer_plan")
    if spec.activation not in ad.ACTIVATIONS:
        raise ConfigurationError(f"{where}: unknown activation {spec.activation!r}", key="layer_plan")
    if spec.kind != "flatten" and spec.width < 1:
        raise ConfigurationError(f"{where}: width must be positive", key="layer_plan")
    if spec.kind == "dense" and len(shape) != 1:
        raise ConfigurationError(f"{where}: dense needs a flat input (add a flatten layer)", key="layer_plan")
    if spec.kind == "conv2d":
        if len(shape) != 3 or len(spec.kernel) != 2:
            raise ConfigurationError(f"{where}: conv2d needs c×h×w input and a 2-D kernel", key="layer_plan")
        if spec.kernel[0] > shape[1] or spec.kernel[1] > shape[2] or spec.stride < 1:
            raise ConfigurationError(f"{where}: kernel {spec.kernel} does not fit", key="layer_plan")
    if spec.kind == "conv1d":
        if len(shape) != 2 or len(spec.kernel) != 1:
            raise ConfigurationError(f"{where}: conv1d needs k×d input and a 1-D kernel", key="layer_plan")
        if spec.kernel[0] > shape[0]:
            raise ConfigurationError(f"{where}: kernel span {spec.kernel[0]} exceeds {shape[0]} tokens",
                                     key="layer_plan")


def _init_block(spec: LayerSpec, in_shape, rng, prefix: str) -> tuple[Parameter, Parameter]:
    if spec.kind == "dense":
        shape = (in_shape[0], spec.width)
        fan_in, fan_out = in_shape[0], spec.width
    elif spec.kind == "conv2d":
        shape = (spec.width, in_shape[0], *spec.kernel)
        fan_in = in_shape[0] * spec.kernel[0] * spec.kernel[1]
        fan_out = spec.width * spec.kernel[0] * spec.kernel[1]
    else:
        shape = (spec.width, spec.kernel[0], in_shape[1])
        fan_in = spec.kernel[0] * in_shape[1]
        fan_out = spec.width * spec.kernel[0]
    w = Parameter(ad.glorot_uniform(shape, fan_in, fan_out, rng), f"{prefix}.weight")
    b = Parameter(np.zeros(spec.width), f"{prefix}.bias")
    return w, b


class ViewNetwork:
    """Feature extractor H_i for one view: a stack of blocks ending in a flat feature vector."""

    def __init__(self, spec: ViewSpec, blocks: list[Block]):
        self.spec = spec
        self.blocks = blocks

    @property
    def view_id(self) -> int:
        return self.spec.view_id

    @property
    def feature_width(self) -> int:
        return self.blocks[-1].out_shape[0]

    @property
    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.parameters]

    def forward(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[1:] != self.spec.input_shape:
            raise DimensionError(f"view {self.view_id}: expected per-sample shape {self.spec.input_shape}, "
                                 f"got {x.shape[1:]}")
        for block in self.blocks:
            x = block.forward(x)
        return x


def build_blocks(spec: ViewSpec, rng: np.random.Generator, prefix=lambda depth: f"v{depth}") -> list[Block]:
    if not spec.layer_plan:
        raise ConfigurationError(f"view {spec.view_id}: layer_plan is empty", key="layer_plan")
    blocks: list[Block] = []
    shape = spec.input_shape
    for layer in spec.layer_plan:
        _check_layer(layer, shape, spec.view_id)
        if layer.kind == "flatten":
            if not blocks:
                raise ConfigurationError(f"view {spec.view_id}: flatten cannot be the first layer",
                                         key="layer_plan")
            blocks[-1].flatten_after = True
            shape = blocks[-1].out_shape
            continue
        w, b = _init_block(layer, shape, rng, prefix(len(blocks)))
        blocks.append(Block(layer, shape, w, b))
        shape = blocks[-1].out_shape
    if len(shape) != 1:
        raise ConfigurationError(f"view {spec.view_id}: plan must end in flat features, ends in shape {shape}",
                                 key="layer_plan")
    return blocks


def build_view_network(spec: ViewSpec, seed: int) -> ViewNetwork:
    rng = np.random.default_rng(seed)
    blocks = build_blocks(spec, rng, prefix=lambda d: f"view{spec.view_id}.l{d}")
    return ViewNetwork(spec, blocks)


class FusionHead:
    """Dense layer over concatenated view features producing one column per task.

    ``view_ranges[v] = (start, stop)`` marks the rows of ``weight`` fed by view v.
    """

    def __init__(self, weight: Parameter, bias: Parameter, view_ranges: Sequence[tuple[int, int]],
                 tasks: Sequence[int], activation: str = "sigmoid"):
        rows = weight.shape[0]
        expected = 0
        for a, b in view_ranges:
            if a != expected or b < a:
                raise DimensionError(f"fusion head ranges {list(view_ranges)} do not partition [0, {rows})")
            expected = b
        if expected != rows:
            raise DimensionError(f"fusion head ranges cover {expected} rows, weight has {rows}")
        if weight.shape[1] != len(tasks) or bias.shape != (len(tasks),):
            raise DimensionError(f"fusion head weight {weight.shape} / bias {bias.shape} vs {len(tasks)} tasks")
        self.weight = weight
        self.bias = bias
        self.view_ranges = [tuple(r) for r in view_ranges]
        self.tasks = list(tasks)
        self.activation = activation

    @classmethod
    def init(cls, widths: Sequence[int], tasks: Sequence[int], rng: np.random.Generator, prefix="head",
             activation="sigmoid") -> "FusionHead":
        rows = int(sum(widths))
        bounds = np.cumsum([0] + list(widths))
        w = Parameter(ad.glorot_uniform((rows, len(tasks)), rows, len(tasks), rng), f"{prefix}.weight")
        b = Parameter(np.zeros(len(tasks)), f"{prefix}.bias")
        return cls(w, b, list(zip(bounds[:-1].tolist(), bounds[1:].tolist())), tasks, activation)

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def rename(self, prefix: str):
        self.weight.name = f"{prefix}.weight"
        self.bias.name = f"{prefix}.bias"

    def forward(self, features: Sequence) -> Tensor:
        return fuse_forward(features, self)

    def forward_view(self, features: Sequence, view: int) -> np.ndarray:
        """Prediction from one view alone: the head restricted to that view's rows."""
        a, b = self.view_ranges[view]
        z = np.asarray(ad.as_tensor(features[view]).data) @ self.weight.data[a:b] + self.bias.data
        return ad.activation(z, self.activation).data

    def column_subset(self, tasks: Sequence[int], prefix: str) -> "FusionHead":
        cols = [self.tasks.index(t) for t in tasks]
        w = Parameter(self.weight.data[:, cols].copy(), f"{prefix}.weight")
        b = Parameter(self.bias.data[cols].copy(), f"{prefix}.bias")
        return FusionHead(w, b, self.view_ranges, tasks, self.activation)


def fuse_forward(features: Sequence, head: FusionHead) -> Tensor:
    """sigma(concat(features) @ W_F + b_F).

    Each task column is computed from its own weight column so a column's value
    does not depend on which other tasks share the head (needed for bit-exact
    equivalence when a head is partitioned by widening).
    """
    features = [ad.as_tensor(f) for f in features]
    if len(features) != len(head.view_ranges):
        raise DimensionError(f"fusion head expects {len(head.view_ranges)} views, got {len(features)}")
    for v, (f, (a, b)) in enumerate(zip(features, head.view_ranges)):
        if f.ndim != 2 or f.shape[1] != b - a:
            raise DimensionError(f"view {v} features {f.shape} do not match head width {b - a}")
    h = ad.concat(features)
    cols = [ad.dense(h, ad.take_columns(head.weight, [j]), ad.take_columns(head.bias, [j]))
            for j in range(len(head.tasks))]
    return ad.activation(ad.concat(cols), head.activation)


class CrossStitchUnit:
    """Learned m×m linear mixing of the views' aligned feature maps."""

    def __init__(self, mixing: Parameter):
        if mixing.ndim != 2 or mixing.shape[0] != mixing.shape[1]:
            raise DimensionError(f"cross-stitch mixing must be square, got {mixing.shape}")
        self.mixing = mixing

    @classmethod
    def init(cls, m: int, rng: np.random.Generator, name="stitch", noise: float = 0.01) -> "CrossStitchUnit":
        return cls(Parameter(np.eye(m) + rng.uniform(-noise, noise, size=(m, m)), name))

    @property
    def parameters(self) -> list[Parameter]:
        return [self.mixing]

    def forward(self, features: Sequence) -> list[Tensor]:
        return cross_stitch_mix(features, self)

    def copy(self, name: str) -> "CrossStitchUnit":
        return CrossStitchUnit(self.mixing.copy(name))


def cross_stitch_mix(features: Sequence, unit: CrossStitchUnit) -> list[Tensor]:
    features = [ad.as_tensor(f) for f in features]
    m = unit.mixing.shape[0]
    if len(features) != m:
        raise DimensionError(f"cross-stitch unit mixes {m} views, got {len(features)}")
    if len({f.shape for f in features}) != 1:
        raise DimensionError(f"cross-stitch needs one common shape, got {[f.shape for f in features]}")
    mixed = ad.mix(unit.mixing, ad.stack(features))
    return [ad.index(mixed, v) for v in range(m)]


def extract_view_weights(heads) -> tuple[np.ndarray, np.ndarray]:
    """Mean absolute fusion weight per view, and those means normalised to shares.

    Accepts one head or a list of heads (after widening every branch owns one);
    entries from all heads are pooled per view.
    """
    if isinstance(heads, FusionHead):
        heads = [heads]
    m = len(heads[0].view_ranges)
    sums = np.zeros(m)
    counts = np.zeros(m)
    for head in heads:
        for v, (a, b) in enumerate(head.view_ranges):
            block = np.abs(head.weight.data[a:b])
            sums[v] += block.sum()
            counts[v] += block.size
    raw = np.divide(sums, counts, out=np.zeros(m), where=counts > 0)
    total = raw.sum()
    shares = raw / total if total > 0 else np.zeros(m)
    return raw, shares
