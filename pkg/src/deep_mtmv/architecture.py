"""
Branching multi-view architecture.

Each view has the same number D of blocks. Block index ``l`` counts from the
input (0) up; *depth* counts from the output, with the fusion heads at depth 0
and block ``l`` at depth ``D - l``. Every block index holds a list of branches,
each owning a set of tasks and one block per view. Task sets at one index
partition the tasks, and the partition at index l+1 refines the one at l.
One fusion head sits on top of every branch of the last block index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError, FormatError, StructuralError
from .nets import Block, CrossStitchUnit, FusionHead, ViewSpec, build_blocks, extract_view_weights

ARCH_FORMAT = "mtmv-architecture"
ARCH_VERSION = 1


@dataclass
class Branch:
    tasks: tuple[int, ...]
    blocks: list[Block]  # one per view
    stitch: CrossStitchUnit | None = None

    @property
    def parameters(self) -> list[Parameter]:
        params = [p for b in self.blocks for p in b.parameters]
        if self.stitch is not None:
            params += self.stitch.parameters
        return params


@dataclass
class ArchitectureTree:
    view_specs: list[ViewSpec]
    n_tasks: int
    layers: list[list[Branch]]
    heads: list[FusionHead]
    cross_stitch: bool = False
    stitch_layers: list[int] = field(default_factory=list)
    splits: list[dict] = field(default_factory=list)

    # ------------------------------------------------------------------ build

    @classmethod
    def build(cls, view_specs: Sequence[ViewSpec], n_tasks: int, seed: int, cross_stitch: bool = False,
              head_activation: str = "sigmoid") -> "ArchitectureTree":
        if not view_specs:
            raise ConfigurationError("at least one view is required", key="views")
        if n_tasks < 1:
            raise ConfigurationError("at least one task is required", key="tasks")
        rng = np.random.default_rng(seed)
        per_view = [build_blocks(spec, rng, prefix=lambda l, v=v: _block_name(v, l, 0))
                    for v, spec in enumerate(view_specs)]
        depth_counts = {len(b) for b in per_view}
        if len(depth_counts) != 1:
            raise ConfigurationError(
                f"all views need the same number of parametric layers, got {[len(b) for b in per_view]}",
                key="layer_plan")
        n_blocks = depth_counts.pop()
        all_tasks = tuple(range(n_tasks))
        m = len(view_specs)
        stitch_layers = []
        if cross_stitch and m > 1:
            stitch_layers = [l for l in range(n_blocks) if len({b[l].out_shape for b in per_view}) == 1]
        layers = []
        for l in range(n_blocks):
            stitch = CrossStitchUnit.init(m, rng, _stitch_name(l, 0)) if l in stitch_layers else None
            layers.append([Branch(all_tasks, [per_view[v][l] for v in range(m)], stitch)])
        widths = [b[-1].out_shape[0] for b in per_view]
        head = FusionHead.init(widths, list(all_tasks), rng, prefix=_head_name(0), activation=head_activation)
        return cls(list(view_specs), n_tasks, layers, [head], cross_stitch, stitch_layers)

    # ------------------------------------------------------------- structure

    @property
    def m(self) -> int:
        return len(self.view_specs)

    @property
    def n_blocks(self) -> int:
        return len(self.layers)

    def layer_index(self, depth: int) -> int:
        if not 1 <= depth <= self.n_blocks:
            raise StructuralError(f"depth {depth} outside 1..{self.n_blocks}")
        return self.n_blocks - depth

    def partition(self, depth: int) -> list[tuple[int, ...]]:
        """Task sets of the branches at ``depth`` (depth 0 = one set per head)."""
        if depth == 0:
            return [tuple(h.tasks) for h in self.heads]
        return [b.tasks for b in self.layers[self.layer_index(depth)]]

    def leaf_partition(self) -> list[tuple[int, ...]]:
        return [b.tasks for b in self.layers[-1]]

    def next_split_depth(self) -> int | None:
        depth = len(self.splits) + 1
        return depth if depth <= self.n_blocks else None

    def children(self, depth: int) -> list[tuple[int, ...]]:
        """Task sets that feed from the block at ``depth``: the branches one level
        closer to the output, or single tasks when ``depth`` is the top block."""
        if depth == 1:
            return [(t,) for t in range(self.n_tasks)]
        return self.partition(depth - 1)

    def parameters(self) -> list[Parameter]:
        params = [p for layer in self.layers for br in layer for p in br.parameters]
        return params + [p for h in self.heads for p in h.parameters]

    def view_weight_groups(self) -> list[list[Parameter]]:
        """Per view, the weight tensors (no biases) of every branch."""
        return [[br.blocks[v].weight for layer in self.layers for br in layer] for v in range(self.m)]

    def view_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return extract_view_weights(self.heads)

    def check(self):
        tasks = set(range(self.n_tasks))
        for l, layer in enumerate(self.layers):
            flat = [t for br in layer for t in br.tasks]
            if sorted(flat) != sorted(tasks):
                raise StructuralError(f"branches at block {l} do not partition the tasks: {flat}")
            if l > 0:
                parents = [set(br.tasks) for br in self.layers[l - 1]]
                for br in layer:
                    if not any(set(br.tasks) <= p for p in parents):
                        raise StructuralError(f"branch {br.tasks} at block {l} straddles parent branches")
            for br in layer:
                if len(br.blocks) != self.m:
                    raise StructuralError(f"branch {br.tasks} at block {l} lacks a block for every view")
        heads = [tuple(h.tasks) for h in self.heads]
        if heads != self.leaf_partition():
            raise StructuralError(f"heads {heads} do not match top branches {self.leaf_partition()}")

    def _parent_index(self, l: int, branch: Branch) -> int:
        for i, br in enumerate(self.layers[l - 1]):
            if set(branch.tasks) <= set(br.tasks):
                return i
        raise StructuralError(f"no parent for branch {branch.tasks} at block {l}")

    # --------------------------------------------------------------- forward

    def features(self, inputs: Sequence) -> list[list[Tensor]]:
        """Per top-level branch, the list of per-view feature tensors."""
        if len(inputs) != self.m:
            raise ConfigurationError(f"model has {self.m} views, got {len(inputs)} inputs", key="views")
        prev = [[ad.as_tensor(x) for x in inputs]]
        for l, layer in enumerate(self.layers):
            cur = []
            for br in layer:
                src = prev[0] if l == 0 else prev[self._parent_index(l, br)]
                feats = [blk.forward(x) for blk, x in zip(br.blocks, src)]
                if br.stitch is not None:
                    feats = br.stitch.forward(feats)
                cur.append(feats)
            prev = cur
        return prev

    def forward(self, inputs: Sequence) -> Tensor:
        """N×T predictions with columns in task order."""
        feats = self.features(inputs)
        outs = [head.forward(f) for head, f in zip(self.heads, feats)]
        order = [t for head in self.heads for t in head.tasks]
        joined = ad.concat(outs)
        if order == list(range(self.n_tasks)):
            return joined
        return ad.take_columns(joined, list(np.argsort(order)))

    def predict(self, inputs: Sequence) -> np.ndarray:
        return self.forward(inputs).data

    def predict_view(self, inputs: Sequence, view: int) -> np.ndarray:
        """N×T predictions when each head reads only ``view``'s features."""
        feats = self.features(inputs)
        n = ad.as_tensor(inputs[0]).shape[0]
        out = np.zeros((n, self.n_tasks))
        for head, f in zip(self.heads, feats):
            out[:, head.tasks] = head.forward_view(f, view)
        return out

    # ----------------------------------------------------------------- copy

    def copy(self) -> "ArchitectureTree":
        return ArchitectureTree.from_dict(self.to_dict(), self.state_dict())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = [p.name for p in params if p.name not in state]
        if missing:
            raise FormatError(f"parameter file lacks {missing[:3]}{'...' if len(missing) > 3 else ''}")
        for p in params:
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.shape:
                raise FormatError(f"parameter {p.name}: expected shape {p.shape}, found {value.shape}")
            p.data = value.copy()
            p.zero_grad()

    # -------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "format": ARCH_FORMAT,
            "version": ARCH_VERSION,
            "n_tasks": self.n_tasks,
            "views": [s.to_dict() for s in self.view_specs],
            "layers": [
                {"index": l, "depth": self.n_blocks - l,
                 "branches": [{"tasks": list(br.tasks),
                               "params": [p.name for p in br.parameters]} for br in layer]}
                for l, layer in enumerate(self.layers)
            ],
            "heads": [{"tasks": list(h.tasks), "weight_shape": list(h.weight.shape),
                       "view_ranges": [list(r) for r in h.view_ranges], "activation": h.activation}
                      for h in self.heads],
            "cross_stitch": {"enabled": self.cross_stitch, "layers": list(self.stitch_layers)},
            "splits": self.splits,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, state: dict[str, np.ndarray] | None = None) -> "ArchitectureTree":
        try:
            if d.get("format") != ARCH_FORMAT:
                raise FormatError("not an architecture document")
            specs = [ViewSpec.from_dict(v) for v in d["views"]]
            tree = cls.build(specs, int(d["n_tasks"]), seed=0, cross_stitch=d["cross_stitch"]["enabled"],
                             head_activation=d["heads"][0]["activation"])
            if tree.stitch_layers != list(d["cross_stitch"]["layers"]):
                raise FormatError("cross-stitch placement does not match the view plans")
            base = tree.layers
            layers = []
            for l, entry in enumerate(d["layers"]):
                branches = []
                for bi, b in enumerate(entry["branches"]):
                    blocks = [blk.copy(_block_name(v, l, bi)) for v, blk in enumerate(base[l][0].blocks)]
                    stitch = base[l][0].stitch.copy(_stitch_name(l, bi)) if base[l][0].stitch else None
                    branches.append(Branch(tuple(b["tasks"]), blocks, stitch))
                layers.append(branches)
            widths = [r[1] - r[0] for r in d["heads"][0]["view_ranges"]]
            heads = [FusionHead.init(widths, h["tasks"], np.random.default_rng(0), prefix=_head_name(k),
                                     activation=h["activation"]) for k, h in enumerate(d["heads"])]
            tree.layers, tree.heads, tree.splits = layers, heads, list(d.get("splits", []))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise FormatError(f"malformed architecture document ({exc!r})") from exc
        tree.check()
        if state is not None:
            tree.load_state_dict(state)
        return tree

    @classmethod
    def from_json(cls, text: str, state=None) -> "ArchitectureTree":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"architecture is not valid JSON: {exc}") from exc
        return cls.from_dict(d, state)


def _block_name(view: int, layer: int, branch: int) -> str:
    return f"view{view}.l{layer}.b{branch}"


def _stitch_name(layer: int, branch: int) -> str:
    return f"stitch.l{layer}.b{branch}"


def _head_name(k: int) -> str:
    return f"head{k}"


def split_layer(tree: ArchitectureTree, depth: int, assignment: Sequence[int], d: int | None = None
                ) -> ArchitectureTree:
    """Replicate the block at ``depth`` in every view into d branches.

    ``assignment[c]`` is the new branch of child ``c`` (see
    :meth:`ArchitectureTree.children`). Copies carry bit-identical weights, so
    the returned model computes the same function as ``tree``.
    """
    labels = [int(a) for a in assignment]
    d = (max(labels) + 1 if labels else 0) if d is None else int(d)
    l = tree.layer_index(depth)
    if depth != tree.next_split_depth():
        raise StructuralError(f"depth {depth} cannot be split now; next splittable depth is "
                              f"{tree.next_split_depth()}")
    if len(tree.layers[l]) != 1:
        raise StructuralError(f"depth {depth} is already split")
    children = tree.children(depth)
    if len(labels) != len(children):
        raise StructuralError(f"assignment has {len(labels)} entries for {len(children)} child branches")
    if not 1 <= d <= len(children):
        raise StructuralError(f"cannot create {d} branches from {len(children)} children")
    if sorted(set(labels)) != list(range(d)):
        raise StructuralError(f"assignment {labels} does not use every branch id in 0..{d - 1}")

    new = tree.copy()
    old = new.layers[l][0]
    groups = [tuple(sorted(t for c, lab in enumerate(labels) if lab == k for t in children[c])) for k in range(d)]
    branches = []
    for k, tasks in enumerate(groups):
        if k == 0:
            blocks, stitch = old.blocks, old.stitch
        else:
            blocks = [blk.copy(_block_name(v, l, k)) for v, blk in enumerate(old.blocks)]
            stitch = old.stitch.copy(_stitch_name(l, k)) if old.stitch else None
        branches.append(Branch(tasks, blocks, stitch))
    new.layers[l] = branches
    if depth == 1:
        head = new.heads[0]
        new.heads = [head.column_subset(list(tasks), _head_name(k)) for k, tasks in enumerate(groups)]
    new.splits.append({"depth": depth, "d": d, "assignment": labels, "groups": [list(g) for g in groups]})
    new.check()
    return new
