import json

import numpy as np
import pytest

from deep_mtmv.architecture import ArchitectureTree, split_layer
from deep_mtmv.errors import ConfigurationError, FormatError, StructuralError
from deep_mtmv.nets import LayerSpec, ViewSpec


def image_text_specs():
    image = ViewSpec(0, "image2d", (1, 6, 6), [LayerSpec("conv2d", 2, (3, 3)), LayerSpec("flatten"),
                                                LayerSpec("dense", 5), LayerSpec("dense", 4)])
    text = ViewSpec(1, "sequence1d", (5, 3), [LayerSpec("conv1d", 3, (2,)), LayerSpec("flatten"),
                                              LayerSpec("dense", 6), LayerSpec("dense", 4)])
    return [image, text]


def random_inputs(tree, rng, n=7):
    return [rng.standard_normal((n, *s.input_shape)) for s in tree.view_specs]


def random_tree(rng, cross_stitch=False):
    m = int(rng.integers(1, 4))
    depth = int(rng.integers(1, 4))
    specs = []
    for v in range(m):
        widths = [int(w) for w in rng.integers(2, 6, depth)]
        if cross_stitch:
            widths[-1] = 3
        kind = ["vector", "image2d", "sequence1d"][int(rng.integers(3))]
        if kind == "vector":
            plan = [LayerSpec("dense", w) for w in widths]
            shape = (int(rng.integers(2, 6)),)
        elif kind == "image2d":
            plan = [LayerSpec("conv2d", 2, (2, 2)), LayerSpec("flatten")] + [LayerSpec("dense", w) for w in widths[1:]]
            plan = plan if depth > 1 else [LayerSpec("conv2d", 2, (2, 2)), LayerSpec("flatten")]
            shape = (1, 4, 4)
        else:
            plan = [LayerSpec("conv1d", 2, (2,)), LayerSpec("flatten")] + [LayerSpec("dense", w) for w in widths[1:]]
            plan = plan if depth > 1 else [LayerSpec("conv1d", 2, (2,)), LayerSpec("flatten")]
            shape = (4, 3)
        specs.append(ViewSpec(v, kind, shape, plan))
    return ArchitectureTree.build(specs, int(rng.integers(2, 7)), seed=int(rng.integers(1000)),
                                  cross_stitch=cross_stitch)


def random_assignment(rng, c):
    d = int(rng.integers(1, c + 1))
    labels = np.concatenate([np.arange(d), rng.integers(0, d, c - d)])
    rng.shuffle(labels)
    return [int(x) for x in labels]


class TestBuild:
    def test_single_branch_everywhere(self):
        tree = ArchitectureTree.build(image_text_specs(), 5, seed=0)
        assert tree.n_blocks == 3
        assert all(tree.partition(d) == [tuple(range(5))] for d in range(0, 4))
        assert tree.next_split_depth() == 1

    def test_unequal_block_counts(self):
        specs = [ViewSpec(0, "vector", (3,), [LayerSpec("dense", 2)]),
                 ViewSpec(1, "vector", (3,), [LayerSpec("dense", 2), LayerSpec("dense", 2)])]
        with pytest.raises(ConfigurationError):
            ArchitectureTree.build(specs, 2, seed=0)

    def test_cross_stitch_only_where_shapes_agree(self):
        tree = ArchitectureTree.build(image_text_specs(), 3, seed=0, cross_stitch=True)
        assert tree.stitch_layers == [2]

    def test_parameter_names_unique(self):
        tree = ArchitectureTree.build(image_text_specs(), 3, seed=0, cross_stitch=True)
        names = [p.name for p in tree.parameters()]
        assert len(names) == len(set(names))


class TestSplit:
    def test_five_task_round_two_topology(self, rng):
        # tasks 1, 2, 4 (0-based 0, 1, 3) share the first copy, tasks 3, 5 the second
        tree = ArchitectureTree.build(image_text_specs(), 5, seed=1)
        new = split_layer(tree, 1, [0, 0, 1, 0, 1])
        top = new.layers[-1]
        assert [b.tasks for b in top] == [(0, 1, 3), (2, 4)]
        for v in range(2):
            original = tree.layers[-1][0].blocks[v]
            for br in top:
                assert br.blocks[v].weight.data.tobytes() == original.weight.data.tobytes()
                assert br.blocks[v].out_shape == original.out_shape
        assert [h.tasks for h in new.heads] == [[0, 1, 3], [2, 4]]
        assert new.partition(2) == [tuple(range(5))]
        assert new.next_split_depth() == 2
        x = random_inputs(tree, rng)
        assert new.predict(x).tobytes() == tree.predict(x).tobytes()

    def test_copies_are_independent(self):
        tree = ArchitectureTree.build(image_text_specs(), 4, seed=0)
        new = split_layer(tree, 1, [0, 1, 0, 1])
        new.layers[-1][1].blocks[0].weight.data += 1.0
        assert not np.array_equal(new.layers[-1][0].blocks[0].weight.data, new.layers[-1][1].blocks[0].weight.data)
        assert np.array_equal(tree.layers[-1][0].blocks[0].weight.data, new.layers[-1][0].blocks[0].weight.data)

    def test_d1_changes_only_bookkeeping(self, rng):
        tree = ArchitectureTree.build(image_text_specs(), 3, seed=0)
        new = split_layer(tree, 1, [0, 0, 0])
        assert new.leaf_partition() == tree.leaf_partition()
        assert new.state_dict().keys() == tree.state_dict().keys()
        assert new.splits == [{"depth": 1, "d": 1, "assignment": [0, 0, 0], "groups": [[0, 1, 2]]}]

    def test_second_split_groups_branches(self, rng):
        tree = ArchitectureTree.build(image_text_specs(), 5, seed=2)
        t1 = split_layer(tree, 1, [0, 1, 2, 0, 1])
        t2 = split_layer(t1, 2, [0, 0, 1])
        assert t2.partition(2) == [(0, 1, 3, 4), (2,)]
        assert t2.partition(1) == [(0, 3), (1, 4), (2,)]
        x = random_inputs(tree, rng)
        assert t2.predict(x).tobytes() == tree.predict(x).tobytes()

    @pytest.mark.parametrize("args,match", [
        ((2, [0, 0, 0]), "next splittable"),
        ((1, [0, 1]), "3 child"),
        ((1, [0, 2, 2]), "every branch"),
        ((1, [0, 1, 2], 4), "cannot create"),
    ])
    def test_invalid_splits(self, args, match):
        tree = ArchitectureTree.build(image_text_specs(), 3, seed=0)
        with pytest.raises(StructuralError, match=match):
            split_layer(tree, *args)

    def test_already_split(self):
        tree = split_layer(ArchitectureTree.build(image_text_specs(), 3, seed=0), 1, [0, 1, 1])
        tree.splits.clear()
        with pytest.raises(StructuralError):
            split_layer(tree, 1, [0, 1, 1])

    def test_check_catches_straddling_branch(self):
        tree = split_layer(ArchitectureTree.build(image_text_specs(), 4, seed=0), 1, [0, 0, 1, 1])
        tree = split_layer(tree, 2, [0, 1])
        tree.layers[-1][0].tasks, tree.layers[-1][1].tasks = (0, 2), (1, 3)
        with pytest.raises(StructuralError):
            tree.check()

    @pytest.mark.parametrize("seed", range(10))
    def test_random_splits_preserve_outputs(self, seed):
        rng = np.random.default_rng(seed)
        tree = random_tree(rng, cross_stitch=bool(seed % 2))
        x = random_inputs(tree, rng, n=5)
        before = tree.predict(x)
        while tree.next_split_depth() is not None:
            depth = tree.next_split_depth()
            tree = split_layer(tree, depth, random_assignment(rng, len(tree.children(depth))))
            assert tree.predict(x).tobytes() == before.tobytes()
            for depth in range(1, tree.n_blocks):
                finer, coarser = tree.partition(depth), tree.partition(depth + 1)
                assert all(any(set(f) <= set(c) for c in coarser) for f in finer)


class TestSerialization:
    def test_round_trip_preserves_function(self, rng):
        tree = ArchitectureTree.build(image_text_specs(), 5, seed=3, cross_stitch=True)
        tree = split_layer(split_layer(tree, 1, [0, 1, 0, 2, 1]), 2, [0, 1, 1])
        back = ArchitectureTree.from_json(tree.to_json(), tree.state_dict())
        assert back.to_json() == tree.to_json()
        x = random_inputs(tree, rng)
        assert back.predict(x).tobytes() == tree.predict(x).tobytes()

    def test_stable_field_names(self):
        doc = json.loads(ArchitectureTree.build(image_text_specs(), 2, seed=0).to_json())
        assert set(doc) == {"format", "version", "n_tasks", "views", "layers", "heads", "cross_stitch", "splits"}
        assert doc["format"] == "mtmv-architecture" and doc["version"] == 1

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(format="other"),
        lambda d: d.pop("views"),
        lambda d: d["layers"][-1]["branches"][0].update(tasks=[0]),
        lambda d: d["heads"].pop(),
    ])
    def test_malformed_documents(self, mutate):
        doc = json.loads(ArchitectureTree.build(image_text_specs(), 2, seed=0).to_json())
        mutate(doc)
        with pytest.raises((FormatError, StructuralError)):
            ArchitectureTree.from_dict(doc)

    def test_missing_parameters(self):
        tree = ArchitectureTree.build(image_text_specs(), 2, seed=0)
        state = tree.state_dict()
        state.pop(next(iter(state)))
        with pytest.raises(FormatError):
            ArchitectureTree.from_json(tree.to_json(), state)

    def test_not_json(self):
        with pytest.raises(FormatError):
            ArchitectureTree.from_json("{nope")
