import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from deep_mtmv.datagen import (MultiViewDataset, PlantedSpec, extract_views_by_parity, gen_synthetic,
                               interleave_views, load_dataset, read_tensor, save_dataset, write_tensor)
from deep_mtmv.errors import ConfigurationError, DimensionError, ValidationError


def probe_accuracy(ds, views):
    """Mean held-out accuracy of a per-task logistic-regression probe."""
    tr, te = ds.indices("train"), ds.indices("test")
    x = np.hstack([ds.views[v].reshape(ds.n, -1) for v in views])
    return float(np.mean([LogisticRegression(max_iter=2000).fit(x[tr], ds.labels[tr, j]).score(x[te], ds.labels[te, j])
                          for j in range(ds.T)]))


class TestGenerator:
    def test_informative_view_only(self):
        for seed in range(3):
            ds = gen_synthetic(PlantedSpec([[0, 1, 2], [3, 4, 5]], [1.0, 0.0], seed=seed), 200, [(12,), (12,)])
            assert probe_accuracy(ds, [0]) >= 0.9
            assert probe_accuracy(ds, [1]) <= 0.6

    def test_complementary_views(self):
        ds = gen_synthetic(PlantedSpec([[0, 1, 2], [3, 4, 5]], [1.0, 1.0], seed=0), 6000, [(12,), (12,)])
        assert probe_accuracy(ds, [0]) <= 0.75 and probe_accuracy(ds, [1]) <= 0.75
        assert probe_accuracy(ds, [0, 1]) >= 0.9

    def test_deterministic(self, tmp_path):
        spec = PlantedSpec([[0, 1], [2]], [0.7, 0.3], seed=11)
        a, b = gen_synthetic(spec, 30, [(4,), (1, 3, 3)]), gen_synthetic(spec, 30, [(4,), (1, 3, 3)])
        save_dataset(a, tmp_path / "a")
        save_dataset(b, tmp_path / "b")
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_shapes_and_modalities(self):
        ds = gen_synthetic(PlantedSpec([[0], [1]], [1.0, 1.0, 1.0], seed=0), 20, [(5,), (2, 3, 3), (4, 6)])
        assert ds.modalities == ["vector", "image2d", "sequence1d"]
        assert ds.input_shapes() == [(5,), (2, 3, 3), (4, 6)]
        np.testing.assert_allclose(np.linalg.norm(ds.views[2], axis=2), 1.0)
        assert set(np.unique(ds.labels)) <= {0.0, 1.0}
        assert ds.X(1, 0) is ds.X(1, 1)

    def test_split_fractions(self):
        ds = gen_synthetic(PlantedSpec([[0]], [1.0], seed=0), 100, [(3,)])
        assert [ds.indices(s).size for s in ("train", "valid", "test")] == [64, 16, 20]

    @pytest.mark.parametrize("kwargs,n,dims", [
        ({}, 5, [(3,)]),
        ({}, 20, [(0,)]),
        ({}, 20, [(2, 2, 2, 2)]),
        ({}, 20, [(3,), (3,)]),
    ])
    def test_bad_arguments(self, kwargs, n, dims):
        with pytest.raises(ConfigurationError):
            gen_synthetic(PlantedSpec([[0]], [1.0], **kwargs), n, dims)

    @pytest.mark.parametrize("kwargs", [
        dict(task_groups=[[0], [0, 1]], signal=[1.0]),
        dict(task_groups=[[0], []], signal=[1.0]),
        dict(task_groups=[[0, 2]], signal=[1.0]),
        dict(task_groups=[[0]], signal=[1.5]),
        dict(task_groups=[[0]], signal=[1.0], noise=-1.0),
    ])
    def test_bad_planted_spec(self, kwargs):
        with pytest.raises(ConfigurationError):
            PlantedSpec(**kwargs)


class TestParity:
    def test_two_way_columns(self):
        img = np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 1, 1, 4).repeat(2, axis=2)
        a, b = extract_views_by_parity(img, "two")
        np.testing.assert_array_equal(a[0, 0, 0], [0, 2])
        np.testing.assert_array_equal(b[0, 0, 0], [1, 3])
        assert a.shape[2] == img.shape[2]

    def test_four_way_covers_each_pixel_once(self):
        img = np.arange(4.0).reshape(1, 1, 2, 2)
        views = extract_views_by_parity(img, "four")
        assert len(views) == 4 and all(v.shape == (1, 1, 1, 1) for v in views)
        assert sorted(float(v.ravel()[0]) for v in views) == [0.0, 1.0, 2.0, 3.0]

    @given(st.integers(1, 3), st.integers(1, 2), st.integers(2, 7), st.integers(2, 7), st.sampled_from(["two", "four"]))
    @settings(max_examples=40, deadline=None)
    def test_interleave_inverts_split(self, n, c, h, w, mode):
        img = np.random.default_rng(h * 31 + w).standard_normal((n, c, h, w))
        views = extract_views_by_parity(img, mode)
        assert sum(v[0, 0].size for v in views) == h * w
        np.testing.assert_array_equal(interleave_views(views, mode), img)

    @pytest.mark.parametrize("shape,mode", [((1, 1, 3, 1), "two"), ((1, 1, 1, 4), "four"), ((3, 4), "two")])
    def test_too_small(self, shape, mode):
        with pytest.raises(DimensionError):
            extract_views_by_parity(np.zeros(shape), mode)


class TestDatasetContainer:
    def test_labels_must_be_binary(self):
        with pytest.raises(ValidationError):
            MultiViewDataset([np.zeros((2, 1))], ["vector"], np.array([[0.5], [1.0]]), np.array(["train"] * 2))

    def test_example_count_mismatch(self):
        with pytest.raises(DimensionError):
            MultiViewDataset([np.zeros((3, 1))], ["vector"], np.zeros((2, 1)), np.array(["train"] * 2))

    def test_select_views(self, small_dataset):
        sub = small_dataset.select_views([1])
        assert sub.m == 1 and sub.views[0] is small_dataset.views[1]
        with pytest.raises(ConfigurationError):
            small_dataset.select_views([2])


@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 3), groups=st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_save_load_identity(tmp_path_factory, seed, m, groups):
    r = np.random.default_rng(seed)
    shapes = [[(int(r.integers(1, 5)),), (1, 3, 3), (3, 2)][int(r.integers(3))] for _ in range(m)]
    task_groups, t = [], 0
    for _ in range(groups):
        size = int(r.integers(1, 3))
        task_groups.append(list(range(t, t + size)))
        t += size
    spec = PlantedSpec(task_groups, r.uniform(0, 1, m).tolist(), noise=float(r.uniform(0, 0.5)), seed=seed,
                       latent_dim=max(groups, 2))
    ds = gen_synthetic(spec, int(r.integers(10, 30)), shapes)
    out = tmp_path_factory.mktemp("ds")
    save_dataset(ds, out)
    assert load_dataset(out) == ds


@given(st.lists(st.integers(1, 4), min_size=0, max_size=4), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_tensor_round_trip(tmp_path_factory, shape, seed):
    arr = np.random.default_rng(seed).standard_normal(shape)
    path = tmp_path_factory.mktemp("t") / "x.mtmv"
    write_tensor(path, arr)
    back = read_tensor(path, expected_shape=shape)
    assert back.shape == arr.shape and back.tobytes() == arr.tobytes()
