import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from fltrust import data
from fltrust.data import Dataset, PartitionConfig, RootConfig, TriggerSpec
from fltrust.errors import ConfigError, FormatError
from fltrust.model import LOGISTIC, ModelSpec, gradient, predict_labels


def test_zero_spread_puts_examples_on_class_means():
    ds = data.generate_synthetic(num_classes=4, input_dim=6, per_class=5, spread=0.0, seed=0)
    for x, label in zip(ds.X, ds.y):
        expected = np.zeros(6)
        expected[label] = data.SEPARATION
        assert np.array_equal(x, expected)


def test_class_means_wrap_around_input_dim():
    ds = data.generate_synthetic(num_classes=5, input_dim=3, per_class=2, spread=0.0, seed=0)
    assert np.all(ds.X[ds.y == 4][:, 1] == data.SEPARATION)


@pytest.mark.parametrize("M,per_class", [(2, 1), (10, 200), (7, 13)])
def test_synthetic_is_balanced(M, per_class):
    ds = data.generate_synthetic(num_classes=M, input_dim=8, per_class=per_class, seed=3)
    assert np.all(ds.label_counts() == per_class)


def test_default_synthetic_is_learnable():
    train = data.generate_synthetic(seed=0)
    test = data.generate_synthetic(per_class=100, seed=1)
    spec = ModelSpec(LOGISTIC, 32, 10)
    w = np.zeros(spec.num_params)
    for _ in range(300):
        w -= 0.5 * gradient(spec, w, train.X, train.y)
    assert np.mean(predict_labels(spec, w, test.X) != test.y) < 0.05


# -- IDX ------------------------------------------------------------------------

def _write_pair(tmp_path, images, labels):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    oracles.write_idx_images(img, images)
    oracles.write_idx_labels(lab, labels)
    return img, lab


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (2, 28, 28))
    img, lab = _write_pair(tmp_path, images, [7, 3])
    ds = data.load_idx(img, lab)
    assert ds.X.shape == (2, 28 * 28)
    assert ds.y.tolist() == [7, 3]
    assert np.allclose(ds.X * 255, images.reshape(2, -1))
    assert ds.X.min() >= 0 and ds.X.max() <= 1


def test_idx_gzip(tmp_path):
    img, lab = _write_pair(tmp_path, np.full((1, 2, 2), 255), [1])
    for p in (img, lab):
        (tmp_path / (p.name + ".gz")).write_bytes(gzip.compress(p.read_bytes()))
    ds = data.load_idx(tmp_path / "img.idx.gz", tmp_path / "lab.idx.gz")
    assert np.all(ds.X == 1.0)


def test_idx_zero_image(tmp_path):
    img, lab = _write_pair(tmp_path, np.zeros((1, 4, 4)), [0])
    assert np.all(data.load_idx(img, lab).X == 0.0)


def test_idx_truncated_header(tmp_path):
    img, lab = _write_pair(tmp_path, np.zeros((1, 4, 4)), [0])
    img.write_bytes(img.read_bytes()[:10])
    with pytest.raises(FormatError, match="offset 10"):
        data.load_idx(img, lab)


def test_idx_bad_magic_and_count_mismatch(tmp_path):
    img, lab = _write_pair(tmp_path, np.zeros((2, 4, 4)), [0, 1])
    with pytest.raises(FormatError, match="magic"):
        data.load_idx(lab, lab)
    oracles.write_idx_labels(lab, [0])
    with pytest.raises(FormatError, match="labels"):
        data.load_idx(img, lab)


def test_idx_truncated_pixels(tmp_path):
    img, lab = _write_pair(tmp_path, np.zeros((2, 4, 4)), [0, 1])
    img.write_bytes(img.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated pixel"):
        data.load_idx(img, lab)


def test_csv_round_trip(tmp_path):
    ds = data.generate_synthetic(num_classes=3, input_dim=4, per_class=3, seed=2)
    data.save_csv(ds, tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text()
    assert text.splitlines()[0] == "f0,f1,f2,f3,label"
    back = data.load_csv(tmp_path / "d.csv", 3)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)


# -- partitioning ------------------------------------------------------------------

def _owner_groups(shards, n, M, seed):
    """Rebuild client -> group from the partitioner's own group layout."""
    rng = np.random.default_rng(seed)
    clients = rng.permutation(n)
    bounds = np.cumsum([0] + data.group_sizes(n, M))
    return {int(c): g for g in range(M) for c in clients[bounds[g] : bounds[g + 1]]}


def _own_group_fraction(q, N=10_000, M=10, n=20, seed=0):
    ds = data.generate_synthetic(num_classes=M, input_dim=12, per_class=N // M, seed=seed)
    shards = data.partition(ds, PartitionConfig(n, q, seed))
    group = _owner_groups(shards, n, M, seed)
    own = sum(int(np.sum(s.y == group[c])) for c, s in enumerate(shards))
    return own / N


def test_partition_q_one_keeps_labels_in_their_group():
    assert _own_group_fraction(1.0, N=2000) == 1.0


def test_partition_q_half_monte_carlo():
    assert abs(_own_group_fraction(0.5) - 0.5) <= 0.02


def test_partition_iid_is_uniform_over_groups():
    # q = 1/M: own group no likelier than any other
    assert abs(_own_group_fraction(0.1) - 0.1) <= 0.02


def test_partition_concentration_grows_with_q():
    assert _own_group_fraction(0.7) > _own_group_fraction(0.4) + 0.01


@given(st.integers(10, 30), st.floats(0.05, 1.0), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_partition_preserves_examples(n, q, seed):
    ds = data.generate_synthetic(num_classes=10, input_dim=5, per_class=20, seed=seed)
    shards = data.partition(ds, PartitionConfig(n, q, seed))
    assert len(shards) == n
    assert sum(len(s) for s in shards) == len(ds)
    merged = data.concat(shards)
    key = lambda d: sorted(map(tuple, np.column_stack([d.X, d.y])))
    assert key(merged) == key(ds)


def test_group_sizes_are_near_even():
    assert data.group_sizes(23, 10) == [3, 3, 3] + [2] * 7


def test_partition_needs_enough_clients():
    ds = data.generate_synthetic(num_classes=10, input_dim=5, per_class=2)
    with pytest.raises(ConfigError):
        data.partition(ds, PartitionConfig(9, 0.5))


# -- root dataset ------------------------------------------------------------------------

def test_root_default_size_and_disjointness():
    ds = data.generate_synthetic(seed=4)
    root, rest = data.sample_root(ds, RootConfig(seed=1))
    assert len(root) == 100
    assert len(root) + len(rest) == len(ds)
    rows = lambda d: set(map(tuple, np.column_stack([d.X, d.y])))
    assert not rows(root) & rows(rest)
    assert rows(root) | rows(rest) == rows(ds)


def test_root_is_deterministic():
    ds = data.generate_synthetic(seed=4)
    a, _ = data.sample_root(ds, RootConfig(seed=9, case=data.CASE_II, bias_probability=0.5))
    b, _ = data.sample_root(ds, RootConfig(seed=9, case=data.CASE_II, bias_probability=0.5))
    assert np.array_equal(a.X, b.X)


def test_full_bias_takes_only_the_biased_class():
    ds = data.generate_synthetic(seed=4)
    root, _ = data.sample_root(ds, RootConfig(case=data.CASE_II, bias_probability=1.0, biased_class=1))
    assert np.all(root.y == 1)


@pytest.mark.parametrize("p,size,expected", [(0.5, 100, 50), (0.125, 20, 3), (0.1, 15, 2), (0.0, 10, 0)])
def test_biased_count_rounds_half_up(p, size, expected):
    assert data.biased_count(p, size) == expected


def test_case_two_at_uniform_bias_matches_case_one_in_law():
    ds = data.generate_synthetic(seed=4)
    counts = {data.CASE_I: [], data.CASE_II: []}
    for case in counts:
        for seed in range(200):
            root, _ = data.sample_root(ds, RootConfig(seed=seed, case=case, bias_probability=0.1))
            counts[case].append(root.label_counts())
    mean_i = np.mean(counts[data.CASE_I], axis=0)
    mean_ii = np.mean(counts[data.CASE_II], axis=0)
    assert np.all(np.abs(mean_i - 10) < 1.0)
    assert np.all(np.abs(mean_ii - 10) < 1.0)


def test_root_too_large():
    ds = data.generate_synthetic(num_classes=2, input_dim=2, per_class=5)
    with pytest.raises(ConfigError):
        data.sample_root(ds, RootConfig(size=11))
    with pytest.raises(ConfigError):
        data.sample_root(ds, RootConfig(size=8, case=data.CASE_II, bias_probability=1.0, biased_class=1))


# -- poisoning helpers -------------------------------------------------------------------

def test_flip_label():
    assert data.flip_label(3, 10) == 6
    assert data.flip_label(0, 2) == 1
    labels = np.arange(10)
    assert np.array_equal(data.flip_label(data.flip_label(labels, 10), 10), labels)
    with pytest.raises(ConfigError):
        data.flip_label(10, 10)


def test_empty_trigger_keeps_features():
    ds = data.generate_synthetic(num_classes=3, input_dim=4, per_class=2)
    out = data.embed_trigger(ds, TriggerSpec((), (), target_label=2))
    assert np.array_equal(out.X, ds.X)
    assert np.all(out.y == 2)
    kept = data.embed_trigger(ds, TriggerSpec((), (), target_label=2), relabel=False)
    assert np.array_equal(kept.y, ds.y)


def test_full_trigger_replaces_every_feature():
    ds = data.generate_synthetic(num_classes=3, input_dim=4, per_class=2)
    trig = TriggerSpec((0, 1, 2, 3), (1.0, 2.0, 3.0, 4.0), 0)
    assert np.all(data.embed_trigger(ds, trig).X == [1.0, 2.0, 3.0, 4.0])


def test_every_twentieth_feature_trigger():
    trig = TriggerSpec.every_kth(561, 20, 0.0, target_label=1)
    assert len(trig.indices) == 29
    assert trig.indices[0] == 0 and trig.indices[-1] == 560
    ds = Dataset(np.ones((3, 561)), [0, 2, 5], 6)
    out = data.embed_trigger(ds, trig)
    assert int(np.sum(out.X[0] == 0)) == 29


def test_trigger_index_out_of_range():
    ds = data.generate_synthetic(num_classes=3, input_dim=4, per_class=2)
    with pytest.raises(ConfigError):
        data.embed_trigger(ds, TriggerSpec((4,), (1.0,), 0))


def test_target_set_excludes_target_label():
    test = data.generate_synthetic(num_classes=4, input_dim=6, per_class=5, seed=1)
    trig = TriggerSpec((5,), (9.0,), target_label=2)
    target = data.target_test_set(test, trig)
    assert len(target) == 15
    assert np.all(target.y != 2)
    assert np.all(target.X[:, 5] == 9.0)
