import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowprofool import tabular_data as td
from lowprofool.attacks import clip_to_bounds
from lowprofool.importance import pearson
from lowprofool.tabular_data import DataError, FeatureKind, Schema, SyntheticSpec


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


SCHEMA = Schema("label", {"age": FeatureKind.CONTINUOUS, "income": FeatureKind.CONTINUOUS})


def test_load_csv_counts_rows_and_columns(tmp_path):
    path = write(tmp_path, "age,income,label\n20,100,0\n30,200,1\n40,150,0\n50,300,1\n")
    table = td.load_csv(path, SCHEMA)
    assert table.n_rows == 4
    assert table.n_columns == 2
    np.testing.assert_array_equal(table.cells["age"], [20, 30, 40, 50])


def test_load_csv_rejects_non_binary_target(tmp_path):
    path = write(tmp_path, "age,income,label\n20,100,0\n30,200,2\n")
    with pytest.raises(DataError, match="non-binary target"):
        td.load_csv(path, SCHEMA)


def test_load_csv_names_row_of_non_numeric_cell(tmp_path):
    path = write(tmp_path, 'age,income,label\n20,100,0\n30,200,1\n"abc",150,0\n')
    with pytest.raises(DataError, match="row 3") as err:
        td.load_csv(path, SCHEMA)
    assert "age" in str(err.value)


@pytest.mark.parametrize("body,match", [
    ("20,100\n", "row 1 has 2 fields"),
    ("20,,0\n", "row 1.*income"),
])
def test_load_csv_rejects_malformed_rows(tmp_path, body, match):
    path = write(tmp_path, "age,income,label\n" + body)
    with pytest.raises(DataError, match=match):
        td.load_csv(path, SCHEMA)


def test_load_csv_missing_target_and_file(tmp_path):
    path = write(tmp_path, "age,income,y\n1,2,0\n")
    with pytest.raises(DataError, match="target column"):
        td.load_csv(path, SCHEMA)
    with pytest.raises(DataError, match="no such file"):
        td.load_csv(tmp_path / "absent.csv", SCHEMA)


def test_preprocess_min_max_scales():
    schema = Schema("label", {"a": FeatureKind.DISCRETE})
    raw = td.RawTable(["a"], {"a": np.array([1.0, 3.0, 5.0])}, np.array([0, 1, 0]))
    ds = td.preprocess(raw, schema)
    np.testing.assert_array_equal(ds.X[:, 0], [0.0, 0.5, 1.0])


def test_preprocess_drops_unordered_categoricals(tmp_path):
    schema = Schema("label", {
        "age": FeatureKind.CONTINUOUS,
        "purpose": FeatureKind.CATEGORICAL_UNORDERED,
        "income": FeatureKind.DISCRETE,
    })
    path = write(tmp_path, "age,purpose,income,label\n20,car,1,0\n30,tv,2,1\n25,car,3,1\n")
    ds = td.preprocess(td.load_csv(path, schema), schema)
    assert ds.feature_names == ["age", "income"]
    assert ds.n_features == 2


def test_preprocess_ordered_categorical_levels(tmp_path):
    schema = Schema("label", {"size": FeatureKind.CATEGORICAL_ORDERED}, {"size": ["S", "M", "L"]})
    path = write(tmp_path, "size,label\nS,0\nL,1\nM,0\n")
    ds = td.preprocess(td.load_csv(path, schema), schema)
    np.testing.assert_array_equal(ds.X[:, 0], [0.0, 1.0, 0.5])


def test_preprocess_constant_feature_is_zero_with_warning():
    schema = Schema("label", {"c": FeatureKind.CONTINUOUS, "a": FeatureKind.CONTINUOUS})
    raw = td.RawTable(["c", "a"], {"c": np.array([7.0, 7.0, 7.0]), "a": np.array([0.0, 1.0, 2.0])},
                      np.array([0, 1, 1]))
    ds = td.preprocess(raw, schema)
    np.testing.assert_array_equal(ds.X[:, 0], [0.0, 0.0, 0.0])
    assert np.isfinite(ds.X).all()
    assert ds.warnings and "constant" in ds.warnings[0]
    np.testing.assert_array_equal(td.feature_bounds(ds)[0], [0.0, 0.0])


def test_preprocess_all_dropped():
    schema = Schema("label", {"p": FeatureKind.CATEGORICAL_UNORDERED})
    raw = td.RawTable(["p"], {"p": np.array(["a", "b"], dtype=object)}, np.array([0, 1]))
    with pytest.raises(DataError, match="all features were dropped"):
        td.preprocess(raw, schema)


def test_schema_roundtrip_and_errors():
    schema = Schema.from_dict({"target": "y", "columns": {"a": "continuous", "b": "categorical_unordered"}})
    assert Schema.from_dict(schema.to_dict()) == schema
    with pytest.raises(DataError, match="target"):
        Schema.from_dict({"columns": {}})
    with pytest.raises(DataError):
        Schema.from_dict({"target": "y", "columns": {"a": "bogus"}})


@pytest.mark.parametrize("n,sizes", [(1000, (700, 250, 50)), (100, (70, 25, 5)), (350, (50, 250, 50))])
def test_split_sizes(n, sizes):
    ds = td.generate_synthetic(n, SyntheticSpec((1.0, 1.0)), seed=0)
    parts = td.split(ds, seed=7)
    assert (parts.train.n_samples, parts.test.n_samples, parts.validation.n_samples) == sizes


def test_split_is_deterministic():
    ds = td.generate_synthetic(500, SyntheticSpec((1.0, 1.0)), seed=0)
    a, b = td.split(ds, 7), td.split(ds, 7)
    np.testing.assert_array_equal(a.test_rows, b.test_rows)
    np.testing.assert_array_equal(a.validation_rows, b.validation_rows)
    assert not np.array_equal(a.test_rows, td.split(ds, 8).test_rows)


def test_split_too_small():
    ds = td.generate_synthetic(19, SyntheticSpec((1.0, 1.0)), seed=0)
    with pytest.raises(DataError, match="too small to split"):
        td.split(ds, 0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(20, 800), seed=st.integers(0, 2**31))
def test_split_partitions_rows(n, seed):
    ds = td.generate_synthetic(n, SyntheticSpec((1.0, 0.5)), seed=1)
    parts = td.split(ds, seed)
    rows = np.concatenate([parts.train_rows, parts.test_rows, parts.validation_rows])
    assert len(rows) == n
    np.testing.assert_array_equal(np.sort(rows), np.arange(n))
    np.testing.assert_array_equal(parts.test.X, ds.X[parts.test_rows])


def test_feature_bounds_after_preprocessing():
    ds = td.generate_synthetic(200, SyntheticSpec((2.0, 1.0, 0.0)), seed=3)
    np.testing.assert_array_equal(td.feature_bounds(ds), [[0.0, 1.0]] * 3)


def test_train_bounds_clip_out_of_range_test_row():
    X = np.array([[0.2, 0.3], [0.6, 0.9], [0.4, 0.5]])
    bounds = td.feature_bounds(X)
    outside = np.array([0.1, 0.95])
    clipped = clip_to_bounds(outside, bounds)
    np.testing.assert_array_equal(clipped, [0.2, 0.9])
    assert np.all(clipped >= bounds[:, 0]) and np.all(clipped <= bounds[:, 1])


def test_synthetic_correlation_follows_separation():
    ds = td.generate_synthetic(1000, SyntheticSpec((3.0, 0.5)), seed=11)
    rho = [abs(pearson(ds.X[:, j], ds.y)) for j in range(2)]
    assert rho[0] > rho[1]


@pytest.mark.parametrize("seed", range(5))
def test_synthetic_zero_separation_is_uncorrelated(seed):
    ds = td.generate_synthetic(500, SyntheticSpec((0.0, 0.0)), seed=seed)
    for j in range(2):
        assert abs(pearson(ds.X[:, j], ds.y)) < 0.2


def test_synthetic_noise_correlation_keeps_marginal_correlation():
    # the label correlation of a feature depends only on its own separation
    # and noise, so the shared-noise correlation must not move it much
    plain = td.generate_synthetic(4000, SyntheticSpec((2.0, 0.5)), seed=2)
    shared = td.generate_synthetic(4000, SyntheticSpec((2.0, 0.5), correlation=0.8), seed=2)
    for j in range(2):
        assert abs(pearson(plain.X[:, j], plain.y) - pearson(shared.X[:, j], shared.y)) < 0.05


def test_synthetic_is_deterministic_and_balanced():
    a = td.generate_synthetic(101, SyntheticSpec((1.0, 2.0)), seed=5)
    b = td.generate_synthetic(101, SyntheticSpec((1.0, 2.0)), seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert abs(int(a.y.sum()) - 50) <= 1


def test_synthetic_rejects_bad_input():
    with pytest.raises(DataError):
        td.generate_synthetic(3, SyntheticSpec((1.0, 1.0)), seed=0)
    with pytest.raises(DataError):
        SyntheticSpec((1.0,))
    with pytest.raises(DataError):
        SyntheticSpec((1.0, 1.0), correlation=1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40).filter(
    lambda v: max(v) - min(v) > 1e-3 * max(1.0, max(abs(x) for x in v))))
def test_scale_roundtrip(values):
    schema = Schema("label", {"a": FeatureKind.CONTINUOUS})
    values = np.array(values)
    y = np.arange(len(values)) % 2
    ds = td.preprocess(td.RawTable(["a"], {"a": values}, y), schema)
    assert np.isfinite(ds.X).all() and ds.X.min() >= 0.0 and ds.X.max() <= 1.0
    back = ds.unscale(ds.X)[:, 0]
    np.testing.assert_allclose(back, values, rtol=1e-9, atol=1e-9 * np.abs(values).max())
    np.testing.assert_allclose(ds.scale(back[:, None]), ds.X, atol=1e-12)


def test_column_order_follows_schema(tmp_path):
    schema = Schema("label", {
        "c": FeatureKind.CONTINUOUS, "a": FeatureKind.CATEGORICAL_UNORDERED, "b": FeatureKind.DISCRETE,
    })
    path = write(tmp_path, "c,a,b,label\n1,x,5,0\n2,y,6,1\n")
    assert td.preprocess(td.load_csv(path, schema), schema).feature_names == ["c", "b"]


def test_save_and_load_dataset(tmp_path):
    ds = td.generate_synthetic(50, SyntheticSpec((2.0, 1.0)), seed=4)
    td.save_dataset(ds, tmp_path / "scaled.csv")
    back = td.load_dataset(tmp_path / "scaled.csv")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.scaling, ds.scaling)
    assert (tmp_path / "scaled.scaling.json").exists()

    td.save_dataset(ds, tmp_path / "raw.csv", raw=True)
    schema = Schema("label", {n: FeatureKind.CONTINUOUS for n in ds.feature_names})
    again = td.preprocess(td.load_csv(tmp_path / "raw.csv", schema), schema)
    np.testing.assert_allclose(again.X, ds.X, atol=1e-12)


def test_dataset_invariants():
    meta = [td.FeatureMeta("a", FeatureKind.CONTINUOUS, 0.0, 1.0)]
    with pytest.raises(DataError, match="labels"):
        td.Dataset(meta, np.zeros((2, 1)), np.array([0, 2]), np.array([[0.0, 1.0]]))
    with pytest.raises(DataError):
        td.FeatureMeta("a", FeatureKind.CONTINUOUS, 2.0, 1.0)
    bad = [td.FeatureMeta("p", FeatureKind.CATEGORICAL_UNORDERED, 0.0, 1.0)]
    with pytest.raises(DataError, match="unordered"):
        td.Dataset(bad, np.zeros((2, 1)), np.array([0, 1]), np.array([[0.0, 1.0]]))
