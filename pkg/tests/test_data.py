import json

import numpy as np
import pytest

from tabgsl.data import (
    DataError,
    SplitIndices,
    load_dataset,
    preprocess,
    stratified_split,
    dense_features,
)

from helpers import make_gaussian_dataset, make_mixed_dataset, write_csv_dataset


def write_files(tmp_path, csv_text, schema):
    csv_path = tmp_path / "data.csv"
    schema_path = tmp_path / "schema.json"
    csv_path.write_text(csv_text, encoding="utf-8")
    schema_path.write_text(json.dumps(schema), encoding="utf-8")
    return csv_path, schema_path


BASIC_SCHEMA = [
    {"name": "a", "kind": "numeric"},
    {"name": "b", "kind": "numeric"},
    {"name": "c", "kind": "categorical"},
    {"name": "t", "kind": "target"},
]

BASIC_CSV = (
    "a,b,c,t\n"
    "1.0,2.0,red,yes\n"
    "2.0,0.5,blue,no\n"
    "3.0,-1.0,red,yes\n"
    "0.0,4.5,green,no\n"
    "-1.0,3.0,blue,yes\n"
)


class TestLoadDataset:
    def test_basic_shapes(self, tmp_path):
        ds = load_dataset(*write_files(tmp_path, BASIC_CSV, BASIC_SCHEMA))
        assert ds.n == 5
        assert ds.m_num == 2
        assert ds.m_cat == 1
        assert ds.class_count == 2

    def test_first_appearance_coding(self, tmp_path):
        ds = load_dataset(*write_files(tmp_path, BASIC_CSV, BASIC_SCHEMA))
        # red first, then blue, then green
        assert ds.x_cat[:, 0].tolist() == [0, 1, 0, 2, 1]
        assert ds.cat_categories[0] == ["red", "blue", "green"]
        # yes first, then no
        assert ds.y.tolist() == [0, 1, 0, 1, 0]
        assert ds.cat_cardinalities == [3]

    def test_numerics_not_standardized_at_load(self, tmp_path):
        ds = load_dataset(*write_files(tmp_path, BASIC_CSV, BASIC_SCHEMA))
        assert ds.x_num[0].tolist() == [1.0, 2.0]

    def test_openml_23_shape(self, tmp_path):
        # Same column layout as the cervical-contraception benchmark table:
        # 1473 rows, 2 numeric + 7 categorical features, 3 classes.
        rng = np.random.default_rng(23)
        n = 1473
        header = ["n0", "n1"] + [f"c{j}" for j in range(7)] + ["t"]
        schema = (
            [{"name": "n0", "kind": "numeric"}, {"name": "n1", "kind": "numeric"}]
            + [{"name": f"c{j}", "kind": "categorical"} for j in range(7)]
            + [{"name": "t", "kind": "target"}]
        )
        rows = [",".join(header)]
        for i in range(n):
            cells = [f"{rng.normal():.4f}", f"{rng.integers(15, 49)}"]
            cells += [str(rng.integers(0, 4)) for _ in range(7)]
            cells.append(str(i % 3))
            rows.append(",".join(cells))
        ds = load_dataset(*write_files(tmp_path, "\n".join(rows) + "\n", schema))
        assert (ds.n, ds.m_num, ds.m_cat, ds.class_count) == (1473, 2, 7, 3)

    def test_schema_column_absent_from_csv(self, tmp_path):
        schema = BASIC_SCHEMA + [{"name": "extra", "kind": "numeric"}]
        with pytest.raises(DataError, match="column mismatch"):
            load_dataset(*write_files(tmp_path, BASIC_CSV, schema))

    def test_non_numeric_token(self, tmp_path):
        bad = BASIC_CSV.replace("3.0,-1.0", "oops,-1.0")
        with pytest.raises(DataError, match="non-numeric token"):
            load_dataset(*write_files(tmp_path, bad, BASIC_SCHEMA))

    def test_missing_cell_rejected(self, tmp_path):
        bad = BASIC_CSV.replace("2.0,0.5", "2.0,")
        with pytest.raises(DataError, match="missing value"):
            load_dataset(*write_files(tmp_path, bad, BASIC_SCHEMA))

    def test_target_count_must_be_one(self, tmp_path):
        schema = [dict(e) for e in BASIC_SCHEMA]
        schema[0]["kind"] = "target"
        with pytest.raises(DataError, match="exactly one target"):
            load_dataset(*write_files(tmp_path, BASIC_CSV, schema))

    def test_roundtrip_through_csv_writer(self, tmp_path):
        ds = make_mixed_dataset(n=40, seed=3)
        csv_path, schema_path = write_csv_dataset(ds, tmp_path)
        loaded = load_dataset(csv_path, schema_path)
        np.testing.assert_allclose(loaded.x_num, ds.x_num, rtol=0, atol=0)
        # codes may be renumbered by first appearance; category strings must match
        got_cats = [loaded.cat_categories[0][c] for c in loaded.x_cat[:, 0]]
        assert got_cats == [f"c{c}" for c in ds.x_cat[:, 0]]
        got_labels = [loaded.target_categories[c] for c in loaded.y]
        assert got_labels == [f"l{c}" for c in ds.y]


class TestPreprocess:
    def test_two_point_column(self, tmp_path):
        csv_text = "a,t\n1,yes\n3,no\n5,yes\n-5,no\n"
        schema = [{"name": "a", "kind": "numeric"}, {"name": "t", "kind": "target"}]
        ds = load_dataset(*write_files(tmp_path, csv_text, schema))
        split = SplitIndices(
            train=np.array([0, 1]), valid=np.array([2]), test=np.array([3])
        )
        out, _ = preprocess(ds, split)
        # train values {1, 3}: mean 2, population std 1
        assert out.x_num[:2, 0].tolist() == [-1.0, 1.0]

    def test_constant_column_zeros(self):
        ds = make_gaussian_dataset(n=40, d=3, seed=1)
        ds.x_num[:, 1] = 7.25
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=0)
        out, _ = preprocess(ds, split)
        assert np.all(out.x_num[:, 1] == 0.0)

    def test_categoricals_untouched(self):
        ds = make_mixed_dataset(n=60, seed=4)
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=0)
        out, _ = preprocess(ds, split)
        assert np.array_equal(out.x_cat, ds.x_cat)

    def test_train_split_statistics(self):
        ds = make_gaussian_dataset(n=200, d=4, seed=5)
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=1)
        out, _ = preprocess(ds, split)
        train = out.x_num[split.train]
        assert np.abs(train.mean(axis=0)).max() < 1e-9
        assert np.abs(train.std(axis=0) - 1).max() < 1e-9

    def test_statistics_do_not_use_heldout_rows(self):
        ds = make_gaussian_dataset(n=200, d=4, seed=5)
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=1)
        out, _ = preprocess(ds, split)
        shifted = make_gaussian_dataset(n=200, d=4, seed=5)
        shifted.x_num[split.test] += 100.0
        out_shifted, _ = preprocess(shifted, split)
        np.testing.assert_array_equal(
            out.x_num[split.train], out_shifted.x_num[split.train]
        )

    def test_roundtrip_inverse(self):
        ds = make_gaussian_dataset(n=150, d=6, seed=6)
        ds.x_num = ds.x_num * 13.0 + 5.0
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=2)
        out, scaler = preprocess(ds, split)
        recovered = scaler.inverse_transform(out.x_num)
        np.testing.assert_allclose(recovered, ds.x_num, rtol=1e-9)


class TestStratifiedSplit:
    def test_sizes_100(self):
        ds = make_gaussian_dataset(n=100, d=3, seed=7)
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=3)
        assert (len(split.train), len(split.valid), len(split.test)) == (70, 15, 15)

    def test_tiny_balanced(self):
        ds = make_gaussian_dataset(n=10, d=2, seed=8, class_balance=0.5)
        split = stratified_split(ds, (0.7, 0.15, 0.15), seed=3)
        train_counts = np.bincount(ds.y[split.train], minlength=2)
        assert all(c in (3, 4) for c in train_counts)
        assert len(split.valid) > 0 and len(split.test) > 0

    def test_ratios_must_sum_to_one(self):
        ds = make_gaussian_dataset(n=20, d=2, seed=9)
        with pytest.raises(DataError, match="sum to 1"):
            stratified_split(ds, (0.5, 0.5, 0.5), seed=0)

    def test_too_small_class_names_it(self):
        ds = make_gaussian_dataset(n=40, d=2, seed=10, class_balance=0.95)
        with pytest.raises(DataError, match="class 1"):
            stratified_split(ds, (0.7, 0.15, 0.15), seed=0)

    def test_deterministic(self):
        ds = make_gaussian_dataset(n=120, d=3, seed=11)
        a = stratified_split(ds, (0.7, 0.15, 0.15), seed=42)
        b = stratified_split(ds, (0.7, 0.15, 0.15), seed=42)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.valid, b.valid)
        assert np.array_equal(a.test, b.test)

    def test_different_seed_differs(self):
        ds = make_gaussian_dataset(n=120, d=3, seed=11)
        a = stratified_split(ds, (0.7, 0.15, 0.15), seed=42)
        b = stratified_split(ds, (0.7, 0.15, 0.15), seed=43)
        assert not np.array_equal(a.train, b.train)

    def test_proportions_property(self, rng):
        for trial in range(20):
            n = int(rng.integers(30, 200))
            balance = float(rng.uniform(0.2, 0.8))
            ds = make_gaussian_dataset(n=n, d=2, seed=trial, class_balance=balance)
            try:
                split = stratified_split(ds, (0.7, 0.15, 0.15), seed=trial)
            except DataError:
                continue  # legitimately too small for some class
            full = np.bincount(ds.y, minlength=2) / n
            for part in (split.train, split.valid, split.test):
                got = np.bincount(ds.y[part], minlength=2) / len(part)
                assert np.abs(got - full).max() <= 1.0 / len(part) + 1e-12


def test_dense_features_one_hot():
    ds = make_mixed_dataset(n=30, seed=12)
    dense = dense_features(ds)
    assert dense.shape == (30, 2 + 3)
    onehot = dense[:, 2:]
    assert np.array_equal(onehot.argmax(axis=1), ds.x_cat[:, 0])
    assert np.all(onehot.sum(axis=1) == 1.0)
