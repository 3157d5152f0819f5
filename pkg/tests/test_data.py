import warnings
from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pbqn.data import (
    ParseError,
    SparseDataset,
    SplitSpec,
    check_against_registry,
    lookup,
    parse_sparse_file,
    registry,
    split,
    write_sparse_file,
)


def _write(tmp_path, text, name="d.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _random_dataset(rng, n=12, d=7):
    X = sp.random(n, d, density=0.4, format="csr", random_state=rng,
                  data_rvs=lambda k: rng.standard_normal(k))
    labels = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8)
    labels[:2] = [-1, 1]
    return SparseDataset(X, labels, "rand")


class TestParse:
    def test_basic(self, tmp_path):
        ds = parse_sparse_file(_write(tmp_path, "+1 1:0.5 3:2.0\n-1 2:1.0\n"))
        assert (ds.n, ds.d) == (2, 3)
        np.testing.assert_array_equal(ds.labels, [1, -1])
        np.testing.assert_array_equal(ds.X.toarray(), [[0.5, 0, 2.0], [0, 1.0, 0]])
        assert ds.name == "d"

    @pytest.mark.parametrize("text,expected", [
        ("0 1:1\n1 2:1\n", [-1, 1]),
        ("2 1:1\n1 2:1\n", [1, -1]),
        ("-1 1:1\n+1 2:1\n", [-1, 1]),
    ])
    def test_label_normalization(self, tmp_path, text, expected):
        np.testing.assert_array_equal(parse_sparse_file(_write(tmp_path, text)).labels, expected)

    def test_comments_and_blank_lines(self, tmp_path):
        ds = parse_sparse_file(_write(tmp_path, "# header\n\n1 1:1 # trailing\n0 2:3\n"))
        assert ds.n == 2

    def test_row_without_features(self, tmp_path):
        ds = parse_sparse_file(_write(tmp_path, "1\n0 2:1\n"))
        assert ds.X[0].nnz == 0

    @pytest.mark.parametrize("text,line", [
        ("1 1:1\nabc 1:1\n", 2),
        ("1 1:1\n0 1-1\n", 2),
        ("1 1:x\n", 1),
        ("1 2:1 2:1\n", 1),
        ("1 3:1 2:1\n", 1),
        ("1 0:1\n", 1),
    ])
    def test_malformed_lines_report_line_number(self, tmp_path, text, line):
        with pytest.raises(ParseError, match=f"line {line}"):
            parse_sparse_file(_write(tmp_path, text))

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError):
            parse_sparse_file(_write(tmp_path, "\n# nothing\n"))

    def test_too_many_classes(self, tmp_path):
        with pytest.raises(ParseError):
            parse_sparse_file(_write(tmp_path, "0 1:1\n1 1:1\n2 1:1\n"))

    def test_n_features(self, tmp_path):
        path = _write(tmp_path, "1 2:1\n0 1:1\n")
        assert parse_sparse_file(path, n_features=10).d == 10
        with pytest.raises(ParseError):
            parse_sparse_file(path, n_features=1)

    def test_round_trip(self, tmp_path):
        ds = _random_dataset(np.random.default_rng(0))
        path = tmp_path / "rt.txt"
        write_sparse_file(ds, path)
        back = parse_sparse_file(path, n_features=ds.d)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert (back.X != ds.X).nnz == 0

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, seed):
        ds = _random_dataset(np.random.default_rng(seed), n=8, d=5)
        path = tmp_path_factory.mktemp("rt") / "x.txt"
        write_sparse_file(ds, path)
        back = parse_sparse_file(path, n_features=5)
        np.testing.assert_array_equal(back.X.toarray(), ds.X.toarray())
        np.testing.assert_array_equal(back.labels, ds.labels)


class TestSplit:
    def test_nine_to_one(self):
        ds = _random_dataset(np.random.default_rng(1), n=10)
        train, test = split(ds, SplitSpec(0.9, 3))
        assert (train.n, test.n) == (9, 1)

    def test_deterministic(self):
        ds = _random_dataset(np.random.default_rng(1), n=20)
        a = split(ds, SplitSpec(0.7, 5))
        b = split(ds, SplitSpec(0.7, 5))
        for x, y in zip(a, b):
            assert (x.X != y.X).nnz == 0
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_partition_is_multiset_preserving(self):
        ds = _random_dataset(np.random.default_rng(2), n=30)
        train, test = split(ds, SplitSpec(0.6, 1))

        def rows(d):
            return Counter((tuple(r.indices), tuple(r.data), int(l)) for r, l in zip(d.X, d.labels))

        assert rows(train) + rows(test) == rows(ds)

    def test_empty_side(self):
        ds = _random_dataset(np.random.default_rng(1), n=3)
        with pytest.raises(ValueError):
            split(ds, SplitSpec(0.99))

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5])
    def test_fraction_validated(self, fraction):
        with pytest.raises(ValueError):
            SplitSpec(fraction)


class TestRegistry:
    def test_names(self):
        names = [info.name for info in registry()]
        assert names == ["gisette", "mushrooms", "sido", "ijcnn", "spam", "alpha", "covertype", "url"]

    @pytest.mark.parametrize("name,train,test,features", [
        ("mushrooms", 7311, 813, 112),
        ("ijcnn", 35000, 91701, 22),
        ("covertype", 522910, 58102, 54),
    ])
    def test_entries(self, name, train, test, features):
        info = lookup(name)
        assert (info.n_train, info.n_test, info.n_features) == (train, test, features)

    def test_url_marked_large(self):
        assert lookup("url").large
        assert lookup("nope") is None

    def test_mismatch_warns(self):
        ds = _random_dataset(np.random.default_rng(0))
        with pytest.warns(UserWarning, match="mushrooms"):
            assert not check_against_registry(ds, "mushrooms")

    def test_unknown_name_passes(self):
        ds = _random_dataset(np.random.default_rng(0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert check_against_registry(ds, "something-else")
