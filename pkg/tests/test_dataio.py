import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bmfkit.bitcore import BoolMatrix, DimensionError
from bmfkit.dataio import (REPORT_COLUMNS, Dataset, FormatError, binarize, builtin_names, load,
                           load_builtin, load_dense, load_factor, load_triplets, relative_error,
                           resolve_dataset, save_dense, save_factor, save_triplets,
                           topic_importance, top_words, write_report)

import oracles
from conftest import random_bits

B = BoolMatrix.from_dense


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_dense_identity_and_mask(tmp_path):
    ds = load_dense(write(tmp_path, "a.txt", "1 0\n0 1\n"))
    assert ds.X.to_dense().tolist() == [[1, 0], [0, 1]]
    assert ds.M.ones_count() == 4 and ds.n_missing == 0 and ds.name == "a"
    ds = load_dense(write(tmp_path, "b.txt", "1 ?\n0 1\n"))
    assert ds.M.to_dense().tolist() == [[1, 0], [1, 1]]
    assert ds.X.get(0, 1) == 0


@pytest.mark.parametrize("text", ["1 0\n0\n", "1 2\n", "", "# only a comment\n"])
def test_dense_format_errors(tmp_path, text):
    with pytest.raises(FormatError):
        load_dense(write(tmp_path, "bad.txt", text))


def test_unreadable_file(tmp_path):
    with pytest.raises(FormatError):
        load_dense(tmp_path / "nope.txt")
    with pytest.raises(FormatError):
        load_triplets(tmp_path / "nope.tri")


def datasets():
    shape = st.tuples(st.integers(1, 9), st.integers(1, 9))
    return shape.flatmap(lambda s: st.tuples(
        hnp.arrays(np.uint8, s, elements=st.integers(0, 1)),
        hnp.arrays(np.uint8, s, elements=st.integers(0, 1)),
        st.booleans()))


@given(datasets())
def test_round_trips(tmp_path_factory, case):
    X, M, labelled = case
    m, n = X.shape
    rows = [f"w {i}" for i in range(m)] if labelled else None
    cols = [f"d{j}" for j in range(n)] if labelled else None
    ds = Dataset.from_arrays(X, M, name="rt", row_labels=rows, col_labels=cols)
    d = tmp_path_factory.mktemp("rt")
    for path, loader in ((d / "x.txt", load_dense), (d / "x.tri", load_triplets)):
        (save_dense if loader is load_dense else save_triplets)(ds, path)
        back = loader(path)
        assert back.X == ds.X and back.M == ds.M
        assert back.row_labels == rows and back.col_labels == cols and back.name == "rt"
        assert load(path).X == ds.X


def test_triplets(tmp_path):
    ds = load_triplets(write(tmp_path, "t.tri", "3 2\n1 1\n3 2\n# missing\n2 1\n"))
    assert ds.X.to_dense().tolist() == [[1, 0], [0, 0], [0, 1]]
    assert ds.M.to_dense().tolist() == [[1, 1], [0, 1], [1, 1]]


@pytest.mark.parametrize("text", ["2 2\n3 1\n", "2 2\n1 1\n1 1\n", "2 2\n0 1\n", "1 1\n1 x\n",
                                  "", "2 2\n1 1\n# missing\n1 1\n", "2 2\n1 2 3\n"])
def test_triplet_errors(tmp_path, text):
    with pytest.raises(FormatError):
        load_triplets(write(tmp_path, "bad.tri", text))


def test_label_length_checks():
    with pytest.raises(DimensionError):
        Dataset.from_arrays(np.eye(2), row_labels=["a"])
    with pytest.raises(DimensionError):
        Dataset.from_arrays(np.eye(2), np.ones((2, 3)))


def test_builtin_datasets():
    assert set(builtin_names()) >= {"zoo", "votes", "tumor", "audio", "lymp"}
    shapes = {"zoo": ((101, 17), 0), "votes": ((435, 16), 392), "tumor": ((339, 24), 670),
              "audio": ((226, 92), 901), "lymp": ((148, 44), 0)}
    for name, (shape, missing) in shapes.items():
        ds = load_builtin(name)
        assert ds.shape == shape and ds.n_missing == missing
    assert load_builtin("zoo").row_labels[0] == "aardvark"
    assert resolve_dataset("zoo").shape == (101, 17)
    with pytest.raises(FormatError):
        load_builtin("hepatitis")


def test_binarize_policies():
    assert binarize([[0.49, 0.5, 0.51]]).to_dense().tolist() == [[0, 1, 1]]
    assert binarize([[0, 3, 1]], "nonzero").to_dense().tolist() == [[0, 1, 1]]
    assert binarize([[0.2], [0.2], [0.2]], "mean_per_column").ones_count() == 3
    A = np.array([[0.1, 5], [0.2, 6], [0.9, 7]])
    assert binarize(A, "median_per_column").to_dense().tolist() == [[0, 0], [1, 1], [1, 1]]
    assert binarize(A, "fixed", tau=0.2).to_dense()[:, 0].tolist() == [0, 1, 1]
    # the mask hides the large value from the column mean
    masked = binarize([[0.0], [1.0], [100.0]], "mean_per_column", mask=[[1], [1], [0]])
    assert masked.to_dense()[:, 0].tolist() == [0, 1, 0]
    with pytest.raises(ValueError):
        binarize([[np.nan]])
    with pytest.raises(ValueError):
        binarize([[1.0]], "fixed")
    with pytest.raises(ValueError):
        binarize([[1.0]], "otsu")


@given(hnp.arrays(np.uint8, (5, 4), elements=st.integers(0, 1)))
def test_binarize_idempotent(A):
    for policy in ("round", "nonzero"):
        once = binarize(A, policy)
        assert binarize(once.to_dense(), policy) == once
        assert np.array_equal(once.to_dense(), A)


def test_topic_importance_single_document():
    X = np.zeros((5, 3), dtype=np.uint8)
    X[3, 1] = 1
    W = np.zeros((5, 1), dtype=np.uint8)
    W[1:5, 0] = 1
    H = np.array([[0, 1, 0]])
    ti = topic_importance(B(X), B(W), B(H))
    assert top_words(ti, 3) == [[3]]
    assert ti.W_t[3, 0] == 1 and ti.W_t.dtype == np.int32


def test_top_words_respects_w_and_ties():
    X = np.ones((4, 2), dtype=np.uint8)
    W = np.array([[1], [0], [1], [1]])
    H = np.array([[1, 1]])
    ti = topic_importance(B(X), B(W), B(H))
    assert top_words(ti, 10, ["a", "b", "c", "d"]) == [["a", "c", "d"]]
    with pytest.raises(DimensionError):
        top_words(ti, 2, ["a"])
    with pytest.raises(ValueError):
        top_words(ti, 0)


def test_topic_importance_oracle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        X, W, H = random_bits(rng, (10, 6)), random_bits(rng, (10, 3)), random_bits(rng, (3, 6))
        ti = topic_importance(B(X), B(W), B(H)).W_t
        assert np.array_equal(ti, oracles.word_counts(X, W, H))
        assert np.all(ti[W == 0] == 0) and ti.max() <= 6


def test_relative_error():
    X = B(np.eye(3, dtype=np.uint8))
    I = B(np.eye(3, dtype=np.uint8))
    assert relative_error(X, None, I, I) == 0.0
    Z = BoolMatrix.zeros(3, 1)
    X4 = B(np.array([[1, 1, 0], [1, 1, 0], [0, 0, 0]], dtype=np.uint8))
    assert relative_error(X4, None, Z, BoolMatrix.zeros(1, 3)) == 1.0
    W = B(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=np.uint8))
    H = B(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=np.uint8))
    H.set(3, 0, 1)
    W.set(1, 3, 1)  # one extra one at (1, 0)
    assert math.isclose(relative_error(X, None, W, H), math.sqrt(1 / 3))
    with pytest.raises(ValueError):
        relative_error(BoolMatrix.zeros(2, 2), None, BoolMatrix.zeros(2, 1), BoolMatrix.zeros(1, 2))


def test_report_and_factor_files(tmp_path):
    p = tmp_path / "r.csv"
    write_report([{"dataset": "zoo", "r": 2, "error": 271}], p)
    rows = list(csv.DictReader(p.open()))
    assert list(rows[0]) == REPORT_COLUMNS and rows[0]["error"] == "271"
    F = B(random_bits(np.random.default_rng(1), (6, 4)))
    save_factor(F, tmp_path / "W.txt")
    assert load_factor(tmp_path / "W.txt") == F
    (tmp_path / "bad.txt").write_text("1 ?\n")
    with pytest.raises(FormatError):
        load_factor(tmp_path / "bad.txt")
