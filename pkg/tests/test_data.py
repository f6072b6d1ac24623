import csv

import numpy as np
import pytest

from pgtrain.data import (DataError, bundled_wdbc, load_wdbc, make_seq2seq, parse_wdbc,
                          read_pairs, split_indices)


def row(pid, code, base=1.0):
    return [str(pid), code] + [str(base + i) for i in range(30)]


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def test_bundled_dataset_counts():
    ds = load_wdbc()
    assert len(ds) == 569
    assert ds.features.shape == (569, 30)
    malignant = int(ds.labels[:, 0].sum())
    assert (569 - malignant, malignant) == (357, 212)
    assert np.all(ds.labels.sum(axis=1) == 1)


def test_two_row_fixture(tmp_path):
    path = write_rows(tmp_path / "two.data", [row(1, "M", 1.0), row(2, "B", 3.0)])
    ds = load_wdbc(path, train_fraction=1.0)
    assert len(ds) == 2
    np.testing.assert_array_equal(ds.labels, [[1, 0], [0, 1]])
    np.testing.assert_allclose(ds.features, [[-1.0] * 30, [1.0] * 30])


def test_header_row_is_skipped(tmp_path):
    header = ["id", "diagnosis"] + [f"f{i}" for i in range(30)]
    path = write_rows(tmp_path / "h.csv", [header, row(1, "M"), row(2, "B", 2.0)])
    assert len(load_wdbc(path, train_fraction=1.0)) == 2


def test_missing_column_names_row(tmp_path):
    bad = row(2, "B")[:-1]
    path = write_rows(tmp_path / "bad.data", [row(1, "M"), bad])
    with pytest.raises(DataError, match="row 2"):
        load_wdbc(path)


def test_unknown_code_and_bad_number():
    with pytest.raises(DataError, match="diagnosis"):
        parse_wdbc([row(1, "X")])
    broken = row(1, "M")
    broken[5] = "abc"
    with pytest.raises(DataError, match="row 1"):
        parse_wdbc([broken])
    with pytest.raises(DataError):
        parse_wdbc([])


def test_training_split_is_standardised():
    ds = load_wdbc(train_fraction=0.8, seed=0)
    train = ds.features[ds.train_idx]
    np.testing.assert_allclose(train.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(train.std(axis=0), 1.0, atol=1e-10)
    assert len(ds.train) + len(ds.test) == 569


def test_no_leakage_from_test_rows(tmp_path):
    with open(bundled_wdbc(), newline="") as fh:
        rows = list(csv.reader(fh))
    ds = load_wdbc(train_fraction=0.8, seed=0)
    for i in ds.test_idx:
        rows[i] = [rows[i][0], rows[i][1]] + ["1e6"] * 30
    shifted = load_wdbc(write_rows(tmp_path / "shifted.data", rows), train_fraction=0.8, seed=0)
    np.testing.assert_array_equal(shifted.mean, ds.mean)
    np.testing.assert_array_equal(shifted.std, ds.std)


def test_split_is_seeded_and_disjoint():
    a = split_indices(100, 0.7, 5)
    b = split_indices(100, 0.7, 5)
    np.testing.assert_array_equal(a[0], b[0])
    assert len(a[0]) == 70 and not set(a[0]) & set(a[1])
    with pytest.raises(ValueError):
        split_indices(10, 0.0, 0)


@pytest.mark.parametrize("task,expected", [("copy", [3, 1, 2]), ("reverse", [2, 1, 3])])
def test_seq2seq_tasks(task, expected):
    ds = make_seq2seq(task, 20, 5, 8, 3, 0)
    for src, tgt in ds.train + ds.test:
        assert len(src) == 3 and src.max() < 8
        np.testing.assert_array_equal(tgt, src if task == "copy" else src[::-1])
    from pgtrain.data import apply_task
    np.testing.assert_array_equal(apply_task(task, [3, 1, 2]), expected)


def test_seq2seq_deterministic_and_validated():
    a = make_seq2seq("copy", 10, 2, 16, 8, 4)
    b = make_seq2seq("copy", 10, 2, 16, 8, 4)
    assert a.to_text() == b.to_text()
    with pytest.raises(ValueError):
        make_seq2seq("sort", 1, 1, 4, 2, 0)
    with pytest.raises(ValueError):
        make_seq2seq("copy", 1, 1, 1, 2, 0)


def test_pairs_text_roundtrip():
    ds = make_seq2seq("reverse", 6, 0, 16, 4, 2)
    text = ds.to_text()
    assert text.splitlines()[0].count("\t") == 1
    back = read_pairs(text)
    for (s, t), (s2, t2) in zip(ds.train, back):
        np.testing.assert_array_equal(s, s2)
        np.testing.assert_array_equal(t, t2)
    with pytest.raises(DataError, match="line 1"):
        read_pairs("1 2 3\n")
