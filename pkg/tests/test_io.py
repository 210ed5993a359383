import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hgnb import io as hio
from hgnb.errors import DataError
from hgnb.model import CountMatrix


def test_csv_two_by_two(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("gene,c1,c2\ng1,0,1\ng2,2,3\n")
    c = hio.read_counts(p)
    assert c.nnz == 3 and c.shape == (2, 2)
    assert c.gene_ids == ("g1", "g2") and c.cell_ids == ("c1", "c2")
    np.testing.assert_array_equal(c.dense, [[0, 1], [2, 3]])


def test_mtx_round_trip(tmp_path):
    dense = np.random.default_rng(0).poisson(0.7, size=(6, 9))
    c = CountMatrix.from_dense(dense)
    p = tmp_path / "c.mtx"
    hio.write_counts(p, c)
    back = hio.read_counts(p)
    np.testing.assert_array_equal(back.dense, dense)
    assert p.read_text().startswith("%%MatrixMarket matrix coordinate integer general")


@settings(max_examples=25, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 10**6)),
       st.sampled_from(["mtx", "csv"]))
def test_round_trip_lossless(tmp_path_factory, dense, fmt):
    p = tmp_path_factory.mktemp("rt") / f"c.{fmt}"
    hio.write_counts(p, CountMatrix.from_dense(dense))
    np.testing.assert_array_equal(hio.read_counts(p).dense, dense)


@pytest.mark.parametrize("text,line", [
    ("gene,c1,c2\ng1,0,1\ng2,-1,3\n", 3),
    ("gene,c1,c2\ng1,0.5,1\n", 2),
    ("gene,c1,c2\ng1,x,1\n", 2),
    ("gene,c1,c2\ng1,0\n", 2),
])
def test_csv_errors_name_line(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataError, match=f"bad.csv:{line}:"):
        hio.read_counts(p)


def test_mtx_negative_names_line(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("%%MatrixMarket matrix coordinate integer general\n% note\n2 2 2\n1 1 4\n2 1 -1\n")
    with pytest.raises(DataError, match="bad.mtx:5:.*-1"):
        hio.read_counts(p)


@pytest.mark.parametrize("body,msg", [
    ("2 2 1\n3 1 1\n", "outside"),
    ("2 2 2\n1 1 1\n", "announces"),
    ("2 2 2\n1 1 1\n1 1 2\n", "duplicate"),
])
def test_mtx_structure_errors(tmp_path, body, msg):
    p = tmp_path / "bad.mtx"
    p.write_text("%%MatrixMarket matrix coordinate integer general\n" + body)
    with pytest.raises(DataError, match=msg):
        hio.read_counts(p)


def test_mtx_banner_and_format_checks(tmp_path):
    p = tmp_path / "x.mtx"
    p.write_text("1 1 1\n1 1 1\n")
    with pytest.raises(DataError, match="banner"):
        hio.read_counts(p)
    q = tmp_path / "x.txt"
    q.write_text("")
    with pytest.raises(DataError, match="format"):
        hio.read_counts(q)
    with pytest.raises(DataError):
        hio.read_counts(tmp_path / "missing.csv")


def test_design_empty_with_intercept(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    np.testing.assert_array_equal(hio.read_design(p, 4, intercept=True), np.ones((1, 4)))
    with pytest.raises(DataError):
        hio.read_design(p)


def test_design_two_by_three(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2,3\n0.5,-1,2e-3\n")
    assert hio.read_design(p).shape == (2, 3)
    with_one = hio.read_design(p, 3, intercept=True)
    assert with_one.shape == (3, 3) and np.all(with_one[0] == 1) and with_one[2, 2] == 0.002


@pytest.mark.parametrize("text", ["1,nan,3\n", "1,inf,2\n", "1,a,2\n", "1,2,3\n4,5\n"])
def test_design_rejections(tmp_path, text):
    p = tmp_path / "x.csv"
    p.write_text(text)
    with pytest.raises(DataError, match="x.csv:"):
        hio.read_design(p)


def test_design_column_count_checked(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n")
    with pytest.raises(DataError, match="expected 3"):
        hio.read_design(p, 3)


def test_design_round_trip(tmp_path):
    block = np.random.default_rng(1).normal(size=(2, 5))
    hio.write_design(tmp_path / "d.csv", block)
    np.testing.assert_array_equal(hio.read_design(tmp_path / "d.csv"), block)


def test_matrix_and_vector_round_trip(tmp_path):
    m = np.random.default_rng(2).normal(size=(3, 4))
    hio.write_matrix(tmp_path / "m.csv", m, ["a", "b", "c"], ["w", "x", "y", "z"], "row")
    back, rows, cols = hio.read_matrix(tmp_path / "m.csv")
    np.testing.assert_array_equal(back, m)
    assert rows == ["a", "b", "c"] and cols == ["w", "x", "y", "z"]
    hio.write_vector(tmp_path / "v.csv", m[0], ["p", "q", "r", "s"])
    v, names = hio.read_vector(tmp_path / "v.csv")
    np.testing.assert_array_equal(v, m[0])
