import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mbpath.data import (AbundanceTable, DesignMatrix, ExternalDataset, TargetDataset,
                         align_cohorts, clr_transform, filter_prevalence, join_values,
                         read_abundance_csv, read_numeric_csv, standardize_metabolite,
                         write_design_csv)
from mbpath.errors import DataError


def table(values, taxa=None):
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    taxa = taxa or tuple(f"t{j}" for j in range(p))
    return AbundanceTable(values, taxa, tuple(f"s{i}" for i in range(n)))


def test_clr_hand_example():
    out = clr_transform(table([[np.e, 1.0, 1.0]])).values
    np.testing.assert_allclose(out, [[2 / 3, -1 / 3, -1 / 3]], atol=1e-15)


def test_clr_pseudocount_zeros_only():
    out = clr_transform(table([[0.0, 1.0]]), pseudocount=1e-8).values
    half = np.log(1e-8) / 2
    np.testing.assert_allclose(out, [[half, -half]])


def test_clr_pseudocount_all():
    out = clr_transform(table([[0.0, 1.0]]), pseudocount=0.5, policy="all").values
    np.testing.assert_allclose(out[0, 1] - out[0, 0], np.log(3.0))


def test_clr_rejects_bad_arguments():
    with pytest.raises(ValueError):
        clr_transform(table([[1.0, 1.0]]), pseudocount=0)
    with pytest.raises(ValueError):
        clr_transform(table([[1.0, 1.0]]), policy="rows")


positive_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)),
                       elements=st.floats(1e-3, 1e3))


@settings(max_examples=60, deadline=None)
@given(positive_rows, st.floats(1e-3, 1e3))
def test_clr_rows_sum_to_zero_and_ignore_scale(values, c):
    a = clr_transform(table(values)).values
    b = clr_transform(table(values * c)).values
    np.testing.assert_allclose(a.sum(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_filter_boundary_inclusive():
    # ten samples: t0 has 1 zero, t1 has 2, t2 has none
    v = np.ones((10, 3))
    v[0, 0] = 0
    v[:2, 1] = 0
    out = filter_prevalence(table(v), 0.1)
    assert out.taxa_ids == ("t0", "t2")
    assert filter_prevalence(table(v), 0.2).taxa_ids == ("t0", "t1", "t2")


def test_filter_nothing_survives():
    with pytest.raises(DataError, match="no taxa survive filter"):
        filter_prevalence(table(np.zeros((4, 2))), 0.5)
    with pytest.raises(ValueError):
        filter_prevalence(table(np.ones((4, 2))), 1.5)


def test_abundance_validation():
    with pytest.raises(DataError, match="negative"):
        table([[-1.0, 1.0]])
    with pytest.raises(DataError, match="NaN"):
        table([[np.nan, 1.0]])
    with pytest.raises(DataError, match="duplicate"):
        table([[1.0, 1.0]], taxa=("a", "a"))


def test_align_keeps_target_order():
    d1 = DesignMatrix(np.arange(6.0).reshape(2, 3), ("a", "b", "c"))
    d2 = DesignMatrix(np.arange(6.0).reshape(3, 2), ("c", "a"))
    tgt = TargetDataset(d1, np.zeros(2))
    ext = ExternalDataset(d2, np.zeros(3))
    t, e, rep = align_cohorts(tgt, ext)
    assert rep.shared_taxa == ("a", "c")
    assert rep.dropped_from_target == ("b",)
    np.testing.assert_array_equal(t.design.values, [[0, 2], [3, 5]])
    np.testing.assert_array_equal(e.design.values[:, 0], [1, 3, 5])


def test_align_disjoint():
    tgt = TargetDataset(DesignMatrix(np.zeros((2, 1)), ("a",)), np.zeros(2))
    ext = ExternalDataset(DesignMatrix(np.zeros((2, 1)), ("b",)), np.zeros(2))
    with pytest.raises(DataError, match="share no taxa"):
        align_cohorts(tgt, ext)


def test_standardize_log_example():
    out = standardize_metabolite([1.0, np.e, np.e ** 2])
    np.testing.assert_allclose(out, [-1.0, 0.0, 1.0], atol=1e-12)


def test_standardize_errors():
    with pytest.raises(DataError, match="zero variance"):
        standardize_metabolite([2.0, 2.0, 2.0])
    with pytest.raises(DataError, match="strictly positive"):
        standardize_metabolite([0.0, 1.0])
    np.testing.assert_allclose(standardize_metabolite([-1.0, 1.0], log=False),
                               [-np.sqrt(0.5), np.sqrt(0.5)])


def test_dataset_length_checks():
    d = DesignMatrix(np.zeros((3, 2)), ("a", "b"))
    with pytest.raises(DataError, match="length 2"):
        TargetDataset(d, np.zeros(2))


def write(tmp_path, text, name="x.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_numeric_csv_roundtrip(tmp_path):
    d = DesignMatrix(np.array([[0.1, -0.1], [1 / 3, -1 / 3]]), ("a", "b"),
                     sample_ids=("s1", "s2"))
    path = str(tmp_path / "d.csv")
    write_design_csv(d, path)
    t = read_numeric_csv(path)
    assert t.columns == ("a", "b") and t.sample_ids == ("s1", "s2")
    np.testing.assert_array_equal(t.values, d.values)


@pytest.mark.parametrize("text, message", [
    ("", "file is empty"),
    ("id,a\ns1,1\n", "sample_id"),
    ("sample_id\ns1\n", "no value columns"),
    ("sample_id,a\ns1,\n", "empty cell in column 'a'"),
    ("sample_id,a\ns1,abc\n", "column 'a'"),
    ("sample_id,a\ns1,inf\n", "non-finite"),
    ("sample_id,a\n", "no data rows"),
])
def test_numeric_csv_errors(tmp_path, text, message):
    with pytest.raises(DataError, match=message):
        read_numeric_csv(write(tmp_path, text))


def test_column_lookup(tmp_path):
    t = read_numeric_csv(write(tmp_path, "sample_id,a,b\ns1,1,2\n"))
    with pytest.raises(DataError, match="column 'zz' not found"):
        t.column("zz")
    with pytest.raises(DataError, match="choose one by name"):
        t.column()
    assert t.column("b")[0] == 2.0


def test_join_values(tmp_path):
    t = read_numeric_csv(write(tmp_path, "sample_id,v\ns2,2\ns1,1\n"))
    np.testing.assert_array_equal(join_values(("s1", "s2"), t), [1.0, 2.0])
    with pytest.raises(DataError, match="no value"):
        join_values(("s1", "s3"), t)
    with pytest.raises(DataError, match="unmatched"):
        join_values(("s1",), t)


def test_abundance_csv_negative(tmp_path):
    with pytest.raises(DataError, match="negative"):
        read_abundance_csv(write(tmp_path, "sample_id,a,b\ns1,-1,2\n"))
