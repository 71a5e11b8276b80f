import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interdelay.corpus import eligible_mask
from interdelay.errors import IneligiblePaperError, InputError
from interdelay.taxonomy import (DistanceMatrix, FieldVectorSet, build_field_vectors,
                                 field_distance_matrix, field_distributions,
                                 reference_field_vector)

from conftest import make_corpus, paper

FIELDS = ("F1", "F2", "F3", "F4")


def _dist(tmp_path, ref_fields):
    papers = [paper(f"R{k}", 1990, fields=f) for k, f in enumerate(ref_fields)]
    papers.append(paper("P", 2000, refs=[f"R{k}" for k in range(len(ref_fields))]))
    c = make_corpus(tmp_path, papers)
    return reference_field_vector(c.papers["P"], c), c


def test_single_field(tmp_path):
    d, _ = _dist(tmp_path, [["F1"], ["F1"]])
    assert d.weights == {"F1": 1.0}


def test_split_reference(tmp_path):
    d, _ = _dist(tmp_path, [["F1"], ["F1", "F2"]])
    assert d.weights == pytest.approx({"F1": 0.75, "F2": 0.25}, abs=1e-15)


def test_three_way_uniform(tmp_path):
    d, _ = _dist(tmp_path, [["F1"], ["F2"], ["F3"]])
    assert d.weights == pytest.approx({"F1": 1 / 3, "F2": 1 / 3, "F3": 1 / 3}, abs=1e-15)


def test_ineligible_paper(tmp_path):
    papers = [paper("R0", 1990, fields=["F1"]), paper("P", 2000, refs=["R0"])]
    c = make_corpus(tmp_path, papers)
    with pytest.raises(IneligiblePaperError):
        reference_field_vector(c.papers["P"], c)


def test_inline_dangling_fields_count(tmp_path):
    papers = [paper("R0", 1990, fields=["F1"]),
              paper("P", 2000, refs=["R0", "X"], reference_fields={"X": ["F4"]})]
    c = make_corpus(tmp_path, papers)
    assert reference_field_vector(c.papers["P"], c).weights == {"F1": 0.5, "F4": 0.5}


def _vec(rows):
    m = np.array(rows, dtype=float)
    return FieldVectorSet(FIELDS[: len(rows)], m, np.ones(len(rows), dtype=np.int64))


def test_cosine_examples():
    d = field_distance_matrix(_vec([[1, 1, 0], [0, 1, 1], [1, 1, 0]]))
    assert d.values[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert d.values[0, 2] == 0.0
    ortho = field_distance_matrix(_vec([[1, 0], [0, 3]]))
    assert ortho.values[0, 1] == 1.0


def test_zero_vector_gets_distance_one(caplog):
    d = field_distance_matrix(_vec([[1, 0], [0, 0]]))
    assert "no eligible papers" in caplog.text
    assert d.values[0, 1] == d.values[1, 0] == 1.0
    assert d.values[1, 1] == 0.0
    assert d.zero_fields == ("F2",)


def test_empty_vector_set():
    with pytest.raises(InputError):
        field_distance_matrix(FieldVectorSet((), np.zeros((0, 0)), np.zeros(0, dtype=np.int64)))


def test_single_paper_vector(tmp_path):
    papers = [paper("R0", 1990, fields=["F1"]), paper("R1", 1990, fields=["F1", "F2"]),
              paper("P", 2000, refs=["R0", "R1"], fields=["F1"])]
    c = make_corpus(tmp_path, papers)
    v = build_field_vectors(c)
    np.testing.assert_array_equal(v.vectors["F1"], [0.75, 0.25, 0, 0])
    assert set(v.empty_fields) == {"F2", "F3", "F4"}


def test_duplicate_paper_doubles_vector(tmp_path):
    base = [paper("R0", 1990, fields=["F1"]), paper("R1", 1990, fields=["F2"]),
            paper("R2", 1990, fields=["F3"])]
    one = base + [paper("P", 2000, refs=["R0", "R1"], fields=["F1"]),
                  paper("Q", 2000, refs=["R1", "R2"], fields=["F2"])]
    two = one + [paper("P2", 2000, refs=["R0", "R1"], fields=["F1"])]
    v1 = build_field_vectors(make_corpus(tmp_path / "a", one))
    v2 = build_field_vectors(make_corpus(tmp_path / "b", two))
    np.testing.assert_array_equal(v2.vectors["F1"], 2 * v1.vectors["F1"])
    d1, d2 = field_distance_matrix(v1).values, field_distance_matrix(v2).values
    np.testing.assert_allclose(d1, d2, atol=1e-15)


def _brute_vectors(c, min_field_refs=2, max_year=2007):
    """Two-loop accumulation straight from the paper records."""
    tax = c.taxonomy.level1_ids
    pos = {f: i for i, f in enumerate(tax)}
    fields_of = {c.paper_ids[i]: c.record(i).field_ids for i in range(c.n_papers)}
    V = np.zeros((len(tax), len(tax)))
    for i in range(c.n_papers):
        rec = c.record(i)
        if rec.year > max_year:
            continue
        a = np.zeros(len(tax))
        n = 0
        for r in rec.reference_ids:
            fl = fields_of.get(r) or rec.reference_fields.get(r) or ()
            if fl:
                n += 1
                for f in fl:
                    a[pos[f]] += 1.0 / len(fl)
        if n < min_field_refs:
            continue
        a /= a.sum()
        for f in rec.field_ids:
            V[pos[f]] += a
    return V


def test_ten_paper_vectors_match_oracle(tmp_path):
    rng = np.random.default_rng(7)
    papers = []
    for k in range(10):
        nf = rng.integers(1, 3)
        flds = [FIELDS[j] for j in rng.choice(4, nf, replace=False)]
        refs = [f"P{j}" for j in rng.choice(k, min(k, rng.integers(0, 5)), replace=False)] if k else []
        papers.append(paper(f"P{k}", 1990 + k, refs=refs, fields=flds))
    c = make_corpus(tmp_path, papers)
    np.testing.assert_allclose(build_field_vectors(c).matrix, _brute_vectors(c), atol=1e-14)


def test_generated_vectors_match_oracle(small_generated):
    c, _ = small_generated
    np.testing.assert_allclose(build_field_vectors(c).matrix, _brute_vectors(c), rtol=1e-12,
                               atol=1e-12)


def test_matrix_invariants_and_blocks(small_generated):
    c, _ = small_generated
    d = field_distance_matrix(build_field_vectors(c))
    D = d.values
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0)
    assert D.min() >= 0 and D.max() <= 1
    l0 = c.taxonomy.level0_codes()
    same = l0[:, None] == l0[None, :]
    off = ~np.eye(len(l0), dtype=bool)
    assert D[same & off].mean() < D[~same].mean()


def test_distributions_sum_to_one(small_generated):
    c, _ = small_generated
    rows = np.flatnonzero(eligible_mask(c))
    P = field_distributions(c, rows)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert P.min() >= 0


def test_threads_do_not_change_vectors(small_generated):
    c, _ = small_generated
    a = build_field_vectors(c, threads=1).matrix
    b = build_field_vectors(c, threads=4).matrix
    assert np.array_equal(a, b)


def test_csv_round_trip(tmp_path, small_generated):
    c, _ = small_generated
    d = field_distance_matrix(build_field_vectors(c))
    p = d.to_csv(tmp_path / "d.csv")
    back = DistanceMatrix.from_csv(p)
    assert back.field_ids == d.field_ids
    np.testing.assert_allclose(back.values, d.values, rtol=1e-11, atol=1e-12)
    back.to_csv(tmp_path / "d2.csv")
    assert (tmp_path / "d2.csv").read_bytes() == p.read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from(FIELDS), min_size=1, max_size=3, unique=True),
                min_size=2, max_size=8))
def test_distribution_property(ref_fields):
    with tempfile.TemporaryDirectory() as tmp:
        d, _ = _dist(Path(tmp), ref_fields)
    assert sum(d.weights.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(w >= 0 for w in d.weights.values())
