import math
import statistics
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from interdelay import dynamics as dyn
from interdelay.corpus import eligible_mask

from conftest import make_corpus, paper


def impulse(n=20, at=3, height=50, base=1):
    c = np.full(n, base, dtype=np.int64)
    c[at] = height
    return c


# -- independent oracles ------------------------------------------------------------


def peak_oracle(counts, ddof=1):
    """Exact rational recheck of max > mean + 2 sd; earliest argmax by scan."""
    vals = [int(x) for x in counts]
    if not any(vals):
        return None
    best, t_best = -1, None
    for t, v in enumerate(vals):
        if v > best:
            best, t_best = v, t
    n = len(vals)
    if n - ddof <= 0:
        return None
    mean = Fraction(sum(vals), n)
    var = sum((Fraction(v) - mean) ** 2 for v in vals) / (n - ddof)
    gap = best - mean
    if gap > 0 and gap * gap > 4 * var:
        return t_best, best
    return None


def beauty_oracle(counts):
    vals = [float(x) for x in counts]
    tm = vals.index(max(vals))
    if tm == 0:
        return 0.0
    c0, cm = vals[0], vals[tm]
    total = 0.0
    for t in range(tm + 1):
        line = c0 + (cm - c0) / tm * t
        total += (line - vals[t]) / max(1.0, vals[t])
    return total


def impact_oracle(counts):
    total = sum(int(x) for x in counts)
    if total == 0:
        return None
    run = 0
    for t, v in enumerate(counts):
        run += int(v)
        if 2 * run >= total:
            return t


def random_series(rng, n_series):
    out = []
    for _ in range(n_series):
        L = int(rng.integers(1, 30))
        kind = rng.integers(4)
        if kind == 0:
            c = rng.poisson(rng.uniform(0, 5), L)
        elif kind == 1:
            c = rng.poisson(rng.uniform(0, 3), L)
            c[rng.integers(L)] += rng.integers(0, 60)
        elif kind == 2:
            c = np.full(L, rng.integers(0, 4))
        else:
            c = rng.geometric(0.3, L) - 1
        out.append(c.astype(np.int64))
    return out


# -- examples -----------------------------------------------------------------------


def test_impulse_threshold():
    c = impulse()
    assert dyn.peak_threshold(c) == pytest.approx(25.36, abs=0.005)
    assert statistics.mean(c.tolist()) == pytest.approx(3.45)
    assert statistics.stdev(c.tolist()) == pytest.approx(10.96, abs=0.005)
    assert dyn.peak_time(c) == (3, 50)


def test_population_sd_toggle():
    c = impulse()
    sample, pop = dyn.peak_threshold(c, ddof=1), dyn.peak_threshold(c, ddof=0)
    assert pop < sample
    assert pop == pytest.approx(3.45 + 2 * statistics.pstdev(c.tolist()), rel=1e-12)
    assert dyn.peak_time(c, ddof=0) == (3, 50)
    assert dyn.peak_time(np.full(12, 4), ddof=0) is None


def test_constant_and_zero_have_no_peak():
    assert dyn.peak_time(np.full(15, 3)) is None
    assert dyn.peak_time(np.zeros(15, dtype=int)) is None
    assert dyn.peak_time(np.array([7])) is None


def test_smoothed_impulse_breaks_tie_early():
    c = np.zeros(12, dtype=int)
    c[5] = 9
    assert dyn.smoothed_counts(c)[4:7].tolist() == [3.0, 3.0, 3.0]
    assert dyn.peak_time_smoothed(c) == (4, 3.0)


def test_smoothed_edges_and_monotone():
    c = np.arange(1, 8)
    sm = dyn.smoothed_counts(c)
    assert sm[0] == 1.5 and sm[-1] == 6.5
    assert dyn.peak_time_smoothed(c)[0] == 6
    assert dyn.peak_time_smoothed(np.zeros(5, dtype=int)) is None
    with pytest.raises(ValueError):
        dyn.smoothed_counts(c, window=2)


def test_beauty_examples():
    assert dyn.beauty_index(np.array([0, 0, 0, 0, 10])) == 15.0
    assert dyn.beauty_index(np.array([9, 3, 1])) == 0.0
    assert dyn.beauty_index(np.array([1, 3, 5, 7, 2])) == 0.0
    with pytest.raises(ValueError):
        dyn.beauty_index(np.zeros(4, dtype=int))


def test_beauty_can_be_negative():
    # early jump then slow growth sits above the line
    assert dyn.beauty_index(np.array([0, 8, 9, 10])) < 0


def test_impact_examples():
    assert dyn.impact_time(np.array([6, 0, 0])) == 0
    assert dyn.impact_time(np.array([4, 0, 4, 0])) == 0
    assert dyn.impact_time(np.array([1, 1, 1, 1])) == 1
    assert dyn.impact_time(np.zeros(3, dtype=int)) is None


def test_c10():
    assert dyn.c10(np.arange(15)) == 45
    assert dyn.c10(np.array([2, 2])) == 4


# -- series construction ------------------------------------------------------------


def test_build_series(tmp_path):
    papers = [paper("P", 2000), paper("A", 2003, refs=["P"]), paper("B", 2003, refs=["P"]),
              paper("Z", 2005), paper("E", 1999, refs=["P"])]
    c = make_corpus(tmp_path, papers)
    s = dyn.build_series(c, "P")
    assert s.horizon == 5
    assert s.counts.tolist() == [0, 0, 0, 2, 0, 0]
    assert dyn.build_series(c, "Z").counts.tolist() == [0]
    assert dyn.build_series(c, "P", window=2).counts.tolist() == [0, 0, 0]
    with pytest.raises(KeyError):
        dyn.build_series(c, "nope")


def test_fifty_citation_histogram(tmp_path):
    rng = np.random.default_rng(4)
    citing_years = rng.integers(1990, 2011, 50)
    papers = [paper("P", 1990)] + [paper(f"C{k}", int(y), refs=["P"])
                                   for k, y in enumerate(citing_years)]
    c = make_corpus(tmp_path, papers)
    s = dyn.build_series(c, "P")
    hist = [0] * 21
    for y in citing_years:
        hist[int(y) - 1990] += 1
    assert s.counts.tolist() == hist
    assert s.total == 50


def test_series_matrix_matches_scalar(small_generated):
    c, _ = small_generated
    rows = np.arange(0, c.n_papers, 7)
    for window in (None, 10):
        counts, lengths = dyn.series_matrix(c, rows, window)
        for k, i in enumerate(rows):
            s = dyn.build_series(c, c.paper_ids[i], window)
            assert lengths[k] == s.horizon + 1
            assert counts[k, :lengths[k]].tolist() == s.counts.tolist()
            assert not counts[k, lengths[k]:].any()


# -- batch vs scalar vs oracle --------------------------------------------------------


def _pad(series):
    width = max(len(s) for s in series)
    mat = np.zeros((len(series), width), dtype=np.int64)
    for k, s in enumerate(series):
        mat[k, :len(s)] = s
    return mat, np.array([len(s) for s in series])


@pytest.mark.parametrize("ddof", [1, 0])
def test_batch_matches_oracles(ddof):
    rng = np.random.default_rng(11 + ddof)
    series = random_series(rng, 2000)
    mat, lengths = _pad(series)
    out = dyn.metrics_from_matrix(mat, lengths, ddof=ddof)
    for k, s in enumerate(series):
        pk = peak_oracle(s, ddof)
        assert (out["t_m"][k], out["c_m"][k]) == (pk if pk else (-1, -1))
        assert dyn.peak_time(s, ddof) == pk
        it = impact_oracle(s)
        assert out["impact_time"][k] == (-1 if it is None else it)
        assert out["c10"][k] == int(s[:10].sum())
        sm = dyn.peak_time_smoothed(s)
        assert out["t_m_smoothed"][k] == (-1 if sm is None else sm[0])
        if s.any():
            assert out["b_index"][k] == pytest.approx(beauty_oracle(s), rel=1e-9, abs=1e-12)
        else:
            assert math.isnan(out["b_index"][k])


def test_overflow_guard_uses_exact_arithmetic():
    big = np.zeros((2, 40), dtype=np.int64)
    big[0, :] = 3_000_000_000
    big[0, 7] = 3_000_000_001
    big[1, :] = 4_000_000_000
    out = dyn.metrics_from_matrix(big, np.array([40, 40]))
    # a +1 bump on a flat 3e9 background still clears mean + 2 sd
    assert out["t_m"][0] == 7 == peak_oracle(big[0])[0]
    assert out["t_m"][1] == -1 and peak_oracle(big[1]) is None
    assert dyn.peak_time(big[0]) == (7, 3_000_000_001)


def test_dynamics_frame_matches_compute_metrics(small_generated):
    c, _ = small_generated
    rows = np.flatnonzero(eligible_mask(c))[:400]
    metrics, curves = dyn.dynamics_frame(c, rows)
    by_id = metrics.set_index("paper_id")
    for i in rows:
        pid = c.paper_ids[i]
        m = dyn.compute_metrics(dyn.build_series(c, pid))
        row = by_id.loc[pid]
        for col in ("t_m", "c_m", "t_m_smoothed", "impact_time"):
            got = row[col]
            assert (None if got is pd.NA else int(got)) == getattr(m, col)
        assert row["c10"] == m.c10
        if m.b_index is None:
            assert pd.isna(row["b_index"])
        else:
            assert row["b_index"] == pytest.approx(m.b_index, rel=1e-12, abs=1e-12)
    assert list(curves["paper_id"]) == list(metrics["paper_id"])


def test_metrics_invariants(small_generated):
    c, _ = small_generated
    rows = np.flatnonzero(eligible_mask(c))
    metrics, curves = dyn.dynamics_frame(c, rows)
    counts, lengths = dyn.series_matrix(c, c.indices_of(metrics["paper_id"]))
    has = metrics["t_m"].notna().to_numpy()
    tm = metrics["t_m"].to_numpy(dtype=float, na_value=-1).astype(int)
    assert np.array_equal(counts[has, tm[has]], metrics["c_m"][has].to_numpy(dtype=int))
    it = metrics["impact_time"]
    assert (it[it.notna()].to_numpy(dtype=int) <= (lengths - 1)[it.notna().to_numpy()]).all()


def test_metrics_file_round_trip(tmp_path, small_generated):
    c, _ = small_generated
    metrics, curves = dyn.dynamics_frame(c, np.flatnonzero(eligible_mask(c)))
    p = dyn.write_metrics(metrics, tmp_path / "m.csv")
    back = dyn.read_metrics(p)
    pd.testing.assert_frame_equal(back, metrics, check_dtype=False)
    first = p.read_text().splitlines()[0]
    assert first == "paper_id,year,t_m,c_m,t_m_smoothed,b_index,impact_time,c10"
    dyn.write_metrics(back, tmp_path / "m2.csv")
    assert (tmp_path / "m2.csv").read_bytes() == p.read_bytes()
    q = dyn.write_curves(curves, tmp_path / "c.csv")
    pd.testing.assert_frame_equal(dyn.read_curves(q), curves, check_dtype=False)


def test_threads_do_not_change_metrics(small_generated):
    c, _ = small_generated
    rows = np.flatnonzero(eligible_mask(c))
    a = dyn.dynamics_frame(c, rows, threads=1)
    b = dyn.dynamics_frame(c, rows, threads=4)
    pd.testing.assert_frame_equal(a[0], b[0])
    pd.testing.assert_frame_equal(a[1], b[1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=25), st.integers(2, 9))
def test_scaling_invariance(counts, k):
    c = np.array(counts, dtype=np.int64)
    assert dyn.peak_time(c) == (None if dyn.peak_time(k * c) is None else
                                (dyn.peak_time(k * c)[0], dyn.peak_time(k * c)[1] // k))
    a, b = dyn.peak_time_smoothed(c), dyn.peak_time_smoothed(k * c)
    assert (a is None) == (b is None) and (a is None or a[0] == b[0])
    assert dyn.impact_time(c) == dyn.impact_time(k * c)
    if c.min() >= 1:
        # every term is divided by C_t, so the factor cancels
        assert dyn.beauty_index(k * c) == pytest.approx(dyn.beauty_index(c), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0.5, 100), st.integers(1, 20), st.integers(0, 10))
def test_beauty_zero_on_line(c0, rise, tm, tail):
    cm = c0 + rise
    t = np.arange(tm + 1, dtype=float)
    line = c0 + (cm - c0) * t / tm
    series = np.concatenate([line, np.full(tail, cm / 2)])
    assert dyn.beauty_index(series) == pytest.approx(0.0, abs=1e-12 * max(1.0, cm))
