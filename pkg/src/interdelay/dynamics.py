"""Yearly citation series and per-paper dynamics metrics.

Threshold tests on integer series are evaluated in exact integer arithmetic,
so the same series always gets the same verdict regardless of summation
order or batch layout.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import _parallel
from .corpus import Corpus

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["paper_id", "year", "t_m", "c_m", "t_m_smoothed", "b_index",
                  "impact_time", "c10"]


@dataclass(frozen=True)
class CitationSeries:
    paper_id: str
    counts: np.ndarray          # counts[t], t = years since publication

    @property
    def horizon(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self):
        return self.counts.sum()


@dataclass(frozen=True)
class DynamicsMetrics:
    paper_id: str
    t_m: Optional[int]
    c_m: Optional[int]
    t_m_smoothed: Optional[int]
    b_index: Optional[float]    # None only for zero-citation papers
    impact_time: Optional[int]
    c10: int
    year: Optional[int] = None


def build_series(corpus: Corpus, paper_id, window: Optional[int] = None) -> CitationSeries:
    """Bin a paper's forward citations by years since publication.

    The horizon is ``window`` capped at the last observed corpus year.
    """
    i = corpus.index_of(paper_id)
    year = int(corpus.years[i])
    horizon = corpus.max_year - year
    if window is not None:
        horizon = min(horizon, int(window))
    citing = corpus.cite_idx[corpus.cite_ptr[i]:corpus.cite_ptr[i + 1]]
    offsets = corpus.years[citing].astype(np.int64) - year
    n_neg = int(np.count_nonzero(offsets < 0))
    if n_neg:
        logger.warning("paper %s: %d citations precede publication; dropped", paper_id, n_neg)
    offsets = offsets[(offsets >= 0) & (offsets <= horizon)]
    counts = np.bincount(offsets, minlength=horizon + 1).astype(np.int64)
    return CitationSeries(corpus.paper_ids[i], counts)


def _as_counts(series) -> np.ndarray:
    counts = series.counts if isinstance(series, CitationSeries) else series
    return np.asarray(counts)


def _is_integral(c: np.ndarray) -> bool:
    return np.issubdtype(c.dtype, np.integer)


def peak_threshold(series, ddof: int = 1) -> float:
    """mean + 2 sd of the yearly counts (sample sd by default)."""
    c = _as_counts(series).astype(float)
    if c.size - ddof <= 0:
        return float(c.mean()) if c.size else 0.0
    return float(c.mean() + 2.0 * c.std(ddof=ddof))


def _exceeds(m, s, q, n: int, ddof: int) -> bool:
    """max > mean + 2 sd, from max, sum, sum of squares (exact for integers)."""
    if n - ddof <= 0:
        return False
    gap = n * m - s
    if gap <= 0:
        return False
    return gap * gap * (n - ddof) > 4 * n * (n * q - s * s)


def peak_time(series, ddof: int = 1) -> Optional[Tuple[int, int]]:
    """Earliest year of the citation maximum, if it clears mean + 2 sd.

    Returns ``(t_m, c_m)`` or ``None``; all-zero and flat series have no peak.
    """
    c = _as_counts(series)
    if c.size == 0 or not np.any(c):
        return None
    t = int(np.argmax(c))
    if _is_integral(c):
        vals = [int(x) for x in c]
        m, s, q = vals[t], sum(vals), sum(x * x for x in vals)
        ok = _exceeds(m, s, q, len(vals), ddof)
        return (t, m) if ok else None
    if c[t] > peak_threshold(c, ddof):
        return t, c[t].item()
    return None


def smoothed_counts(series, window: int = 3) -> np.ndarray:
    """Centered moving average; windows are truncated at both ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be a positive odd integer")
    c = _as_counts(series)
    h = window // 2
    L = c.size
    cs = np.concatenate([[0], np.cumsum(c)])
    t = np.arange(L)
    lo = np.maximum(t - h, 0)
    hi = np.minimum(t + h, L - 1)
    return (cs[hi + 1] - cs[lo]) / (hi - lo + 1)


def peak_time_smoothed(series, window: int = 3) -> Optional[Tuple[int, float]]:
    """Earliest argmax of the moving-average curve, with no threshold."""
    c = _as_counts(series)
    if c.size == 0 or not np.any(c):
        return None
    sm = smoothed_counts(c, window)
    t = int(np.argmax(sm))
    return t, float(sm[t])


def beauty_index(series) -> float:
    """Sleeping-beauty coefficient up to the raw citation peak.

    Sums, for t = 0..t_m, the gap between the straight line joining
    (0, C_0) and (t_m, C_m) and the observed count, each term divided by
    max(1, C_t). Zero when the peak is in the publication year.
    """
    c = _as_counts(series)
    if c.size == 0 or not np.any(c):
        raise ValueError("beauty index is undefined for a paper without citations")
    tm = int(np.argmax(c))
    if tm == 0:
        return 0.0
    ct = c[:tm + 1].astype(float)
    c0, cm = ct[0], ct[tm]
    t = np.arange(tm + 1)
    line = (cm - c0) * t / tm + c0
    return float(np.sum((line - ct) / np.maximum(1.0, ct)))


def impact_time(series) -> Optional[int]:
    """First year by which half of all citations in the horizon have arrived."""
    c = _as_counts(series)
    total = c.sum()
    if c.size == 0 or total == 0:
        return None
    cum = np.cumsum(c)
    return int(np.argmax(2 * cum >= total))


def c10(series) -> int:
    return int(_as_counts(series)[:10].sum())


def compute_metrics(series: CitationSeries, ddof: int = 1, smooth_window: int = 3,
                    year: Optional[int] = None) -> DynamicsMetrics:
    peak = peak_time(series, ddof)
    sm = peak_time_smoothed(series, smooth_window)
    has_cites = bool(np.any(series.counts))
    return DynamicsMetrics(
        paper_id=series.paper_id,
        t_m=None if peak is None else peak[0],
        c_m=None if peak is None else int(peak[1]),
        t_m_smoothed=None if sm is None else sm[0],
        b_index=beauty_index(series) if has_cites else None,
        impact_time=impact_time(series),
        c10=c10(series),
        year=year,
    )


# -- batch path ----------------------------------------------------------------------


def series_matrix(corpus: Corpus, rows: np.ndarray, window: Optional[int] = None):
    """Dense yearly counts for ``rows``; returns (counts, lengths).

    Entries at or beyond ``lengths[k]`` are zero padding.
    """
    rows = np.asarray(rows, dtype=np.int64)
    years = corpus.years[rows].astype(np.int64)
    horizon = corpus.max_year - years
    if window is not None:
        horizon = np.minimum(horizon, int(window))
    lengths = horizon + 1
    width = int(lengths.max()) if rows.size else 1
    starts = corpus.cite_ptr[rows]
    n_cite = corpus.cite_ptr[rows + 1] - starts
    owner = np.repeat(np.arange(rows.size), n_cite)
    pos = np.repeat(starts, n_cite) + (np.arange(owner.size)
                                       - np.repeat(np.cumsum(n_cite) - n_cite, n_cite))
    offsets = corpus.years[corpus.cite_idx[pos]].astype(np.int64) - years[owner]
    valid = (offsets >= 0) & (offsets < lengths[owner])
    flat = owner[valid] * width + offsets[valid]
    counts = np.bincount(flat, minlength=rows.size * width).reshape(rows.size, width)
    return counts.astype(np.int64), lengths


def metrics_from_matrix(counts: np.ndarray, lengths: np.ndarray, ddof: int = 1,
                        smooth_window: int = 3) -> dict:
    """Vectorised metrics for a stack of integer series (see the scalar functions)."""
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise ValueError("smoothing window must be a positive odd integer")
    counts = np.asarray(counts, dtype=np.int64)
    n_rows, width = counts.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    t = np.arange(width)
    valid = t[None, :] < lengths[:, None]
    c = np.where(valid, counts, 0)
    rows = np.arange(n_rows)

    s = c.sum(axis=1)
    q = (c * c).sum(axis=1)
    tm = np.argmax(c, axis=1)
    m = c[rows, tm]
    has = s > 0

    # exact peak test: (n m - s)^2 (n - ddof) > 4 n (n q - s^2)
    n = lengths
    gap = n * m - s
    spread = n * q - s * s
    worst = float(n.max(initial=1)) ** 3 * float(m.max(initial=0)) ** 2
    if 8.0 * worst > 2.0 ** 62:
        gap_o, spread_o = gap.astype(object), spread.astype(object)
        lhs = gap_o * gap_o * (n - ddof).astype(object)
        rhs = 4 * n.astype(object) * spread_o
        ok = np.array([a > b for a, b in zip(lhs, rhs)], dtype=bool)
    else:
        ok = gap * gap * (n - ddof) > 4 * n * spread
    peak = has & (gap > 0) & (n - ddof > 0) & ok

    h = smooth_window // 2
    cs = np.concatenate([np.zeros((n_rows, 1), dtype=np.int64), np.cumsum(c, axis=1)], axis=1)
    lo = np.maximum(t - h, 0)[None, :].repeat(n_rows, axis=0)
    hi = np.minimum(t[None, :] + h, lengths[:, None] - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sm = (np.take_along_axis(cs, hi + 1, axis=1) - np.take_along_axis(cs, lo, axis=1)) / (hi - lo + 1)
    sm = np.where(valid, sm, -np.inf)
    tm_s = np.argmax(sm, axis=1)

    cum = cs[:, 1:]
    it = np.argmax(2 * cum >= s[:, None], axis=1)

    cf = c.astype(float)
    c0 = cf[:, 0]
    cmf = m.astype(float)
    safe_tm = np.where(tm > 0, tm, 1)
    line = (cmf - c0)[:, None] * t[None, :] / safe_tm[:, None] + c0[:, None]
    terms = (line - cf) / np.maximum(1.0, cf)
    terms = np.where(t[None, :] <= tm[:, None], terms, 0.0)
    b = np.where(tm > 0, terms.sum(axis=1), 0.0)

    return {
        "t_m": np.where(peak, tm, -1),
        "c_m": np.where(peak, m, -1),
        "t_m_smoothed": np.where(has, tm_s, -1),
        "b_index": np.where(has, b, np.nan),
        "impact_time": np.where(has, it, -1),
        "c10": cum[:, min(10, width) - 1] if width else np.zeros(n_rows, dtype=np.int64),
    }


def _nullable(a: np.ndarray):
    a = np.asarray(a, dtype=np.int64)
    return pd.arrays.IntegerArray(a, a < 0)


def dynamics_frame(corpus: Corpus, rows: np.ndarray, window: Optional[int] = None,
                   ddof: int = 1, smooth_window: int = 3, curve_window: int = 10,
                   threads: Optional[int] = None):
    """Metrics for corpus rows plus the first ``curve_window`` yearly counts.

    Returns ``(metrics, curves)``: two frames sorted by paper_id. ``curves``
    holds ``horizon`` and ``c0..c{curve_window-1}``.
    """
    rows = np.asarray(rows, dtype=np.int64)

    def chunk(lo: int, hi: int):
        counts, lengths = series_matrix(corpus, rows[lo:hi], window)
        out = metrics_from_matrix(counts, lengths, ddof, smooth_window)
        head = np.zeros((hi - lo, curve_window), dtype=np.int64)
        k = min(curve_window, counts.shape[1])
        head[:, :k] = counts[:, :k]
        return out, head, lengths - 1

    parts = _parallel.map_chunks(chunk, rows.size, threads, size=16384)
    keys = ["t_m", "c_m", "t_m_smoothed", "b_index", "impact_time", "c10"]
    if parts:
        cols = {k: np.concatenate([p[0][k] for p in parts]) for k in keys}
        head = np.concatenate([p[1] for p in parts])
        horizon = np.concatenate([p[2] for p in parts])
    else:
        cols = {k: np.zeros(0, dtype=float if k == "b_index" else np.int64) for k in keys}
        head = np.zeros((0, curve_window), dtype=np.int64)
        horizon = np.zeros(0, dtype=np.int64)
    ids = np.array([corpus.paper_ids[i] for i in rows], dtype=object)
    years = corpus.years[rows].astype(np.int64)
    metrics = pd.DataFrame({
        "paper_id": ids,
        "year": years,
        "t_m": _nullable(cols["t_m"]),
        "c_m": _nullable(cols["c_m"]),
        "t_m_smoothed": _nullable(cols["t_m_smoothed"]),
        "b_index": cols["b_index"],
        "impact_time": _nullable(cols["impact_time"]),
        "c10": cols["c10"].astype(np.int64),
    })
    curves = pd.DataFrame(head, columns=[f"c{k}" for k in range(curve_window)])
    curves.insert(0, "horizon", horizon.astype(np.int64))
    curves.insert(0, "paper_id", ids)
    order = np.argsort(ids.astype(str), kind="stable") if ids.size else np.zeros(0, dtype=np.int64)
    return (metrics.iloc[order].reset_index(drop=True),
            curves.iloc[order].reset_index(drop=True))


def metrics_to_frame(items: Sequence[DynamicsMetrics]) -> pd.DataFrame:
    df = pd.DataFrame({
        "paper_id": [m.paper_id for m in items],
        "year": pd.array([m.year for m in items], dtype="Int64"),
        "t_m": pd.array([m.t_m for m in items], dtype="Int64"),
        "c_m": pd.array([m.c_m for m in items], dtype="Int64"),
        "t_m_smoothed": pd.array([m.t_m_smoothed for m in items], dtype="Int64"),
        "b_index": [np.nan if m.b_index is None else m.b_index for m in items],
        "impact_time": pd.array([m.impact_time for m in items], dtype="Int64"),
        "c10": [m.c10 for m in items],
    })
    return df


def _cell(v) -> str:
    if v is None or v is pd.NA or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def write_metrics(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in df[METRIC_COLUMNS].itertuples(index=False):
            w.writerow([row[0]] + [_cell(v) for v in row[1:]])
    return path


def read_metrics(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"paper_id": str}, float_precision="round_trip")
    for col in ("year", "t_m", "c_m", "t_m_smoothed", "impact_time", "c10"):
        df[col] = df[col].astype("Int64")
    df["b_index"] = df["b_index"].astype(float)
    return df


def write_curves(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def read_curves(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"paper_id": str})
