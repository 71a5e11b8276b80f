"""Group-level analyses: average citation curves, peak of the average curve,
bootstrap tests, extreme-peak-time tail ratios and binned means."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from . import _parallel
from .corpus import Corpus
from .dynamics import series_matrix
from .errors import InputError

logger = logging.getLogger(__name__)


@dataclass
class GroupCurve:
    label: str
    mean_counts: np.ndarray
    se_counts: np.ndarray
    n_papers: int
    sum_counts: np.ndarray       # integer column sums; mean = sum / n exactly

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": np.arange(self.mean_counts.size),
                             "mean": self.mean_counts, "se": self.se_counts})


@dataclass
class BootstrapResult:
    delta: float
    p_value: float
    n_boot: int
    seed: int
    statistic: str
    deltas: np.ndarray

    def summary(self) -> dict:
        return {"delta": self.delta, "p_value": self.p_value, "n_boot": self.n_boot,
                "seed": self.seed, "statistic": self.statistic}


@dataclass
class TailRatioTable:
    bins: pd.DataFrame           # bin, lo, hi, n_papers, n_extreme, share, fraction, ratio
    q: float
    realized_fraction: float     # extreme papers / papers, after tie inclusion

    @property
    def ratios(self) -> np.ndarray:
        return self.bins["ratio"].to_numpy()


def _curve_window_matrix(ids, source, window: int) -> np.ndarray:
    """Integer (n x window) matrix of first-window counts for papers with full support."""
    if isinstance(source, Corpus):
        rows = source.indices_of(ids)
        counts, lengths = series_matrix(source, rows, window - 1)
        keep = lengths >= window
        out = np.zeros((rows.size, window), dtype=np.int64)
        k = min(window, counts.shape[1])
        out[:, :k] = counts[:, :k]
        return out[keep]
    if isinstance(source, pd.DataFrame):
        frame = source
        if "paper_id" in frame.columns:
            frame = frame.set_index("paper_id")
        sub = frame.loc[list(ids)]
        keep = sub["horizon"].to_numpy() >= window - 1
        cols = [f"c{t}" for t in range(window)]
        missing = [c for c in cols if c not in sub.columns]
        if missing:
            raise InputError(f"curve source lacks columns {missing}")
        return sub[cols].to_numpy(dtype=np.int64)[keep]
    if isinstance(source, dict):
        mats = [np.asarray(source[i])[:window] for i in ids if len(source[i]) >= window]
        return np.array(mats, dtype=np.int64).reshape(len(mats), window)
    raise TypeError("series source must be a Corpus, curve frame or id -> counts mapping")


def _curve_from_matrix(mat: np.ndarray, label: str) -> GroupCurve:
    n = mat.shape[0]
    if n == 0:
        raise InputError(f"group {label!r} has no papers with a full citation window")
    sums = mat.sum(axis=0)
    mean = sums / n
    se = mat.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(mat.shape[1])
    return GroupCurve(label, mean, se, n, sums)


def macro_average_curve(papers: Iterable, source, window: int = 10, label: str = "") -> GroupCurve:
    """Mean and standard error of yearly counts over the first ``window`` years.

    Papers observed for fewer than ``window`` years are left out so every
    point of the curve averages over the same papers.
    """
    ids = list(papers)
    if not ids:
        raise InputError("empty paper set")
    return _curve_from_matrix(_curve_window_matrix(ids, source, window), label)


def macro_peak_time(curve) -> int:
    """Earliest argmax of an average curve; no threshold."""
    values = curve.mean_counts if isinstance(curve, GroupCurve) else np.asarray(curve)
    if values.size == 0:
        raise InputError("empty curve")
    return int(np.argmax(values))


def _sign_p_value(delta: float, deltas: np.ndarray) -> float:
    if delta == 0:
        return 1.0
    against = np.count_nonzero(deltas * np.sign(delta) <= 0)
    return float(min(1.0, 2.0 * against / deltas.size))


def bootstrap_peak_diff(groupA: Iterable, groupB: Iterable, source, n_boot: int = 1000,
                        seed: int = 0, window: int = 10, statistic: str = "peak",
                        metrics: Optional[pd.DataFrame] = None,
                        threads: Optional[int] = None) -> BootstrapResult:
    """Bootstrap test for a difference in peak time between two paper groups.

    ``statistic="peak"`` compares the peak of the average curves;
    ``statistic="mean_tm"`` compares mean per-paper T_m (needs ``metrics``).
    Papers are resampled with replacement within each group; round ``r`` draws
    from its own generator spawned from ``seed``, so the result does not
    depend on how rounds are scheduled.
    """
    ids_a, ids_b = list(groupA), list(groupB)
    if not ids_a or not ids_b:
        raise InputError("both groups must be nonempty")
    if n_boot < 100:
        warnings.warn(f"n_boot={n_boot} is too small for a stable p-value", stacklevel=2)

    if statistic == "peak":
        A = _curve_window_matrix(ids_a, source, window)
        B = _curve_window_matrix(ids_b, source, window)
        if A.shape[0] == 0 or B.shape[0] == 0:
            raise InputError("a group has no papers with a full citation window")
        # float copies once; integer sums stay exact below 2**53
        A, B = A.astype(np.float64), B.astype(np.float64)

        def stat(X, w):
            return int(np.argmax(w @ X))
    elif statistic == "mean_tm":
        if metrics is None:
            raise InputError("statistic 'mean_tm' needs the metrics table")
        tm = metrics.set_index("paper_id")["t_m"]
        A = tm.reindex(ids_a).dropna().to_numpy(dtype=float)
        B = tm.reindex(ids_b).dropna().to_numpy(dtype=float)
        if A.size == 0 or B.size == 0:
            raise InputError("a group has no papers with a defined T_m")

        def stat(X, w):
            return float(w @ X / w.sum())
    else:
        raise ValueError(f"unknown statistic {statistic!r}")

    nA, nB = A.shape[0], B.shape[0]
    delta = stat(A, np.ones(nA)) - stat(B, np.ones(nB))
    children = np.random.SeedSequence(seed).spawn(n_boot)

    def one_round(r: int) -> float:
        rng = np.random.default_rng(children[r])
        wa = np.bincount(rng.integers(0, nA, nA), minlength=nA).astype(float)
        wb = np.bincount(rng.integers(0, nB, nB), minlength=nB).astype(float)
        return stat(A, wa) - stat(B, wb)

    deltas = np.array(_parallel.map_items(one_round, range(n_boot), threads), dtype=float)
    return BootstrapResult(float(delta), _sign_p_value(delta, deltas), n_boot, seed,
                           statistic, deltas)


def percentile_bin(percentile, bins: int) -> np.ndarray:
    pct = np.asarray(percentile, dtype=float)
    return np.minimum(np.floor(pct / 100.0 * bins), bins - 1).astype(np.int64)


def extreme_flags(tm: pd.Series, years: pd.Series, q: float = 0.05) -> np.ndarray:
    """Within-year top-q T_m, ties at the boundary included."""
    tm = tm.to_numpy(dtype=float)
    years = years.to_numpy()
    flags = np.zeros(tm.size, dtype=bool)
    for y in np.unique(years):
        idx = np.flatnonzero(years == y)
        vals = np.sort(tm[idx])[::-1]
        k = max(1, int(np.ceil(q * idx.size - 1e-9)))
        flags[idx] = tm[idx] >= vals[k - 1]
    return flags


def _join(metrics: pd.DataFrame, scores: pd.DataFrame) -> pd.DataFrame:
    m = metrics[["paper_id", "t_m", "c_m"] + (["year"] if "year" in metrics else [])]
    s = scores[["paper_id", "year", "percentile"]]
    if "year" in m:
        m = m.drop(columns="year")
    return s.merge(m, on="paper_id", how="inner")


def tail_ratio(metrics: pd.DataFrame, scores: pd.DataFrame, q: float = 0.05,
               bins: int = 20) -> TailRatioTable:
    """Over-representation of extreme-T_m papers per interdisciplinarity bin.

    A bin's ratio is its share of the extreme papers divided by its share of
    all papers with a T_m; a bin holding exactly its fair share scores 1.
    """
    df = _join(metrics, scores)
    df = df[df["t_m"].notna()].reset_index(drop=True)
    if df.empty:
        raise InputError("no papers with both a T_m and a score")
    extreme = extreme_flags(df["t_m"], df["year"], q)
    b = percentile_bin(df["percentile"], bins)
    n_b = np.bincount(b, minlength=bins)
    e_b = np.bincount(b[extreme], minlength=bins)
    N, E = n_b.sum(), e_b.sum()
    share = n_b / N
    frac = e_b / E if E else np.full(bins, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(n_b > 0, frac / share, np.nan)
    edges = np.linspace(0, 100, bins + 1)
    table = pd.DataFrame({"bin": np.arange(bins), "lo": edges[:-1], "hi": edges[1:],
                          "n_papers": n_b, "n_extreme": e_b, "share": share,
                          "fraction": frac, "ratio": ratio})
    return TailRatioTable(table, q, float(E / N))


def binned_mean(x, y, bins: int = 20, lo: float = 0.0, hi: float = 100.0) -> pd.DataFrame:
    """Mean, standard error and count of ``y`` in equal-width bins of ``x``.

    Pairs with a missing ``y`` are dropped.
    """
    x = pd.Series(x).to_numpy(dtype=float)
    y = pd.Series(y).astype(float).to_numpy()
    keep = ~np.isnan(y) & ~np.isnan(x)
    x, y = x[keep], y[keep]
    b = np.minimum(np.floor((x - lo) / (hi - lo) * bins), bins - 1).astype(np.int64)
    b = np.maximum(b, 0)
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for k in range(bins):
        v = y[b == k]
        n = v.size
        mean = float(v.mean()) if n else np.nan
        se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else (0.0 if n == 1 else np.nan)
        rows.append((k, edges[k], edges[k + 1], mean, se, n))
    return pd.DataFrame(rows, columns=["bin", "lo", "hi", "mean_y", "se_y", "n"])


def tercile_curves(scores: pd.DataFrame, source, window: int = 10) -> dict:
    out = {}
    for label in ("low", "medium", "high"):
        ids = scores.loc[scores["tercile"] == label, "paper_id"]
        out[label] = macro_average_curve(ids, source, window, label=label)
    return out


def peak_by_percentile(scores: pd.DataFrame, source, bins: int = 20,
                       window: int = 10) -> pd.DataFrame:
    """Peak of the average curve within each interdisciplinarity percentile bin."""
    b = percentile_bin(scores["percentile"], bins)
    edges = np.linspace(0, 100, bins + 1)
    rows = []
    for k in range(bins):
        ids = scores.loc[b == k, "paper_id"]
        mat = _curve_window_matrix(list(ids), source, window) if len(ids) else np.zeros((0, window))
        if mat.shape[0] == 0:
            rows.append((k, edges[k], edges[k + 1], np.nan, 0))
            continue
        rows.append((k, edges[k], edges[k + 1], int(np.argmax(mat.sum(axis=0))), mat.shape[0]))
    return pd.DataFrame(rows, columns=["bin", "lo", "hi", "peak_time", "n"])
