"""Rao-Stirling interdisciplinarity and within-year ranking."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.stats import rankdata

from . import _parallel
from .corpus import Corpus, eligible_mask
from .taxonomy import DistanceMatrix, FieldDistribution, field_distributions

TERCILES = ("low", "medium", "high")


@dataclass(frozen=True)
class InterScore:
    paper_id: str
    year: int
    rs: float
    percentile: Optional[float] = None
    tercile: Optional[str] = None
    flagged: bool = False   # cohort too small for a tercile split


def rao_stirling(dist: FieldDistribution, d: DistanceMatrix) -> float:
    """Sum of d_ij p_i p_j over ordered pairs i != j."""
    fields = list(dist.weights)
    idx = [d.index(f) for f in fields]
    p = np.fromiter((dist.weights[f] for f in fields), dtype=float, count=len(fields))
    sub = d.values[np.ix_(idx, idx)].copy()
    np.fill_diagonal(sub, 0.0)
    return float(p @ sub @ p)


def rao_stirling_batch(P: sp.csr_matrix, D: np.ndarray, threads: Optional[int] = None) -> np.ndarray:
    """Row-wise RS for a stack of distributions (rows of ``P``) against ``D``.

    ``D`` must have a zero diagonal.
    """
    P = sp.csr_matrix(P)

    def chunk(lo: int, hi: int) -> np.ndarray:
        sub = P[lo:hi]
        Q = sub @ D
        return np.asarray(sub.multiply(Q).sum(axis=1)).ravel()

    parts = _parallel.map_chunks(chunk, P.shape[0], threads, size=8192)
    return np.concatenate(parts) if parts else np.zeros(0)


def _cohort(scores: Sequence[InterScore], year: int) -> List[int]:
    return [k for k, s in enumerate(scores) if s.year == year]


def cohort_percentiles(scores: Sequence[InterScore], year: int) -> List[InterScore]:
    """Percentile of each paper's RS within its publication-year cohort.

    ``100 * (rank - 1) / (n - 1)`` with average ranks for ties; a cohort of
    one sits at 50.
    """
    out = list(scores)
    members = _cohort(scores, year)
    if not members:
        return out
    n = len(members)
    if n == 1:
        pct = np.array([50.0])
    else:
        ranks = rankdata([scores[k].rs for k in members], method="average")
        pct = 100.0 * (ranks - 1.0) / (n - 1)
    for k, v in zip(members, pct):
        out[k] = dataclasses.replace(out[k], percentile=float(v))
    return out


def tercile_sizes(n: int) -> List[int]:
    return [n // 3 + (1 if i < n % 3 else 0) for i in range(3)]


def tercile_split(scores: Sequence[InterScore], year: int) -> List[InterScore]:
    """Label a year cohort low/medium/high by rank, ties broken by paper_id."""
    out = list(scores)
    members = _cohort(scores, year)
    if not members:
        return out
    if len(members) < 3:
        for k in members:
            out[k] = dataclasses.replace(out[k], tercile="medium", flagged=True)
        return out
    order = sorted(members, key=lambda k: (scores[k].rs, scores[k].paper_id))
    labels = np.repeat(TERCILES, tercile_sizes(len(order)))
    for k, lab in zip(order, labels):
        out[k] = dataclasses.replace(out[k], tercile=str(lab), flagged=False)
    return out


def rank_scores(scores: Sequence[InterScore]) -> List[InterScore]:
    out = list(scores)
    for year in sorted({s.year for s in scores}):
        out = tercile_split(cohort_percentiles(out, year), year)
    return out


# -- whole-corpus path ---------------------------------------------------------------


def rank_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Add ``percentile``, ``tercile`` and ``flagged`` columns to a (paper_id, year, rs) frame."""
    df = frame.reset_index(drop=True).copy()
    n = df.groupby("year")["rs"].transform("size").to_numpy()
    ranks = df.groupby("year")["rs"].rank(method="average").to_numpy()
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(n > 1, 100.0 * (ranks - 1.0) / (n - 1), 50.0)
    df["percentile"] = pct
    order = np.lexsort((df["paper_id"].to_numpy(), df["rs"].to_numpy(), df["year"].to_numpy()))
    years = df["year"].to_numpy()[order]
    starts = np.r_[0, np.flatnonzero(np.diff(years)) + 1]
    lengths = np.diff(np.r_[starts, years.size])
    pos = np.arange(years.size) - np.repeat(starts, lengths)
    size = np.repeat(lengths, lengths)
    base, rem = size // 3, size % 3
    low_end = base + (rem > 0)
    mid_end = low_end + base + (rem > 1)
    code = np.where(pos < low_end, 0, np.where(pos < mid_end, 1, 2))
    small = size < 3
    code[small] = 1
    tercile = np.empty(df.shape[0], dtype=object)
    tercile[order] = np.array(TERCILES, dtype=object)[code]
    flagged = np.zeros(df.shape[0], dtype=bool)
    flagged[order] = small
    df["tercile"] = tercile
    df["flagged"] = flagged
    return df


def score_corpus(corpus: Corpus, distances: DistanceMatrix, min_field_refs: int = 2,
                 max_year: int = 2007, threads: Optional[int] = None) -> pd.DataFrame:
    """RS, within-year percentile and tercile for every eligible paper, sorted by paper_id."""
    rows = np.flatnonzero(eligible_mask(corpus, min_field_refs, max_year))
    tax = corpus.taxonomy.level1_ids
    if tuple(distances.field_ids) != tuple(tax):
        perm = np.array([distances.index(f) for f in tax])
        D = distances.values[np.ix_(perm, perm)]
    else:
        D = distances.values
    D = D.copy()
    np.fill_diagonal(D, 0.0)
    P = field_distributions(corpus, rows, threads)
    rs = rao_stirling_batch(P, D, threads)
    ids = np.array([corpus.paper_ids[i] for i in rows], dtype=object)
    df = pd.DataFrame({"paper_id": ids, "year": corpus.years[rows].astype(np.int64), "rs": rs})
    df = rank_frame(df)
    return df.sort_values("paper_id", kind="stable").reset_index(drop=True)


def scores_to_frame(scores: Sequence[InterScore]) -> pd.DataFrame:
    return pd.DataFrame([dataclasses.asdict(s) for s in scores])


def frame_to_scores(df: pd.DataFrame) -> List[InterScore]:
    cols = ["paper_id", "year", "rs", "percentile", "tercile", "flagged"]
    return [InterScore(str(p), int(y), float(r), None if pd.isna(q) else float(q),
                       None if pd.isna(t) else str(t), bool(f))
            for p, y, r, q, t, f in df[cols].itertuples(index=False)]


def write_scores(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["paper_id", "year", "rs", "percentile", "tercile"])
        for pid, year, rs, pct, ter in df[["paper_id", "year", "rs", "percentile",
                                            "tercile"]].itertuples(index=False):
            w.writerow([pid, int(year), repr(float(rs)), repr(float(pct)), ter])
    return path


def read_scores(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"paper_id": str, "tercile": str}, keep_default_na=False,
                     float_precision="round_trip")
    df["year"] = df["year"].astype(np.int64)
    return df
