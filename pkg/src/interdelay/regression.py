"""Fixed-effects OLS with journal-clustered errors and predicted margins.

Fixed effects are dummy-encoded; :func:`within_fit` absorbs them by
alternating projections instead and serves as a cross-check.
"""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .corpus import Corpus
from .errors import InputError, NumericalError

logger = logging.getLogger(__name__)

RANK_BUCKETS = ("[1,10]", "[11,20]", "[21,40]", "[41,80]", "[81,160]", "[161,320]",
                "[321,640]", "[641,1499]", "no-rank")
_BUCKET_UPPER = (10, 20, 40, 80, 160, 320, 640, 1499)

DEFAULT_CONTROLS = ("log_team_size", "log_refs", "age_first", "age_last", "age_avg",
                    "h_first", "h_last", "h_avg")
DEFAULT_FIXED_EFFECTS = ("rank_bucket", "venue_id", "year", "field_id")


@dataclass(frozen=True)
class CovariateRow:
    paper_id: str
    inter: float
    log_team_size: float
    log_refs: float
    age_first: float
    age_last: float
    age_avg: float
    h_first: int
    h_last: int
    h_avg: float
    rank_bucket: str
    venue_id: str
    year: int
    field_id: str


@dataclass
class RegressionSpec:
    response: str = "t_m"                 # t_m | b_index | impact_time | any frame column
    inter_coding: str = "rs"              # rs | percentile | high
    high_threshold: float = 70.0          # percentile cut for the "high" coding
    controls: Tuple[str, ...] = DEFAULT_CONTROLS
    fixed_effects: Tuple[str, ...] = DEFAULT_FIXED_EFFECTS
    interactions: Tuple[Tuple[str, str], ...] = ()
    cluster: str = "venue_id"


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    columns: List[str]
    clusters: np.ndarray
    frame: pd.DataFrame
    spec: RegressionSpec
    levels: Dict[str, Tuple[list, object]]   # fixed effect -> (levels, reference level)

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.columns)
        df.insert(0, "paper_id", self.frame["paper_id"].to_numpy()
                  if "paper_id" in self.frame else np.arange(self.n_obs))
        df["y"] = self.y
        df["cluster"] = self.clusters
        return df


@dataclass
class FitResult:
    names: List[str]
    beta: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    dropped_collinear: List[str]
    residuals: np.ndarray = field(repr=False)

    @property
    def coefficients(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, self.beta)))

    @property
    def se(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, np.sqrt(np.clip(np.diag(self.vcov), 0, None)))))

    def to_json(self) -> dict:
        return {"coefficients": self.coefficients, "se": self.se, "n_obs": self.n_obs,
                "n_clusters": self.n_clusters, "dropped": list(self.dropped_collinear)}


# -- covariates ------------------------------------------------------------------------


def rank_bucket(rank: Optional[int]) -> str:
    """Institution-rank interval; ranks past 1499 or missing map to no-rank."""
    if rank is None:
        return "no-rank"
    rank = int(rank)
    if rank < 1:
        raise InputError(f"rank must be >= 1, got {rank}")
    for label, upper in zip(RANK_BUCKETS, _BUCKET_UPPER):
        if rank <= upper:
            return label
    return "no-rank"


def best_rank(corpus: Corpus, row: int) -> Optional[int]:
    """Numerically lowest (most prestigious) rank among a paper's institutions."""
    ranks = [corpus.ranks[corpus.institutions[i]] for i in corpus.institutions_of(row)
             if corpus.institutions[i] in corpus.ranks]
    return min(ranks) if ranks else None


def h_index(citations: Sequence[int]) -> int:
    c = np.sort(np.asarray(citations, dtype=np.int64))[::-1]
    return int(np.count_nonzero(c >= np.arange(1, c.size + 1)))


def _author_papers(corpus: Corpus):
    """Author -> paper rows (CSR), papers in row order."""
    owner = np.repeat(np.arange(corpus.n_papers), np.diff(corpus.author_ptr))
    order = np.argsort(corpus.author_idx, kind="stable")
    ptr = np.zeros(len(corpus.authors) + 1, dtype=np.int64)
    np.cumsum(np.bincount(corpus.author_idx, minlength=len(corpus.authors)), out=ptr[1:])
    return ptr, owner[order]


def author_covariates(corpus: Corpus, paper_id) -> Tuple[Tuple[float, float, float],
                                                          Tuple[int, int, float]]:
    """((age_first, age_last, age_avg), (h_first, h_last, h_avg)) at publication time.

    Age counts years since the author's first corpus paper. The h-index uses
    the author's papers from earlier years and the citations they had
    received by the end of the focal year.
    """
    i = corpus.index_of(paper_id)
    year = int(corpus.years[i])
    ptr, papers = _author_papers(corpus)
    ages, hs = [], []
    for a in corpus.authors_of(i):
        own = papers[ptr[a]:ptr[a + 1]]
        ages.append(float(year - corpus.years[own].min()))
        prior = own[corpus.years[own] < year]
        counts = []
        for p in prior:
            citing = corpus.cite_idx[corpus.cite_ptr[p]:corpus.cite_ptr[p + 1]]
            counts.append(int(np.count_nonzero(corpus.years[citing] <= year)))
        hs.append(h_index(counts))
    if not ages:
        return (0.0, 0.0, 0.0), (0, 0, 0.0)
    return (ages[0], ages[-1], float(np.mean(ages))), (hs[0], hs[-1], float(np.mean(hs)))


def author_covariate_frame(corpus: Corpus, rows: np.ndarray) -> pd.DataFrame:
    """Vectorised :func:`author_covariates` for many papers."""
    rows = np.asarray(rows, dtype=np.int64)
    n_auth = len(corpus.authors)
    ptr, apapers = _author_papers(corpus)
    years = corpus.years.astype(np.int64)
    first_year = np.full(n_auth, np.iinfo(np.int64).max)
    owner_all = np.repeat(np.arange(corpus.n_papers), np.diff(corpus.author_ptr))
    np.minimum.at(first_year, corpus.author_idx, years[owner_all])

    # byline slots of the focal papers
    lengths = np.diff(corpus.author_ptr)[rows]
    slot_row = np.repeat(np.arange(rows.size), lengths)
    start = corpus.author_ptr[rows]
    pos = np.repeat(start, lengths) + (np.arange(slot_row.size) - np.repeat(np.cumsum(lengths) - lengths, lengths))
    slot_author = corpus.author_idx[pos].astype(np.int64)
    slot_year = years[rows][slot_row]
    slot_age = (slot_year - first_year[slot_author]).astype(float)
    slot_h = np.zeros(slot_row.size, dtype=np.int64)

    # citations received by each paper up to year Y, built incrementally
    cite_year = years[corpus.cite_idx]
    cited = np.repeat(np.arange(corpus.n_papers), np.diff(corpus.cite_ptr))
    by_year = np.argsort(cite_year, kind="stable")
    cite_year_sorted, cited_sorted = cite_year[by_year], cited[by_year]
    received = np.zeros(corpus.n_papers, dtype=np.int64)
    cursor = 0
    for Y in np.unique(slot_year):
        stop = np.searchsorted(cite_year_sorted, Y, side="right")
        np.add.at(received, cited_sorted[cursor:stop], 1)
        cursor = stop
        sel = np.flatnonzero(slot_year == Y)
        auth = np.unique(slot_author[sel])
        n_pap = ptr[auth + 1] - ptr[auth]
        own_owner = np.repeat(np.arange(auth.size), n_pap)
        own = apapers[np.repeat(ptr[auth], n_pap) + (np.arange(own_owner.size)
                                                     - np.repeat(np.cumsum(n_pap) - n_pap, n_pap))]
        prior = years[own] < Y
        own_owner, vals = own_owner[prior], received[own[prior]]
        order = np.lexsort((-vals, own_owner))
        own_owner, vals = own_owner[order], vals[order]
        grp_start = np.searchsorted(own_owner, own_owner, side="left")
        rank = np.arange(own_owner.size) - grp_start + 1
        h = np.bincount(own_owner, weights=(vals >= rank), minlength=auth.size).astype(np.int64)
        slot_h[sel] = h[np.searchsorted(auth, slot_author[sel])]

    has = lengths > 0
    first_slot = np.cumsum(lengths) - lengths
    last_slot = first_slot + lengths - 1
    # pad so papers without authors index a harmless zero
    age_pad, h_pad = np.r_[slot_age, 0.0], np.r_[slot_h, 0]
    first_slot = np.where(has, first_slot, slot_age.size)
    last_slot = np.where(has, last_slot, slot_age.size)
    denom = np.maximum(lengths, 1)
    return pd.DataFrame({
        "age_first": age_pad[first_slot],
        "age_last": age_pad[last_slot],
        "age_avg": np.bincount(slot_row, weights=slot_age, minlength=rows.size) / denom,
        "h_first": h_pad[first_slot],
        "h_last": h_pad[last_slot],
        "h_avg": np.bincount(slot_row, weights=slot_h, minlength=rows.size) / denom,
        "team_size": lengths,
    })


def covariate_frame(corpus: Corpus, scores: pd.DataFrame, metrics: pd.DataFrame,
                    spec: Optional[RegressionSpec] = None) -> pd.DataFrame:
    """One row per scored paper with every regression covariate and response."""
    spec = spec or RegressionSpec()
    df = scores[["paper_id", "year", "rs", "percentile"]].merge(
        metrics.drop(columns=[c for c in ("year",) if c in metrics]), on="paper_id", how="inner")
    rows = corpus.indices_of(df["paper_id"])
    auth = author_covariate_frame(corpus, rows)
    for col in auth.columns:
        df[col] = auth[col].to_numpy()
    df["n_refs"] = corpus.n_refs[rows].astype(np.int64)
    # team size and reference count are >= 1 by construction; zero means missing
    df["log_team_size"] = np.where(df["team_size"] >= 1, np.log(df["team_size"].clip(lower=1)), np.nan)
    df["log_refs"] = np.where(df["n_refs"] >= 1, np.log(df["n_refs"].clip(lower=1)), np.nan)
    df["rank_bucket"] = [rank_bucket(best_rank(corpus, r)) for r in rows]
    df["venue_id"] = [corpus.venues[v] for v in corpus.venue_codes[rows]]
    tax = corpus.taxonomy.level1_ids
    df["field_id"] = [tax[corpus.field_idx[corpus.field_ptr[r]]] if corpus.n_fields[r] else None
                      for r in rows]
    df["inter"] = code_inter(df, spec)
    return df


def code_inter(frame: pd.DataFrame, spec: RegressionSpec) -> np.ndarray:
    if spec.inter_coding == "rs":
        return frame["rs"].to_numpy(dtype=float)
    if spec.inter_coding == "percentile":
        return frame["percentile"].to_numpy(dtype=float)
    if spec.inter_coding == "high":
        return (frame["percentile"].to_numpy(dtype=float) >= spec.high_threshold).astype(float)
    raise ValueError(f"unknown inter coding {spec.inter_coding!r}")


# -- design ----------------------------------------------------------------------------


def _continuous(spec: RegressionSpec) -> List[str]:
    return ["inter", *spec.controls]


def _fe_levels(values: pd.Series) -> Tuple[list, object]:
    counts = values.value_counts(sort=False)
    levels = sorted(counts.index, key=str)
    top = max(counts.max(), 0)
    reference = next(l for l in levels if counts[l] == top)
    return levels, reference


def _column_builders(spec: RegressionSpec, levels: Dict[str, Tuple[list, object]]):
    """(name, variables it reads, builder(frame) -> float column) in design order."""
    out = [("const", (), lambda df: np.ones(len(df)))]
    for c in _continuous(spec):
        out.append((c, (c,), lambda df, c=c: df[c].to_numpy(dtype=float)))
    for a, b in spec.interactions:
        out.append((f"{a}:{b}", (a, b), lambda df, a=a, b=b:
                    df[a].to_numpy(dtype=float) * df[b].to_numpy(dtype=float)))
    for fe in spec.fixed_effects:
        lv, ref = levels[fe]
        for level in lv:
            if level == ref:
                continue
            out.append((f"{fe}[{level}]", (fe,), lambda df, fe=fe, level=level:
                        (df[fe].to_numpy() == level).astype(float)))
    return out


def design_from_frame(frame: pd.DataFrame, spec: RegressionSpec,
                      levels: Optional[Dict[str, Tuple[list, object]]] = None,
                      complete_case: bool = True) -> Design:
    """Numeric design: intercept, interdisciplinarity, controls, interactions,
    then k-1 dummies per fixed effect (reference level = most frequent)."""
    cont = _continuous(spec)
    needed = cont + [c for pair in spec.interactions for c in pair] + list(spec.fixed_effects)
    needed += [spec.response, spec.cluster]
    missing = [c for c in dict.fromkeys(needed) if c not in frame.columns]
    if missing:
        raise InputError(f"design frame lacks columns {missing}")
    df = frame
    if complete_case:
        used = list(dict.fromkeys(needed))
        ok = df[used].notna().all(axis=1).to_numpy()
        df = df.loc[ok].reset_index(drop=True)
    if df.empty:
        raise InputError("no complete-case rows for the regression")
    levels = dict(levels or {})
    for fe in spec.fixed_effects:
        if fe not in levels:
            levels[fe] = _fe_levels(df[fe])
    builders = _column_builders(spec, levels)
    X = np.empty((len(df), len(builders)))
    for j, (_, _, build) in enumerate(builders):
        X[:, j] = build(df)
    y = df[spec.response].to_numpy(dtype=float)
    return Design(X, y, [b[0] for b in builders], df[spec.cluster].to_numpy(), df, spec, levels)


def build_design(corpus: Corpus, scores: pd.DataFrame, metrics: pd.DataFrame,
                 spec: Optional[RegressionSpec] = None) -> Design:
    spec = spec or RegressionSpec()
    if spec.response not in ("t_m", "b_index", "impact_time"):
        raise InputError(f"response must be t_m, b_index or impact_time, got {spec.response!r}")
    return design_from_frame(covariate_frame(corpus, scores, metrics, spec), spec)


# -- estimation ------------------------------------------------------------------------


def independent_columns(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Left-to-right column selection: a column is kept unless its residual
    against the kept columns before it has relative squared norm <= ``tol``.

    Runs an incremental Cholesky on X'X, so later columns (fixed-effect
    dummies) are the ones dropped when a set is collinear.
    """
    X = np.asarray(X, dtype=float)
    k = X.shape[1]
    G = X.T @ X
    keep = np.zeros(k, dtype=bool)
    L = np.zeros((0, 0))
    basis: List[int] = []
    for j in range(k):
        gjj = G[j, j]
        if not gjj > 0:
            continue
        if basis:
            l = linalg.solve_triangular(L, G[basis, j], lower=True, check_finite=False)
            d = gjj - l @ l
        else:
            l, d = np.zeros(0), gjj
        if d > tol * gjj:
            m = len(basis)
            grown = np.zeros((m + 1, m + 1))
            grown[:m, :m] = L
            grown[m, :m] = l
            grown[m, m] = np.sqrt(d)
            L = grown
            basis.append(j)
            keep[j] = True
    return keep


def cluster_vcov(X: np.ndarray, resid: np.ndarray, clusters, bread: np.ndarray) -> Tuple[np.ndarray, int]:
    """CR1 sandwich: G/(G-1) * (n-1)/(n-k) * B (sum_g X_g'e_g e_g'X_g) B."""
    n, k = X.shape
    codes, uniq = pd.factorize(pd.Series(clusters), sort=True)
    G = uniq.size
    if G == 0:
        raise NumericalError("no clusters")
    if G == 1:
        raise NumericalError("cluster-robust errors need at least two clusters")
    scores = np.zeros((G, k))
    np.add.at(scores, codes, X * resid[:, None])
    meat = scores.T @ scores
    factor = G / (G - 1) * (n - 1) / (n - k)
    V = factor * bread @ meat @ bread
    return (V + V.T) / 2.0, G


def ols_fit(design, response=None, clusters=None, names: Optional[Sequence[str]] = None,
            tol: float = 1e-10) -> FitResult:
    """OLS with collinear columns dropped and journal-clustered (CR1) covariance."""
    if isinstance(design, Design):
        X = design.X
        y = design.y if response is None else np.asarray(response, dtype=float)
        clusters = design.clusters if clusters is None else clusters
        names = design.columns if names is None else names
    else:
        X = np.asarray(design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(response, dtype=float)
        names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if clusters is None:
        raise NumericalError("cluster ids are required")
    clusters = np.asarray(clusters)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericalError("design or response contains non-finite values")
    keep = independent_columns(X, tol)
    if not keep.any():
        raise NumericalError("every column is zero or collinear")
    Xk = X if keep.all() else X[:, keep]
    n, k = Xk.shape
    if n <= k:
        raise NumericalError(f"{n} observations for {k} parameters")
    Q, R = linalg.qr(Xk, mode="economic", check_finite=False)
    beta = linalg.solve_triangular(R, Q.T @ y, check_finite=False)
    Rinv = linalg.solve_triangular(R, np.eye(k), check_finite=False)
    bread = Rinv @ Rinv.T
    resid = y - Xk @ beta
    V, G = cluster_vcov(Xk, resid, clusters, bread)
    kept = [nm for nm, kk in zip(names, keep) if kk]
    dropped = [nm for nm, kk in zip(names, keep) if not kk]
    if dropped:
        logger.info("dropped %d collinear columns: %s", len(dropped), ", ".join(dropped[:10]))
    return FitResult(kept, beta, V, n, G, dropped, resid)


def demean(values: np.ndarray, groups: Sequence[np.ndarray], tol: float = 1e-14,
           max_iter: int = 10_000) -> np.ndarray:
    """Project out several sets of group means by alternating projections."""
    out = np.array(values, dtype=float, copy=True)
    squeeze = out.ndim == 1
    if squeeze:
        out = out[:, None]
    codes = [pd.factorize(pd.Series(g))[0] for g in groups]
    counts = [np.bincount(c).astype(float) for c in codes]
    scale = max(np.abs(out).max(initial=0.0), 1.0)
    for _ in range(max_iter):
        change = 0.0
        for c, cnt in zip(codes, counts):
            means = np.zeros((cnt.size, out.shape[1]))
            np.add.at(means, c, out)
            means /= cnt[:, None]
            out -= means[c]
            change = max(change, np.abs(means).max(initial=0.0))
        if change <= tol * scale:
            break
    else:
        warnings.warn("alternating projections did not converge", RuntimeWarning, stacklevel=2)
    return out[:, 0] if squeeze else out


def within_fit(frame: pd.DataFrame, y: str, regressors: Sequence[str],
               fixed_effects: Sequence[str]) -> Dict[str, float]:
    """Coefficients on ``regressors`` after sweeping out the fixed effects."""
    groups = [frame[fe].to_numpy() for fe in fixed_effects]
    Xw = demean(frame[list(regressors)].to_numpy(dtype=float), groups)
    yw = demean(frame[y].to_numpy(dtype=float), groups)
    beta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    return dict(zip(regressors, map(float, beta)))


# -- margins ---------------------------------------------------------------------------


def _grid(at) -> List[Dict[str, object]]:
    if at is None:
        return [{}]
    if isinstance(at, Mapping):
        keys = list(at)
        if not keys:
            return [{}]
        return [dict(zip(keys, combo)) for combo in itertools.product(*(at[k] for k in keys))]
    return [dict(p) for p in at]


def predicted_margins(fit: FitResult, design: Design, at=None) -> pd.DataFrame:
    """Average predictive margins over a grid of focal-variable values.

    Each grid point sets the focal variables for every observation and averages
    the predictions; the model is linear in its columns, so this is the mean
    design row (interactions and dummies recomputed) times beta. Standard
    errors use the delta method on the clustered vcov.
    """
    points = _grid(at)
    beta_idx = [design.columns.index(nm) for nm in fit.names]
    frame = design.frame
    builders = _column_builders(design.spec, design.levels)
    base = design.X.mean(axis=0)
    rows = []
    for point in points:
        for var, value in point.items():
            if var not in frame.columns:
                raise InputError(f"margin variable {var!r} not in the design frame")
            col = frame[var]
            if pd.api.types.is_numeric_dtype(col):
                lo, hi = col.min(), col.max()
                if not lo <= value <= hi:
                    warnings.warn(f"{var}={value} outside observed range [{lo}, {hi}]",
                                  stacklevel=2)
            elif value not in set(col):
                warnings.warn(f"{var}={value!r} not observed", stacklevel=2)
        # only columns that read a focal variable change; the rest keep their means
        means = base.copy()
        for j, (_, deps, build) in enumerate(builders):
            if any(v in point for v in deps):
                sub = frame[list(deps)].copy()
                for v in deps:
                    if v in point:
                        sub[v] = point[v]
                means[j] = build(sub).mean()
        xbar = means[beta_idx]
        margin = float(xbar @ fit.beta)
        se = float(np.sqrt(max(xbar @ fit.vcov @ xbar, 0.0)))
        rows.append({**point, "margin": margin, "se": se})
    return pd.DataFrame(rows)


# -- export ----------------------------------------------------------------------------


def write_fit(fit: FitResult, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fit.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_margins(table: pd.DataFrame, path) -> Path:
    path = Path(path)
    table.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


def write_design(design: Design, path) -> Path:
    path = Path(path)
    design.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path
