"""Reference-field distributions, aggregated field vectors and the field
cosine-distance matrix."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import _parallel
from .corpus import Corpus, FieldTaxonomy, PaperRecord, eligible_mask
from .errors import CorpusFormatError, IneligiblePaperError, InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldDistribution:
    """Fraction of a paper's references falling in each level-1 field."""

    weights: Dict[str, float]

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def support(self) -> int:
        return sum(1 for w in self.weights.values() if w > 0)


@dataclass
class FieldVectorSet:
    field_ids: Tuple[str, ...]
    matrix: np.ndarray           # row i is v_i, columns in taxonomy order
    n_papers: np.ndarray         # eligible papers assigned to each field

    @property
    def vectors(self) -> Dict[str, np.ndarray]:
        return {f: self.matrix[i] for i, f in enumerate(self.field_ids)}

    @property
    def empty_fields(self) -> List[str]:
        zero = ~np.any(self.matrix != 0, axis=1)
        return [f for f, z in zip(self.field_ids, zero) if z]


@dataclass
class DistanceMatrix:
    field_ids: Tuple[str, ...]
    values: np.ndarray
    zero_fields: Tuple[str, ...] = ()
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.field_ids = tuple(self.field_ids)
        self._index = {f: i for i, f in enumerate(self.field_ids)}

    def __len__(self) -> int:
        return len(self.field_ids)

    def index(self, field_id: str) -> int:
        try:
            return self._index[field_id]
        except KeyError:
            raise KeyError(f"field {field_id!r} not in distance matrix") from None

    def distance(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["field_id", *self.field_ids])
            for fid, row in zip(self.field_ids, self.values):
                w.writerow([fid, *(format(float(x), ".12g") for x in row)])
        return path

    @classmethod
    def from_csv(cls, path) -> "DistanceMatrix":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if not rows:
            raise CorpusFormatError("empty distance file", path)
        ids = rows[0][1:]
        if [r[0] for r in rows[1:]] != ids:
            raise CorpusFormatError("row and column field ids differ", path)
        values = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
        if values.shape != (len(ids), len(ids)):
            raise CorpusFormatError("distance matrix is not square", path)
        return cls(tuple(ids), values)


# -- per-paper distribution --------------------------------------------------------


def reference_field_vector(paper: PaperRecord, corpus: Corpus,
                           min_field_refs: int = 2) -> FieldDistribution:
    """L1-normalised field distribution of a paper's references.

    Each field-bearing reference carries unit mass split evenly over its own
    level-1 fields. References outside the corpus count only if the record
    annotates their fields inline.
    """
    tax = corpus.taxonomy.level1_ids
    mass: Dict[str, float] = {}
    n_bearing = 0
    for rid in paper.reference_ids:
        if rid in corpus:
            fields = [tax[f] for f in corpus.fields_of(corpus.index_of(rid))]
        else:
            fields = list(paper.reference_fields.get(rid, ()))
        if not fields:
            continue
        n_bearing += 1
        share = 1.0 / len(fields)
        for fid in fields:
            mass[fid] = mass.get(fid, 0.0) + share
    if n_bearing < min_field_refs:
        raise IneligiblePaperError(
            f"paper {paper.paper_id} has {n_bearing} field-bearing references (< {min_field_refs})")
    total = float(n_bearing)
    return FieldDistribution({f: m / total for f, m in mass.items()})


def _gather(ptr: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Expand CSR rows; returns (position of source row, gathered values)."""
    starts = ptr[rows]
    lengths = ptr[rows + 1] - starts
    owner = np.repeat(np.arange(rows.size), lengths)
    offsets = np.arange(owner.size) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return owner, idx[np.repeat(starts, lengths) + offsets]


def field_distributions(corpus: Corpus, rows: np.ndarray,
                        threads: Optional[int] = None) -> sp.csr_matrix:
    """Row-normalised distributions for corpus rows ``rows`` (len(rows) x F, CSR).

    Rows without field-bearing references come back empty.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n_fields = len(corpus.taxonomy)
    dangling_lookup = None
    if corpus.dangling_fields:
        codes = sorted(corpus.dangling_fields)
        dptr = np.zeros(len(codes) + 1, dtype=np.int64)
        np.cumsum([corpus.dangling_fields[c].size for c in codes], out=dptr[1:])
        didx = np.concatenate([corpus.dangling_fields[c] for c in codes])
        dangling_lookup = (np.array(codes, dtype=np.int64), dptr, didx)

    def chunk(lo: int, hi: int) -> sp.csr_matrix:
        sub = rows[lo:hi]
        ref_owner, refs = _gather(corpus.ref_ptr, corpus.ref_code, sub)
        inside = refs >= 0
        parts_r, parts_c, parts_v = [], [], []
        r_in, c_in = ref_owner[inside], refs[inside]
        k = corpus.n_fields[c_in]
        bearing = k > 0
        r_in, c_in, k = r_in[bearing], c_in[bearing], k[bearing]
        pos, fld = _gather(corpus.field_ptr, corpus.field_idx, c_in)
        parts_r.append(r_in[pos])
        parts_c.append(fld)
        parts_v.append(1.0 / k[pos])
        n_bearing = np.bincount(r_in, minlength=sub.size).astype(float)
        if dangling_lookup is not None and np.any(~inside):
            dcodes, dptr, didx = dangling_lookup
            r_out, c_out = ref_owner[~inside], refs[~inside]
            loc = np.searchsorted(dcodes, c_out)
            loc = np.minimum(loc, dcodes.size - 1)
            hit = dcodes[loc] == c_out
            r_out, loc = r_out[hit], loc[hit]
            pos, fld = _gather(dptr, didx, loc)
            kk = (dptr[loc + 1] - dptr[loc]).astype(float)
            parts_r.append(r_out[pos])
            parts_c.append(fld)
            parts_v.append(1.0 / kk[pos])
            n_bearing += np.bincount(r_out, minlength=sub.size)
        r = np.concatenate(parts_r)
        mat = sp.coo_matrix((np.concatenate(parts_v), (r, np.concatenate(parts_c))),
                            shape=(sub.size, n_fields)).tocsr()
        mat.sum_duplicates()
        scale = np.divide(1.0, n_bearing, out=np.zeros_like(n_bearing), where=n_bearing > 0)
        mat.data *= np.repeat(scale, np.diff(mat.indptr))
        return mat

    parts = _parallel.map_chunks(chunk, rows.size, threads)
    if not parts:
        return sp.csr_matrix((0, n_fields))
    return sp.vstack(parts, format="csr")


# -- field vectors and distances ---------------------------------------------------


def build_field_vectors(corpus: Corpus, min_field_refs: int = 2, max_year: int = 2007,
                        threads: Optional[int] = None) -> FieldVectorSet:
    """Sum the normalised distributions of eligible papers into one vector per field.

    A paper listed under several level-1 fields adds its full distribution to
    each of them.
    """
    rows = np.flatnonzero(eligible_mask(corpus, min_field_refs, max_year))
    n_fields = len(corpus.taxonomy)

    def chunk(lo: int, hi: int) -> Tuple[np.ndarray, np.ndarray]:
        sub = rows[lo:hi]
        dist = field_distributions(corpus, sub, threads=1)
        owner, fld = _gather(corpus.field_ptr, corpus.field_idx, sub)
        member = sp.csr_matrix((np.ones(owner.size), (owner, fld)), shape=(sub.size, n_fields))
        member.data[:] = 1.0  # duplicate field ids count once
        part = np.asarray((member.T @ dist).todense())
        return part, np.bincount(fld, minlength=n_fields)

    total = np.zeros((n_fields, n_fields))
    counts = np.zeros(n_fields, dtype=np.int64)
    for part, cnt in _parallel.map_chunks(chunk, rows.size, threads):
        total += part
        counts += cnt
    return FieldVectorSet(corpus.taxonomy.level1_ids, total, counts)


def field_distance_matrix(vectors: FieldVectorSet) -> DistanceMatrix:
    """Cosine distance between field vectors; unpopulated fields sit at distance 1."""
    V = np.asarray(vectors.matrix, dtype=float)
    if V.size == 0 or V.shape[0] == 0:
        raise InputError("empty field vector set")
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    U = V / safe[:, None]
    d = 1.0 - U @ U.T
    # identical directions are exactly 0 apart, not 1 - (1 - rounding)
    _, group = np.unique(U, axis=0, return_inverse=True)
    group = group.ravel()
    d[group[:, None] == group[None, :]] = 0.0
    np.clip(d, 0.0, 1.0, out=d)
    d[zero, :] = 1.0
    d[:, zero] = 1.0
    upper = np.triu(d, 1)
    d = upper + upper.T
    zero_ids = tuple(f for f, z in zip(vectors.field_ids, zero) if z)
    if zero_ids:
        logger.warning("%d fields have no eligible papers; distance set to 1: %s",
                       len(zero_ids), ", ".join(zero_ids[:10]))
    return DistanceMatrix(vectors.field_ids, d, zero_ids)


def distances_for(corpus: Corpus, min_field_refs: int = 2, max_year: int = 2007,
                  threads: Optional[int] = None) -> DistanceMatrix:
    return field_distance_matrix(build_field_vectors(corpus, min_field_refs, max_year, threads))
