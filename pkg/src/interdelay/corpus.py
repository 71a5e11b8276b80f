"""Publication corpus: loading, validation, columnar indexing.

Papers are stored column-wise (numpy arrays plus CSR offset/index pairs) so
that a million-paper corpus fits comfortably in memory and every downstream
stage can work on whole arrays. ``PaperRecord`` objects are materialised on
demand.
"""

from __future__ import annotations

import csv
import json
from array import array
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorpusFormatError, InputError

logger = logging.getLogger(__name__)

DEFAULT_YEAR_RANGE = (1900, 2020)
PAPER_KEYS = ("paper_id", "year", "venue_id", "author_ids", "institution_ids",
              "field_ids", "reference_ids")


@dataclass(frozen=True)
class PaperRecord:
    paper_id: str
    year: int
    venue_id: str
    author_ids: Tuple[str, ...]          # byline order
    institution_ids: Tuple[str, ...]
    field_ids: Tuple[str, ...]           # level-1 fields
    reference_ids: Tuple[str, ...]
    # inline field annotations for references that are not in the corpus
    reference_fields: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "paper_id": self.paper_id,
            "year": self.year,
            "venue_id": self.venue_id,
            "author_ids": list(self.author_ids),
            "institution_ids": list(self.institution_ids),
            "field_ids": list(self.field_ids),
            "reference_ids": list(self.reference_ids),
        }
        if self.reference_fields:
            obj["reference_fields"] = {k: list(v) for k, v in self.reference_fields.items()}
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class FieldTaxonomy:
    level1_ids: Tuple[str, ...]
    level1_to_level0: Dict[str, str]
    names: Dict[str, str]

    def __post_init__(self):
        if len(set(self.level1_ids)) != len(self.level1_ids):
            raise InputError("duplicate level-1 field id in taxonomy")
        missing = [f for f in self.level1_ids if f not in self.level1_to_level0]
        if missing:
            raise InputError(f"level-1 fields without a level-0 parent: {missing[:5]}")
        object.__setattr__(self, "_index", {f: i for i, f in enumerate(self.level1_ids)})

    def __len__(self) -> int:
        return len(self.level1_ids)

    def index(self, field_id: str) -> int:
        return self._index[field_id]

    def get_index(self, field_id: str, default: int = -1) -> int:
        return self._index.get(field_id, default)

    @property
    def level0_ids(self) -> List[str]:
        return sorted(set(self.level1_to_level0.values()))

    def level0_codes(self) -> np.ndarray:
        """Integer level-0 code for each level-1 field, in taxonomy order."""
        lookup = {f: i for i, f in enumerate(self.level0_ids)}
        return np.array([lookup[self.level1_to_level0[f]] for f in self.level1_ids], dtype=np.int32)


class _PaperView(Mapping):
    def __init__(self, corpus: "Corpus"):
        self._c = corpus

    def __getitem__(self, pid):
        return self._c.record(self._c.index_of(pid))

    def __iter__(self):
        return iter(self._c.paper_ids)

    def __len__(self):
        return self._c.n_papers


class _CitationView(Mapping):
    def __init__(self, corpus: "Corpus"):
        self._c = corpus

    def __getitem__(self, pid):
        c = self._c
        i = c.index_of(pid)
        citing = c.cite_idx[c.cite_ptr[i]:c.cite_ptr[i + 1]]
        return [(c.paper_ids[j], int(c.years[j])) for j in citing]

    def __iter__(self):
        return iter(self._c.paper_ids)

    def __len__(self):
        return self._c.n_papers


def _csr(lengths: Sequence[int]) -> np.ndarray:
    ptr = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(np.asarray(lengths, dtype=np.int64), out=ptr[1:])
    return ptr


class Corpus:
    """Immutable, id-indexed publication corpus.

    Reference codes ``>= 0`` point at corpus rows; negative codes ``-(k+1)``
    point at ``dangling_ids[k]`` (references to papers outside the corpus).
    """

    def __init__(self, *, paper_ids, years, venues, venue_codes, authors, author_ptr,
                 author_idx, institutions, inst_ptr, inst_idx, field_ptr, field_idx,
                 ref_ptr, ref_code, dangling_ids, dangling_fields, taxonomy, ranks,
                 report=None):
        self.paper_ids: List[str] = list(paper_ids)
        self._index = {pid: i for i, pid in enumerate(self.paper_ids)}
        self.years = np.asarray(years, dtype=np.int32)
        self.venues: List[str] = list(venues)
        self.venue_codes = np.asarray(venue_codes, dtype=np.int32)
        self.authors: List[str] = list(authors)
        self.author_ptr, self.author_idx = author_ptr, np.asarray(author_idx, dtype=np.int32)
        self.institutions: List[str] = list(institutions)
        self.inst_ptr, self.inst_idx = inst_ptr, np.asarray(inst_idx, dtype=np.int32)
        self.field_ptr, self.field_idx = field_ptr, np.asarray(field_idx, dtype=np.int32)
        self.ref_ptr, self.ref_code = ref_ptr, np.asarray(ref_code, dtype=np.int64)
        self.dangling_ids: List[str] = list(dangling_ids)
        # dangling code -> level-1 field indices (inline annotations)
        self.dangling_fields: Dict[int, np.ndarray] = dict(dangling_fields)
        self.taxonomy = taxonomy
        self.ranks: Dict[str, int] = dict(ranks)
        self._build_citation_index()
        self._build_flags()
        self.report = dict(report or {})
        self.report.setdefault("n_papers", self.n_papers)
        self.report["n_citation_edges"] = int(self.cite_idx.size)
        self.report["n_dangling_references"] = int(np.count_nonzero(self.ref_code < 0))
        for name in ("years", "venue_codes", "author_ptr", "author_idx", "inst_ptr", "inst_idx",
                     "field_ptr", "field_idx", "ref_ptr", "ref_code", "cite_ptr", "cite_idx",
                     "n_refs", "n_field_refs", "n_fields"):
            getattr(self, name).flags.writeable = False

    # -- construction helpers --------------------------------------------------

    def _build_citation_index(self) -> None:
        n = self.n_papers
        lengths = np.diff(self.ref_ptr)
        rows = np.repeat(np.arange(n, dtype=np.int64), lengths)
        inside = self.ref_code >= 0
        citing, cited = rows[inside], self.ref_code[inside]
        order = np.argsort(cited, kind="stable")
        self.cite_idx = citing[order].astype(np.int32)
        self.cite_ptr = _csr(np.bincount(cited, minlength=n))

    def _build_flags(self) -> None:
        n = self.n_papers
        self.n_refs = np.diff(self.ref_ptr).astype(np.int32)
        self.n_fields = np.diff(self.field_ptr).astype(np.int32)
        rows = np.repeat(np.arange(n, dtype=np.int64), self.n_refs)
        code = self.ref_code
        bearing = np.zeros(code.size, dtype=bool)
        inside = code >= 0
        bearing[inside] = self.n_fields[code[inside]] > 0
        if self.dangling_fields:
            dcodes = np.fromiter(self.dangling_fields.keys(), dtype=np.int64)
            bearing[~inside] = np.isin(code[~inside], dcodes)
        self._ref_bearing = bearing
        self.n_field_refs = np.bincount(rows[bearing], minlength=n).astype(np.int32)

    # -- access ----------------------------------------------------------------

    @property
    def n_papers(self) -> int:
        return len(self.paper_ids)

    @property
    def max_year(self) -> int:
        return int(self.years.max()) if self.n_papers else 0

    @property
    def papers(self) -> Mapping:
        return _PaperView(self)

    @property
    def citations(self) -> Mapping:
        return _CitationView(self)

    def __len__(self) -> int:
        return self.n_papers

    def __contains__(self, pid) -> bool:
        return str(pid) in self._index

    def index_of(self, pid) -> int:
        try:
            return self._index[str(pid)]
        except KeyError:
            raise KeyError(f"unknown paper id {pid!r}") from None

    def indices_of(self, pids) -> np.ndarray:
        return np.fromiter((self.index_of(p) for p in pids), dtype=np.int64)

    def refs_of(self, i: int) -> np.ndarray:
        return self.ref_code[self.ref_ptr[i]:self.ref_ptr[i + 1]]

    def fields_of(self, i: int) -> np.ndarray:
        return self.field_idx[self.field_ptr[i]:self.field_ptr[i + 1]]

    def authors_of(self, i: int) -> np.ndarray:
        return self.author_idx[self.author_ptr[i]:self.author_ptr[i + 1]]

    def institutions_of(self, i: int) -> np.ndarray:
        return self.inst_idx[self.inst_ptr[i]:self.inst_ptr[i + 1]]

    def record(self, i: int) -> PaperRecord:
        tax = self.taxonomy.level1_ids
        refs, ref_fields = [], {}
        for code in self.refs_of(i):
            if code >= 0:
                refs.append(self.paper_ids[code])
            else:
                rid = self.dangling_ids[-code - 1]
                refs.append(rid)
                if int(code) in self.dangling_fields:
                    ref_fields[rid] = tuple(tax[f] for f in self.dangling_fields[int(code)])
        return PaperRecord(
            paper_id=self.paper_ids[i],
            year=int(self.years[i]),
            venue_id=self.venues[self.venue_codes[i]],
            author_ids=tuple(self.authors[a] for a in self.authors_of(i)),
            institution_ids=tuple(self.institutions[a] for a in self.institutions_of(i)),
            field_ids=tuple(tax[f] for f in self.fields_of(i)),
            reference_ids=tuple(refs),
            reference_fields=ref_fields,
        )

    def records(self) -> Iterator[PaperRecord]:
        for i in range(self.n_papers):
            yield self.record(i)


# -- readers ---------------------------------------------------------------------


def load_taxonomy(path) -> FieldTaxonomy:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        need = {"level1_id", "level0_id", "name"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise CorpusFormatError(f"taxonomy header must contain {sorted(need)}", path, 1)
        ids, parent, names = [], {}, {}
        for lineno, row in enumerate(reader, start=2):
            fid = row["level1_id"]
            if not fid or not row["level0_id"]:
                raise CorpusFormatError("empty field id", path, lineno)
            if fid in parent:
                raise CorpusFormatError(f"duplicate level-1 id {fid!r}", path, lineno)
            ids.append(fid)
            parent[fid] = row["level0_id"]
            names[fid] = row["name"]
    return FieldTaxonomy(tuple(ids), parent, names)


def load_ranks(path) -> Dict[str, int]:
    path = Path(path)
    ranks: Dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"institution_id", "rank"} <= set(reader.fieldnames):
            raise CorpusFormatError("ranks header must be institution_id,rank", path, 1)
        for lineno, row in enumerate(reader, start=2):
            value = (row["rank"] or "").strip()
            if not value:
                continue
            try:
                ranks[row["institution_id"]] = int(value)
            except ValueError:
                raise CorpusFormatError(f"non-integer rank {value!r}", path, lineno) from None
    return ranks


def _str_list(obj, key, path, lineno) -> List[str]:
    value = obj.get(key)
    if not isinstance(value, list):
        raise CorpusFormatError(f"{key} must be an array", path, lineno)
    return [v if isinstance(v, str) else str(v) for v in value]


def load_corpus(papers_path, taxonomy_path, ranks_path=None,
                year_range: Tuple[int, int] = DEFAULT_YEAR_RANGE) -> Corpus:
    """Load the line-delimited paper file plus taxonomy (and optional ranks)."""
    taxonomy = load_taxonomy(taxonomy_path)
    ranks = load_ranks(ranks_path) if ranks_path else {}
    return _parse_papers(Path(papers_path), taxonomy, ranks, year_range)


def _parse_papers(path: Path, taxonomy: FieldTaxonomy, ranks, year_range) -> Corpus:
    lo_year, hi_year = year_range
    ids: List[str] = []
    lines: List[int] = []
    years = array("i")
    # string ids are coded on the fly in first-appearance order
    venue_lookup: Dict[str, int] = {}
    author_lookup: Dict[str, int] = {}
    inst_lookup: Dict[str, int] = {}
    ref_lookup: Dict[str, int] = {}
    venue_codes, author_idx, inst_idx = array("i"), array("i"), array("i")
    field_idx, ref_tmp = array("i"), array("q")
    author_len, inst_len, field_len, ref_len = array("q"), array("q"), array("q"), array("q")
    inline: Dict[Tuple[int, str], List[str]] = {}
    index: Dict[str, int] = {}
    loads = json.loads

    def code_all(values, lookup, out):
        for v in values:
            out.append(lookup.setdefault(v, len(lookup)))

    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"malformed JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise CorpusFormatError("record must be a JSON object", path, lineno)
            missing = [k for k in PAPER_KEYS if k not in obj]
            if missing:
                raise CorpusFormatError(f"missing keys {missing}", path, lineno)
            pid = obj["paper_id"]
            pid = pid if isinstance(pid, str) else str(pid)
            if pid in index:
                raise CorpusFormatError(
                    f"duplicate paper_id {pid!r} (first on line {lines[index[pid]]})", path, lineno)
            year = obj["year"]
            if not isinstance(year, int) or isinstance(year, bool):
                raise CorpusFormatError("year must be an integer", path, lineno)
            if not lo_year <= year <= hi_year:
                raise CorpusFormatError(f"year {year} outside [{lo_year}, {hi_year}]", path, lineno)
            row = len(ids)
            index[pid] = row
            ids.append(pid)
            lines.append(lineno)
            years.append(year)
            venue_codes.append(venue_lookup.setdefault(str(obj["venue_id"]), len(venue_lookup)))
            a = _str_list(obj, "author_ids", path, lineno)
            code_all(a, author_lookup, author_idx)
            author_len.append(len(a))
            a = _str_list(obj, "institution_ids", path, lineno)
            code_all(a, inst_lookup, inst_idx)
            inst_len.append(len(a))
            a = _str_list(obj, "field_ids", path, lineno)
            for fid in a:
                j = taxonomy.get_index(fid)
                if j < 0:
                    raise CorpusFormatError(f"unknown field id {fid!r}", path, lineno)
                field_idx.append(j)
            field_len.append(len(a))
            a = _str_list(obj, "reference_ids", path, lineno)
            code_all(a, ref_lookup, ref_tmp)
            ref_len.append(len(a))
            rf = obj.get("reference_fields")
            if rf:
                if not isinstance(rf, dict):
                    raise CorpusFormatError("reference_fields must be an object", path, lineno)
                for rid, flist in rf.items():
                    inline[(row, rid)] = _str_list({"x": flist}, "x", path, lineno)

    n = len(ids)
    field_codes = np.frombuffer(field_idx, dtype=np.int32).copy()
    venues = list(venue_lookup)
    authors = list(author_lookup)
    institutions = list(inst_lookup)
    author_len, inst_len, field_len = (np.frombuffer(a, dtype=np.int64)
                                       for a in (author_len, inst_len, field_len))

    # references: in-corpus rows or negative dangling codes (numbered by first appearance)
    ref_rows = np.repeat(np.arange(n, dtype=np.int64), np.frombuffer(ref_len, dtype=np.int64))
    dangling: Dict[str, int] = {}
    resolve = np.empty(len(ref_lookup), dtype=np.int64)
    get = index.get
    for rid, t in ref_lookup.items():
        j = get(rid)
        if j is None:
            j = dangling[rid] = -(len(dangling) + 1)
        resolve[t] = j
    del ref_lookup
    codes = resolve[np.frombuffer(ref_tmp, dtype=np.int64)]
    del ref_tmp, resolve
    keep = codes != ref_rows
    n_self = int(np.count_nonzero(~keep))
    # drop repeated (row, code) pairs, keeping the first occurrence
    width = np.int64(n + len(dangling) + 1)
    key = ref_rows * width + (codes + len(dangling) + 1)
    _, first = np.unique(key, return_index=True)
    del key
    unique_mask = np.zeros(codes.size, dtype=bool)
    unique_mask[first] = True
    n_dup = int(np.count_nonzero(~unique_mask & keep))
    keep &= unique_mask
    codes, ref_rows = codes[keep], ref_rows[keep]
    ref_ptr = _csr(np.bincount(ref_rows, minlength=n)) if n else np.zeros(1, np.int64)

    dangling_fields: Dict[int, np.ndarray] = {}
    for (row, rid), flist in inline.items():
        code = dangling.get(rid)
        if code is None:
            continue  # annotation for an in-corpus reference: corpus fields win
        fidx = []
        for fid in flist:
            j = taxonomy.get_index(fid)
            if j < 0:
                raise CorpusFormatError(f"unknown field id {fid!r} in reference_fields", path, lines[row])
            if j not in fidx:
                fidx.append(j)
        if fidx:
            prev = dangling_fields.get(code)
            if prev is not None and list(prev) != fidx:
                logger.warning("conflicting inline fields for %s; keeping first", rid)
                continue
            dangling_fields[code] = np.array(fidx, dtype=np.int32)

    dangling_ids = [None] * len(dangling)
    for rid, code in dangling.items():
        dangling_ids[-code - 1] = rid

    report = {
        "n_papers": n,
        "n_self_references_dropped": n_self,
        "n_duplicate_references_dropped": n_dup,
        "n_unique_dangling_ids": len(dangling),
    }
    if n_self or n_dup:
        logger.warning("dropped %d self-references and %d duplicate references", n_self, n_dup)
    corpus = Corpus(
        paper_ids=ids, years=np.frombuffer(years, dtype=np.int32).copy(), venues=venues,
        venue_codes=np.frombuffer(venue_codes, dtype=np.int32).copy(), authors=authors,
        author_ptr=_csr(author_len), author_idx=np.frombuffer(author_idx, dtype=np.int32).copy(),
        institutions=institutions, inst_ptr=_csr(inst_len),
        inst_idx=np.frombuffer(inst_idx, dtype=np.int32).copy(), field_ptr=_csr(field_len),
        field_idx=field_codes,
        ref_ptr=ref_ptr, ref_code=codes, dangling_ids=dangling_ids,
        dangling_fields=dangling_fields, taxonomy=taxonomy, ranks=ranks, report=report,
    )
    if corpus.report["n_dangling_references"]:
        logger.info("%d dangling references", corpus.report["n_dangling_references"])
    return corpus


# -- eligibility -------------------------------------------------------------------


def eligible_mask(corpus: Corpus, min_field_refs: int = 2, max_year: int = 2007) -> np.ndarray:
    return (corpus.years <= max_year) & (corpus.n_field_refs >= min_field_refs)


def filter_eligible(corpus: Corpus, min_field_refs: int = 2, max_year: int = 2007) -> set:
    """Ids of papers published by ``max_year`` with enough field-bearing references."""
    mask = eligible_mask(corpus, min_field_refs, max_year)
    return {corpus.paper_ids[i] for i in np.flatnonzero(mask)}


# -- writers -----------------------------------------------------------------------


def write_papers(corpus: Corpus, path) -> Path:
    """Canonical papers file; one compact JSON object per paper in corpus order."""
    path = Path(path)
    tax = corpus.taxonomy.level1_ids
    ids = corpus.paper_ids
    dangling = corpus.dangling_ids
    refs = [ids[c] if c >= 0 else dangling[-c - 1] for c in corpus.ref_code.tolist()]
    fields = [tax[f] for f in corpus.field_idx.tolist()]
    authors = [corpus.authors[a] for a in corpus.author_idx.tolist()]
    insts = [corpus.institutions[a] for a in corpus.inst_idx.tolist()]
    rp, fp = corpus.ref_ptr.tolist(), corpus.field_ptr.tolist()
    ap, ip = corpus.author_ptr.tolist(), corpus.inst_ptr.tolist()
    years = corpus.years.tolist()
    venues = [corpus.venues[v] for v in corpus.venue_codes.tolist()]
    dumps = json.JSONEncoder(separators=(",", ":"), ensure_ascii=False).encode
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i in range(corpus.n_papers):
            obj = {
                "paper_id": ids[i],
                "year": years[i],
                "venue_id": venues[i],
                "author_ids": authors[ap[i]:ap[i + 1]],
                "institution_ids": insts[ip[i]:ip[i + 1]],
                "field_ids": fields[fp[i]:fp[i + 1]],
                "reference_ids": refs[rp[i]:rp[i + 1]],
            }
            if corpus.dangling_fields:
                rf = {}
                for c in corpus.ref_code[rp[i]:rp[i + 1]]:
                    if c < 0 and int(c) in corpus.dangling_fields:
                        rf[dangling[-c - 1]] = [tax[x] for x in corpus.dangling_fields[int(c)]]
                if rf:
                    obj["reference_fields"] = rf
            f.write(dumps(obj))
            f.write("\n")
    return path


def write_records(records, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(rec.to_json())
            f.write("\n")
    return path


def write_taxonomy(taxonomy: FieldTaxonomy, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["level1_id", "level0_id", "name"])
        for fid in taxonomy.level1_ids:
            w.writerow([fid, taxonomy.level1_to_level0[fid], taxonomy.names.get(fid, fid)])
    return path


def write_ranks(ranks: Mapping, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["institution_id", "rank"])
        for inst in sorted(ranks):
            w.writerow([inst, ranks[inst]])
    return path


def dump_corpus(corpus: Corpus, directory) -> Dict[str, Path]:
    """Write the canonical serialized form (papers, taxonomy, ranks)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return {
        "papers": write_papers(corpus, directory / "papers.jsonl"),
        "taxonomy": write_taxonomy(corpus.taxonomy, directory / "taxonomy.csv"),
        "ranks": write_ranks(corpus.ranks, directory / "ranks.csv"),
    }
