"""Synthetic corpora with known ground truth.

Fields are grouped into disciplines (blocks). Each paper mixes references
across blocks at its own rate, and the papers that later cite it are drawn by
preferential attachment times a lognormal aging curve. The aging mode of a
paper moves later by ``delay_coupling`` years per unit of its realised
cross-block reference fraction, so interdisciplinarity and citation delay
are coupled by construction (or not at all when the coupling is zero).
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .corpus import Corpus, FieldTaxonomy, _csr, dump_corpus
from .errors import InputError


@dataclass
class GenConfig:
    n_papers: int = 10_000
    n_fields_l1: int = 30
    n_fields_l0: int = 5
    year_start: int = 1980
    year_end: int = 2020
    refs_mean: float = 12.0
    second_field_prob: float = 0.3
    mixing: float = 0.3                 # mean probability that a reference crosses blocks
    mixing_concentration: float = 1.0   # Beta concentration of per-paper mixing rates
    delay_coupling: float = 0.0         # years of aging-mode shift per unit cross-block fraction
    aging_mu: float = 1.3               # lognormal location (log-years)
    aging_sigma: float = 0.45           # lognormal scale
    attachment: float = 0.3             # weight per citation already received
    n_venues: int = 40
    n_institutions: int = 150
    ranked_fraction: float = 0.6
    team_mean: float = 3.0
    new_author_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("second_field_prob", "mixing", "ranked_fraction", "new_author_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name}={v} must lie in [0, 1]")
        if self.n_fields_l0 < 1 or self.n_fields_l1 < self.n_fields_l0:
            raise InputError("need n_fields_l1 >= n_fields_l0 >= 1")
        if self.year_end <= self.year_start:
            raise InputError("year_end must be after year_start")
        if self.delay_coupling < 0 or self.attachment < 0:
            raise InputError("delay_coupling and attachment must be >= 0")
        if self.aging_sigma <= 0 or self.mixing_concentration <= 0:
            raise InputError("aging_sigma and mixing_concentration must be > 0")
        if self.n_venues < self.n_fields_l0:
            raise InputError("need at least one venue per discipline")
        if self.team_mean < 1 or self.n_institutions < 1 or self.n_papers < 0:
            raise InputError("team_mean and n_institutions must be >= 1")
        n_years = self.year_end - self.year_start + 1
        if self.n_papers and self.n_papers < n_years:
            raise InputError(f"{self.n_papers} papers cannot cover {n_years} years")
        if self.n_papers and self.refs_mean > self.n_papers / n_years:
            raise InputError(
                f"refs_mean={self.refs_mean} exceeds papers per year ({self.n_papers // n_years}); "
                "early papers could not find enough distinct references")

    @property
    def base_mode(self) -> float:
        return float(np.exp(self.aging_mu - self.aging_sigma ** 2))

    @classmethod
    def from_file(cls, path, **overrides) -> "GenConfig":
        """Read ``key = value`` lines (an optional ``[synthgen]`` header is allowed)."""
        text = Path(path).read_text(encoding="utf-8")
        parser = configparser.ConfigParser()
        parser.read_string("[synthgen]\n" + text if not text.lstrip().startswith("[") else text)
        section = parser["synthgen"] if parser.has_section("synthgen") else parser.defaults()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in section.items():
            if key not in types:
                raise InputError(f"unknown generator option {key!r}")
            kind = types[key]
            kwargs[key] = int(raw) if kind in ("int", int) else float(raw)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def to_file(self, path) -> Path:
        path = Path(path)
        lines = [f"{k} = {v}" for k, v in dataclasses.asdict(self).items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _blocks(cfg: GenConfig) -> np.ndarray:
    """Level-0 block of each level-1 field (contiguous, near-equal sizes)."""
    return np.concatenate([np.full(len(part), b) for b, part in
                           enumerate(np.array_split(np.arange(cfg.n_fields_l1), cfg.n_fields_l0))])


def make_taxonomy(cfg: GenConfig) -> FieldTaxonomy:
    block = _blocks(cfg)
    ids = tuple(f"F{i:03d}" for i in range(cfg.n_fields_l1))
    parent = {f: f"D{block[i]:02d}" for i, f in enumerate(ids)}
    names = {f: f"field {i} (discipline {block[i]})" for i, f in enumerate(ids)}
    return FieldTaxonomy(ids, parent, names)


def _aging_weight(age: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    la = np.log(age)
    return np.exp(-((la - mu) ** 2) / (2.0 * sigma * sigma)) / age


def generate_with_truth(cfg: GenConfig) -> Tuple[Corpus, pd.DataFrame]:
    """Generate a corpus plus per-paper ground truth (mixing rate, cross-block
    fraction and aging mode)."""
    years = np.arange(cfg.year_start, cfg.year_end + 1)
    n_years = years.size
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_years + 1)
    rng0 = np.random.default_rng(seeds[0])

    per_year = np.full(n_years, cfg.n_papers // n_years, dtype=np.int64)
    per_year[: cfg.n_papers % n_years] += 1
    N = int(per_year.sum())
    starts = np.r_[0, np.cumsum(per_year)]

    field_block = _blocks(cfg)
    fields_in_block = [np.flatnonzero(field_block == b) for b in range(cfg.n_fields_l0)]
    venues_in_block = np.array_split(np.arange(cfg.n_venues), cfg.n_fields_l0)

    pub_year = np.repeat(years, per_year).astype(np.int32)
    block = np.empty(N, dtype=np.int64)
    f1 = np.empty(N, dtype=np.int64)
    f2 = np.full(N, -1, dtype=np.int64)
    mix = np.empty(N)
    cross = np.zeros(N)
    mode = np.empty(N)
    mu = np.empty(N)
    venue = np.empty(N, dtype=np.int64)
    cites = np.zeros(N, dtype=np.float64)

    edge_src, edge_dst = [], []
    team_ptr, team_idx = [np.zeros(1, dtype=np.int64)], []
    inst_len, inst_idx = [], []
    n_authors = 0
    pool: Dict[int, np.ndarray] = {f: np.zeros(0, dtype=np.int64) for f in range(cfg.n_fields_l1)}
    a = cfg.mixing * cfg.mixing_concentration
    b_ = (1.0 - cfg.mixing) * cfg.mixing_concentration

    for k, year in enumerate(years):
        rng = np.random.default_rng(seeds[k + 1])
        lo, hi = int(starts[k]), int(starts[k + 1])
        n = hi - lo
        if n == 0:
            continue
        idx = np.arange(lo, hi)
        blk = rng.integers(0, cfg.n_fields_l0, n)
        sizes = np.array([fields_in_block[x].size for x in blk])
        first = np.array([fields_in_block[x][j] for x, j in
                          zip(blk, (rng.random(n) * sizes).astype(np.int64))])
        want2 = (rng.random(n) < cfg.second_field_prob) & (sizes > 1)
        second = np.full(n, -1, dtype=np.int64)
        for j in np.flatnonzero(want2):
            options = fields_in_block[blk[j]]
            options = options[options != first[j]]
            second[j] = options[rng.integers(0, options.size)]
        block[idx], f1[idx], f2[idx] = blk, first, second
        venue[idx] = [venues_in_block[x][rng.integers(0, len(venues_in_block[x]))] for x in blk]
        if cfg.mixing in (0.0, 1.0):
            m = np.full(n, cfg.mixing)
        else:
            m = rng.beta(a, b_, n)
        mix[idx] = m

        # references to earlier years
        n_refs = rng.poisson(cfg.refs_mean, n) if lo > 0 else np.zeros(n, dtype=np.int64)
        owner = np.repeat(np.arange(n), n_refs)
        crosses = rng.random(owner.size) < m[owner]
        if cfg.n_fields_l0 == 1:
            crosses[:] = False
        tblock = blk[owner].copy()
        shift = rng.integers(1, max(cfg.n_fields_l0, 2), owner.size)
        tblock[crosses] = (tblock[crosses] + shift[crosses]) % cfg.n_fields_l0
        tsize = np.array([fields_in_block[x].size for x in range(cfg.n_fields_l0)])[tblock]
        tfield_pos = (rng.random(owner.size) * tsize).astype(np.int64)
        offsets = np.array([fields_in_block[x][0] for x in range(cfg.n_fields_l0)])
        tfield = offsets[tblock] + tfield_pos
        u = rng.random(owner.size)
        cited = np.full(owner.size, -1, dtype=np.int64)
        order = np.argsort(tfield, kind="stable")
        bounds = np.r_[0, np.flatnonzero(np.diff(tfield[order])) + 1, order.size]
        for s, e in zip(bounds[:-1], bounds[1:]):
            if s == e:
                continue
            sel = order[s:e]
            cand = pool[int(tfield[sel[0]])]
            if cand.size == 0:
                continue
            age = (year - pub_year[cand]).astype(float)
            w = (1.0 + cfg.attachment * cites[cand]) * _aging_weight(age, mu[cand], cfg.aging_sigma)
            cw = np.cumsum(w)
            pick = np.searchsorted(cw, u[sel] * cw[-1], side="right")
            cited[sel] = cand[np.minimum(pick, cand.size - 1)]
        ok = cited >= 0
        src, dst = owner[ok] + lo, cited[ok]
        key = src * np.int64(N) + dst
        _, first_pos = np.unique(key, return_index=True)
        first_pos.sort()
        src, dst = src[first_pos], dst[first_pos]
        edge_src.append(src)
        edge_dst.append(dst)
        n_kept = np.bincount(src - lo, minlength=n)
        n_cross = np.bincount(src - lo, weights=(block[dst] != block[src]), minlength=n)
        x = np.divide(n_cross, n_kept, out=np.zeros(n), where=n_kept > 0)
        cross[idx] = x
        mode[idx] = cfg.base_mode + cfg.delay_coupling * x
        mu[idx] = np.log(mode[idx]) + cfg.aging_sigma ** 2
        np.add.at(cites, dst, 1.0)

        for f in range(cfg.n_fields_l1):
            members = idx[(first == f)]
            if members.size:
                pool[f] = np.concatenate([pool[f], members])

        # teams: existing authors uniformly, or debutants
        size = 1 + rng.poisson(cfg.team_mean - 1.0, n)
        slots = int(size.sum())
        new = (rng.random(slots) < cfg.new_author_prob) | (n_authors == 0)
        slot_ids = np.empty(slots, dtype=np.int64)
        slot_ids[~new] = rng.integers(0, max(n_authors, 1), int((~new).sum()))
        slot_ids[new] = n_authors + np.arange(int(new.sum()))
        n_authors += int(new.sum())
        team_owner = np.repeat(np.arange(n), size)
        key = team_owner * np.int64(n_authors + 1) + slot_ids
        _, keep = np.unique(key, return_index=True)
        keep.sort()
        team_idx.append(slot_ids[keep])
        team_ptr.append(np.bincount(team_owner[keep], minlength=n))

        n_inst = 1 + (rng.random(n) < 0.3)
        inst = rng.integers(0, cfg.n_institutions, int(n_inst.sum()))
        inst_owner = np.repeat(np.arange(n), n_inst)
        dup = np.r_[False, (inst[1:] == inst[:-1]) & (inst_owner[1:] == inst_owner[:-1])]
        inst_idx.append(inst[~dup])
        inst_len.append(np.bincount(inst_owner[~dup], minlength=n))

    src = np.concatenate(edge_src) if edge_src else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(edge_dst) if edge_dst else np.zeros(0, dtype=np.int64)
    order = np.argsort(src, kind="stable")
    ref_ptr = _csr(np.bincount(src, minlength=N))
    ref_code = dst[order]

    field_len = 1 + (f2 >= 0)
    field_idx = np.empty(int(field_len.sum()), dtype=np.int32)
    fptr = _csr(field_len)
    field_idx[fptr[:-1]] = f1
    has2 = f2 >= 0
    field_idx[fptr[:-1][has2] + 1] = f2[has2]

    n_ranked = int(round(cfg.ranked_fraction * cfg.n_institutions))
    rank_values = np.sort(rng0.choice(np.arange(1, 1500), size=min(n_ranked, 1499), replace=False))
    ranks = {f"I{i:04d}": int(r) for i, r in enumerate(rank_values)}

    width = max(7, len(str(N)))
    paper_ids = [f"W{i:0{width}d}" for i in range(N)]
    authors = [f"A{i:07d}" for i in range(n_authors)]
    institutions = [f"I{i:04d}" for i in range(cfg.n_institutions)]
    venues = [f"J{i:03d}" for i in range(cfg.n_venues)]
    author_len = np.concatenate(team_ptr[1:]) if len(team_ptr) > 1 else np.zeros(0, dtype=np.int64)
    tax = make_taxonomy(cfg)
    corpus = Corpus(
        paper_ids=paper_ids, years=pub_year, venues=venues, venue_codes=venue,
        authors=authors, author_ptr=_csr(author_len),
        author_idx=np.concatenate(team_idx) if team_idx else np.zeros(0, dtype=np.int32),
        institutions=institutions,
        inst_ptr=_csr(np.concatenate(inst_len) if inst_len else np.zeros(0, dtype=np.int64)),
        inst_idx=np.concatenate(inst_idx) if inst_idx else np.zeros(0, dtype=np.int32),
        field_ptr=fptr, field_idx=field_idx, ref_ptr=ref_ptr, ref_code=ref_code,
        dangling_ids=[], dangling_fields={}, taxonomy=tax, ranks=ranks,
        report={"generator": dataclasses.asdict(cfg)},
    )
    truth = pd.DataFrame({
        "paper_id": paper_ids, "year": pub_year.astype(np.int64), "block": block,
        "mixing_rate": mix, "cross_fraction": cross, "aging_mode": mode,
        "n_citations": cites.astype(np.int64),
    })
    return corpus, truth


def generate(cfg: GenConfig) -> Corpus:
    return generate_with_truth(cfg)[0]


def write_generated(cfg: GenConfig, directory, truth: bool = False) -> Dict[str, Path]:
    """Generate and write papers.jsonl, taxonomy.csv, ranks.csv (and truth.csv)."""
    corpus, tr = generate_with_truth(cfg)
    paths = dump_corpus(corpus, directory)
    if truth:
        p = Path(directory) / "truth.csv"
        tr.to_csv(p, index=False, lineterminator="\n")
        paths["truth"] = p
    return paths
