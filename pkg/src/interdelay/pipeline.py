"""Stage orchestration: ingest -> distances -> score -> dynamics -> cohort -> regress.

Every stage reads the artifacts written by the stages before it and writes
plain CSV/JSON into the output directory. ``manifest.json`` records the
configuration, input hashes, per-stage runtimes and output hashes.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from . import _parallel
from . import cohortstats as cs
from . import dynamics as dyn
from . import interdisciplinarity as inter
from . import regression as reg
from .corpus import (Corpus, eligible_mask, load_corpus, write_papers, write_ranks,
                     write_taxonomy)
from .errors import InputError, PrerequisiteError
from .taxonomy import DistanceMatrix, build_field_vectors, field_distance_matrix

logger = logging.getLogger(__name__)

STAGES = ("ingest", "distances", "score", "dynamics", "cohort", "regress")

# artifacts each stage consumes (relative to the output directory) and who makes them
CORPUS_FILES = ("corpus/papers.jsonl", "corpus/taxonomy.csv", "corpus/ranks.csv")
PRODUCER = {
    "corpus/papers.jsonl": "ingest",
    "distances.csv": "distances",
    "scores.csv": "score",
    "metrics.csv": "dynamics",
    "series.csv": "dynamics",
}
REQUIRES = {
    "ingest": (),
    "distances": CORPUS_FILES[:1],
    "score": (CORPUS_FILES[0], "distances.csv"),
    "dynamics": CORPUS_FILES[:1],
    "cohort": ("scores.csv", "metrics.csv", "series.csv"),
    "regress": (CORPUS_FILES[0], "scores.csv", "metrics.csv"),
}


@dataclass
class PipelineConfig:
    papers: Optional[str] = None
    taxonomy: Optional[str] = None
    ranks: Optional[str] = None
    output: str = "out"
    window: Optional[int] = None          # citation window in years; None = full history
    min_field_refs: int = 2
    max_year: int = 2007
    sd: str = "sample"                    # sample | population
    smooth_window: int = 3
    curve_window: int = 10
    bins: int = 20
    tail_q: float = 0.05
    n_boot: int = 1000
    bootstrap_statistic: str = "peak"     # peak | mean_tm
    seed: int = 0
    threads: int = 1
    responses: Tuple[str, ...] = ("t_m",)
    inter_coding: str = "high"
    high_threshold: float = 70.0
    export_design: bool = False

    def __post_init__(self):
        if self.window is not None and int(self.window) < 1:
            raise InputError("window must be >= 1")
        if self.sd not in ("sample", "population"):
            raise InputError("sd must be 'sample' or 'population'")
        if isinstance(self.responses, str):
            self.responses = tuple(r.strip() for r in self.responses.split(",") if r.strip())
        self.responses = tuple(self.responses)

    @property
    def ddof(self) -> int:
        return 1 if self.sd == "sample" else 0

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        text = Path(path).read_text(encoding="utf-8")
        parser = configparser.ConfigParser()
        parser.read_string(text if text.lstrip().startswith("[") else "[pipeline]\n" + text)
        section = parser["pipeline"] if parser.has_section("pipeline") else parser.defaults()
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in section.items():
            if key not in kinds:
                raise InputError(f"unknown pipeline option {key!r}")
            kwargs[key] = _coerce(kinds[key], raw)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["responses"] = list(self.responses)
        return d


def _coerce(kind: str, raw: str):
    raw = raw.strip()
    if kind.startswith("Optional") and raw.lower() in ("", "none"):
        return None
    if "bool" in kind:
        return raw.lower() in ("1", "true", "yes", "on")
    if "int" in kind and "Tuple" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class ReportBundle:
    output: Path
    stages_run: List[str]
    outputs: Dict[str, Dict[str, str]]    # stage -> {relative path: sha256}
    manifest: Path


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output)
        self._corpus: Optional[Tuple[tuple, Corpus]] = None

    # -- artifacts ---------------------------------------------------------------------

    def path(self, rel: str) -> Path:
        return self.out / rel

    def _require(self, stage: str) -> None:
        for rel in REQUIRES[stage]:
            if not self.path(rel).exists():
                prereq = PRODUCER.get(rel, "ingest")
                raise PrerequisiteError(
                    f"stage '{stage}' needs {rel}; run the '{prereq}' stage first")

    def _corpus_key(self) -> tuple:
        files = [self.path(r) for r in CORPUS_FILES]
        return tuple((str(p), p.stat().st_mtime_ns, p.stat().st_size) for p in files)

    def corpus(self) -> Corpus:
        key = self._corpus_key()
        if self._corpus is None or self._corpus[0] != key:
            self._corpus = (key, load_corpus(*[self.path(r) for r in CORPUS_FILES]))
        return self._corpus[1]

    # -- stages ------------------------------------------------------------------------

    def ingest(self) -> List[str]:
        cfg = self.config
        if not cfg.papers or not cfg.taxonomy:
            raise InputError("ingest needs --papers and --taxonomy")
        corpus = load_corpus(cfg.papers, cfg.taxonomy, cfg.ranks)
        (self.out / "corpus").mkdir(parents=True, exist_ok=True)
        write_papers(corpus, self.path(CORPUS_FILES[0]))
        write_taxonomy(corpus.taxonomy, self.path(CORPUS_FILES[1]))
        write_ranks(corpus.ranks, self.path(CORPUS_FILES[2]))
        # the canonical files reload to this same corpus, so skip the re-parse
        self._corpus = (self._corpus_key(), corpus)
        mask = eligible_mask(corpus, cfg.min_field_refs, cfg.max_year)
        report = dict(corpus.report)
        report.update({
            "n_eligible": int(mask.sum()),
            "min_field_refs": cfg.min_field_refs,
            "max_year": cfg.max_year,
            "year_min": int(corpus.years.min()) if corpus.n_papers else None,
            "year_max": corpus.max_year if corpus.n_papers else None,
            "n_fields": len(corpus.taxonomy),
            "n_ranked_institutions": len(corpus.ranks),
        })
        _write_json(self.path("validation.json"), report)
        return [*CORPUS_FILES, "validation.json"]

    def distances(self) -> List[str]:
        cfg = self.config
        corpus = self.corpus()
        vectors = build_field_vectors(corpus, cfg.min_field_refs, cfg.max_year)
        dist = field_distance_matrix(vectors)
        dist.to_csv(self.path("distances.csv"))
        _write_json(self.path("distances.json"), {
            "n_fields": len(dist),
            "empty_fields": list(dist.zero_fields),
            "papers_per_field": dict(zip(vectors.field_ids, map(int, vectors.n_papers))),
        })
        return ["distances.csv", "distances.json"]

    def score(self) -> List[str]:
        cfg = self.config
        corpus = self.corpus()
        dist = DistanceMatrix.from_csv(self.path("distances.csv"))
        scores = inter.score_corpus(corpus, dist, cfg.min_field_refs, cfg.max_year)
        inter.write_scores(scores, self.path("scores.csv"))
        return ["scores.csv"]

    def dynamics(self) -> List[str]:
        cfg = self.config
        corpus = self.corpus()
        rows = np.flatnonzero(eligible_mask(corpus, cfg.min_field_refs, cfg.max_year))
        metrics, curves = dyn.dynamics_frame(corpus, rows, cfg.window, cfg.ddof,
                                             cfg.smooth_window, cfg.curve_window)
        dyn.write_metrics(metrics, self.path("metrics.csv"))
        dyn.write_curves(curves, self.path("series.csv"))
        return ["metrics.csv", "series.csv"]

    def cohort(self) -> List[str]:
        cfg = self.config
        scores = inter.read_scores(self.path("scores.csv"))
        metrics = dyn.read_metrics(self.path("metrics.csv"))
        curves = dyn.read_curves(self.path("series.csv"))
        w = cfg.curve_window
        written = []
        groups = {}
        for label, curve in cs.tercile_curves(scores, curves, w).items():
            rel = f"curve_{label}.csv"
            _write_frame(curve.to_frame(), self.path(rel))
            written.append(rel)
            groups[label] = {"n_papers": curve.n_papers, "macro_peak_time": cs.macro_peak_time(curve)}
        tables = {
            "macro_peaks.csv": cs.peak_by_percentile(scores, curves, cfg.bins, w),
            "tm_by_percentile.csv": _binned(scores, metrics, "t_m", cfg.bins),
        }
        tail = cs.tail_ratio(metrics, scores, cfg.tail_q, cfg.bins)
        tables["tail_ratio.csv"] = tail.bins
        joined = scores.merge(metrics.drop(columns="year"), on="paper_id")
        joined = joined[joined["t_m"].notna()].reset_index(drop=True)
        extreme = cs.extreme_flags(joined["t_m"], joined["year"], cfg.tail_q)
        tables["cm_extreme_by_percentile.csv"] = cs.binned_mean(
            joined.loc[extreme, "percentile"], joined.loc[extreme, "c_m"], cfg.bins)
        for rel, table in tables.items():
            _write_frame(table, self.path(rel))
            written.append(rel)
        ids = {lab: scores.loc[scores["tercile"] == lab, "paper_id"].tolist()
               for lab in ("low", "medium", "high")}
        tests = {}
        for a, b in (("high", "low"), ("high", "medium"), ("medium", "low")):
            res = cs.bootstrap_peak_diff(ids[a], ids[b], curves, cfg.n_boot, cfg.seed, w,
                                         cfg.bootstrap_statistic, metrics)
            tests[f"{a}_vs_{b}"] = res.summary()
        summary = {
            "groups": groups,
            "bootstrap": tests,
            "tail_ratio": {"q": cfg.tail_q, "realized_fraction": tail.realized_fraction,
                           "bottom_bin": _num(tail.ratios[0]), "top_bin": _num(tail.ratios[-1])},
        }
        _write_json(self.path("cohort_summary.json"), summary)
        return written + ["cohort_summary.json"]

    def regress(self) -> List[str]:
        cfg = self.config
        corpus = self.corpus()
        scores = inter.read_scores(self.path("scores.csv"))
        metrics = dyn.read_metrics(self.path("metrics.csv"))
        written = []
        for response in cfg.responses:
            spec = reg.RegressionSpec(response=response, inter_coding=cfg.inter_coding,
                                      high_threshold=cfg.high_threshold)
            design = reg.build_design(corpus, scores, metrics, spec)
            fit = reg.ols_fit(design)
            reg.write_fit(fit, self.path(f"fit_{response}.json"))
            written.append(f"fit_{response}.json")
            refs = np.unique(np.quantile(design.frame["log_refs"], np.linspace(0.1, 0.9, 9)))
            if cfg.inter_coding == "high":
                inter_grid = [0.0, 1.0]
            elif cfg.inter_coding == "percentile":
                inter_grid = [float(v) for v in range(0, 101, 10)]
            else:
                inter_grid = [float(v) for v in np.quantile(design.frame["inter"], np.linspace(0, 1, 11))]
            margins = reg.predicted_margins(fit, design, {"inter": inter_grid,
                                                          "log_refs": [float(r) for r in refs]})
            reg.write_margins(margins, self.path(f"margins_{response}.csv"))
            written.append(f"margins_{response}.csv")
            if cfg.export_design:
                reg.write_design(design, self.path(f"design_{response}.csv"))
                written.append(f"design_{response}.csv")
        return written

    # -- driver ------------------------------------------------------------------------

    def run(self, stages: Iterable[str]) -> ReportBundle:
        wanted = set(stages)
        unknown = wanted - set(STAGES)
        if unknown:
            raise InputError(f"unknown stages {sorted(unknown)}")
        self.out.mkdir(parents=True, exist_ok=True)
        _parallel.set_threads(self.config.threads)
        manifest = self._load_manifest()
        order = [s for s in STAGES if s in wanted]
        outputs = {}
        for stage in order:
            self._require(stage)
            t0 = time.perf_counter()
            written = getattr(self, stage)()
            elapsed = time.perf_counter() - t0
            hashes = {rel: file_hash(self.path(rel)) for rel in written}
            outputs[stage] = hashes
            manifest["stages"][stage] = {"runtime_s": round(elapsed, 3), "outputs": hashes}
            logger.info("stage %s finished in %.2fs", stage, elapsed)
        manifest["config"] = self.config.to_dict()
        if "ingest" in wanted:
            manifest["inputs"] = {k: file_hash(getattr(self.config, k))
                                  for k in ("papers", "taxonomy", "ranks")
                                  if getattr(self.config, k)}
        mpath = self.path("manifest.json")
        _write_json(mpath, manifest)
        return ReportBundle(self.out, order, outputs, mpath)

    def _load_manifest(self) -> dict:
        p = self.path("manifest.json")
        if p.exists():
            m = json.loads(p.read_text(encoding="utf-8"))
            m.setdefault("stages", {})
            return m
        return {"config": {}, "inputs": {}, "stages": {}}


def run_pipeline(config: PipelineConfig, stages: Iterable[str] = STAGES) -> ReportBundle:
    return Pipeline(config).run(stages)


def build_report(output) -> dict:
    """Collect the manifest and stage summaries into one report dict."""
    out = Path(output)
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise PrerequisiteError(f"no manifest in {out}; run a pipeline stage first")
    report = {"manifest": json.loads(mpath.read_text(encoding="utf-8"))}
    for name in ("validation.json", "distances.json", "cohort_summary.json"):
        p = out / name
        if p.exists():
            report[name[:-5]] = json.loads(p.read_text(encoding="utf-8"))
    fits = {}
    for p in sorted(out.glob("fit_*.json")):
        fit = json.loads(p.read_text(encoding="utf-8"))
        fits[p.stem[4:]] = {"inter": fit["coefficients"].get("inter"),
                            "inter_se": fit["se"].get("inter"), "n_obs": fit["n_obs"],
                            "n_clusters": fit["n_clusters"]}
    if fits:
        report["regression"] = fits
    return report


# -- helpers ---------------------------------------------------------------------------


def _num(x):
    return None if x is None or (isinstance(x, float) and np.isnan(x)) else float(x)


def _binned(scores: pd.DataFrame, metrics: pd.DataFrame, col: str, bins: int) -> pd.DataFrame:
    df = scores.merge(metrics[["paper_id", col]], on="paper_id")
    return cs.binned_mean(df["percentile"], df[col], bins)


def _write_frame(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False,
                               default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
