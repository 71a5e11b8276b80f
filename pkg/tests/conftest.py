import json

import numpy as np
import pandas as pd
import pytest

from interdelay.corpus import load_corpus
from interdelay.synthgen import GenConfig, generate_with_truth

TAXONOMY = [("F1", "D1"), ("F2", "D1"), ("F3", "D2"), ("F4", "D2")]


def paper(pid, year, refs=(), fields=("F1",), venue="J1", authors=("A1",), insts=(), **extra):
    rec = {"paper_id": pid, "year": year, "venue_id": venue, "author_ids": list(authors),
           "institution_ids": list(insts), "field_ids": list(fields),
           "reference_ids": list(refs)}
    rec.update(extra)
    return rec


def write_inputs(directory, papers, taxonomy=TAXONOMY, ranks=None):
    directory.mkdir(parents=True, exist_ok=True)
    pp = directory / "papers.jsonl"
    pp.write_text("".join(json.dumps(p) + "\n" for p in papers), encoding="utf-8")
    tp = directory / "taxonomy.csv"
    tp.write_text("level1_id,level0_id,name\n"
                  + "".join(f"{a},{b},{a}\n" for a, b in taxonomy), encoding="utf-8")
    rp = None
    if ranks is not None:
        rp = directory / "ranks.csv"
        rp.write_text("institution_id,rank\n"
                      + "".join(f"{k},{v}\n" for k, v in ranks.items()), encoding="utf-8")
    return pp, tp, rp


def make_corpus(tmp_path, papers, taxonomy=TAXONOMY, ranks=None):
    return load_corpus(*write_inputs(tmp_path, papers, taxonomy, ranks))


@pytest.fixture
def three_papers(tmp_path):
    papers = [paper("P1", 2000), paper("P2", 2003, refs=["P1"]), paper("P3", 2003, refs=["P1"])]
    return make_corpus(tmp_path, papers)


@pytest.fixture(scope="session")
def coupled():
    """10^4-paper generated corpus with interdisciplinarity-delay coupling."""
    return generate_with_truth(GenConfig(n_papers=10_000, delay_coupling=3.0, seed=0))


@pytest.fixture(scope="session")
def small_generated():
    return generate_with_truth(GenConfig(n_papers=2_000, n_fields_l1=12, n_fields_l0=3,
                                         refs_mean=8, delay_coupling=3.0, seed=1))


def regression_frame(seed, n=1000, n_clusters=5, venues_per_cluster=4, n_years=6,
                     beta=0.8, rho=0.5):
    """Rows with y = beta*inter + venue effect + year effect + error, where the
    error and the regressor share a cluster-by-year shock."""
    rng = np.random.default_rng(seed)
    n_venues = n_clusters * venues_per_cluster
    venue = rng.integers(0, n_venues, n)
    cluster = venue // venues_per_cluster
    year = rng.integers(0, n_years, n)
    shock_x = rng.normal(size=(n_clusters, n_years))
    shock_e = rng.normal(size=(n_clusters, n_years))
    inter = shock_x[cluster, year] + rng.normal(size=n)
    venue_fx = rng.normal(scale=2.0, size=n_venues)
    year_fx = np.linspace(0, 3, n_years)
    err = rho * 2.0 * shock_e[cluster, year] + rng.normal(size=n)
    y = beta * inter + venue_fx[venue] + year_fx[year] + err
    return pd.DataFrame({"paper_id": [f"W{k:05d}" for k in range(n)], "y": y, "inter": inter,
                         "venue_id": [f"J{v:02d}" for v in venue], "year": 2000 + year,
                         "cluster": [f"C{c}" for c in cluster]})


# acceptance lines: criterion -> (passed, detail); filled by test_acceptance
RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
