"""Plant a link between interdisciplinarity and citation delay, then find it.

The generator shifts each paper's citation-aging mode later by
``delay_coupling`` years per unit of cross-discipline reference share. With
coupling on, the high tercile should peak later than the low one; with it
off, the bootstrap should see nothing.

Run: python demos/synthetic_recovery.py [n_papers]
"""
import sys

import numpy as np

from interdelay import cohortstats as cs
from interdelay import dynamics as dyn
from interdelay import interdisciplinarity as inter
from interdelay.synthgen import GenConfig, generate_with_truth
from interdelay.taxonomy import distances_for

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000

for coupling in (3.0, 0.0):
    corpus, truth = generate_with_truth(GenConfig(n_papers=n, delay_coupling=coupling, seed=0))
    scores = inter.score_corpus(corpus, distances_for(corpus))
    curves = cs.tercile_curves(scores, corpus)
    groups = {k: scores.loc[scores["tercile"] == k, "paper_id"] for k in inter.TERCILES}
    boot = cs.bootstrap_peak_diff(groups["high"], groups["low"], corpus, n_boot=1000, seed=0)

    print(f"\n== delay_coupling = {coupling} ({corpus.n_papers} papers, "
          f"{len(scores)} scored) ==")
    for k in inter.TERCILES:
        c = curves[k]
        print(f"  {k:<7} n={c.n_papers:<5} peak year {cs.macro_peak_time(c)}  "
              f"curve {np.round(c.mean_counts, 2)}")
    print(f"  high - low peak shift {boot.delta:+g} years, bootstrap p = {boot.p_value:g}")

    # the score tracks the planted cross-discipline share
    merged = scores.merge(truth[["paper_id", "cross_fraction"]], on="paper_id")
    rho = np.corrcoef(merged["rs"], merged["cross_fraction"])[0, 1]
    print(f"  corr(RS, planted cross share) = {rho:.2f}")

    metrics, _ = dyn.dynamics_frame(corpus, corpus.indices_of(scores["paper_id"]))
    tail = cs.tail_ratio(metrics, scores, q=0.05, bins=10)
    print("  extreme-T_m ratio by RS decile:", np.round(tail.ratios, 2))
