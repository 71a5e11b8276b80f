"""How often does beta +/- 2 clustered SEs cover the truth?

With few clusters the CR1 sandwich is estimated from G cluster scores, so the
t-statistic behaves like t(G-1), not a normal. This script shows coverage at
5 and at 50 clusters on the same data-generating process used by the test
suite (venue and year effects, errors sharing cluster-by-year shocks).

Run: python demos/cluster_coverage.py [n_seeds]
"""
import sys

import numpy as np
import pandas as pd
import scipy.stats

from interdelay import regression as reg

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 100
spec = reg.RegressionSpec(response="y", controls=(), fixed_effects=("venue_id", "year"),
                          cluster="cluster")


def frame(seed, n, n_clusters, venues_per_cluster, n_years=6, beta=0.8, rho=0.5):
    rng = np.random.default_rng(seed)
    n_venues = n_clusters * venues_per_cluster
    venue = rng.integers(0, n_venues, n)
    cluster = venue // venues_per_cluster
    year = rng.integers(0, n_years, n)
    shock_x = rng.normal(size=(n_clusters, n_years))
    shock_e = rng.normal(size=(n_clusters, n_years))
    inter = shock_x[cluster, year] + rng.normal(size=n)
    y = (beta * inter + rng.normal(scale=2.0, size=n_venues)[venue]
         + np.linspace(0, 3, n_years)[year] + rho * 2.0 * shock_e[cluster, year]
         + rng.normal(size=n))
    return pd.DataFrame({"y": y, "inter": inter, "venue_id": venue, "year": year,
                         "cluster": cluster})


for G, per, n in ((5, 4, 1000), (50, 1, 3000)):
    crit = scipy.stats.t.ppf(0.975, G - 1)
    hit2 = hit_t = 0
    for seed in range(n_seeds):
        fit = reg.ols_fit(reg.design_from_frame(frame(seed, n, G, per), spec))
        err = abs(fit.coefficients["inter"] - 0.8)
        hit2 += err <= 2 * fit.se["inter"]
        hit_t += err <= crit * fit.se["inter"]
    print(f"G={G:>2}: +/-2 SE covers {hit2}/{n_seeds}; +/-t({G - 1}) = {crit:.2f} SE covers "
          f"{hit_t}/{n_seeds}")
