"""Runtime scaling of the sparse encoding, and the padded-layout contrast.

Checklist data are heavily skewed: most sites get one visit, a few get
hundreds.  A padded sites-by-max-visits matrix pays for (sites x busiest
site), so concentrating visits blows its footprint up; the flat encoding
pays for checklists only.  The benchmark times likelihood evaluation and
a per-species MLE fit across dataset sizes and checks that concentrating
one site's visits tenfold (at fixed total) changes nothing.
"""

import numpy as np

from occudet.bench import build_skewed_dataset, run_bench

# footprint contrast on one skewed dataset
_, data = build_skewed_dataset(16000, 8, seed=0)
visits = np.bincount(data.site_of_checklist)
k_max = visits.max()
padded_cells = data.n_sites * k_max * data.n_species
print(f"{data.n_checklists} checklists over {data.n_sites} sites; "
      f"busiest site has {k_max} visits "
      f"({(visits == 1).mean():.0%} of sites have exactly one)")
print(f"padded layout would hold {padded_cells / 1e6:.0f}M cells "
      f"({padded_cells * 8 / 1e9:.1f} GB at float64); "
      f"sparse store holds {data.store.memory_bytes() / 1e6:.1f} MB")

print("\ntiming across checklist counts (this takes ~1 minute)...")
report = run_bench(sizes=[1000, 2000, 4000, 8000, 16000, 32000, 64000],
                   n_species=16, seed=0, repeats=7)
print(f"{'checklists':>10s} {'likelihood':>12s} {'MLE fit':>10s}")
for k, tl, tm in zip(report["sizes"], report["likelihood_times_s"],
                     report["mle_times_s"]):
    print(f"{k:10d} {tl * 1e3:10.2f}ms {tm * 1e3:8.1f}ms")
print(f"log-log slopes: likelihood {report['likelihood_slope']:.2f}, "
      f"MLE {report['mle_slope']:.2f}, combined {report['runtime_slope']:.2f} "
      f"(1.0 = linear)")
infl = report["visit_inflation"]
print(f"concentrating one site's visits 10x at fixed K={infl['n_checklists']}: "
      f"runtime ratio {infl['ratio']:.2f} (padded layouts blow up here)")
