"""The full CLI loop: simulate -> fit -> predict -> evaluate.

Runs every subcommand in a temporary directory and prints the artifacts,
using the same entry points as the installed ``occudet`` executable.
"""

import json
import tempfile
from pathlib import Path

import pandas as pd

from occudet.cli import main

root = Path(tempfile.mkdtemp(prefix="occudet_demo_"))
print(f"working in {root}")

sim_cfg = root / "sim.json"
sim_cfg.write_text(json.dumps({
    "n_species": 6, "d_env": 3, "d_obs": 2, "n_sites": 150,
    "mean_visits": 3.0, "skew": 0.2, "seed": 7, "gamma_sd": 1.0,
    "output_dir": str(root / "dataset"),
}, indent=2))
assert main(["simulate", "--config", str(sim_cfg)]) == 0
print("simulated:", sorted(p.name for p in (root / "dataset").iterdir()))

fit_cfg = root / "fit.json"
fit_cfg.write_text(json.dumps({
    "method": "vi",
    "data": {"sites": str(root / "dataset/sites.csv"),
             "checklists": str(root / "dataset/checklists.csv"),
             "detections": str(root / "dataset/detections.csv"),
             "species": str(root / "dataset/species.csv")},
    "design": {"obs": {"add_intercept": True}},
    "min_detections": 1,
    "seed": 0,
    "output_dir": str(root / "fit"),
    "engine": {"m_draws": 50},
}, indent=2))
code = main(["fit", "--config", str(fit_cfg)])
diag = json.loads((root / "fit/diagnostics.json").read_text())
print(f"fit exit={code}, converged={diag['converged']}, "
      f"iterations={diag['iterations']}")

assert main(["predict", "--checkpoint", str(root / "fit"),
             "--sites", str(root / "dataset/sites.csv"),
             "--out", str(root / "psi.csv"), "--draws", "300"]) == 0
psi = pd.read_csv(root / "psi.csv")
print("\noccupancy intervals (head):")
print(psi.head(4).to_string(index=False))

assert main(["predict", "--checkpoint", str(root / "fit"),
             "--sites", str(root / "dataset/sites.csv"),
             "--checklists", str(root / "dataset/checklists.csv"),
             "--out", str(root / "pdet.csv"), "--draws", "300"]) == 0

assert main(["evaluate", "--predictions", str(root / "pdet.csv"),
             "--test-detections", str(root / "dataset/detections.csv"),
             "--out", str(root / "eval.csv"), "--n-boot", "200"]) == 0
print("\nin-sample evaluation report:")
print(pd.read_csv(root / "eval.csv").to_string(index=False))

# expert-map comparison against the simulation truth
truth = pd.read_csv(root / "dataset/truth_y.csv")
truth.rename(columns={"site_id": "cell_id", "y": "present"}).to_csv(
    root / "expert.csv", index=False)
assert main(["evaluate", "--predictions", str(root / "psi.csv"),
             "--expert-map", str(root / "expert.csv"),
             "--out", str(root / "brier.csv")]) == 0
print("\nagreement with the true presence raster (Brier):")
print(pd.read_csv(root / "brier.csv").to_string(index=False))
