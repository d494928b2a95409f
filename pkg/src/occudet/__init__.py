"""Multi-species occupancy-detection models for large checklist datasets.

Core pieces:

* :mod:`occudet.data_store`  -- CSV loading, design matrices, sparse
  detection encoding.
* :mod:`occudet.model_core`  -- parameters, priors, the marginalized
  likelihood, and analytic derivatives of the unconstrained posterior.
* :mod:`occudet.vi_engine`   -- fixed-draw mean-field variational
  inference with a trust-region Newton-CG optimizer.
* :mod:`occudet.mcmc_engine` -- adaptive dynamic-trajectory HMC.
* :mod:`occudet.mle_engine`  -- per-species maximum likelihood baseline.
* :mod:`occudet.simulator`   -- synthetic data and brute-force oracles.
* :mod:`occudet.evaluation`  -- AUC, log likelihood, Brier score,
  bootstrap SEs, interval maps.
* :mod:`occudet.cli`         -- fit / predict / evaluate / simulate /
  bench commands.
"""

__version__ = "0.1.0"

from .data_store import (ChecklistTable, DesignResult, DesignSpec,
                         DetectionStore, SiteTable, Standardizer,
                         build_design, filter_rare_species, load_dataset)
from .evaluation import (auc, bootstrap_se, brier_vs_expert, eval_report,
                         mean_log_likelihood, predict_checklist_prob,
                         psi_interval_maps)
from .mcmc_engine import ChainResult, HMCConfig, sample_mcmc, summarize_chains
from .mle_engine import (MLEFitReport, SpeciesMLE, fit_all_mle,
                         fit_species_mle)
from .model_core import (OccupancyData, OccupancyPosterior, ParameterLayout,
                         ParameterSet, SiteSpeciesProbs, detection_prob,
                         grad_log_posterior_unconstrained, log_likelihood,
                         log_likelihood_blocks, log_posterior_unconstrained,
                         log_prior, occupancy_prob, read_parameter_csv,
                         site_species_probs, write_parameter_csv)
from .simulator import (CovariateLaw, SimulatedDataset, oracle_log_likelihood,
                        sample_params, simulate_dataset)
from .vi_engine import (FitDiagnostics, FixedDrawSet, MeanFieldPosterior,
                        VIConfig, fit_vi, kl_gradient, kl_hessian_vector,
                        kl_objective, sample_posterior)

__all__ = [name for name in dir() if not name.startswith("_")]
