"""Command-line interface: fit / predict / evaluate / simulate / bench.

Anything structural lives in a JSON config; flags carry only paths and
the --seed / --threads overrides.  Exit codes: 0 ok, 2 usage or config
error (the message names the offending field), 3 numerical
non-convergence (artifacts are still written), 4 data validation error.

Fit checkpoints are directories holding the method's checkpoint CSV, a
``design_meta.json`` with the fitted covariate pipelines, a diagnostics
JSON, and a run manifest (config hash, package versions, wall time).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np
import pandas as pd

from .bench import run_bench
from .data_store import (DesignResult, DesignSpec, Standardizer, build_design,
                         filter_rare_species, load_dataset)
from .errors import (AllDivergent, ConfigError, DataError, NumericalError,
                     OccudetError)
from .evaluation import brier_vs_expert, eval_report, predict_checklist_prob, \
    psi_interval_maps
from .mcmc_engine import HMCConfig, sample_mcmc, summarize_chains
from .mle_engine import fit_all_mle, read_mle_csv, write_mle_csv
from .model_core import OccupancyData, OccupancyPosterior, ParameterLayout
from .simulator import sample_params, simulate_dataset
from .vi_engine import (VIConfig, fit_vi, read_posterior_csv,
                        sample_posterior, write_posterior_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_DATA = 4

_MISSING = object()


def _get(cfg: dict, key: str, types, default=_MISSING, prefix=""):
    name = f"{prefix}{key}"
    if key not in cfg or cfg[key] is None:
        if default is _MISSING:
            raise ConfigError(name, "is required")
        return default
    value = cfg[key]
    if types is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, types):
        raise ConfigError(name, f"expected {getattr(types, '__name__', types)}")
    return value


def _load_json(path, field: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(field, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(field, f"invalid JSON: {exc}") from None


def _design_spec(cfg: dict, prefix: str, add_intercept_default: bool) -> DesignSpec:
    return DesignSpec(
        quadratic_columns=_get(cfg, "quadratic_columns", list, [], prefix),
        correlation_threshold=_get(cfg, "correlation_threshold", float, 0.95, prefix),
        indicator_columns=_get(cfg, "indicator_columns", list, [], prefix),
        add_intercept=_get(cfg, "add_intercept", bool, add_intercept_default, prefix),
    )


def _design_meta(result: DesignResult) -> dict:
    return {
        "input_columns": result.input_columns,
        "kept_columns": result.kept_columns,
        "quadratic_columns": result.spec.quadratic_columns,
        "indicator_columns": result.spec.indicator_columns,
        "correlation_threshold": result.spec.correlation_threshold,
        "add_intercept": result.spec.add_intercept,
        "means": result.standardizer.means.tolist(),
        "sds": result.standardizer.sds.tolist(),
        "passthrough": result.standardizer.passthrough_mask.tolist(),
    }


def _design_from_meta(meta: dict) -> DesignResult:
    std = Standardizer(
        means=np.asarray(meta["means"], dtype=float),
        sds=np.asarray(meta["sds"], dtype=float),
        passthrough_mask=np.asarray(meta["passthrough"], dtype=bool))
    spec = DesignSpec(
        quadratic_columns=list(meta["quadratic_columns"]),
        correlation_threshold=float(meta["correlation_threshold"]),
        indicator_columns=list(meta["indicator_columns"]),
        add_intercept=bool(meta["add_intercept"]))
    return DesignResult(
        design=np.empty((0, len(meta["kept_columns"]))),
        standardizer=std,
        kept_columns=list(meta["kept_columns"]),
        input_columns=list(meta["input_columns"]),
        spec=spec)


def _write_manifest(outdir, method: str, config: dict, seed: int,
                    wall_time: float) -> None:
    import scipy

    from . import __version__
    canon = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "method": method,
        "seed": seed,
        "config": config,
        "config_sha256": hashlib.sha256(canon).hexdigest(),
        "versions": {
            "occudet": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "wall_time_s": wall_time,
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_json(args.config, "config")
    method = _get(cfg, "method", str)
    if method not in ("vi", "mcmc", "mle"):
        raise ConfigError("method", f"unknown method {method!r}; use vi, mcmc, or mle")
    data_cfg = _get(cfg, "data", dict)
    sites = _get(data_cfg, "sites", str, prefix="data.")
    checklists = _get(data_cfg, "checklists", str, prefix="data.")
    detections = _get(data_cfg, "detections", str, prefix="data.")
    species = _get(data_cfg, "species", str, None, prefix="data.")
    design_cfg = _get(cfg, "design", dict, {})
    env_spec = _design_spec(_get(design_cfg, "env", dict, {}, "design."), "design.env.", False)
    obs_spec = _design_spec(_get(design_cfg, "obs", dict, {}, "design."), "design.obs.", True)
    min_det = _get(cfg, "min_detections", int, 5)
    seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
    outdir = _get(cfg, "output_dir", str)
    engine = _get(cfg, "engine", dict, {})

    site_table, checklist_table, store = load_dataset(sites, checklists, detections, species)
    if min_det > 0:
        store = filter_rare_species(store, min_det)
    env = build_design(site_table.env_raw, site_table.columns, env_spec)
    obs = build_design(checklist_table.obs_raw, checklist_table.columns, obs_spec)
    data = OccupancyData(env.design, obs.design, store)
    layout = ParameterLayout.from_data(
        data, store.species_names, env.kept_columns, obs.kept_columns)

    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "design_meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"env": _design_meta(env), "obs": _design_meta(obs),
                   "species": store.species_names, "method": method}, fh, indent=2)

    code = EXIT_OK
    if method == "vi":
        vi_cfg = VIConfig(
            m_draws=_get(engine, "m_draws", int, 100, "engine."),
            seed=seed,
            max_iterations=_get(engine, "max_iterations", int, 500, "engine."),
            gradient_tolerance=_get(engine, "gradient_tolerance", float, 1e-5, "engine."),
            initial_trust_radius=_get(engine, "initial_trust_radius", float, 1.0, "engine."))
        posterior, diag = fit_vi(OccupancyPosterior(data, layout), vi_cfg)
        write_posterior_csv(posterior, os.path.join(outdir, "posterior.csv"), layout)
        diag.to_json(os.path.join(outdir, "diagnostics.json"))
        if not diag.converged:
            code = EXIT_NONCONVERGED
    elif method == "mcmc":
        hmc_cfg = HMCConfig(
            warmup_iters=_get(engine, "warmup_iters", int, 1000, "engine."),
            sample_iters=_get(engine, "sample_iters", int, 1000, "engine."),
            target_accept=_get(engine, "target_accept", float, 0.8, "engine."),
            max_tree_depth=_get(engine, "max_tree_depth", int, 10, "engine."),
            chains=_get(engine, "chains", int, 2, "engine."),
            seed=seed)
        try:
            result = sample_mcmc(OccupancyPosterior(data, layout), hmc_cfg)
        except AllDivergent as exc:
            with open(os.path.join(outdir, "diagnostics.json"), "w", encoding="utf-8") as fh:
                json.dump({"error": str(exc)}, fh, indent=2)
            _write_manifest(outdir, method, cfg, seed, time.perf_counter() - t0)
            print(f"fit failed: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGED
        result.to_csv(os.path.join(outdir, "draws.csv"))
        summary = summarize_chains(result)
        summary.to_csv(os.path.join(outdir, "summary.csv"), index=False)
        with open(os.path.join(outdir, "diagnostics.json"), "w", encoding="utf-8") as fh:
            json.dump({
                "accept_rate": result.accept_rate,
                "divergence_count": result.divergence_count,
                "step_size": result.step_size,
                "mass_diag": result.mass_diag.tolist(),
                "max_rhat": float(np.nanmax(summary.rhat.to_numpy())),
                "min_ess_bulk": float(np.nanmin(summary.ess_bulk.to_numpy())),
            }, fh, indent=2)
    else:  # mle
        report = fit_all_mle(
            data,
            ridge=_get(engine, "ridge", float, 0.0, "engine."),
            n_workers=args.threads or 1,
            max_iterations=_get(engine, "max_iterations", int, 500, "engine."))
        write_mle_csv(report, os.path.join(outdir, "estimates.csv"),
                      env.kept_columns, obs.kept_columns)
        n_bad = sum(1 for f in report.fits if not f.converged)
        with open(os.path.join(outdir, "diagnostics.json"), "w", encoding="utf-8") as fh:
            json.dump({"n_fit": len(report.fits), "n_skipped": len(report.skipped),
                       "n_not_converged": n_bad,
                       "skipped": report.skipped}, fh, indent=2)
        if n_bad > 0:
            code = EXIT_NONCONVERGED

    _write_manifest(outdir, method, cfg, seed, time.perf_counter() - t0)
    return code


def _load_checkpoint(checkpoint_dir):
    meta_path = os.path.join(checkpoint_dir, "design_meta.json")
    if not os.path.exists(meta_path):
        raise ConfigError("checkpoint", f"no design_meta.json in {checkpoint_dir}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    env = _design_from_meta(meta["env"])
    obs = _design_from_meta(meta["obs"])
    species = list(meta["species"])
    layout = ParameterLayout(
        len(species), len(env.kept_columns), len(obs.kept_columns),
        tuple(species), tuple(env.kept_columns), tuple(obs.kept_columns))
    return meta, env, obs, species, layout


def _checkpoint_draws(checkpoint_dir, layout, n_draws: int, seed: int):
    """(draws, is_point): posterior draws or a stacked point estimate."""
    post_path = os.path.join(checkpoint_dir, "posterior.csv")
    draws_path = os.path.join(checkpoint_dir, "draws.csv")
    mle_path = os.path.join(checkpoint_dir, "estimates.csv")
    if os.path.exists(post_path):
        posterior = read_posterior_csv(post_path)
        return sample_posterior(posterior, n_draws, seed=seed), False
    if os.path.exists(draws_path):
        df = pd.read_csv(draws_path, float_precision="round_trip")
        arr = df.drop(columns=["chain", "draw"]).to_numpy(dtype=float)
        return arr, False
    if os.path.exists(mle_path):
        report = read_mle_csv(mle_path)
        params, fit_species = report.as_parameter_set()
        if fit_species != list(layout.species_names):
            raise ConfigError("checkpoint",
                              "MLE estimates do not cover the full species roster")
        return layout.pack(params)[None], True
    raise ConfigError("checkpoint", f"no checkpoint CSV found in {checkpoint_dir}")


def cmd_predict(args) -> int:
    _, env_meta, obs_meta, species, layout = _load_checkpoint(args.checkpoint)
    sites_df = pd.read_csv(args.sites, dtype={"site_id": str})
    if "site_id" not in sites_df.columns:
        raise DataError("sites file needs a site_id column")
    cov_cols = [c for c in sites_df.columns if c != "site_id"]
    env_design = env_meta.apply(sites_df[cov_cols].to_numpy(dtype=float), cov_cols)
    draws, is_point = _checkpoint_draws(args.checkpoint, layout, args.draws, args.seed)

    if args.checklists is None:
        lo, mean, hi = psi_interval_maps(draws, env_design, layout,
                                         max_draws=args.draws)
        if is_point:
            lo = hi = mean
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("cell_id,species,psi_lo,psi_mean,psi_hi\n")
            for i, cell in enumerate(sites_df["site_id"]):
                for j, sp in enumerate(species):
                    fh.write(f"{cell},{sp},{lo[i, j]:.17g},{mean[i, j]:.17g},"
                             f"{hi[i, j]:.17g}\n")
    else:
        cl_df = pd.read_csv(args.checklists, dtype={"checklist_id": str, "site_id": str})
        for col in ("checklist_id", "site_id"):
            if col not in cl_df.columns:
                raise DataError(f"checklists file needs a {col} column")
        site_pos = {s: i for i, s in enumerate(sites_df["site_id"])}
        try:
            site_index = np.array([site_pos[s] for s in cl_df["site_id"]], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"checklist references unknown site_id {exc.args[0]!r}") from None
        obs_cols = [c for c in cl_df.columns if c not in ("checklist_id", "site_id")]
        obs_design = obs_meta.apply(cl_df[obs_cols].to_numpy(dtype=float), obs_cols)
        probs = predict_checklist_prob(draws, env_design, obs_design, site_index,
                                       layout, max_draws=args.draws)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("checklist_id,species,p_detect\n")
            for k, cid in enumerate(cl_df["checklist_id"]):
                for j, sp in enumerate(species):
                    fh.write(f"{cid},{sp},{probs[k, j]:.17g}\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not os.path.exists(args.predictions):
        raise ConfigError("predictions", f"file not found: {args.predictions}")
    pred = pd.read_csv(args.predictions, dtype={"checklist_id": str, "cell_id": str,
                                                "species": str})
    if args.test_detections is not None:
        if not os.path.exists(args.test_detections):
            raise ConfigError("test_detections",
                              f"file not found: {args.test_detections}")
        if "p_detect" not in pred.columns:
            raise DataError("checklist predictions need a p_detect column")
        det = pd.read_csv(args.test_detections,
                          dtype={"checklist_id": str, "species": str})
        det = det[det["detected"].astype(float) != 0]
        positive = set(zip(det["checklist_id"], det["species"]))
        species = list(dict.fromkeys(pred["species"]))
        checklists = list(dict.fromkeys(pred["checklist_id"]))
        sp_pos = {s: j for j, s in enumerate(species)}
        cl_pos = {c: i for i, c in enumerate(checklists)}
        probs = np.zeros((len(checklists), len(species)))
        labels = np.zeros((len(checklists), len(species)))
        for cid, sp, p in zip(pred["checklist_id"], pred["species"], pred["p_detect"]):
            probs[cl_pos[cid], sp_pos[sp]] = p
            labels[cl_pos[cid], sp_pos[sp]] = 1.0 if (cid, sp) in positive else 0.0
        report = eval_report(probs, labels, species, n_boot=args.n_boot,
                             seed=args.seed)
        report.to_csv(args.out, index=False)
    elif args.expert_map is not None:
        if not os.path.exists(args.expert_map):
            raise ConfigError("expert_map", f"file not found: {args.expert_map}")
        if "psi_mean" not in pred.columns:
            raise DataError("expert evaluation needs psi_mean predictions")
        expert = pd.read_csv(args.expert_map, dtype={"cell_id": str, "species": str})
        merged = pred.merge(expert, on=["cell_id", "species"], how="inner")
        if len(merged) == 0:
            raise DataError("predictions and expert map share no (cell_id, species)")
        rows = []
        for sp, grp in merged.groupby("species", sort=False):
            rows.append({"species": sp, "n_cells": len(grp),
                         "brier": brier_vs_expert(grp["psi_mean"].to_numpy(),
                                                  grp["present"].to_numpy())})
        df = pd.DataFrame(rows)
        overall = {"species": "ALL", "n_cells": int(df.n_cells.sum()),
                   "brier": float(df.brier.mean())}
        pd.concat([df, pd.DataFrame([overall])], ignore_index=True).to_csv(
            args.out, index=False)
    else:
        raise ConfigError("test_detections",
                          "one of --test-detections or --expert-map is required")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config, "config")
    seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
    dims = (_get(cfg, "n_species", int), _get(cfg, "d_env", int, 3),
            _get(cfg, "d_obs", int, 3))
    hyper_cfg = _get(cfg, "hyper", dict, None)
    hyper = None
    if hyper_cfg is not None:
        hyper = (np.asarray(_get(hyper_cfg, "mu", list, prefix="hyper."), dtype=float),
                 np.asarray(_get(hyper_cfg, "sigma", list, prefix="hyper."), dtype=float))
    params = sample_params(dims, seed=seed, hyper=hyper,
                           gamma_sd=_get(cfg, "gamma_sd", float, 2.0))
    sim = simulate_dataset(
        params,
        n_sites=_get(cfg, "n_sites", int),
        visit_law=(_get(cfg, "mean_visits", float, 3.0), _get(cfg, "skew", float, 0.0)),
        seed=seed)
    outdir = _get(cfg, "output_dir", str)
    sim.write_csv(outdir)
    _write_manifest(outdir, "simulate", cfg, seed, 0.0)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_json(args.config, "config") if args.config else {}
    seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
    report = run_bench(
        sizes=_get(cfg, "checklist_sizes", list,
                   [1000, 2000, 4000, 8000, 16000, 32000, 64000]),
        n_species=_get(cfg, "n_species", int, 32),
        seed=seed,
        repeats=_get(cfg, "repeats", int, 3),
        mle_max_iterations=_get(cfg, "mle_max_iterations", int, 200))
    out = args.out or _get(cfg, "output", str, "bench_report.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(f"likelihood slope {report['likelihood_slope']:.3f}, "
          f"mle slope {report['mle_slope']:.3f}, "
          f"inflation ratio {report['visit_inflation']['ratio']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occudet",
        description="Multi-species occupancy-detection models at checklist scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a JSON config")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--threads", type=int, default=os.cpu_count())
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict from a fit checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--sites", required=True)
    p_pred.add_argument("--checklists", default=None)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--draws", type=int, default=500)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="score predictions")
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--test-detections", default=None)
    p_eval.add_argument("--expert-map", default=None)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--n-boot", type=int, default=1000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="runtime scaling benchmark")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OccudetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
