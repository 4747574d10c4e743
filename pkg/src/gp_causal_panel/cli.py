"""Command-line interface for GP causal panel runs."""

import argparse
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from gp_causal_panel.artifacts import ArtifactStore
from gp_causal_panel.causal import (
    att_draws,
    att_frame,
    att_payload,
    counterfactual_draws,
    pretreatment_draws,
    pretreatment_fit,
)
from gp_causal_panel.config import DEFAULT_SEED, RunConfig, load_config
from gp_causal_panel.diagnostics import (
    boxplot_frame,
    curves_frame,
    default_grids,
    estimate_fhat,
    functional_boxplot,
    kernel_surface,
    posterior_curves,
    separability_verdict,
)
from gp_causal_panel.errors import ConfigError, NumericalError
from gp_causal_panel.kernels import KernelFamily, KernelParams, time_factor, unit_factor
from gp_causal_panel.mcmc import (
    chain_metadata,
    chains_frame,
    chains_from_frame,
    counterfactual_trace,
    posterior_median,
    posterior_point,
    rhat_report,
    run_mcmc,
)
from gp_causal_panel.models import ChainSet
from gp_causal_panel.panel import PanelData, PanelIndex, load_panel, write_panel
from gp_causal_panel.simlab import (
    PRESETS,
    load_study,
    preset_study,
    run_study,
    simulate_panels,
    simulation_index,
    truth_frame,
)
from gp_causal_panel.weights import (
    distance_decay,
    donor_weights_separable,
    panel_donor_weights,
    weight_grid_frame,
    weight_map_frame,
    weight_summaries,
)

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

FIT_NAME = "fit.json"
CHAINS_NAME = "chains.csv"
PANEL_NAME = "panel.csv"
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
KERNEL_CHOICES = sorted({*(f.value for f in KernelFamily), "icm", "rbf", "nonseparable"})


@dataclass(frozen=True)
class FittedRun:
    """A fit directory loaded back into memory."""

    store: ArtifactStore
    fit: dict[str, Any]
    config: RunConfig
    panel: PanelData
    index: PanelIndex
    chains: ChainSet


def _load_fit(fit_dir: Path) -> FittedRun:
    """Load the panel, configuration and chains written by ``fit``.

    Raises:
        FileNotFoundError: If the directory lacks a fit artifact.
    """
    for name in (FIT_NAME, CHAINS_NAME, PANEL_NAME):
        if not (fit_dir / name).exists():
            msg = f"Missing fit artifact {fit_dir / name}; run 'gp-causal-panel fit' first"
            raise FileNotFoundError(msg)
    store = ArtifactStore(fit_dir)
    fit = store.read_json(FIT_NAME)
    config = RunConfig.from_dict(fit["config"])
    panel, index = load_panel(
        store.path(PANEL_NAME),
        schema={"covariates": fit["panel"]["covariates"]},
        unit_fixed_effects=config.unit_fixed_effects,
        use_time_values=config.use_time_values,
    )
    chains = chains_from_frame(store.read_frame(CHAINS_NAME), fit["metadata"])
    return FittedRun(store=store, fit=fit, config=config, panel=panel, index=index, chains=chains)


def cmd_simulate(args: argparse.Namespace) -> int:
    """Simulate panels for every DGP of a preset or study configuration.

    Each DGP gets ``<out>/<dgp>/`` holding ``panel.csv``, ``truth.csv`` and
    ``dgp.json``; with several replicates they go to ``<out>/<dgp>/rep_<r>/``.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success).
    """
    study = load_study(Path(args.config)) if args.config else preset_study(args.preset)
    if args.seed is not None:
        study = replace(study, seed=args.seed)
    replicates = args.replicates if args.replicates is not None else (study.replicates if args.config else 1)
    store = ArtifactStore(Path(args.out))
    for item in simulate_panels(study, replicates=replicates, jobs=args.jobs):
        dgp = study.dgps[item.dgp_index]
        prefix = f"{dgp.name}/" if replicates == 1 else f"{dgp.name}/rep_{item.replicate:03d}/"
        write_panel(item.sim.panel, store.path(f"{prefix}{PANEL_NAME}"), simulation_index(item.sim.panel))
        store.record(f"{prefix}{PANEL_NAME}")
        store.write_frame(f"{prefix}truth.csv", truth_frame(item.sim))
        store.write_json(
            f"{prefix}dgp.json",
            {**dgp.to_dict(), "kernel": item.sim.kernel.to_dict(), "seed": item.seed, "replicate": item.replicate},
        )
    for dgp in study.dgps:
        logger.info("Simulated %d panel(s) of %s", replicates, dgp.name)
    settings: dict[str, Any] = {"preset": None if args.config else args.preset, "replicates": replicates}
    if args.config:
        settings["dgps"] = [dgp.to_dict() for dgp in study.dgps]
    store.write_manifest("simulate", settings, study.seed)
    return 0


def _fit_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.panel:
        overrides["panel"] = str(Path(args.panel).resolve())
    if args.kernel:
        overrides["kernel"] = {"kernel": args.kernel}
    if args.seed is not None:
        overrides["sampler"] = {"seed": args.seed}
    return overrides


def cmd_fit(args: argparse.Namespace) -> int:
    """Sample the posterior of a panel model and write chains and R-hat.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success, 2 for a missing panel).
    """
    config = load_config(Path(args.config) if args.config else None, _fit_overrides(args))
    if config.panel is None:
        logger.error("No panel given; pass --panel or set 'panel' in the configuration")
        return EXIT_VALIDATION
    panel, index = load_panel(
        config.panel,
        schema=config.schema,
        unit_fixed_effects=config.unit_fixed_effects,
        use_time_values=config.use_time_values,
    )
    chains = run_mcmc(panel, config.kernel, config.likelihood.build(), config.priors, config.sampler, jobs=args.jobs)
    store = ArtifactStore(Path(args.out))
    write_panel(panel, store.path(PANEL_NAME), index)
    store.record(PANEL_NAME)
    store.write_frame(CHAINS_NAME, chains_frame(chains))
    report = rhat_report(chains)
    store.write_json("rhat.json", report)
    if not report["converged"]:
        logger.warning("Convergence gate not passed; results are recorded but should be checked")

    trace = counterfactual_trace(chains, panel, panel.n_times)
    chain_idx, draw_idx = np.indices(trace.shape).reshape(2, -1)
    store.write_frame(
        "trace.csv",
        pd.DataFrame(
            {
                "chain": chain_idx,
                "iter": draw_idx + chains.burn_in + 1,
                "period": panel.n_times,
                "value": trace.reshape(-1),
            }
        ),
    )
    effective = {**config.to_dict(), "panel": str(config.panel)}
    store.write_json(
        FIT_NAME,
        {
            "metadata": chain_metadata(chains),
            "config": effective,
            "panel": {"covariates": list(panel.covariate_names), "source": str(config.panel)},
            "posterior_point": posterior_point(chains).to_dict(),
            "sigma2": posterior_median(chains, "sigma2") if "sigma2" in chains.params else None,
        },
    )
    store.write_manifest("fit", effective, config.sampler.seed)
    return 0


def cmd_att(args: argparse.Namespace) -> int:
    """Summarise the ATT of a fit.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success).
    """
    run = _load_fit(Path(args.fit))
    rate_scale = args.rate_scale or run.config.rate_scale
    pre = pretreatment_draws(run.chains, run.panel)
    summary = att_draws(run.panel, counterfactual_draws(run.chains, run.panel), rate_scale, pre)
    pre_fit = pretreatment_fit(run.panel, pre, rate_scale) if pre is not None and run.panel.t0 > 0 else None
    store = ArtifactStore(Path(args.out)) if args.out else run.store
    store.write_json("att.json", att_payload(summary, pre_fit))
    store.write_frame("att_by_time.csv", att_frame(summary))
    store.write_manifest("att", {"fit": str(args.fit), "rate_scale": rate_scale}, run.chains.seed)
    return 0


def _kernel_point(run: FittedRun) -> tuple[KernelParams, float]:
    # Latent-field fits carry no noise term; their diagonal is the latent jitter.
    sigma2 = run.fit.get("sigma2")
    noise = run.config.sampler.latent_jitter if sigma2 is None else float(sigma2)
    return KernelParams.from_dict(run.fit["posterior_point"]), noise


def cmd_weights(args: argparse.Namespace) -> int:
    """Write the donor weights implied by the posterior point kernel.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success).
    """
    run = _load_fit(Path(args.fit))
    params, sigma2 = _kernel_point(run)
    weights = panel_donor_weights(run.panel, params, sigma2)
    if not 0 <= args.target < weights.w.shape[0]:
        msg = f"--target must lie in [0, {weights.w.shape[0] - 1}], got {args.target}"
        raise ConfigError(msg)
    maps = weight_summaries(weights, run.panel)
    target_unit, target_time = divmod(int(weights.target_cells[args.target]), run.panel.n_times)
    rho, p_value = distance_decay(maps.unit_average[args.target], run.panel.coords, target_unit)

    store = ArtifactStore(Path(args.out)) if args.out else run.store
    store.write_frame("weights.csv", weight_map_frame(weights, run.panel, run.index))
    store.write_frame("weight_grid.csv", weight_grid_frame(maps, run.panel, args.target, run.index))
    summary: dict[str, Any] = {
        "kernel": params.to_dict(),
        "sigma2": sigma2,
        "target": {"unit_id": run.index.unit_labels[target_unit], "period": target_time + 1},
        "n_targets": int(weights.w.shape[0]),
        "n_donors": int(weights.w.shape[1]),
        "distance_decay": {"spearman_rho": rho, "p_value": p_value},
    }
    store.write_json("weights.json", summary)
    if params.is_separable:
        separable = donor_weights_separable(
            unit_factor(run.panel, params), time_factor(run.panel, params), sigma2, (target_unit, target_time)
        )
        store.write_json(
            "separable_weights.json",
            {
                "target": summary["target"],
                "donor_units": [run.index.unit_labels[u] for u in separable.donor_units],
                "donor_periods": [int(t) + 1 for t in separable.donor_times],
                "unit_weights": separable.unit_weights.tolist(),
                "time_weights": separable.time_weights.tolist(),
                "max_abs_deviation": separable.max_abs_deviation,
                "decomposition_exact": separable.decomposition_exact,
            },
        )
    store.write_manifest("weights", {"fit": str(args.fit), "target": args.target}, run.chains.seed)
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    """Separability diagnostics of a Gneiting fit.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success, 2 for a fit of another kernel).
    """
    run = _load_fit(Path(args.fit))
    if KernelFamily.parse(run.chains.kernel) != KernelFamily.GNEITING:
        logger.error("Separability diagnostics need a Gneiting fit, got %s", run.chains.kernel)
        return EXIT_VALIDATION
    n_curves = run.config.posterior_curves if args.curves is None else args.curves
    h_grid, u_grid = default_grids(run.panel, run.config.n_h)
    estimate = estimate_fhat(run.chains, h_grid, u_grid)
    curves = estimate.curves
    if n_curves:
        curves = posterior_curves(run.chains, h_grid, u_grid, n_curves, seed=run.chains.seed)
    box = functional_boxplot(curves)

    store = ArtifactStore(Path(args.out)) if args.out else run.store
    store.write_frame("separability.csv", curves_frame(estimate.curves).drop(columns="is_outlier"))
    store.write_frame("boxplot.csv", boxplot_frame(box, u_grid))
    store.write_frame("curves.csv", curves_frame(curves, box))
    store.write_json("verdict.json", separability_verdict(estimate))
    surface_h = np.concatenate([[0.0], h_grid])
    surface_u = np.arange(run.panel.n_times, dtype=np.float64)
    store.write_frame("kernel_surface.csv", kernel_surface(posterior_point(run.chains), surface_h, surface_u))
    settings = {"fit": str(args.fit), "n_h": run.config.n_h, "curves": n_curves}
    store.write_manifest("diagnose", settings, run.chains.seed)
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    """Run a replicate study and write per-replicate and aggregated metrics.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success).
    """
    if args.config:
        study = load_study(Path(args.config))
    else:
        study = preset_study(args.preset)
    if args.replicates is not None:
        study = replace(study, replicates=args.replicates)
    if args.seed is not None:
        study = replace(study, seed=args.seed)
    result = run_study(study, jobs=args.jobs)
    store = ArtifactStore(Path(args.out))
    store.write_frame("study.csv", result.records)
    store.write_frame("study_summary.csv", result.summary())
    store.write_manifest("study", study.to_dict(), study.seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(
        prog="gp-causal-panel",
        description="Gaussian process counterfactuals for panel data",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Simulate command
    simulate_parser = subparsers.add_parser("simulate", help="Simulate panels with known counterfactuals")
    simulate_parser.add_argument("--preset", choices=PRESETS, default="desk-normal", help="Simulation design")
    simulate_parser.add_argument("--config", "-c", help="Study configuration JSON (overrides --preset)")
    simulate_parser.add_argument(
        "--seed", type=int, help=f"Master seed (default: the study seed, {DEFAULT_SEED} for presets)"
    )
    simulate_parser.add_argument(
        "--replicates", type=int, help="Panels per DGP (default: 1 for presets, the study value with --config)"
    )
    simulate_parser.add_argument("--jobs", "-j", type=int, default=1, help="Worker processes (default: 1)")
    simulate_parser.add_argument("--out", "-o", required=True, help="Output directory")
    simulate_parser.set_defaults(func=cmd_simulate)

    # Fit command
    fit_parser = subparsers.add_parser("fit", help="Sample the posterior of a panel model")
    fit_parser.add_argument("--panel", "-p", help="Panel CSV (overrides the configuration)")
    fit_parser.add_argument("--config", "-c", help="Run configuration JSON")
    fit_parser.add_argument(
        "--kernel", "-k", choices=KERNEL_CHOICES, help="Kernel family (overrides the configuration)"
    )
    fit_parser.add_argument("--seed", type=int, help="Master seed (overrides the configuration)")
    fit_parser.add_argument("--jobs", "-j", type=int, default=1, help="Worker processes for chains (default: 1)")
    fit_parser.add_argument("--out", "-o", required=True, help="Output directory")
    fit_parser.set_defaults(func=cmd_fit)

    # ATT command
    att_parser = subparsers.add_parser("att", help="Summarise the ATT of a fit")
    att_parser.add_argument("--fit", "-f", required=True, help="Fit directory")
    att_parser.add_argument("--rate-scale", action="store_true", help="Report per 100,000 of the offset")
    att_parser.add_argument("--out", "-o", help="Output directory (default: the fit directory)")
    att_parser.set_defaults(func=cmd_att)

    # Weights command
    weights_parser = subparsers.add_parser("weights", help="Donor weights of the fitted kernel")
    weights_parser.add_argument("--fit", "-f", required=True, help="Fit directory")
    weights_parser.add_argument("--target", "-t", type=int, default=0, help="Row of the target cell for maps")
    weights_parser.add_argument("--out", "-o", help="Output directory (default: the fit directory)")
    weights_parser.set_defaults(func=cmd_weights)

    # Diagnose command
    diagnose_parser = subparsers.add_parser("diagnose", help="Separability diagnostics of a Gneiting fit")
    diagnose_parser.add_argument("--fit", "-f", required=True, help="Fit directory")
    diagnose_parser.add_argument("--curves", type=int, help="Posterior draws for the boxplot (0: plug-in curves)")
    diagnose_parser.add_argument("--out", "-o", help="Output directory (default: the fit directory)")
    diagnose_parser.set_defaults(func=cmd_diagnose)

    # Study command
    study_parser = subparsers.add_parser("study", help="Replicate study of bias, MSE and coverage")
    study_parser.add_argument("--preset", choices=PRESETS, default="desk-normal", help="Study design")
    study_parser.add_argument("--config", "-c", help="Study configuration JSON (overrides --preset)")
    study_parser.add_argument("--replicates", type=int, help="Replicates per DGP")
    study_parser.add_argument("--seed", type=int, help="Master seed")
    study_parser.add_argument("--jobs", "-j", type=int, default=1, help="Worker processes (default: 1)")
    study_parser.add_argument("--out", "-o", required=True, help="Output directory")
    study_parser.set_defaults(func=cmd_study)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Main entry point for CLI.

    Returns:
        Exit code: 0 on success, 2 on invalid input or missing artifacts,
        3 on numerical failure.
    """
    args = build_parser().parse_args(argv)
    try:
        result: int = args.func(args)
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    return result


if __name__ == "__main__":
    sys.exit(main())
