"""Separability diagnostics for the Gneiting kernel and functional boxplots."""

import logging
import math
from typing import Any

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from gp_causal_panel.causal import interval_summary
from gp_causal_panel.config import ETA_THRESHOLD, RHAT_THRESHOLD
from gp_causal_panel.errors import ConfigError, NumericalError
from gp_causal_panel.kernels import KernelFamily, KernelParams, gneiting_correlation, kernel_lag_value
from gp_causal_panel.mcmc import posterior_point, split_rhat
from gp_causal_panel.models import (
    ChainSet,
    FloatArray,
    FunctionalBoxplot,
    SeparabilityCurves,
    SeparabilityEstimate,
)
from gp_causal_panel.panel import PanelData

logger = logging.getLogger(__name__)

OUTLIER_FACTOR = 1.5
GNEITING_NAMES = ("tau2", "l_s", "l_t", "alpha", "gamma", "eta")


def separability_function(params: KernelParams, h_grid: FloatArray, u_grid: FloatArray) -> SeparabilityCurves:
    """Evaluate ``f_h(u) = k(h,u)/k(h,0) - k(0,u)/k(0,0)`` on a lag grid.

    The ratios are τ²-free, so the correlation is used directly.

    Raises:
        ConfigError: If ``params`` is not a Gneiting parameter set.
        NumericalError: If ``k(h, 0)`` underflows to zero.
    """
    if params.family != KernelFamily.GNEITING:
        msg = f"Separability curves need a Gneiting kernel, got {params.family}"
        raise ConfigError(msg)
    h = np.asarray(h_grid, dtype=np.float64)
    u = np.asarray(u_grid, dtype=np.float64)
    at_lag = gneiting_correlation(h[:, None], u[None, :], params)
    spatial_only = gneiting_correlation(h, 0.0, params)
    temporal_only = gneiting_correlation(0.0, u, params)
    origin = float(gneiting_correlation(0.0, 0.0, params))
    if np.any(spatial_only == 0.0) or origin == 0.0:
        msg = "Kernel value at zero temporal lag underflows; shorten the spatial lag grid"
        raise NumericalError(msg)
    curves = at_lag / spatial_only[:, None] - (temporal_only / origin)[None, :]
    return SeparabilityCurves(h_grid=h, u_grid=u, curves=np.asarray(curves))


def default_grids(panel: PanelData, n_h: int = 10) -> tuple[FloatArray, FloatArray]:
    """Spatial lags in ``n_h`` equal steps up to the largest unit distance; temporal lags 1..T-1."""
    h_max = float(np.max(pdist(panel.coords)))
    return np.linspace(h_max / n_h, h_max, n_h), np.arange(1, panel.n_times, dtype=np.float64)


def _gneiting_params(chains: ChainSet, draw: tuple[int, int] | None = None) -> KernelParams:
    if draw is None:
        return posterior_point(chains)
    chain, k = draw
    values = {name: float(chains.params[name][chain, k]) for name in GNEITING_NAMES}
    return KernelParams(family=KernelFamily.GNEITING, **values)


def estimate_fhat(
    chains: ChainSet,
    h_grid: FloatArray,
    u_grid: FloatArray,
    threshold: float = ETA_THRESHOLD,
    rhat_threshold: float = RHAT_THRESHOLD,
) -> SeparabilityEstimate:
    """Plug-in separability curves at the posterior medians of a Gneiting fit.

    Also summarises the η posterior and the share of draws below
    ``threshold``. An η R-hat at or above ``rhat_threshold`` attaches a
    warning instead of failing.

    Raises:
        ConfigError: If the chains come from another kernel.
    """
    if KernelFamily.parse(chains.kernel) != KernelFamily.GNEITING:
        msg = f"Separability estimates need a Gneiting fit, got {chains.kernel}"
        raise ConfigError(msg)
    eta = chains.pooled("eta")
    warnings: list[str] = []
    eta_rhat: float | None = None
    if chains.n_chains >= 2 and chains.n_kept >= 4:
        eta_rhat = split_rhat(chains.quantity("eta"))
        if not np.isnan(eta_rhat) and eta_rhat >= rhat_threshold:
            warnings.append(f"eta R-hat {eta_rhat:.3f} >= {rhat_threshold}; fit may not have converged")
    else:
        warnings.append("R-hat unavailable with fewer than 2 chains of 4 draws")
    for warning in warnings:
        logger.warning(warning)
    if eta_rhat is not None and np.isnan(eta_rhat):
        eta_rhat = None
    return SeparabilityEstimate(
        curves=separability_function(_gneiting_params(chains), h_grid, u_grid),
        eta=interval_summary(eta),
        eta_near_zero_fraction=float(np.mean(eta < threshold)),
        eta_rhat=eta_rhat,
        warnings=tuple(warnings),
    )


def posterior_curves(
    chains: ChainSet, h_grid: FloatArray, u_grid: FloatArray, max_draws: int = 100, seed: int = 0
) -> SeparabilityCurves:
    """Curves of individual posterior draws, stacked one curve per (draw, h).

    Draws are subsampled without replacement when there are more than
    ``max_draws``.
    """
    pairs = [(c, k) for c in range(chains.n_chains) for k in range(chains.n_kept)]
    if len(pairs) > max_draws:
        picked = np.random.default_rng(seed).choice(len(pairs), size=max_draws, replace=False)
        pairs = [pairs[i] for i in np.sort(picked)]
    blocks = [separability_function(_gneiting_params(chains, pair), h_grid, u_grid).curves for pair in pairs]
    return SeparabilityCurves(
        h_grid=np.tile(np.asarray(h_grid, dtype=np.float64), len(pairs)),
        u_grid=np.asarray(u_grid, dtype=np.float64),
        curves=np.vstack(blocks),
    )


def band_depth(curves: FloatArray) -> FloatArray:
    """Modified band depth over bands formed by all pairs of curves.

    At each grid point a curve with ``lt`` curves strictly below and ``gt``
    strictly above lies in ``C(n-1,2) - C(lt,2) - C(gt,2) + (n-1)`` of the
    ``C(n,2)`` bands; the depth averages that share over the grid.
    """
    n = curves.shape[0]
    ordered = np.sort(curves, axis=0)
    below = np.empty_like(curves)
    above = np.empty_like(curves)
    for j in range(curves.shape[1]):
        below[:, j] = np.searchsorted(ordered[:, j], curves[:, j], side="left")
        above[:, j] = n - np.searchsorted(ordered[:, j], curves[:, j], side="right")
    inside = math.comb(n - 1, 2) - below * (below - 1) / 2 - above * (above - 1) / 2 + (n - 1)
    return np.asarray(inside.mean(axis=1) / math.comb(n, 2))


def functional_boxplot(curves: SeparabilityCurves | FloatArray) -> FunctionalBoxplot:
    """Functional boxplot by modified band depth.

    The median is the deepest curve, the central region is the envelope of
    the deepest half, and outliers leave that envelope inflated by 1.5 times
    its width.

    Raises:
        ConfigError: With fewer than 3 curves.
    """
    values = curves.curves if isinstance(curves, SeparabilityCurves) else np.asarray(curves, dtype=np.float64)
    n = values.shape[0]
    if n < 3:
        msg = f"A functional boxplot needs at least 3 curves, got {n}"
        raise ConfigError(msg)
    depths = band_depth(values)
    order = np.argsort(-depths, kind="stable")
    central = values[order[: math.ceil(n / 2)]]
    lower, upper = central.min(axis=0), central.max(axis=0)
    width = upper - lower
    fence_lo, fence_hi = lower - OUTLIER_FACTOR * width, upper + OUTLIER_FACTOR * width
    outliers = tuple(int(i) for i in np.flatnonzero(np.any((values < fence_lo) | (values > fence_hi), axis=1)))
    return FunctionalBoxplot(
        median=values[order[0]],
        lower=lower,
        upper=upper,
        outliers=outliers,
        depths=depths,
        median_index=int(order[0]),
    )


def kernel_surface(params: KernelParams, h_grid: FloatArray, u_grid: FloatArray) -> pd.DataFrame:
    """Tidy ``h,u,value`` table of the stationary kernel over a lag grid."""
    h, u = np.meshgrid(np.asarray(h_grid, dtype=np.float64), np.asarray(u_grid, dtype=np.float64), indexing="ij")
    values = kernel_lag_value(params, h, u)
    return pd.DataFrame({"h": h.reshape(-1), "u": u.reshape(-1), "value": values.reshape(-1)})


def separability_verdict(estimate: SeparabilityEstimate, threshold: float = ETA_THRESHOLD) -> dict[str, Any]:
    """Verdict JSON: near-separable when the η posterior median is below ``threshold``."""
    near = estimate.eta.median < threshold
    return {
        "verdict": "near-separable" if near else "non-separable",
        "threshold": threshold,
        "eta": {"median": estimate.eta.median, "lo": estimate.eta.lo, "hi": estimate.eta.hi},
        "eta_near_zero_fraction": estimate.eta_near_zero_fraction,
        "eta_rhat": estimate.eta_rhat,
        "max_abs_fhat": float(np.max(np.abs(estimate.curves.curves))) if estimate.curves.curves.size else 0.0,
        "warnings": list(estimate.warnings),
    }


def boxplot_frame(box: FunctionalBoxplot, u_grid: FloatArray) -> pd.DataFrame:
    """Boxplot bands ``u,median,lo50,hi50``."""
    return pd.DataFrame({"u": u_grid, "median": box.median, "lo50": box.lower, "hi50": box.upper})


def curves_frame(curves: SeparabilityCurves, box: FunctionalBoxplot | None = None) -> pd.DataFrame:
    """Every curve in long form ``curve_id,h,u,value,is_outlier`` for overplotting."""
    n_curves, n_u = curves.curves.shape
    curve_id = np.repeat(np.arange(n_curves), n_u)
    outliers = set(box.outliers) if box else set()
    return pd.DataFrame(
        {
            "curve_id": curve_id,
            "h": np.repeat(curves.h_grid, n_u),
            "u": np.tile(curves.u_grid, n_curves),
            "value": curves.curves.reshape(-1),
            "is_outlier": [int(c) in outliers for c in curve_id],
        }
    )
