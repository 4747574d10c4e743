"""Counterfactual assembly, ATT estimation and pre-treatment fit."""

import logging
from typing import Any

import numpy as np
import pandas as pd

from gp_causal_panel.config import RATE_SCALE
from gp_causal_panel.errors import ConfigError, PanelValidationError
from gp_causal_panel.models import (
    AttSummary,
    ChainSet,
    CounterfactualDraws,
    FloatArray,
    IntArray,
    IntervalSummary,
    PretreatmentFit,
)
from gp_causal_panel.panel import PanelData, partition, treated_pre_cells

logger = logging.getLogger(__name__)

QUANTILES = (0.5, 0.025, 0.975)


def interval_summary(draws: FloatArray) -> IntervalSummary:
    """Median and equal-tailed 95% interval of a draw vector."""
    median, lo, hi = np.quantile(np.asarray(draws, dtype=np.float64), QUANTILES)
    return IntervalSummary(median=float(median), lo=float(lo), hi=float(hi))


def counterfactual_draws(chains: ChainSet, panel: PanelData) -> CounterfactualDraws:
    """Pool the counterfactual draws of every chain, aligned to the missing cells."""
    return CounterfactualDraws(
        draws=chains.counterfactual.reshape(-1, chains.counterfactual.shape[2]),
        cells=partition(panel).mis_index,
        scale=chains.y0_scale,
    )


def pretreatment_draws(chains: ChainSet, panel: PanelData) -> CounterfactualDraws | None:
    """Pool the leave-block-out draws over treated pre-treatment cells, if stored."""
    if chains.pretreatment is None:
        return None
    return CounterfactualDraws(
        draws=chains.pretreatment.reshape(-1, chains.pretreatment.shape[2]),
        cells=treated_pre_cells(panel),
        scale=chains.y0_scale,
    )


def _check_aligned(cf: CounterfactualDraws, cells: IntArray, what: str) -> None:
    if cf.draws.ndim != 2 or cf.draws.shape[1] != cells.size or not np.array_equal(cf.cells, cells):
        msg = f"Counterfactual draws are not aligned to the {what} cells"
        raise ConfigError(msg)
    if cf.n_draws < 1:
        msg = "Counterfactual draws are empty"
        raise ConfigError(msg)


def _differences(panel: PanelData, cf: CounterfactualDraws, rate_scale: bool) -> FloatArray:
    observed = panel.flat_y()[cf.cells]
    predicted = cf.draws
    if rate_scale:
        if panel.offset is None:
            msg = "Rate-scale ATT needs offsets"
            raise ConfigError(msg)
        exposure = panel.offset.reshape(-1)[cf.cells]
        observed = observed / exposure * RATE_SCALE
        predicted = predicted / exposure * RATE_SCALE
    return np.asarray(observed - predicted)


def _by_period(panel: PanelData, cells: IntArray, diff: FloatArray) -> dict[int, FloatArray]:
    time_index = cells % panel.n_times
    return {int(t): diff[:, time_index == t].mean(axis=1) for t in np.unique(time_index)}


def att_draws(
    panel: PanelData,
    cf: CounterfactualDraws,
    rate_scale: bool = False,
    pretreatment: CounterfactualDraws | None = None,
) -> AttSummary:
    """Posterior draws and summaries of the overall and per-time ATT.

    Args:
        panel: Panel holding the observed outcomes.
        cf: Counterfactual draws over the treated post-treatment cells.
        rate_scale: Divide observed and predicted outcomes by the offset and
            multiply by 100,000 before differencing.
        pretreatment: Optional draws over treated pre-treatment cells, which
            fill the pre-treatment columns of the per-time ATT.

    Returns:
        The ATT summary; pre-treatment columns are NaN without
        ``pretreatment``.

    Raises:
        ConfigError: If draws and cells are misaligned.
    """
    _check_aligned(cf, partition(panel).mis_index, "treated post-treatment")
    diff = _differences(panel, cf, rate_scale)
    overall = diff.mean(axis=1)
    by_time = np.full((cf.n_draws, panel.n_times), np.nan)
    for t, column in _by_period(panel, cf.cells, diff).items():
        by_time[:, t] = column
    if pretreatment is not None and panel.t0 > 0:
        _check_aligned(pretreatment, treated_pre_cells(panel), "treated pre-treatment")
        if pretreatment.n_draws != cf.n_draws:
            msg = "Pre-treatment and counterfactual draws differ in number"
            raise ConfigError(msg)
        pre_diff = _differences(panel, pretreatment, rate_scale)
        for t, column in _by_period(panel, pretreatment.cells, pre_diff).items():
            by_time[:, t] = column
    summaries = tuple(
        None if np.isnan(by_time[:, t]).all() else interval_summary(by_time[:, t]) for t in range(panel.n_times)
    )
    result = AttSummary(
        att_draws=overall,
        att_by_time=by_time,
        overall=interval_summary(overall),
        by_time=summaries,
        times=panel.time_stamps,
        t_star=panel.t_star,
        rate_scale=rate_scale,
    )
    logger.info(
        "ATT median %.4g (95%% CI %.4g, %.4g) over %d draws",
        result.overall.median,
        result.overall.lo,
        result.overall.hi,
        cf.n_draws,
    )
    return result


def pretreatment_fit(panel: PanelData, cf_pre: CounterfactualDraws, rate_scale: bool = False) -> PretreatmentFit:
    """Fit of the held-out treated pre-treatment cells.

    Reports the per-period pre-treatment ATT, the RMSE of the posterior mean
    prediction and the share of observed values inside their 95% predictive
    interval.

    Raises:
        PanelValidationError: If the panel has no pre-treatment period.
        ConfigError: If draws and cells are misaligned.
    """
    if panel.t0 == 0:
        msg = "no pre-treatment periods: T0 = 0"
        raise PanelValidationError(msg)
    _check_aligned(cf_pre, treated_pre_cells(panel), "treated pre-treatment")
    diff = _differences(panel, cf_pre, rate_scale)
    by_time = tuple(interval_summary(column) for _, column in sorted(_by_period(panel, cf_pre.cells, diff).items()))
    observed = panel.flat_y()[cf_pre.cells]
    residual = observed - cf_pre.draws.mean(axis=0)
    lo, hi = np.quantile(cf_pre.draws, (0.025, 0.975), axis=0)
    return PretreatmentFit(
        by_time=by_time,
        rmse=float(np.sqrt(np.mean(residual**2))),
        coverage=float(np.mean((observed >= lo) & (observed <= hi))),
        n_cells=int(cf_pre.cells.size),
    )


def _interval_dict(summary: IntervalSummary | None) -> dict[str, float | None]:
    if summary is None:
        return {"median": None, "lo": None, "hi": None}
    return {"median": summary.median, "lo": summary.lo, "hi": summary.hi}


def att_payload(summary: AttSummary, pre_fit: PretreatmentFit | None = None) -> dict[str, Any]:
    """Results JSON: overall ATT, per-time blocks and the pre-treatment report."""
    payload: dict[str, Any] = {
        "att": _interval_dict(summary.overall),
        "att_by_time": [
            {"period": t + 1, "time": float(summary.times[t]), "post": t + 1 >= summary.t_star, **_interval_dict(s)}
            for t, s in enumerate(summary.by_time)
        ],
        "rate_scale": summary.rate_scale,
        "n_draws": int(summary.att_draws.size),
        "pretreatment": None,
    }
    if pre_fit is not None:
        payload["pretreatment"] = {
            "rmse": pre_fit.rmse,
            "coverage": pre_fit.coverage,
            "n_cells": pre_fit.n_cells,
            "by_time": [{"period": t + 1, **_interval_dict(s)} for t, s in enumerate(pre_fit.by_time)],
        }
    return payload


def att_frame(summary: AttSummary) -> pd.DataFrame:
    """Per-time ATT summaries for plotting, one row per period."""
    rows = att_payload(summary)["att_by_time"]
    return pd.DataFrame(rows, columns=["period", "time", "post", "median", "lo", "hi"])
