"""Donor-weight representation of GP predictions and kriging."""

import logging

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from gp_causal_panel.errors import ConfigError
from gp_causal_panel.gp import KroneckerSolver, cholesky_with_jitter
from gp_causal_panel.kernels import KernelParams, assemble
from gp_causal_panel.models import DonorWeights, FloatArray, IntArray, SeparableWeights, WeightMaps
from gp_causal_panel.panel import PanelData, PanelIndex, partition

logger = logging.getLogger(__name__)

EXACT_TOLERANCE = 1e-10


def _solve(matrix: FloatArray, rhs: FloatArray) -> FloatArray:
    factor, _ = cholesky_with_jitter(matrix)
    return np.asarray(scipy.linalg.cho_solve((factor, True), rhs))


def donor_weights(
    K_mis_obs: FloatArray,
    K_obs: FloatArray,
    sigma2: float,
    target_cells: IntArray | None = None,
    donor_cells: IntArray | None = None,
) -> DonorWeights:
    """Weights ``W = K_mis_obs (K_obs + σ²I)⁻¹`` expressing predictions over donors.

    Args:
        K_mis_obs: Cross-covariance, target rows by donor columns.
        K_obs: Covariance among donors.
        sigma2: Noise variance.
        target_cells: Flat cell of each row; positions when omitted.
        donor_cells: Flat cell of each column; positions when omitted.

    Returns:
        Weight rows aligned to the targets.
    """
    n_mis, n_obs = K_mis_obs.shape
    w = _solve(K_obs + sigma2 * np.eye(n_obs), K_mis_obs.T).T
    return DonorWeights(
        w=w,
        target_cells=np.arange(n_mis, dtype=np.int64) if target_cells is None else np.asarray(target_cells),
        donor_cells=np.arange(n_obs, dtype=np.int64) if donor_cells is None else np.asarray(donor_cells),
    )


def kriging_predict(K_mis_obs: FloatArray, K_obs: FloatArray, sigma2: float, y_obs: FloatArray) -> FloatArray:
    """Kriging predictor ``K_mis_obs (K_obs + σ²I)⁻¹ y_obs``."""
    return np.asarray(K_mis_obs @ _solve(K_obs + sigma2 * np.eye(K_obs.shape[0]), y_obs))


def weighted_prediction(
    weights: DonorWeights, y_obs: FloatArray, mean_obs: FloatArray | float = 0.0, mean_mis: FloatArray | float = 0.0
) -> FloatArray:
    """Prediction ``W (y_obs - mean_obs) + mean_mis`` from donor weights."""
    return np.asarray(weights.w @ (y_obs - mean_obs) + mean_mis)


def panel_donor_weights(panel: PanelData, params: KernelParams, sigma2: float) -> DonorWeights:
    """Donor weights of every treated post-treatment cell over every untreated cell."""
    part = partition(panel)
    cov = assemble(panel, params).to_dense()
    obs, mis = part.obs_index, part.mis_index
    return donor_weights(cov[np.ix_(mis, obs)], cov[np.ix_(obs, obs)], sigma2, mis, obs)


def _grid_axes(donor_cells: IntArray, n_times: int) -> tuple[IntArray, IntArray]:
    units = np.unique(donor_cells // n_times)
    times = np.unique(donor_cells % n_times)
    expected = (units[:, None] * n_times + times[None, :]).reshape(-1)
    if not np.array_equal(donor_cells, expected):
        msg = "Donor cells do not form a unit × time grid in unit-major order"
        raise ConfigError(msg)
    return units.astype(np.int64), times.astype(np.int64)


def donor_weights_separable(
    K_unit: FloatArray,
    K_time: FloatArray,
    sigma2: float,
    target: tuple[int, int],
    donor_cells: IntArray | None = None,
) -> SeparableWeights:
    """Full weight row of a separable kernel and its unit ⊗ time decomposition.

    The full row ``(K_D + σ²I)⁻¹ k`` is computed with the Kronecker
    eigendecomposition. The decomposition solves each factor on its own,
    ``K_unit⁻¹ k_unit`` and ``K_time⁻¹ k_time``; its outer product matches the
    full row when σ² = 0 and in general deviates otherwise, so the maximum
    deviation is reported rather than assumed.

    Args:
        K_unit: Unit factor over every unit.
        K_time: Time factor over every period.
        sigma2: Noise variance.
        target: Target cell as ``(unit, time_index)``, both 0-based.
        donor_cells: Flat donor cells forming a unit × time grid; defaults to
            every other unit at every period.

    Returns:
        The full row, the factor weights and the deviation report.

    Raises:
        ConfigError: If the donors do not form a grid.
    """
    n_units, n_times = K_unit.shape[0], K_time.shape[0]
    target_unit, target_time = target
    if donor_cells is None:
        units = np.array([u for u in range(n_units) if u != target_unit], dtype=np.int64)
        times = np.arange(n_times, dtype=np.int64)
    else:
        units, times = _grid_axes(np.asarray(donor_cells, dtype=np.int64), n_times)
    k_unit = K_unit[target_unit, units]
    k_time = K_time[target_time, times]
    solver = KroneckerSolver(K_unit[np.ix_(units, units)], K_time[np.ix_(times, times)], shift=sigma2)
    full_row = solver.solve(np.kron(k_unit, k_time))
    unit_weights = _solve(K_unit[np.ix_(units, units)], k_unit)
    time_weights = _solve(K_time[np.ix_(times, times)], k_time)
    deviation = float(np.max(np.abs(np.kron(unit_weights, time_weights) - full_row)))
    if deviation > EXACT_TOLERANCE:
        logger.debug("Separable decomposition deviates from the full row by %.3e", deviation)
    return SeparableWeights(
        target=(int(target_unit), int(target_time)),
        donor_units=units,
        donor_times=times,
        full_row=full_row,
        unit_weights=unit_weights,
        time_weights=time_weights,
        max_abs_deviation=deviation,
        decomposition_exact=deviation <= EXACT_TOLERANCE,
    )


def vertical_regression_weights(
    K_unit: FloatArray, n_times: int, sigma2: float, target: tuple[int, int]
) -> SeparableWeights:
    """Donor weights with an identity time factor.

    Without temporal smoothing each donor unit contributes only at the target
    period, with the weight ``((K_unit + σ²I)⁻¹ k_unit)_j`` that depends on
    unit similarity alone and is the same for every target period.
    """
    return donor_weights_separable(K_unit, np.eye(n_times), sigma2, target)


def weight_summaries(weights: DonorWeights, panel: PanelData) -> WeightMaps:
    """Lay each weight row out on the panel grid.

    Cells that are not donors, such as treated post-treatment cells, carry
    weight zero.
    """
    n_cells = panel.n_units * panel.n_times
    grids = np.zeros((weights.w.shape[0], n_cells))
    grids[:, weights.donor_cells] = weights.w
    grids = grids.reshape(-1, panel.n_units, panel.n_times)
    return WeightMaps(target_cells=weights.target_cells, grids=grids, unit_average=grids.mean(axis=2))


def distance_decay(unit_average: FloatArray, coords: FloatArray, target_unit: int) -> tuple[float, float]:
    """Spearman correlation of time-averaged donor weights with distance to the target.

    Returns:
        The rank correlation and its p-value; negative values mean weights
        fall off with distance.
    """
    others = np.array([u for u in range(coords.shape[0]) if u != target_unit])
    distance = np.linalg.norm(coords[others] - coords[target_unit], axis=1)
    result = stats.spearmanr(distance, unit_average[others])
    return float(result.statistic), float(result.pvalue)


def weight_map_frame(weights: DonorWeights, panel: PanelData, index: PanelIndex | None = None) -> pd.DataFrame:
    """Long weight table ``target_unit,target_time,donor_unit,donor_time,weight``.

    Units carry their original labels when ``index`` is given; times are
    1-based periods.
    """
    n_targets, n_donors = weights.w.shape
    target_unit, target_time = np.divmod(np.repeat(weights.target_cells, n_donors), panel.n_times)
    donor_unit, donor_time = np.divmod(np.tile(weights.donor_cells, n_targets), panel.n_times)
    labels = np.asarray(index.unit_labels if index else [str(u) for u in range(panel.n_units)], dtype=object)
    return pd.DataFrame(
        {
            "target_unit": labels[target_unit],
            "target_time": target_time + 1,
            "donor_unit": labels[donor_unit],
            "donor_time": donor_time + 1,
            "weight": weights.w.reshape(-1),
        }
    )


def weight_grid_frame(maps: WeightMaps, panel: PanelData, row: int, index: PanelIndex | None = None) -> pd.DataFrame:
    """Wide grid of one target's weights: a row per unit, a column per period."""
    labels = list(index.unit_labels) if index else [str(u) for u in range(panel.n_units)]
    frame = pd.DataFrame(maps.grids[row], columns=[f"t{t + 1}" for t in range(panel.n_times)])
    frame.insert(0, "mean_weight", maps.unit_average[row])
    frame.insert(0, "lat", panel.coords[:, 1])
    frame.insert(0, "lon", panel.coords[:, 0])
    frame.insert(0, "unit_id", labels)
    return frame
