"""Tests for donor weights and kriging."""

import numpy as np
import pytest

from gp_causal_panel.errors import ConfigError
from gp_causal_panel.gp import condition_normal
from gp_causal_panel.kernels import KernelFamily, KernelParams, assemble
from gp_causal_panel.models import FloatArray
from gp_causal_panel.panel import PanelData, PanelIndex
from gp_causal_panel.weights import (
    distance_decay,
    donor_weights,
    donor_weights_separable,
    kriging_predict,
    panel_donor_weights,
    vertical_regression_weights,
    weight_grid_frame,
    weight_map_frame,
    weight_summaries,
    weighted_prediction,
)

RBF = KernelParams(family=KernelFamily.RBF_RBF, tau2=1.0, l_s=0.4, l_t=0.9)


def _spd(n: int, seed: int) -> FloatArray:
    a = np.random.default_rng(seed).normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


def test_kriging_matches_conditional_mean() -> None:
    """Test the kriging predictor equals the Gaussian conditional mean."""
    k = _spd(7, seed=0)
    y = np.random.default_rng(1).normal(size=5)

    predicted = kriging_predict(k[5:, :5], k[:5, :5], 0.2, y)

    np.testing.assert_allclose(predicted, condition_normal(y, k[:5, :5], k[5:, :5], k[5:, 5:], 0.2).mu)


def test_donor_weights_reproduce_prediction() -> None:
    """Test weights applied to donor outcomes give the kriging prediction."""
    k = _spd(6, seed=2)
    y = np.random.default_rng(3).normal(size=4)

    weights = donor_weights(k[4:, :4], k[:4, :4], 0.3)

    np.testing.assert_allclose(weights.w, k[4:, :4] @ np.linalg.inv(k[:4, :4] + 0.3 * np.eye(4)))
    np.testing.assert_allclose(weighted_prediction(weights, y), kriging_predict(k[4:, :4], k[:4, :4], 0.3, y))
    np.testing.assert_array_equal(weights.donor_cells, [0, 1, 2, 3])


def test_weighted_prediction_with_mean() -> None:
    """Test weights act on residuals around the mean structure."""
    k = _spd(4, seed=4)
    y = np.array([3.0, 4.0, 5.0])
    weights = donor_weights(k[3:, :3], k[:3, :3], 0.1)

    predicted = weighted_prediction(weights, y, mean_obs=4.0, mean_mis=4.0)

    np.testing.assert_allclose(predicted, kriging_predict(k[3:, :3], k[:3, :3], 0.1, y - 4.0) + 4.0)


def test_panel_donor_weights(small_panel: PanelData) -> None:
    """Test panel weights cover every treated post-treatment cell over every untreated cell."""
    weights = panel_donor_weights(small_panel, RBF, 0.5)

    assert weights.w.shape == (2, 18)
    np.testing.assert_array_equal(weights.target_cells, [3, 4])
    cov = assemble(small_panel, RBF).to_dense()
    obs = weights.donor_cells
    y_obs = small_panel.flat_y()[obs]
    expected = kriging_predict(cov[np.ix_([3, 4], obs)], cov[np.ix_(obs, obs)], 0.5, y_obs)
    np.testing.assert_allclose(weighted_prediction(weights, y_obs), expected)


def test_separable_decomposition_exact_without_noise() -> None:
    """Test unit and time weights multiply to the full row when σ² = 0."""
    k_unit, k_time = _spd(4, seed=5), _spd(3, seed=6)

    result = donor_weights_separable(k_unit, k_time, 0.0, target=(0, 2))

    np.testing.assert_array_equal(result.donor_units, [1, 2, 3])
    assert result.decomposition_exact
    np.testing.assert_allclose(np.kron(result.unit_weights, result.time_weights), result.full_row, atol=1e-10)


def test_separable_decomposition_with_noise_reports_deviation() -> None:
    """Test noise breaks the factorised form and the full row is kept."""
    k_unit, k_time = _spd(4, seed=5), _spd(3, seed=6)
    dense = np.kron(k_unit[1:, 1:], k_time) + 0.5 * np.eye(9)
    k = np.kron(k_unit[0, 1:], k_time[2])

    result = donor_weights_separable(k_unit, k_time, 0.5, target=(0, 2))

    np.testing.assert_allclose(result.full_row, np.linalg.solve(dense, k))
    assert not result.decomposition_exact
    assert result.max_abs_deviation > 1e-6


@pytest.mark.parametrize("sigma2", [0.0, 0.3])
def test_vertical_regression_weights(sigma2: float) -> None:
    """Test an identity time factor weights donor units by similarity alone, at the target period only."""
    k_unit = _spd(5, seed=7)
    n_times = 4
    expected = np.linalg.solve(k_unit[1:, 1:] + sigma2 * np.eye(4), k_unit[0, 1:])

    rows = [vertical_regression_weights(k_unit, n_times, sigma2, target=(0, t)) for t in range(n_times)]

    for t, result in enumerate(rows):
        grid = result.full_row.reshape(4, n_times)
        np.testing.assert_allclose(grid[:, t], expected, atol=1e-12)
        np.testing.assert_allclose(np.delete(grid, t, axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(result.time_weights, np.eye(n_times)[t], atol=1e-12)
    per_unit = np.array([row.full_row.reshape(4, n_times).sum(axis=1) for row in rows])
    np.testing.assert_allclose(per_unit, np.tile(expected, (n_times, 1)), atol=1e-12)


def test_separable_donor_grid_check() -> None:
    """Test donor cells must form a unit × time grid."""
    with pytest.raises(ConfigError, match="unit × time grid"):
        donor_weights_separable(_spd(3, 0), _spd(3, 1), 0.1, target=(0, 0), donor_cells=np.array([3, 4, 7]))


def test_weight_summaries_zero_on_targets(small_panel: PanelData) -> None:
    """Test missing cells carry zero weight on the grid."""
    weights = panel_donor_weights(small_panel, RBF, 0.5)

    maps = weight_summaries(weights, small_panel)

    assert maps.grids.shape == (2, 4, 5)
    np.testing.assert_array_equal(maps.grids[:, 0, 3:], 0.0)
    np.testing.assert_allclose(maps.unit_average, maps.grids.mean(axis=2))


def test_distance_decay_sign() -> None:
    """Test weights falling with distance give a negative rank correlation."""
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]])
    unit_average = np.array([0.0, 0.4, 0.3, 0.2, 0.1])

    rho, _ = distance_decay(unit_average, coords, target_unit=0)

    assert rho == pytest.approx(-1.0)


def test_weight_frames(small_panel: PanelData) -> None:
    """Test the long and wide weight tables."""
    index = PanelIndex(unit_labels=("a", "b", "c", "d"), time_labels=(1.0, 2.0, 3.0, 4.0, 5.0))
    weights = panel_donor_weights(small_panel, RBF, 0.5)

    long = weight_map_frame(weights, small_panel, index)
    wide = weight_grid_frame(weight_summaries(weights, small_panel), small_panel, 0, index)

    assert len(long) == 36
    assert set(long["target_unit"]) == {"a"}
    assert list(long["target_time"].unique()) == [4, 5]
    assert list(wide.columns) == ["unit_id", "lon", "lat", "mean_weight", "t1", "t2", "t3", "t4", "t5"]
    assert list(wide["unit_id"]) == ["a", "b", "c", "d"]
