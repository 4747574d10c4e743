"""Tests for Gaussian conditioning, Kronecker algebra and outcome likelihoods."""

from collections.abc import Callable

import numpy as np
import pytest
from scipy import stats

from gp_causal_panel.errors import LikelihoodError, NumericalError
from gp_causal_panel.gp import (
    KroneckerSolver,
    check_outcomes,
    cholesky_with_jitter,
    condition_normal,
    loglik,
    mvn_logpdf,
    outcome_logpdf,
    sample_mvn,
    sample_predictive,
)
from gp_causal_panel.kernels import KernelFamily, KernelParams, cross_covariance
from gp_causal_panel.models import CovMatrix, FloatArray, LatentState, Likelihood, LikelihoodFamily
from gp_causal_panel.panel import PanelData, partition

from .conftest import build_panel


def _spd(n: int, seed: int) -> FloatArray:
    a = np.random.default_rng(seed).normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


def test_condition_normal_matches_explicit_inverse() -> None:
    """Test the Cholesky path against textbook Gaussian conditioning."""
    k = _spd(6, seed=1)
    y = np.random.default_rng(2).normal(size=4)
    obs, mis = slice(0, 4), slice(4, 6)
    sigma2 = 0.3

    post = condition_normal(y, k[obs, obs], k[mis, obs], k[mis, mis], sigma2)

    inverse = np.linalg.inv(k[obs, obs] + sigma2 * np.eye(4))
    np.testing.assert_allclose(post.mu, k[mis, obs] @ inverse @ y)
    np.testing.assert_allclose(post.sigma, k[mis, mis] - k[mis, obs] @ inverse @ k[obs, mis])
    assert post.jitter == 0.0


def test_condition_normal_without_observations() -> None:
    """Test conditioning on nothing returns the prior."""
    k_mis = _spd(2, seed=0)

    post = condition_normal(np.zeros(0), np.zeros((0, 0)), np.zeros((2, 0)), k_mis, 1.0)

    np.testing.assert_array_equal(post.mu, [0.0, 0.0])
    np.testing.assert_array_equal(post.sigma, k_mis)


def test_cholesky_with_jitter_recovers_singular_matrix() -> None:
    """Test a rank-one matrix factorises after jitter."""
    factor, jitter = cholesky_with_jitter(np.ones((3, 3)))

    assert jitter > 0.0
    np.testing.assert_allclose(factor @ factor.T, np.ones((3, 3)) + jitter * np.eye(3), atol=1e-12)


def test_cholesky_with_jitter_rejects_non_finite() -> None:
    """Test NaN entries are refused up front."""
    with pytest.raises(NumericalError, match="non-finite"):
        cholesky_with_jitter(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_kronecker_solver_matches_dense() -> None:
    """Test solve, matvec, log-determinant and density against the dense matrix."""
    k_unit, k_time = _spd(3, seed=4), _spd(4, seed=5)
    dense = np.kron(k_unit, k_time) + 0.1 * np.eye(12)
    v = np.random.default_rng(6).normal(size=12)

    solver = KroneckerSolver(k_unit, k_time, shift=0.1)

    np.testing.assert_allclose(solver.solve(v), np.linalg.solve(dense, v))
    np.testing.assert_allclose(solver.matvec(v), dense @ v)
    assert solver.logdet() == pytest.approx(np.linalg.slogdet(dense)[1])
    assert solver.logpdf(v) == pytest.approx(stats.multivariate_normal(cov=dense).logpdf(v))


def test_kronecker_solver_sqrt_multiply() -> None:
    """Test the square-root factor reproduces the covariance."""
    k_unit, k_time = _spd(2, seed=7), _spd(3, seed=8)

    root = KroneckerSolver(k_unit, k_time).sqrt_multiply(np.eye(6))

    np.testing.assert_allclose(root @ root.T, np.kron(k_unit, k_time))


def test_kronecker_solver_singular() -> None:
    """Test a zero eigenvalue is reported instead of dividing by it."""
    solver = KroneckerSolver(np.eye(2), np.eye(2), shift=-1.0)
    with pytest.raises(NumericalError, match="singular"):
        solver.solve(np.ones(4))


def test_mvn_logpdf_matches_scipy() -> None:
    """Test the Gaussian log density."""
    cov = _spd(5, seed=9)
    x = np.random.default_rng(10).normal(size=5)
    assert mvn_logpdf(x, cov) == pytest.approx(stats.multivariate_normal(cov=cov).logpdf(x))


def test_sample_mvn_shapes_and_seed() -> None:
    """Test draws are reproducible for dense and Kronecker covariances."""
    dense = CovMatrix(dense=_spd(4, seed=1))
    kron = CovMatrix(k_unit=_spd(2, seed=2), k_time=_spd(3, seed=3))

    first = sample_mvn(dense, np.random.default_rng(0))
    again = sample_mvn(dense, np.random.default_rng(0))

    assert first.shape == (4,)
    np.testing.assert_array_equal(first, again)
    assert sample_mvn(kron, np.random.default_rng(0)).shape == (6,)


def test_sample_predictive() -> None:
    """Test predictive draws are seeded and collapse onto the mean without variance."""
    k = _spd(5, seed=11)
    post = condition_normal(np.ones(3), k[:3, :3], k[3:, :3], k[3:, 3:], 0.5)

    draws = sample_predictive(post, 7, seed=42, add_noise=True)

    assert draws.shape == (7, 2)
    np.testing.assert_array_equal(draws, sample_predictive(post, 7, seed=42, add_noise=True))
    degenerate = condition_normal(np.ones(1), np.eye(1), np.zeros((2, 1)), np.zeros((2, 2)), 0.5)
    np.testing.assert_allclose(sample_predictive(degenerate, 3, seed=0), np.zeros((3, 2)))


@pytest.mark.parametrize(
    ("y", "likelihood", "match"),
    [
        (np.array([1.0, -1.0]), Likelihood(LikelihoodFamily.POISSON), "non-negative integers"),
        (np.array([1.0, 2.5]), Likelihood(LikelihoodFamily.POISSON), "non-negative integers"),
        (np.array([0.0, 2.0]), Likelihood(LikelihoodFamily.BERNOULLI), "0 or 1"),
        (np.array([0.0]), Likelihood(LikelihoodFamily.NORMAL, sigma2=0.0), "sigma2 > 0"),
    ],
)
def test_check_outcomes(y: FloatArray, likelihood: Likelihood, match: str) -> None:
    """Test outcomes outside the likelihood's support are rejected."""
    with pytest.raises(LikelihoodError, match=match):
        check_outcomes(y, likelihood)


def test_normal_loglik(small_panel: PanelData) -> None:
    """Test the Normal likelihood around a constant mean."""
    state = LatentState(f=np.zeros(20), mu0=0.5)

    value = loglik(small_panel, state, Likelihood(LikelihoodFamily.NORMAL, sigma2=0.2))

    assert value == pytest.approx(np.sum(stats.norm.logpdf(small_panel.y, 0.5, np.sqrt(0.2))))


def test_poisson_loglik_uses_offset(make_panel: Callable[..., PanelData]) -> None:
    """Test the Poisson rate is exp(μ0 + f) times the exposure."""
    panel = make_panel(counts=True, offset=True)
    assert panel.offset is not None
    f = np.linspace(-0.2, 0.2, 20)
    state = LatentState(f=f, mu0=-6.0)
    cells = np.array([1, 5, 17])

    value = loglik(panel, state, Likelihood(LikelihoodFamily.POISSON), cells)

    rate = np.exp(-6.0 + f[cells]) * panel.offset.reshape(-1)[cells]
    assert value == pytest.approx(np.sum(stats.poisson.logpmf(panel.flat_y()[cells], rate)))


def test_bernoulli_outcome_logpdf() -> None:
    """Test the logit link at zero gives probability one half."""
    value = outcome_logpdf(np.array([1.0, 0.0]), np.zeros(2), Likelihood(LikelihoodFamily.BERNOULLI))
    assert value == pytest.approx(2.0 * np.log(0.5))


@pytest.mark.parametrize("seed", range(20))
def test_condition_normal_random_panels(seed: int) -> None:
    """Test conditioning on random small panels against the explicit inverse, with posterior shrinkage."""
    rng = np.random.default_rng(seed)
    n_units, n_times = int(rng.integers(3, 5)), int(rng.integers(2, 4))
    panel = build_panel(n_units=n_units, n_times=n_times, t_star=n_times, seed=seed)
    family = (KernelFamily.RBF_RBF, KernelFamily.GNEITING)[seed % 2]
    params = KernelParams(
        family=family,
        tau2=float(rng.uniform(0.5, 2.0)),
        l_s=float(rng.uniform(0.2, 1.0)),
        l_t=float(rng.uniform(0.5, 2.0)),
        eta=float(rng.uniform(0.0, 1.0)),
    )
    sigma2 = float(rng.uniform(0.05, 1.0))
    cells = partition(panel)
    obs, mis = cells.obs_index, cells.mis_index
    k_obs = cross_covariance(panel, params, obs, obs)
    k_mis_obs = cross_covariance(panel, params, mis, obs)
    k_mis = cross_covariance(panel, params, mis, mis)
    y = rng.normal(size=obs.size)

    post = condition_normal(y, k_obs, k_mis_obs, k_mis, sigma2)

    inverse = np.linalg.inv(k_obs + sigma2 * np.eye(obs.size))
    np.testing.assert_allclose(post.mu, k_mis_obs @ inverse @ y, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(post.sigma, k_mis - k_mis_obs @ inverse @ k_mis_obs.T, rtol=1e-8, atol=1e-10)
    assert np.all(np.diag(post.sigma) <= np.diag(k_mis) + 1e-10)


@pytest.mark.parametrize(
    ("y", "eta", "expected"),
    [(0.0, 0.0, -1.0), (1.0, 0.0, -1.0), (2.0, np.log(2.0), np.log(2.0) - 2.0)],
)
def test_poisson_outcome_logpdf_values(y: float, eta: float, expected: float) -> None:
    """Test Poisson log probabilities at known rates."""
    value = outcome_logpdf(np.array([y]), np.array([eta]), Likelihood(LikelihoodFamily.POISSON))
    assert value == pytest.approx(expected)


@pytest.mark.parametrize("seed", range(5))
def test_poisson_doubling_exposure_doubles_rate(seed: int) -> None:
    """Test doubling every exposure doubles the Poisson mean of each cell."""
    rng = np.random.default_rng(seed)
    y = rng.poisson(3.0, size=8).astype(np.float64)
    eta = rng.normal(-6.0, 0.3, size=8)
    exposure = rng.uniform(1000.0, 3000.0, size=8)
    poisson = Likelihood(LikelihoodFamily.POISSON)

    doubled = outcome_logpdf(y, eta, poisson, np.log(2.0 * exposure))

    rate = np.exp(eta) * exposure
    assert doubled == pytest.approx(np.sum(stats.poisson.logpmf(y, 2.0 * rate)))
    assert doubled != pytest.approx(outcome_logpdf(y, eta, poisson, np.log(exposure)))
