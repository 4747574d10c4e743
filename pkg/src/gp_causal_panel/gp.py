"""Multivariate-normal conditioning, Kronecker solves and outcome likelihoods."""

import logging

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.special import log_expit

from gp_causal_panel.errors import LikelihoodError, NumericalError
from gp_causal_panel.kernels import JITTER_LADDER
from gp_causal_panel.models import (
    CovMatrix,
    FloatArray,
    IntArray,
    LatentState,
    Likelihood,
    LikelihoodFamily,
    NormalPosterior,
)
from gp_causal_panel.panel import PanelData, design_matrix

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
SeedLike = int | np.random.SeedSequence | np.random.Generator | None


def cholesky_with_jitter(matrix: FloatArray) -> tuple[FloatArray, float]:
    """Lower Cholesky factor, retrying along the jitter ladder.

    Args:
        matrix: Symmetric matrix to factorise.

    Returns:
        The lower-triangular factor and the diagonal jitter that was needed.

    Raises:
        NumericalError: If the matrix is not finite or no rung factorises.
    """
    if not np.all(np.isfinite(matrix)):
        msg = "Cannot factorise a matrix with non-finite entries"
        raise NumericalError(msg)
    identity = np.eye(matrix.shape[0])
    for jitter in (0.0, *JITTER_LADDER):
        try:
            factor = scipy.linalg.cholesky(matrix + jitter * identity, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError:
            continue
        if jitter:
            logger.debug("Cholesky succeeded with jitter %.3e", jitter)
        return factor, jitter
    msg = f"Cholesky factorisation failed at the maximum jitter {JITTER_LADDER[-1]:g}"
    raise NumericalError(msg)


def condition_normal(
    y_obs: FloatArray,
    K_obs: FloatArray,
    K_mis_obs: FloatArray,
    K_mis: FloatArray,
    sigma2: float,
) -> NormalPosterior:
    """Condition the latent process on noisy observations.

    ``mu = K_mis_obs (K_obs + σ²I)⁻¹ y_obs`` and
    ``Σ = K_mis - K_mis_obs (K_obs + σ²I)⁻¹ K_obs_mis``, both through a
    Cholesky factor. ``Σ`` is the latent covariance; add σ² for new outcomes.

    Args:
        y_obs: Observed residuals (mean already removed).
        K_obs: Covariance among observed cells.
        K_mis_obs: Cross-covariance, missing rows by observed columns.
        K_mis: Covariance among missing cells.
        sigma2: Noise variance, zero allowed.

    Returns:
        The predictive distribution over the missing cells.
    """
    n_obs = y_obs.shape[0]
    if n_obs == 0:
        return NormalPosterior(
            mu=np.zeros(K_mis.shape[0]), sigma=K_mis.copy(), sigma2=sigma2, chol_obs=np.zeros((0, 0))
        )
    factor, jitter = cholesky_with_jitter(K_obs + sigma2 * np.eye(n_obs))
    weights_y = scipy.linalg.cho_solve((factor, True), y_obs)
    mu = K_mis_obs @ weights_y
    half = scipy.linalg.solve_triangular(factor, K_mis_obs.T, lower=True)
    sigma = K_mis - half.T @ half
    return NormalPosterior(mu=mu, sigma=0.5 * (sigma + sigma.T), sigma2=sigma2, chol_obs=factor, jitter=jitter)


def psd_sqrt(matrix: FloatArray) -> FloatArray:
    """Symmetric square-root factor S with S Sᵀ = matrix, negative eigenvalues clipped."""
    if matrix.shape[0] == 0:
        return np.zeros((0, 0))
    eigenvalues, vectors = scipy.linalg.eigh(matrix)
    return np.asarray(vectors * np.sqrt(np.clip(eigenvalues, 0.0, None)))


def sample_predictive(
    post: NormalPosterior, n_draws: int, seed: SeedLike = None, add_noise: bool = False
) -> FloatArray:
    """Draw from the predictive distribution.

    Args:
        post: Predictive distribution.
        n_draws: Number of draws.
        seed: Seed or generator owning the random stream.
        add_noise: Add the observation noise σ² to each draw.

    Returns:
        Array of shape ``(n_draws, |mis|)``.
    """
    rng = np.random.default_rng(seed)
    cov = post.sigma + post.sigma2 * np.eye(post.mu.shape[0]) if add_noise else post.sigma
    root = psd_sqrt(cov)
    z = rng.standard_normal((n_draws, post.mu.shape[0]))
    return np.asarray(post.mu + z @ root.T)


class KroneckerSolver:
    """Eigendecomposition solver for ``K_unit ⊗ K_time + shift·I`` on a full grid.

    Vectors are unit-major, so ``(A ⊗ B) vec(X) = vec(A X Bᵀ)`` with X of
    shape (N, T).
    """

    def __init__(self, k_unit: FloatArray, k_time: FloatArray, shift: float = 0.0) -> None:
        """Initialise the solver from the two factors.

        Args:
            k_unit: Unit factor (N, N).
            k_time: Time factor (T, T).
            shift: Diagonal term added to the Kronecker product.
        """
        self.unit_values, self.unit_vectors = scipy.linalg.eigh(k_unit)
        self.time_values, self.time_vectors = scipy.linalg.eigh(k_time)
        self.shift = shift
        self.eigenvalues = np.outer(self.unit_values, self.time_values) + shift
        self.shape = (k_unit.shape[0], k_time.shape[0])

    @classmethod
    def from_cov(cls, cov: CovMatrix, shift: float = 0.0) -> "KroneckerSolver":
        """Build a solver from a Kronecker CovMatrix, folding its jitter into the shift."""
        if cov.k_unit is None or cov.k_time is None:
            msg = "KroneckerSolver needs a Kronecker-structured covariance"
            raise NumericalError(msg)
        return cls(cov.k_unit, cov.k_time, shift=shift + cov.jitter)

    def _apply(self, left: FloatArray, right: FloatArray, v: FloatArray) -> FloatArray:
        grid = v.reshape(*self.shape, -1)
        return np.einsum("ia,abk,jb->ijk", left, grid, right).reshape(v.shape)

    def _check_positive(self) -> None:
        lowest = float(self.eigenvalues.min())
        if lowest <= 0.0:
            msg = f"Kronecker system is singular: smallest eigenvalue {lowest:.3e}"
            raise NumericalError(msg)

    def solve(self, v: FloatArray) -> FloatArray:
        """Return ``(K_unit ⊗ K_time + shift·I)⁻¹ v`` for a vector or column stack."""
        self._check_positive()
        rotated = self._apply(self.unit_vectors.T, self.time_vectors.T, v)
        scaled = rotated.reshape(*self.shape, -1) / self.eigenvalues[:, :, None]
        return self._apply(self.unit_vectors, self.time_vectors, scaled.reshape(v.shape))

    def matvec(self, v: FloatArray) -> FloatArray:
        """Return ``(K_unit ⊗ K_time + shift·I) v``."""
        rotated = self._apply(self.unit_vectors.T, self.time_vectors.T, v)
        scaled = rotated.reshape(*self.shape, -1) * self.eigenvalues[:, :, None]
        return self._apply(self.unit_vectors, self.time_vectors, scaled.reshape(v.shape))

    def logdet(self) -> float:
        """Log-determinant of the shifted Kronecker matrix."""
        self._check_positive()
        return float(np.sum(np.log(self.eigenvalues)))

    def sqrt_multiply(self, z: FloatArray) -> FloatArray:
        """Map standard-normal ``z`` to a draw with this covariance."""
        root = np.sqrt(np.clip(self.eigenvalues, 0.0, None))
        scaled = z.reshape(*self.shape, -1) * root[:, :, None]
        return self._apply(self.unit_vectors, self.time_vectors, scaled.reshape(z.shape))

    def logpdf(self, v: FloatArray) -> float:
        """Zero-mean Gaussian log density of ``v``."""
        return float(-0.5 * (v @ self.solve(v) + self.logdet() + v.size * LOG_2PI))


def mvn_logpdf(residual: FloatArray, cov: FloatArray) -> float:
    """Zero-mean Gaussian log density through a jittered Cholesky factor."""
    factor, _ = cholesky_with_jitter(cov)
    half = scipy.linalg.solve_triangular(factor, residual, lower=True)
    return float(-0.5 * (half @ half) - np.sum(np.log(np.diag(factor))) - 0.5 * residual.size * LOG_2PI)


def sample_mvn(cov: CovMatrix, rng: np.random.Generator) -> FloatArray:
    """Draw one zero-mean Gaussian vector with the given covariance."""
    z = rng.standard_normal(cov.size)
    if cov.is_kronecker:
        return KroneckerSolver.from_cov(cov).sqrt_multiply(z)
    return psd_sqrt(cov.to_dense()) @ z


def coefficient_vector(panel: PanelData, state: LatentState) -> FloatArray:
    """Stack ``mu0``, ``beta`` and ``delta`` in design-matrix column order."""
    parts = [] if panel.unit_fixed_effects else [np.array([state.mu0])]
    parts.extend([np.asarray(state.beta, dtype=np.float64), np.asarray(state.delta, dtype=np.float64)])
    return np.concatenate(parts) if parts else np.zeros(0)


def mean_vector(panel: PanelData, state: LatentState, cells: IntArray | None = None) -> FloatArray:
    """Mean structure ``μ0 + Xβ + δ_i`` per cell (offsets excluded)."""
    design, _ = design_matrix(panel, cells)
    return design @ coefficient_vector(panel, state)


def check_outcomes(y: FloatArray, likelihood: Likelihood) -> None:
    """Validate outcomes against the likelihood's support.

    Raises:
        LikelihoodError: For negative or fractional Poisson counts or non-binary
            Bernoulli outcomes.
    """
    if likelihood.family == LikelihoodFamily.POISSON and (np.any(y < 0) or np.any(y != np.round(y))):
        msg = "Poisson outcomes must be non-negative integers"
        raise LikelihoodError(msg)
    if likelihood.family == LikelihoodFamily.BERNOULLI and not np.all(np.isin(y, (0.0, 1.0))):
        msg = "Bernoulli outcomes must be 0 or 1"
        raise LikelihoodError(msg)
    if likelihood.family == LikelihoodFamily.NORMAL and likelihood.sigma2 <= 0:
        msg = f"Normal likelihood needs sigma2 > 0, got {likelihood.sigma2}"
        raise LikelihoodError(msg)


def linear_predictor(panel: PanelData, state: LatentState, cells: IntArray | None = None) -> FloatArray:
    """Mean structure plus latent process, with ``log θ`` for count models excluded."""
    if cells is None:
        cells = np.arange(panel.n_units * panel.n_times, dtype=np.int64)
    return mean_vector(panel, state, cells) + state.f[cells]


def loglik(
    panel: PanelData,
    state: LatentState,
    likelihood: Likelihood,
    cells: IntArray | None = None,
) -> float:
    """Log likelihood of the outcomes given the latent state.

    Normal uses ``N(y; μ0 + Xβ + δ + f, σ²)``; Poisson uses a log link with
    the offset, ``Pois(y; exp(μ0 + Xβ + δ + f + log θ))``; Bernoulli uses a
    logit link.

    Args:
        panel: Panel supplying outcomes, covariates and offsets.
        state: Latent vector over every cell and the coefficients.
        likelihood: Outcome family.
        cells: Flat cells to sum over; every cell when omitted.

    Returns:
        The summed log likelihood.
    """
    if cells is None:
        cells = np.arange(panel.n_units * panel.n_times, dtype=np.int64)
    y = panel.flat_y()[cells]
    check_outcomes(y, likelihood)
    return outcome_logpdf(y, linear_predictor(panel, state, cells), likelihood, panel.log_offset[cells])


def outcome_logpdf(
    y: FloatArray, eta: FloatArray, likelihood: Likelihood, log_offset: FloatArray | None = None
) -> float:
    """Summed outcome log density at linear predictor ``eta`` (support not re-checked)."""
    if likelihood.family == LikelihoodFamily.NORMAL:
        return float(np.sum(stats.norm.logpdf(y, loc=eta, scale=np.sqrt(likelihood.sigma2))))
    if likelihood.family == LikelihoodFamily.POISSON:
        rate = np.exp(eta if log_offset is None else eta + log_offset)
        return float(np.sum(stats.poisson.logpmf(y, rate)))
    return float(np.sum(y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))
