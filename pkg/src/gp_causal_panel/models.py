"""Data models shared across the inference, weighting and diagnostics modules."""

from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]
BoolArray = NDArray[np.bool_]


class LikelihoodFamily(StrEnum):
    """Outcome distribution of the untreated potential outcome."""

    NORMAL = "normal"
    POISSON = "poisson"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class Likelihood:
    """Likelihood family and, for Normal outcomes, the noise variance."""

    family: LikelihoodFamily
    sigma2: float = 1.0


@dataclass(frozen=True, eq=False)
class ObsMisPartition:
    """Observed/missing split of panel cells induced by the treatment mask.

    Indices are flat cell indices ``unit * n_times + time_index`` with 0-based
    ``time_index``, in unit-major then time order.
    """

    obs_index: IntArray
    mis_index: IntArray
    n_units: int
    n_times: int

    @property
    def n_obs(self) -> int:
        """Number of observed (untreated) cells."""
        return int(self.obs_index.size)

    @property
    def n_mis(self) -> int:
        """Number of treated post-treatment cells."""
        return int(self.mis_index.size)

    def cells(self, which: str) -> tuple[IntArray, IntArray]:
        """Return 0-based ``(unit, time_index)`` arrays for ``"obs"`` or ``"mis"``."""
        index = self.obs_index if which == "obs" else self.mis_index
        units, times = np.divmod(index, self.n_times)
        return units.astype(np.int64), times.astype(np.int64)


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Covariance over a list of cells, dense or as a Kronecker pair."""

    dense: FloatArray | None = None
    k_unit: FloatArray | None = None
    k_time: FloatArray | None = None
    jitter: float = 0.0

    @property
    def is_kronecker(self) -> bool:
        """Whether the matrix is held as ``k_unit ⊗ k_time``."""
        return self.dense is None

    def _factors(self) -> tuple[FloatArray, FloatArray]:
        if self.k_unit is None or self.k_time is None:
            msg = "CovMatrix holds neither a dense block nor a Kronecker pair"
            raise ValueError(msg)
        return self.k_unit, self.k_time

    @property
    def size(self) -> int:
        """Row count of the full matrix."""
        if self.dense is not None:
            return int(self.dense.shape[0])
        k_unit, k_time = self._factors()
        return int(k_unit.shape[0] * k_time.shape[0])

    def to_dense(self) -> FloatArray:
        """Materialise the matrix including its diagonal jitter."""
        if self.dense is not None:
            base = self.dense
        else:
            base = np.kron(*self._factors())
        if self.jitter:
            base = base + self.jitter * np.eye(base.shape[0])
        return base


@dataclass(frozen=True, eq=False)
class NormalPosterior:
    """Predictive distribution of the latent process over missing cells."""

    mu: FloatArray
    sigma: FloatArray
    sigma2: float
    chol_obs: FloatArray
    jitter: float = 0.0


@dataclass(eq=False)
class LatentState:
    """Latent process and mean-structure coefficients of one MCMC state."""

    f: FloatArray
    mu0: float = 0.0
    beta: FloatArray = field(default_factory=lambda: np.zeros(0))
    delta: FloatArray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True, eq=False)
class ChainSet:
    """Post burn-in draws of every chain, merged in chain order.

    Arrays are indexed ``[chain, kept_iteration, ...]``.
    """

    kernel: str
    likelihood: LikelihoodFamily
    n_chains: int
    n_iter: int
    burn_in: int
    seed: int
    params: dict[str, FloatArray]
    coefficients: FloatArray
    coefficient_names: tuple[str, ...]
    counterfactual: FloatArray
    pretreatment: FloatArray | None = None
    phi: FloatArray | None = None
    y0_scale: str = "outcome"

    @property
    def n_kept(self) -> int:
        """Post burn-in draws per chain."""
        return self.n_iter - self.burn_in

    def quantity(self, name: str) -> FloatArray:
        """Return the ``(chains, draws)`` array of a named scalar quantity.

        Args:
            name: Hyperparameter name, coefficient name, or ``y0[k]`` for the
                k-th missing cell.

        Returns:
            Array of shape ``(n_chains, n_kept)``.

        Raises:
            KeyError: If the quantity is unknown.
        """
        if name in self.params:
            return self.params[name]
        if name in self.coefficient_names:
            return self.coefficients[:, :, self.coefficient_names.index(name)]
        if name.startswith("y0[") and name.endswith("]"):
            return self.counterfactual[:, :, int(name[3:-1])]
        msg = f"Unknown quantity: {name}"
        raise KeyError(msg)

    def pooled(self, name: str) -> FloatArray:
        """Return every draw of a scalar quantity, chain-major."""
        return self.quantity(name).reshape(-1)


@dataclass(frozen=True, eq=False)
class CounterfactualDraws:
    """Draws of the untreated outcome, columns aligned to a cell list."""

    draws: FloatArray
    cells: IntArray
    scale: str = "outcome"

    @property
    def n_draws(self) -> int:
        """Number of posterior draws."""
        return int(self.draws.shape[0])


@dataclass(frozen=True)
class IntervalSummary:
    """Posterior median with an equal-tailed 95% credible interval."""

    median: float
    lo: float
    hi: float


@dataclass(frozen=True, eq=False)
class AttSummary:
    """Overall and per-time ATT draws and their summaries."""

    att_draws: FloatArray
    att_by_time: FloatArray
    overall: IntervalSummary
    by_time: tuple[IntervalSummary | None, ...]
    times: FloatArray
    t_star: int
    rate_scale: bool = False


@dataclass(frozen=True, eq=False)
class PretreatmentFit:
    """Pre-treatment fit of the treated units under leave-block-out prediction."""

    by_time: tuple[IntervalSummary, ...]
    rmse: float
    coverage: float
    n_cells: int


@dataclass(frozen=True, eq=False)
class DonorWeights:
    """Rows of kriging weights for target cells over donor cells."""

    w: FloatArray
    target_cells: IntArray
    donor_cells: IntArray


@dataclass(frozen=True, eq=False)
class SeparableWeights:
    """Full weight row of one target and its unit ⊗ time decomposition."""

    target: tuple[int, int]
    donor_units: IntArray
    donor_times: IntArray
    full_row: FloatArray
    unit_weights: FloatArray
    time_weights: FloatArray
    max_abs_deviation: float
    decomposition_exact: bool


@dataclass(frozen=True, eq=False)
class SeparabilityCurves:
    """Values of the separability function, one curve per spatial lag."""

    h_grid: FloatArray
    u_grid: FloatArray
    curves: FloatArray


@dataclass(frozen=True, eq=False)
class FunctionalBoxplot:
    """Band-depth summary of a family of curves."""

    median: FloatArray
    lower: FloatArray
    upper: FloatArray
    outliers: tuple[int, ...]
    depths: FloatArray
    median_index: int


@dataclass(frozen=True)
class ReplicateMetrics:
    """Counterfactual accuracy of one fitted replicate."""

    percent_bias: float
    mse: float
    coverage95: float
    n_excluded: int = 0


@dataclass(frozen=True, eq=False)
class WeightMaps:
    """Donor weights laid out on the panel grid, one map per target cell.

    ``grids`` has shape ``(targets, N, T)`` with zeros on cells that are not
    donors; ``unit_average`` averages each grid over time.
    """

    target_cells: IntArray
    grids: FloatArray
    unit_average: FloatArray


@dataclass(frozen=True, eq=False)
class SeparabilityEstimate:
    """Plug-in separability curves of a fitted Gneiting model and the η posterior."""

    curves: SeparabilityCurves
    eta: IntervalSummary
    eta_near_zero_fraction: float
    eta_rhat: float | None
    warnings: tuple[str, ...] = ()
