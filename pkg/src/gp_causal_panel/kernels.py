"""Spatio-temporal covariance kernels over panel cells."""

import dataclasses
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike
from scipy.spatial.distance import cdist

from gp_causal_panel.errors import ConfigError, NumericalError
from gp_causal_panel.models import CovMatrix, FloatArray, IntArray
from gp_causal_panel.panel import PanelData

logger = logging.getLogger(__name__)

MIN_JITTER = 1e-10
MAX_JITTER = 1e-4
JITTER_LADDER: tuple[float, ...] = (
    *(MIN_JITTER * 2.0**k for k in range(64) if MIN_JITTER * 2.0**k < MAX_JITTER),
    MAX_JITTER,
)
# Open endpoints of the Gneiting smoothness exponents, closed at this distance.
OPEN_BOUND = 1e-12
SYMMETRY_TOLERANCE = 1e-10


class KernelFamily(StrEnum):
    """The three supported space-time kernel families."""

    ICM_RBF = "icm_rbf"
    RBF_RBF = "rbf_rbf"
    GNEITING = "gneiting"

    @classmethod
    def parse(cls, name: str) -> "KernelFamily":
        """Parse a family name, accepting short aliases.

        Raises:
            ConfigError: If the name is not a known kernel.
        """
        aliases = {"icm": cls.ICM_RBF, "rbf": cls.RBF_RBF, "nonseparable": cls.GNEITING}
        key = name.strip().lower().replace("-", "_")
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(f.value for f in cls)
            msg = f"Unknown kernel {name!r}; expected one of: {choices}"
            raise ConfigError(msg) from None


POSITIVE_PARAMETERS = frozenset({"tau2", "l_s", "l_t"})
BOUNDED_PARAMETERS: dict[str, tuple[float, float]] = {
    "alpha": (OPEN_BOUND, 1.0),
    "gamma": (OPEN_BOUND, 1.0),
    "eta": (0.0, 1.0),
}
FAMILY_PARAMETERS: dict[KernelFamily, tuple[str, ...]] = {
    KernelFamily.ICM_RBF: ("l_t",),
    KernelFamily.RBF_RBF: ("tau2", "l_s", "l_t"),
    KernelFamily.GNEITING: ("tau2", "l_s", "l_t", "alpha", "gamma", "eta"),
}


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Hyperparameters of one kernel family.

    Fields not used by ``family`` are carried but ignored. For ICM the
    covariance is ``(ΦΦᵀ)[i, i'] · k_time(t, t')`` with no τ² factor.
    """

    family: KernelFamily
    tau2: float = 1.0
    l_t: float = 1.0
    l_s: float = 1.0
    alpha: float = 1.0
    gamma: float = 1.0
    eta: float = 0.5
    phi: FloatArray | None = None
    rank_j: int = 5
    learn_phi: bool = True

    def __post_init__(self) -> None:
        """Check positivity and interval bounds.

        Raises:
            ConfigError: If a bound is violated.
        """
        for name in POSITIVE_PARAMETERS:
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                msg = f"{name} must be positive and finite, got {value}"
                raise ConfigError(msg)
        for name, (lo, hi) in BOUNDED_PARAMETERS.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                msg = f"{name} must lie in [{lo:g}, {hi:g}], got {value}"
                raise ConfigError(msg)
        if self.rank_j < 1:
            msg = f"rank_j must be at least 1, got {self.rank_j}"
            raise ConfigError(msg)
        if self.phi is not None:
            phi = np.asarray(self.phi, dtype=np.float64)
            if phi.ndim != 2 or phi.shape[1] != self.rank_j or not np.all(np.isfinite(phi)):
                msg = f"phi must be a finite N×{self.rank_j} matrix, got shape {phi.shape}"
                raise ConfigError(msg)
            object.__setattr__(self, "phi", phi)

    @property
    def hyperparameter_names(self) -> tuple[str, ...]:
        """Scalar hyperparameters used by this family."""
        return FAMILY_PARAMETERS[self.family]

    @property
    def is_separable(self) -> bool:
        """Whether the covariance factors as K_unit ⊗ K_time."""
        return self.family != KernelFamily.GNEITING or self.eta == 0.0

    def replace(self, **changes: Any) -> "KernelParams":
        """Return a copy with some fields replaced (bounds re-checked)."""
        return dataclasses.replace(self, **changes)

    def values(self) -> dict[str, float]:
        """Scalar hyperparameter values of this family."""
        return {name: float(getattr(self, name)) for name in self.hyperparameter_names}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KernelParams":
        """Build parameters from a JSON kernel block.

        Example block: ``{"kernel": "gneiting", "tau2": 1.0, "l_s": 0.125,
        "l_t": 0.57, "alpha": 1.0, "gamma": 1.0, "eta": 0.5}``. ICM blocks add
        ``"rank_j"`` and either ``"phi": [[...], ...]`` or ``"phi": "learned"``.

        Raises:
            ConfigError: On unknown keys, an unknown kernel or bound violations.
        """
        if "kernel" not in data:
            msg = "Kernel block needs a 'kernel' entry"
            raise ConfigError(msg)
        known = {"kernel", "tau2", "l_t", "l_s", "alpha", "gamma", "eta", "phi", "rank_j"}
        unknown = set(data) - known
        if unknown:
            msg = f"Unknown kernel settings: {', '.join(sorted(unknown))}"
            raise ConfigError(msg)
        kwargs: dict[str, Any] = {
            key: float(data[key]) for key in ("tau2", "l_t", "l_s", "alpha", "gamma", "eta") if key in data
        }
        if "rank_j" in data:
            kwargs["rank_j"] = int(data["rank_j"])
        phi = data.get("phi", "learned")
        if isinstance(phi, str):
            if phi != "learned":
                msg = f"phi must be 'learned' or a matrix, got {phi!r}"
                raise ConfigError(msg)
        else:
            kwargs["phi"] = np.asarray(phi, dtype=np.float64)
            kwargs["learn_phi"] = False
            kwargs.setdefault("rank_j", kwargs["phi"].shape[1] if kwargs["phi"].ndim == 2 else 1)
        return cls(family=KernelFamily.parse(str(data["kernel"])), **kwargs)

    def to_dict(self) -> dict[str, Any]:
        """Serialise to a JSON kernel block."""
        block: dict[str, Any] = {"kernel": self.family.value, **self.values()}
        if self.family == KernelFamily.ICM_RBF:
            block["rank_j"] = self.rank_j
            block["phi"] = "learned" if self.learn_phi or self.phi is None else self.phi.tolist()
        return block


def k_time_rbf(t: float, t_prime: float, l_t: float) -> float:
    """Temporal RBF correlation exp(-|t - t'|² / (2 l_t²))."""
    return float(np.exp(-((t - t_prime) ** 2) / (2.0 * l_t**2)))


def k_unit_rbf(s: ArrayLike, s_prime: ArrayLike, l_s: float) -> float:
    """Spatial RBF correlation exp(-‖s - s'‖² / (2 l_s²))."""
    diff = np.asarray(s, dtype=np.float64) - np.asarray(s_prime, dtype=np.float64)
    return float(np.exp(-float(diff @ diff) / (2.0 * l_s**2)))


def k_unit_icm(i: int, i_prime: int, phi: FloatArray) -> float:
    """ICM unit covariance Σ_j φ_ij φ_i'j."""
    return float(phi[i] @ phi[i_prime])


def gneiting_correlation(h: ArrayLike, u: ArrayLike, params: KernelParams) -> FloatArray:
    """Gneiting kernel divided by τ², at spatial lag h and temporal lag u.

    ψ = |u|^{2α} / l_t + 1 and the value is
    ψ^{-η} · exp(-(h^{2γ} / l_s) / ψ^{ηγ}).
    """
    h = np.abs(np.asarray(h, dtype=np.float64))
    u = np.abs(np.asarray(u, dtype=np.float64))
    psi = u ** (2.0 * params.alpha) / params.l_t + 1.0
    spatial = h ** (2.0 * params.gamma) / params.l_s
    return np.asarray(psi ** (-params.eta) * np.exp(-spatial / psi ** (params.eta * params.gamma)))


def k_gneiting(s: ArrayLike, s_prime: ArrayLike, t: float, t_prime: float, params: KernelParams) -> float:
    """Nonseparable Gneiting covariance between two unit-time cells.

    Raises:
        ConfigError: If ``params`` is not a Gneiting parameter set.
    """
    if params.family != KernelFamily.GNEITING:
        msg = f"Expected Gneiting parameters, got {params.family}"
        raise ConfigError(msg)
    h = float(np.linalg.norm(np.asarray(s, dtype=np.float64) - np.asarray(s_prime, dtype=np.float64)))
    return float(params.tau2 * gneiting_correlation(h, t - t_prime, params))


def kernel_lag_value(params: KernelParams, h: ArrayLike, u: ArrayLike) -> FloatArray:
    """Stationary kernel value at spatial lag h and temporal lag u.

    Raises:
        ConfigError: For ICM, which has no spatial lag.
    """
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if params.family == KernelFamily.GNEITING:
        return params.tau2 * gneiting_correlation(h, u, params)
    if params.family == KernelFamily.RBF_RBF:
        spatial = np.exp(-(h**2) / (2.0 * params.l_s**2))
        return np.asarray(params.tau2 * spatial * np.exp(-(u**2) / (2.0 * params.l_t**2)))
    msg = "The ICM kernel is not a function of spatial lag"
    raise ConfigError(msg)


def rbf_time_matrix(times: FloatArray, l_t: float) -> FloatArray:
    """Temporal RBF matrix over the given time stamps."""
    stamps = np.asarray(times, dtype=np.float64).reshape(-1, 1)
    return np.exp(-cdist(stamps, stamps, "sqeuclidean") / (2.0 * l_t**2))


def rbf_unit_matrix(coords: FloatArray, l_s: float) -> FloatArray:
    """Spatial RBF matrix over unit coordinates."""
    return np.exp(-cdist(coords, coords, "sqeuclidean") / (2.0 * l_s**2))


def icm_unit_matrix(phi: FloatArray) -> FloatArray:
    """Low-rank unit covariance ΦΦᵀ, symmetrised exactly."""
    gram = phi @ phi.T
    return 0.5 * (gram + gram.T)


def _require_phi(panel: PanelData, params: KernelParams) -> FloatArray:
    if params.phi is None:
        msg = "The ICM kernel needs a factor matrix phi"
        raise ConfigError(msg)
    if params.phi.shape[0] != panel.n_units:
        msg = f"phi has {params.phi.shape[0]} rows for {panel.n_units} units"
        raise ConfigError(msg)
    if params.rank_j >= panel.n_units:
        msg = f"rank_j must be below the number of units ({panel.n_units}), got {params.rank_j}"
        raise ConfigError(msg)
    return params.phi


def unit_factor(panel: PanelData, params: KernelParams) -> FloatArray:
    """Unit factor K_unit of a separable kernel (carries τ² where present).

    Raises:
        ConfigError: For a Gneiting kernel with η > 0.
    """
    if params.family == KernelFamily.ICM_RBF:
        return icm_unit_matrix(_require_phi(panel, params))
    if params.family == KernelFamily.RBF_RBF:
        return params.tau2 * rbf_unit_matrix(panel.coords, params.l_s)
    if params.eta != 0.0:
        msg = f"Gneiting kernel with eta={params.eta} is not separable"
        raise ConfigError(msg)
    h = cdist(panel.coords, panel.coords)
    return np.asarray(params.tau2 * np.exp(-(h ** (2.0 * params.gamma)) / params.l_s))


def time_factor(panel: PanelData, params: KernelParams) -> FloatArray:
    """Time factor K_time of a separable kernel.

    At η = 0 the Gneiting kernel has no temporal decay, so its time factor is
    the all-ones matrix.
    """
    if params.family == KernelFamily.GNEITING:
        if params.eta != 0.0:
            msg = f"Gneiting kernel with eta={params.eta} is not separable"
            raise ConfigError(msg)
        return np.ones((panel.n_times, panel.n_times))
    return rbf_time_matrix(panel.time_stamps, params.l_t)


def cross_covariance(panel: PanelData, params: KernelParams, rows: IntArray, cols: IntArray) -> FloatArray:
    """Kernel block between two lists of flat cell indices.

    Raises:
        NumericalError: If any kernel value is not finite.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    unit_r, time_r = np.divmod(rows, panel.n_times)
    unit_c, time_c = np.divmod(cols, panel.n_times)
    if params.is_separable:
        k_unit = unit_factor(panel, params)
        k_time = time_factor(panel, params)
        block = k_unit[np.ix_(unit_r, unit_c)] * k_time[np.ix_(time_r, time_c)]
    else:
        h = cdist(panel.coords, panel.coords)[np.ix_(unit_r, unit_c)]
        stamps = panel.time_stamps
        u = np.abs(stamps[time_r][:, None] - stamps[time_c][None, :])
        block = params.tau2 * gneiting_correlation(h, u, params)
    if not np.all(np.isfinite(block)):
        msg = f"Non-finite kernel value for {params.family} with {params.values()}"
        raise NumericalError(msg)
    return np.asarray(block, dtype=np.float64)


def assemble(panel: PanelData, params: KernelParams, indices: IntArray | None = None) -> CovMatrix:
    """Assemble the covariance over a list of cells.

    Separable kernels over the full grid (``indices`` omitted or equal to
    every cell in unit-major order) come back as a Kronecker pair; anything
    else is a dense block.
    """
    n_cells = panel.n_units * panel.n_times
    full_grid = indices is None or (
        len(indices) == n_cells and np.array_equal(np.asarray(indices), np.arange(n_cells))
    )
    if full_grid and params.is_separable:
        return CovMatrix(k_unit=unit_factor(panel, params), k_time=time_factor(panel, params))
    cells = np.arange(n_cells, dtype=np.int64) if indices is None else np.asarray(indices, dtype=np.int64)
    return CovMatrix(dense=cross_covariance(panel, params, cells, cells))


def _smallest_eigenvalue(matrix: CovMatrix) -> float:
    if matrix.dense is not None:
        dense = matrix.dense
        if dense.shape[0] == 0:
            return 0.0
        asymmetry = float(np.max(np.abs(dense - dense.T)))
        if asymmetry > SYMMETRY_TOLERANCE * max(1.0, float(np.max(np.abs(dense)))):
            msg = f"Covariance matrix is not symmetric (max asymmetry {asymmetry:.3e})"
            raise NumericalError(msg)
        lowest = scipy.linalg.eigvalsh(dense, subset_by_index=[0, 0])
        return float(lowest[0])
    k_unit, k_time = matrix.k_unit, matrix.k_time
    if k_unit is None or k_time is None:
        msg = "CovMatrix holds neither a dense block nor a Kronecker pair"
        raise NumericalError(msg)
    for factor in (k_unit, k_time):
        if np.max(np.abs(factor - factor.T)) > SYMMETRY_TOLERANCE * max(1.0, float(np.max(np.abs(factor)))):
            msg = "Kronecker factor is not symmetric"
            raise NumericalError(msg)
    return float(np.min(np.outer(scipy.linalg.eigvalsh(k_unit), scipy.linalg.eigvalsh(k_time))))


def ensure_psd(matrix: CovMatrix) -> CovMatrix:
    """Pick the smallest ladder jitter making the matrix positive semi-definite.

    The ladder doubles from 1e-10 and stops at 1e-4; the chosen value is
    recorded in the returned matrix.

    Raises:
        NumericalError: If the input is asymmetric or no rung suffices.
    """
    lowest = _smallest_eigenvalue(matrix) + matrix.jitter
    for jitter in JITTER_LADDER:
        if lowest + jitter >= 0.0:
            if jitter > MIN_JITTER:
                logger.debug("Covariance needed jitter %.3e (smallest eigenvalue %.3e)", jitter, lowest)
            return dataclasses.replace(matrix, jitter=matrix.jitter + jitter)
    msg = f"Covariance is not positive semi-definite at jitter {MAX_JITTER:g}: smallest eigenvalue {lowest:.6e}"
    raise NumericalError(msg)
