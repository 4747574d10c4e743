"""Prior distributions for kernel hyperparameters, noise and mean coefficients."""

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any

import numpy as np
from scipy import stats

from gp_causal_panel.errors import ConfigError
from gp_causal_panel.kernels import BOUNDED_PARAMETERS, FAMILY_PARAMETERS, KernelFamily, KernelParams
from gp_causal_panel.models import FloatArray

logger = logging.getLogger(__name__)

INF = float("inf")
SUPPORT: dict[str, tuple[float, float]] = {
    "tau2": (0.0, INF),
    "l_t": (0.0, INF),
    "l_s": (0.0, INF),
    "sigma2": (0.0, INF),
    **BOUNDED_PARAMETERS,
    "mu0": (-INF, INF),
    "beta": (-INF, INF),
    "delta": (-INF, INF),
}
COEFFICIENT_GROUPS = ("mu0", "beta", "delta")


class PriorKind(StrEnum):
    """Distribution tags accepted in prior blocks."""

    INVERSE_GAMMA = "inverse_gamma"
    UNIFORM = "uniform"
    NORMAL = "normal"
    BETA = "beta"
    FLAT = "flat"


@dataclass(frozen=True)
class Prior:
    """One prior distribution, truncated to ``[lower, upper]``.

    ``a`` and ``b`` are shape/scale for inverse-gamma, the interval for
    uniform, mean/standard deviation for normal and the two shapes for beta.
    """

    kind: PriorKind
    a: float = 0.0
    b: float = 0.0
    lower: float = -INF
    upper: float = INF

    def __post_init__(self) -> None:
        """Check distribution parameters."""
        bad = (
            (self.kind in (PriorKind.INVERSE_GAMMA, PriorKind.BETA) and (self.a <= 0 or self.b <= 0))
            or (self.kind == PriorKind.NORMAL and self.b <= 0)
            or (self.kind == PriorKind.UNIFORM and self.b <= self.a)
            or self.lower >= self.upper
        )
        if bad:
            msg = f"Invalid {self.kind} prior parameters a={self.a}, b={self.b} on [{self.lower}, {self.upper}]"
            raise ConfigError(msg)

    def truncated(self, lower: float, upper: float) -> "Prior":
        """Restrict the prior to the intersection with ``[lower, upper]``."""
        return Prior(self.kind, self.a, self.b, max(self.lower, lower), min(self.upper, upper))

    def distribution(self) -> Any:
        """Frozen scipy distribution, or None for a flat prior."""
        if self.kind == PriorKind.INVERSE_GAMMA:
            return stats.invgamma(self.a, scale=self.b)
        if self.kind == PriorKind.UNIFORM:
            return stats.uniform(loc=self.a, scale=self.b - self.a)
        if self.kind == PriorKind.BETA:
            return stats.beta(self.a, self.b)
        if self.kind == PriorKind.NORMAL:
            lo = (self.lower - self.a) / self.b
            hi = (self.upper - self.a) / self.b
            if np.isinf(lo) and np.isinf(hi):
                return stats.norm(loc=self.a, scale=self.b)
            return stats.truncnorm(lo, hi, loc=self.a, scale=self.b)
        return None

    def logpdf(self, x: float) -> float:
        """Log density at ``x``; ``-inf`` outside the support."""
        if not (np.isfinite(x) and self.lower <= x <= self.upper):
            return -INF
        dist = self.distribution()
        if dist is None:
            return 0.0
        return float(dist.logpdf(x))

    def logpdf_sum(self, values: FloatArray) -> float:
        """Summed log density over independent values."""
        return float(sum(self.logpdf(float(v)) for v in np.ravel(values)))

    def median(self) -> float | None:
        """Prior median, None for flat priors."""
        dist = self.distribution()
        if dist is None:
            return None
        return float(np.clip(dist.median(), self.lower, self.upper))

    def sample(self, rng: np.random.Generator) -> float:
        """Draw one value.

        Raises:
            ConfigError: For flat priors, which are improper.
        """
        dist = self.distribution()
        if dist is None:
            msg = "A flat prior cannot be sampled"
            raise ConfigError(msg)
        return float(np.clip(dist.rvs(random_state=rng), self.lower, self.upper))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Prior":
        """Parse ``{"dist": "normal", "m": 0.5, "s": 0.1}`` style blocks.

        Raises:
            ConfigError: On an unknown distribution tag or parameters.
        """
        try:
            kind = PriorKind(str(data.get("dist", "")).lower())
        except ValueError:
            choices = ", ".join(k.value for k in PriorKind)
            msg = f"Unknown prior distribution {data.get('dist')!r}; expected one of: {choices}"
            raise ConfigError(msg) from None
        keys = {
            PriorKind.INVERSE_GAMMA: ("a", "b"),
            PriorKind.UNIFORM: ("lo", "hi"),
            PriorKind.NORMAL: ("m", "s"),
            PriorKind.BETA: ("a", "b"),
            PriorKind.FLAT: (),
        }[kind]
        missing = [k for k in keys if k not in data]
        if missing:
            msg = f"{kind} prior needs {', '.join(missing)}"
            raise ConfigError(msg)
        values = [float(data[k]) for k in keys] + [0.0, 0.0]
        return cls(kind, values[0], values[1])

    def to_dict(self) -> dict[str, Any]:
        """Serialise to a prior block."""
        if self.kind == PriorKind.FLAT:
            return {"dist": self.kind.value}
        names = {
            PriorKind.INVERSE_GAMMA: ("a", "b"),
            PriorKind.UNIFORM: ("lo", "hi"),
            PriorKind.NORMAL: ("m", "s"),
            PriorKind.BETA: ("a", "b"),
        }[self.kind]
        return {"dist": self.kind.value, names[0]: self.a, names[1]: self.b}


def inverse_gamma(a: float, b: float) -> Prior:
    """Inverse-gamma prior with shape ``a`` and scale ``b``."""
    return Prior(PriorKind.INVERSE_GAMMA, a, b)


def uniform(lo: float, hi: float) -> Prior:
    """Uniform prior on ``[lo, hi]``."""
    return Prior(PriorKind.UNIFORM, lo, hi, lo, hi)


def normal(m: float, s: float) -> Prior:
    """Normal prior, truncated later to the parameter's support."""
    return Prior(PriorKind.NORMAL, m, s)


def beta(a: float, b: float) -> Prior:
    """Beta prior."""
    return Prior(PriorKind.BETA, a, b, 0.0, 1.0)


FLAT = Prior(PriorKind.FLAT)


@dataclass(frozen=True)
class PriorSpec:
    """Priors by parameter name, each truncated to its parameter's support.

    ``beta`` and ``delta`` priors apply independently to every covariate
    coefficient and every unit effect. ICM factor entries are always
    standard normal.
    """

    priors: dict[str, Prior] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self) -> None:
        """Truncate every prior to its support."""
        unknown = set(self.priors) - set(SUPPORT)
        if unknown:
            msg = f"Priors given for unknown parameters: {', '.join(sorted(unknown))}"
            raise ConfigError(msg)
        truncated = {key: prior.truncated(*SUPPORT[key]) for key, prior in self.priors.items()}
        object.__setattr__(self, "priors", truncated)

    def prior(self, name: str) -> Prior:
        """Prior of a named parameter; coefficients default to flat.

        Raises:
            ConfigError: If a kernel or noise parameter has no prior.
        """
        group = name.split("[", 1)[0]
        if group in self.priors:
            return self.priors[group]
        if group in COEFFICIENT_GROUPS or group not in SUPPORT:
            return FLAT.truncated(*SUPPORT.get(group, (-INF, INF)))
        msg = f"No prior configured for {name}"
        raise ConfigError(msg)

    def with_overrides(self, overrides: Mapping[str, Prior]) -> "PriorSpec":
        """Return a copy with some priors replaced."""
        return PriorSpec({**self.priors, **overrides}, name=self.name)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], family: KernelFamily = KernelFamily.GNEITING) -> "PriorSpec":
        """Parse a priors block: an optional ``preset`` plus per-parameter overrides.

        Raises:
            ConfigError: On an unknown preset or invalid prior block.
        """
        preset = str(data.get("preset", "simulation"))
        base = preset_priors(preset, family)
        overrides = {key: Prior.from_dict(block) for key, block in data.items() if key != "preset"}
        return base.with_overrides(overrides)

    def to_dict(self) -> dict[str, Any]:
        """Serialise every configured prior."""
        return {"preset": self.name, **{key: prior.to_dict() for key, prior in sorted(self.priors.items())}}


def simulation_priors() -> PriorSpec:
    """Priors used when fitting the simulated panels."""
    return PriorSpec(
        {
            "tau2": inverse_gamma(5.0, 5.0),
            "sigma2": inverse_gamma(5.0, 5.0),
            "l_t": inverse_gamma(5.0, 5.0),
            "l_s": inverse_gamma(5.0, 5.0),
            "alpha": uniform(0.0, 1.0),
            "gamma": uniform(0.0, 1.0),
            "eta": normal(0.5, 0.1),
            "mu0": FLAT,
        },
        name="simulation",
    )


def application_priors(family: KernelFamily, shrink_unit_effects: bool = False) -> PriorSpec:
    """Priors used for the count-outcome application models.

    Scale priors are normals truncated at zero and ICM uses an inverse-gamma
    variance. Unit effects stay flat because they carry the outcome level once
    the intercept is dropped. With ``shrink_unit_effects`` ICM fits put N(0, 1)
    on them instead, which suits outcomes centred near zero.
    """
    icm = family == KernelFamily.ICM_RBF
    return PriorSpec(
        {
            "tau2": inverse_gamma(5.0, 5.0) if icm else normal(0.0, 1.0),
            "sigma2": inverse_gamma(5.0, 5.0),
            "l_t": normal(10.0, 5.0),
            "l_s": normal(300.0, 100.0),
            "alpha": beta(1.0, 1.0),
            "gamma": beta(1.0, 1.0),
            "eta": beta(1.0, 1.0),
            "mu0": FLAT,
            "delta": normal(0.0, 1.0) if icm and shrink_unit_effects else FLAT,
        },
        name="application-normal-effects" if shrink_unit_effects else "application",
    )


def preset_priors(name: str, family: KernelFamily = KernelFamily.GNEITING) -> PriorSpec:
    """Look up a prior preset by name.

    Raises:
        ConfigError: If the preset is unknown.
    """
    if name == "simulation":
        return simulation_priors()
    if name == "application":
        return application_priors(family)
    if name == "application-normal-effects":
        return application_priors(family, shrink_unit_effects=True)
    if name == "custom":
        return PriorSpec()
    msg = (
        f"Unknown prior preset {name!r}; expected 'simulation', 'application', "
        "'application-normal-effects' or 'custom'"
    )
    raise ConfigError(msg)


def log_prior(
    params: KernelParams,
    spec: PriorSpec,
    sigma2: float | None = None,
    mu0: float | None = None,
    beta: FloatArray | None = None,
    delta: FloatArray | None = None,
) -> float:
    """Joint log prior density; ``-inf`` when any value leaves its support.

    Args:
        params: Kernel hyperparameters (and learned Φ for ICM).
        spec: Prior configuration.
        sigma2: Normal noise variance, if part of the model.
        mu0: Global intercept, if part of the model.
        beta: Covariate coefficients.
        delta: Unit fixed effects.

    Returns:
        The summed log density.
    """
    total = 0.0
    for name, value in params.values().items():
        total += spec.prior(name).logpdf(value)
    if params.family == KernelFamily.ICM_RBF and params.learn_phi and params.phi is not None:
        total += float(np.sum(stats.norm.logpdf(params.phi)))
    if sigma2 is not None:
        total += spec.prior("sigma2").logpdf(sigma2)
    if mu0 is not None:
        total += spec.prior("mu0").logpdf(mu0)
    if beta is not None:
        total += spec.prior("beta").logpdf_sum(beta)
    if delta is not None:
        total += spec.prior("delta").logpdf_sum(delta)
    return total


def sample_kernel_params(
    family: KernelFamily,
    spec: PriorSpec,
    rng: np.random.Generator,
    n_units: int | None = None,
    rank_j: int = 5,
) -> KernelParams:
    """Draw kernel hyperparameters (and Φ when ``n_units`` is given) from the prior."""
    values = {name: spec.prior(name).sample(rng) for name in FAMILY_PARAMETERS[family]}
    phi = rng.standard_normal((n_units, rank_j)) if family == KernelFamily.ICM_RBF and n_units else None
    return KernelParams(family=family, rank_j=rank_j, phi=phi, **values)
