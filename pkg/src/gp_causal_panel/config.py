"""JSON run configuration parsed into frozen dataclasses."""

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from gp_causal_panel.errors import ConfigError
from gp_causal_panel.kernels import KernelFamily, KernelParams
from gp_causal_panel.models import Likelihood, LikelihoodFamily
from gp_causal_panel.priors import PriorSpec

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20250829
DEFAULT_CHAINS = 4
DEFAULT_ITERS = 1000
DEFAULT_BURN_IN = 500
DEFAULT_LATENT_JITTER = 1e-6
RHAT_THRESHOLD = 1.05
ETA_THRESHOLD = 0.05
RATE_SCALE = 100_000.0
Y0_SCALES = ("count", "mean")


def _reject_unknown(block: Mapping[str, Any], known: set[str], what: str) -> None:
    unknown = set(block) - known
    if unknown:
        msg = f"Unknown {what} settings: {', '.join(sorted(unknown))}"
        raise ConfigError(msg)


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run length, seeding and output options.

    ``fixed`` names hyperparameters held at their configured values instead of
    being sampled; ``y0_scale`` selects count or mean draws for Poisson and
    Bernoulli counterfactuals.
    """

    chains: int = DEFAULT_CHAINS
    iters: int = DEFAULT_ITERS
    burn_in: int = DEFAULT_BURN_IN
    seed: int = DEFAULT_SEED
    latent_jitter: float = DEFAULT_LATENT_JITTER
    store_pretreatment: bool = True
    y0_scale: str = "count"
    fixed: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        """Validate run lengths.

        Raises:
            ConfigError: On zero iterations, burn-in not below the iteration
                count, no chains, or an unknown counterfactual scale.
        """
        if self.iters < 1:
            msg = f"iters must be at least 1, got {self.iters}"
            raise ConfigError(msg)
        if not 0 <= self.burn_in < self.iters:
            msg = f"burn_in must lie in [0, iters), got {self.burn_in} for {self.iters} iterations"
            raise ConfigError(msg)
        if self.chains < 1:
            msg = f"chains must be at least 1, got {self.chains}"
            raise ConfigError(msg)
        if self.latent_jitter <= 0:
            msg = f"latent_jitter must be positive, got {self.latent_jitter}"
            raise ConfigError(msg)
        if self.y0_scale not in Y0_SCALES:
            msg = f"y0_scale must be one of {Y0_SCALES}, got {self.y0_scale!r}"
            raise ConfigError(msg)
        object.__setattr__(self, "fixed", tuple(self.fixed))

    @property
    def n_kept(self) -> int:
        """Post burn-in draws per chain."""
        return self.iters - self.burn_in

    def with_seed(self, seed: int) -> "SamplerConfig":
        """Copy with another seed."""
        return replace(self, seed=seed)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SamplerConfig":
        """Parse ``{"chains": 4, "iters": 1000, "burn_in": 500, "seed": 20250829}``."""
        _reject_unknown(data, {f for f in cls.__dataclass_fields__}, "sampler")
        kwargs = dict(data)
        if "fixed" in kwargs:
            kwargs["fixed"] = tuple(kwargs["fixed"])
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        """Serialise to a sampler block."""
        return {
            "chains": self.chains,
            "iters": self.iters,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "latent_jitter": self.latent_jitter,
            "store_pretreatment": self.store_pretreatment,
            "y0_scale": self.y0_scale,
            "fixed": list(self.fixed),
        }


@dataclass(frozen=True)
class LikelihoodConfig:
    """Likelihood block: family and, for Normal outcomes, the initial noise variance."""

    family: LikelihoodFamily = LikelihoodFamily.NORMAL
    sigma2: float = 1.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LikelihoodConfig":
        """Parse ``{"family": "poisson"}`` or ``{"family": "normal", "sigma2": 0.05}``."""
        _reject_unknown(data, {"family", "sigma2"}, "likelihood")
        try:
            family = LikelihoodFamily(str(data.get("family", "normal")).lower())
        except ValueError:
            msg = f"Unknown likelihood {data.get('family')!r}; expected normal, poisson or bernoulli"
            raise ConfigError(msg) from None
        sigma2 = float(data.get("sigma2", 1.0))
        if sigma2 <= 0:
            msg = f"sigma2 must be positive, got {sigma2}"
            raise ConfigError(msg)
        return cls(family=family, sigma2=sigma2)

    def build(self) -> Likelihood:
        """The likelihood used by the model."""
        return Likelihood(family=self.family, sigma2=self.sigma2)

    def to_dict(self) -> dict[str, Any]:
        """Serialise to a likelihood block."""
        return {"family": self.family.value, "sigma2": self.sigma2}


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs besides its subcommand flags."""

    panel: Path | None = None
    schema: dict[str, Any] = field(default_factory=dict)
    unit_fixed_effects: bool = False
    use_time_values: bool = False
    kernel: KernelParams = field(default_factory=lambda: KernelParams(family=KernelFamily.GNEITING))
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    priors: PriorSpec = field(default_factory=lambda: PriorSpec.from_dict({}))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    rate_scale: bool = False
    n_h: int = 10
    posterior_curves: int = 0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        """Parse a whole run configuration.

        Args:
            data: Parsed JSON object.
            base_dir: Directory that relative panel paths resolve against.

        Returns:
            The run configuration.

        Raises:
            ConfigError: On unknown sections or invalid blocks.
        """
        known = {
            "panel",
            "schema",
            "unit_fixed_effects",
            "use_time_values",
            "kernel",
            "likelihood",
            "priors",
            "sampler",
            "att",
            "diagnostics",
        }
        _reject_unknown(data, known, "run")
        kernel = KernelParams.from_dict(data.get("kernel", {"kernel": KernelFamily.GNEITING.value}))
        panel = data.get("panel")
        panel_path = None
        if panel is not None:
            panel_path = Path(panel)
            if base_dir is not None and not panel_path.is_absolute():
                panel_path = base_dir / panel_path
        att = data.get("att", {})
        diagnostics = data.get("diagnostics", {})
        _reject_unknown(att, {"rate_scale"}, "att")
        _reject_unknown(diagnostics, {"n_h", "posterior_curves"}, "diagnostics")
        return cls(
            panel=panel_path,
            schema=dict(data.get("schema", {})),
            unit_fixed_effects=bool(data.get("unit_fixed_effects", False)),
            use_time_values=bool(data.get("use_time_values", False)),
            kernel=kernel,
            likelihood=LikelihoodConfig.from_dict(data.get("likelihood", {})),
            priors=PriorSpec.from_dict(data.get("priors", {}), family=kernel.family),
            sampler=SamplerConfig.from_dict(data.get("sampler", {})),
            rate_scale=bool(att.get("rate_scale", False)),
            n_h=int(diagnostics.get("n_h", 10)),
            posterior_curves=int(diagnostics.get("posterior_curves", 0)),
        )

    def to_dict(self) -> dict[str, Any]:
        """Serialise to the JSON shape accepted by :meth:`from_dict`."""
        return {
            "panel": None if self.panel is None else str(self.panel),
            "schema": self.schema,
            "unit_fixed_effects": self.unit_fixed_effects,
            "use_time_values": self.use_time_values,
            "kernel": self.kernel.to_dict(),
            "likelihood": self.likelihood.to_dict(),
            "priors": self.priors.to_dict(),
            "sampler": self.sampler.to_dict(),
            "att": {"rate_scale": self.rate_scale},
            "diagnostics": {"n_h": self.n_h, "posterior_curves": self.posterior_curves},
        }


def merge_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any] | None) -> dict[str, Any]:
    """Overlay command-line overrides on a configuration, merging one level into mapping sections."""
    merged = dict(data)
    for key, value in (overrides or {}).items():
        current = merged.get(key)
        if isinstance(current, Mapping) and isinstance(value, Mapping):
            merged[key] = {**current, **value}
        else:
            merged[key] = value
    return merged


def load_config(path: Path | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a run configuration file and apply overrides.

    Args:
        path: JSON configuration; defaults only when omitted.
        overrides: Sections replacing or merging into the file's sections.

    Returns:
        The run configuration.

    Raises:
        ConfigError: If the file is not valid JSON or holds an invalid run.
    """
    if path is None:
        return RunConfig.from_dict(merge_overrides({}, overrides))
    try:
        with path.open(encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        msg = f"Configuration {path} is not valid JSON: {exc}"
        raise ConfigError(msg) from exc
    if not isinstance(data, dict):
        msg = f"Configuration {path} must hold a JSON object"
        raise ConfigError(msg)
    logger.info("Loaded configuration %s", path)
    return RunConfig.from_dict(merge_overrides(data, overrides), base_dir=path.parent)
