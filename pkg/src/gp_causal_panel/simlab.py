"""Simulated panels with known counterfactuals and the replicate study harness."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import expit

from gp_causal_panel.causal import counterfactual_draws
from gp_causal_panel.config import DEFAULT_SEED, LikelihoodConfig, SamplerConfig
from gp_causal_panel.errors import ConfigError, GpCausalError
from gp_causal_panel.gp import sample_mvn
from gp_causal_panel.kernels import KernelFamily, KernelParams, assemble, ensure_psd
from gp_causal_panel.mcmc import run_mcmc
from gp_causal_panel.models import (
    CounterfactualDraws,
    FloatArray,
    Likelihood,
    LikelihoodFamily,
    ReplicateMetrics,
)
from gp_causal_panel.panel import PanelData, PanelIndex
from gp_causal_panel.priors import PriorSpec, simulation_priors

logger = logging.getLogger(__name__)

NORMAL_NOISE = 0.05
BIAS_MODES = ("cell", "aggregate")
RECORD_COLUMNS = (
    "dgp",
    "fit_kernel",
    "likelihood",
    "replicate",
    "percent_bias",
    "mse",
    "coverage",
    "n_excluded",
    "status",
    "error",
)

DGP_KERNELS: dict[KernelFamily, KernelParams] = {
    KernelFamily.ICM_RBF: KernelParams(family=KernelFamily.ICM_RBF, tau2=0.40, l_t=0.90, rank_j=5),
    KernelFamily.RBF_RBF: KernelParams(family=KernelFamily.RBF_RBF, tau2=1.00, l_s=0.30, l_t=0.90),
    KernelFamily.GNEITING: KernelParams(
        family=KernelFamily.GNEITING, tau2=1.00, l_s=0.125, l_t=0.57, alpha=1.0, gamma=1.0, eta=0.5
    ),
}


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Data-generating process on an ``n_x × n_y`` grid of units over ``n_times`` periods.

    Treated units are drawn uniformly without replacement unless
    ``treated_units`` lists them. Offsets, when ``offset_range`` is set, are a
    per-unit exposure drawn uniformly from that range and held over time.
    """

    name: str
    kernel: KernelParams
    likelihood: Likelihood = field(default_factory=lambda: Likelihood(LikelihoodFamily.NORMAL, NORMAL_NOISE))
    n_x: int = 5
    n_y: int = 5
    n_times: int = 12
    n_treated: int = 5
    t_star: int = 10
    mu0: float = 4.0
    seed: int = DEFAULT_SEED
    offset_range: tuple[float, float] | None = None
    unit_effect_sd: float = 0.0
    unit_fixed_effects: bool = False
    treated_units: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        """Check the design.

        Raises:
            ConfigError: If the treated set is empty or covers every unit, or
                the grid, timing or offsets are invalid.
        """
        if self.n_x < 1 or self.n_y < 1 or self.n_times < 1:
            msg = f"Grid {self.n_x}x{self.n_y} over {self.n_times} periods is empty"
            raise ConfigError(msg)
        n_treated = len(set(self.treated_units)) if self.treated_units is not None else self.n_treated
        if self.treated_units is not None and not all(0 <= u < self.n_units for u in self.treated_units):
            msg = f"treated_units must index units 0..{self.n_units - 1}"
            raise ConfigError(msg)
        if not 1 <= n_treated < self.n_units:
            msg = f"Need between 1 and {self.n_units - 1} treated units, got {n_treated}"
            raise ConfigError(msg)
        if not 1 <= self.t_star <= self.n_times:
            msg = f"t_star must lie in [1, {self.n_times}], got {self.t_star}"
            raise ConfigError(msg)
        if self.kernel.family == KernelFamily.ICM_RBF and self.kernel.rank_j >= self.n_units:
            msg = f"rank_j must be below the number of units ({self.n_units})"
            raise ConfigError(msg)
        if self.offset_range is not None and not 0 < self.offset_range[0] <= self.offset_range[1]:
            msg = f"offset_range must be positive and ordered, got {self.offset_range}"
            raise ConfigError(msg)
        if self.unit_effect_sd < 0:
            msg = f"unit_effect_sd must be non-negative, got {self.unit_effect_sd}"
            raise ConfigError(msg)
        if self.likelihood.family == LikelihoodFamily.NORMAL and self.likelihood.sigma2 <= 0:
            msg = f"Normal noise variance must be positive, got {self.likelihood.sigma2}"
            raise ConfigError(msg)

    @property
    def n_units(self) -> int:
        """Number of grid units."""
        return self.n_x * self.n_y

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DgpSpec":
        """Parse a DGP block such as ``{"name": "gneiting", "kernel": {...}, "grid": [5, 5]}``."""
        kwargs = dict(data)
        kwargs["kernel"] = KernelParams.from_dict(kwargs["kernel"])
        if "likelihood" in kwargs:
            kwargs["likelihood"] = LikelihoodConfig.from_dict(kwargs["likelihood"]).build()
        if "grid" in kwargs:
            kwargs["n_x"], kwargs["n_y"] = (int(v) for v in kwargs.pop("grid"))
        for key in ("offset_range", "treated_units"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            msg = f"Invalid DGP block: {exc}"
            raise ConfigError(msg) from exc

    def to_dict(self) -> dict[str, Any]:
        """Serialise to a DGP block."""
        return {
            "name": self.name,
            "kernel": self.kernel.to_dict(),
            "likelihood": {"family": self.likelihood.family.value, "sigma2": self.likelihood.sigma2},
            "grid": [self.n_x, self.n_y],
            "n_times": self.n_times,
            "n_treated": self.n_treated,
            "t_star": self.t_star,
            "mu0": self.mu0,
            "seed": self.seed,
            "offset_range": None if self.offset_range is None else list(self.offset_range),
            "unit_effect_sd": self.unit_effect_sd,
            "unit_fixed_effects": self.unit_fixed_effects,
            "treated_units": None if self.treated_units is None else list(self.treated_units),
        }


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    """A generated panel with its untreated truth.

    No effect is injected, so ``truth`` equals the observed outcomes and the
    treated post-treatment cells are the evaluation target.
    """

    panel: PanelData
    truth: FloatArray
    f: FloatArray
    kernel: KernelParams
    unit_effects: FloatArray


def grid_coords(n_x: int, n_y: int) -> FloatArray:
    """Cell centres of an ``n_x × n_y`` grid on the unit square, x varying slowest."""
    xs = (np.arange(n_x) + 0.5) / n_x
    ys = (np.arange(n_y) + 0.5) / n_y
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.reshape(-1), gy.reshape(-1)])


def draw_outcomes(
    eta: FloatArray, likelihood: Likelihood, rng: np.random.Generator, log_offset: FloatArray | None = None
) -> FloatArray:
    """Draw outcomes around a linear predictor under the given likelihood."""
    if likelihood.family == LikelihoodFamily.NORMAL:
        return np.asarray(eta + rng.normal(0.0, np.sqrt(likelihood.sigma2), size=eta.shape))
    if likelihood.family == LikelihoodFamily.POISSON:
        rate = np.exp(eta if log_offset is None else eta + log_offset)
        return rng.poisson(rate).astype(np.float64)
    return rng.binomial(1, expit(eta)).astype(np.float64)


def generate(spec: DgpSpec, seed: int | np.random.SeedSequence | None = None) -> SimulatedPanel:
    """Simulate one panel from a DGP.

    Args:
        spec: Data-generating process.
        seed: Overrides ``spec.seed``.

    Returns:
        Panel, truth and latent field, plus the kernel actually used (ICM
        draws its factor Φ with entries N(0, τ²/J)).

    Raises:
        NumericalError: If the DGP kernel cannot be made PSD.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    coords = grid_coords(spec.n_x, spec.n_y)
    treated = np.zeros(spec.n_units, dtype=bool)
    if spec.treated_units is None:
        treated[rng.choice(spec.n_units, size=spec.n_treated, replace=False)] = True
    else:
        treated[list(spec.treated_units)] = True

    kernel = spec.kernel
    if kernel.family == KernelFamily.ICM_RBF and kernel.phi is None:
        phi = rng.normal(0.0, np.sqrt(kernel.tau2 / kernel.rank_j), size=(spec.n_units, kernel.rank_j))
        kernel = kernel.replace(phi=phi, learn_phi=False)

    shape = (spec.n_units, spec.n_times)
    offset = None
    if spec.offset_range is not None:
        exposure = rng.uniform(*spec.offset_range, size=spec.n_units)
        offset = np.repeat(exposure[:, None], spec.n_times, axis=1)
    shell = PanelData(y=np.zeros(shape), treated_unit=treated, t_star=spec.t_star, coords=coords)
    f = sample_mvn(ensure_psd(assemble(shell, kernel)), rng).reshape(shape)
    unit_effects = np.zeros(spec.n_units)
    if spec.unit_effect_sd > 0:
        unit_effects = rng.normal(0.0, spec.unit_effect_sd, size=spec.n_units)
    eta = spec.mu0 + unit_effects[:, None] + f
    log_offset = None if offset is None else np.log(offset)
    y = draw_outcomes(eta, spec.likelihood, rng, log_offset)
    panel = PanelData(
        y=y,
        treated_unit=treated,
        t_star=spec.t_star,
        coords=coords,
        offset=offset,
        unit_fixed_effects=spec.unit_fixed_effects,
    )
    logger.debug("Generated %s panel %dx%d", spec.name, *shape)
    return SimulatedPanel(panel=panel, truth=y.copy(), f=f, kernel=kernel, unit_effects=unit_effects)


def simulation_index(panel: PanelData) -> PanelIndex:
    """Zero-padded unit labels, so that label order is unit order when the CSV is reloaded."""
    width = len(str(panel.n_units - 1))
    return PanelIndex(
        unit_labels=tuple(f"u{i:0{width}d}" for i in range(panel.n_units)),
        time_labels=tuple(float(t) for t in range(1, panel.n_times + 1)),
    )


def truth_frame(sim: SimulatedPanel) -> pd.DataFrame:
    """Truth table ``unit_id,time,y0,f,treated`` in unit-major order."""
    n_units, n_times = sim.truth.shape
    labels = np.asarray(simulation_index(sim.panel).unit_labels, dtype=object)
    return pd.DataFrame(
        {
            "unit_id": np.repeat(labels, n_times),
            "time": np.tile(np.arange(1, n_times + 1), n_units),
            "y0": sim.truth.reshape(-1),
            "f": sim.f.reshape(-1),
            "treated": sim.panel.treatment.reshape(-1).astype(int),
        }
    )


def metrics(truth: FloatArray, cf: CounterfactualDraws, bias: str = "cell") -> ReplicateMetrics:
    """Accuracy of counterfactual draws against the untreated truth.

    Args:
        truth: True untreated outcomes over the whole ``(N, T)`` panel.
        cf: Counterfactual draws over the treated post-treatment cells.
        bias: ``"cell"`` averages the absolute relative error of the posterior
            mean per cell; ``"aggregate"`` uses ``|Σ(ŷ - y)| / Σ|y|``.

    Returns:
        Percent bias, MSE of the posterior mean and 95% interval coverage.
        Cells with zero truth are left out of the per-cell bias and counted.

    Raises:
        ConfigError: On an unknown bias mode or misaligned draws.
    """
    if bias not in BIAS_MODES:
        msg = f"bias must be one of {BIAS_MODES}, got {bias!r}"
        raise ConfigError(msg)
    values = np.asarray(truth, dtype=np.float64).reshape(-1)[cf.cells]
    if cf.draws.ndim != 2 or cf.draws.shape[1] != values.size or cf.n_draws < 1:
        msg = "Counterfactual draws are not aligned to the truth cells"
        raise ConfigError(msg)
    mean = cf.draws.mean(axis=0)
    lo, hi = np.quantile(cf.draws, (0.025, 0.975), axis=0)
    error = mean - values
    n_excluded = 0
    if bias == "aggregate":
        total = float(np.sum(np.abs(values)))
        percent_bias = 100.0 * abs(float(np.sum(error))) / total if total > 0 else float("nan")
    else:
        nonzero = values != 0.0
        n_excluded = int(np.count_nonzero(~nonzero))
        if n_excluded:
            logger.warning("Excluded %d zero-truth cells from percent bias", n_excluded)
        percent_bias = (
            100.0 * float(np.mean(np.abs(error[nonzero]) / np.abs(values[nonzero]))) if nonzero.any() else float("nan")
        )
    return ReplicateMetrics(
        percent_bias=percent_bias,
        mse=float(np.mean(error**2)),
        coverage95=float(np.mean((values >= lo) & (values <= hi))),
        n_excluded=n_excluded,
    )


@dataclass(frozen=True)
class StudyConfig:
    """Replicate study: every DGP crossed with every fitted kernel."""

    dgps: tuple[DgpSpec, ...]
    fit_kernels: tuple[KernelFamily, ...] = (KernelFamily.ICM_RBF, KernelFamily.RBF_RBF, KernelFamily.GNEITING)
    replicates: int = 20
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(chains=4, iters=400, burn_in=200))
    priors: PriorSpec = field(default_factory=simulation_priors)
    seed: int = DEFAULT_SEED
    bias_mode: str = "cell"
    rank_j: int = 5

    def __post_init__(self) -> None:
        """Validate the design.

        Raises:
            ConfigError: On no DGPs, no fitted kernels, no replicates or an
                unknown bias mode.
        """
        if not self.dgps or not self.fit_kernels:
            msg = "A study needs at least one DGP and one fitted kernel"
            raise ConfigError(msg)
        if self.replicates < 1:
            msg = f"replicates must be at least 1, got {self.replicates}"
            raise ConfigError(msg)
        if self.bias_mode not in BIAS_MODES:
            msg = f"bias_mode must be one of {BIAS_MODES}, got {self.bias_mode!r}"
            raise ConfigError(msg)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StudyConfig":
        """Parse a study block: a ``preset`` or explicit ``dgps``, plus overrides.

        Example: ``{"preset": "desk-normal", "replicates": 5, "sampler":
        {"chains": 2, "iters": 200, "burn_in": 100}}``.

        Raises:
            ConfigError: On unknown keys or an unknown preset.
        """
        known = {"preset", "dgps", "fit_kernels", "replicates", "sampler", "priors", "seed", "bias_mode", "rank_j"}
        unknown = set(data) - known
        if unknown:
            msg = f"Unknown study settings: {', '.join(sorted(unknown))}"
            raise ConfigError(msg)
        base = preset_study(data["preset"]) if "preset" in data else None
        if "dgps" in data:
            dgps = tuple(DgpSpec.from_dict(block) for block in data["dgps"])
        elif base is not None:
            dgps = base.dgps
        else:
            msg = "A study block needs a 'preset' or a list of 'dgps'"
            raise ConfigError(msg)
        config = base or cls(dgps=dgps)
        changes: dict[str, Any] = {"dgps": dgps}
        if "fit_kernels" in data:
            changes["fit_kernels"] = tuple(KernelFamily.parse(name) for name in data["fit_kernels"])
        if "sampler" in data:
            changes["sampler"] = SamplerConfig.from_dict({**config.sampler.to_dict(), **data["sampler"]})
        if "priors" in data:
            changes["priors"] = PriorSpec.from_dict(data["priors"])
        for key in ("replicates", "seed", "rank_j"):
            if key in data:
                changes[key] = int(data[key])
        if "bias_mode" in data:
            changes["bias_mode"] = str(data["bias_mode"])
        return replace(config, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Serialise to a study block with explicit DGPs."""
        return {
            "dgps": [dgp.to_dict() for dgp in self.dgps],
            "fit_kernels": [family.value for family in self.fit_kernels],
            "replicates": self.replicates,
            "sampler": self.sampler.to_dict(),
            "priors": self.priors.to_dict(),
            "seed": self.seed,
            "bias_mode": self.bias_mode,
            "rank_j": self.rank_j,
        }


@dataclass(frozen=True, eq=False)
class StudyResult:
    """Per-replicate records of a study, one row per DGP × fitted kernel × replicate."""

    records: pd.DataFrame

    @property
    def n_failed(self) -> int:
        """Fits that raised and were recorded as failures."""
        return int((self.records["status"] != "ok").sum())

    def summary(self) -> pd.DataFrame:
        """Aggregated table, see :func:`aggregate`."""
        return aggregate(self)


@dataclass(frozen=True)
class _ReplicateTask:
    dgp_index: int
    kernel_index: int
    replicate: int
    dgp: DgpSpec
    fit_kernel: KernelFamily
    sampler: SamplerConfig
    priors: PriorSpec
    seed: int
    bias_mode: str
    rank_j: int


def derived_seed(master: int, *key: int) -> int:
    """Seed of one stream, derived from the master seed and an integer key."""
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1)[0])


def _fit_likelihood(dgp: DgpSpec) -> Likelihood:
    if dgp.likelihood.family == LikelihoodFamily.NORMAL:
        return Likelihood(LikelihoodFamily.NORMAL, sigma2=1.0)
    return Likelihood(dgp.likelihood.family)


def _run_replicate(task: _ReplicateTask) -> dict[str, Any]:
    record: dict[str, Any] = {
        "dgp": task.dgp.name,
        "fit_kernel": task.fit_kernel.value,
        "likelihood": task.dgp.likelihood.family.value,
        "replicate": task.replicate,
        "percent_bias": np.nan,
        "mse": np.nan,
        "coverage": np.nan,
        "n_excluded": 0,
        "status": "ok",
        "error": "",
    }
    try:
        sim = generate(task.dgp, seed=derived_seed(task.seed, 0, task.dgp_index, task.replicate))
        fit_seed = derived_seed(task.seed, 1, task.dgp_index, task.kernel_index, task.replicate)
        chains = run_mcmc(
            sim.panel,
            KernelParams(family=task.fit_kernel, rank_j=task.rank_j),
            _fit_likelihood(task.dgp),
            task.priors,
            task.sampler.with_seed(fit_seed),
        )
        result = metrics(sim.truth, counterfactual_draws(chains, sim.panel), task.bias_mode)
    except GpCausalError as exc:
        logger.warning(
            "Replicate %d of %s fitted with %s failed: %s", task.replicate, task.dgp.name, task.fit_kernel, exc
        )
        record.update(status="failed", error=str(exc))
        return record
    record.update(
        percent_bias=result.percent_bias,
        mse=result.mse,
        coverage=result.coverage95,
        n_excluded=result.n_excluded,
    )
    logger.info(
        "Replicate %d %s/%s: bias %.2f%%, MSE %.4g, coverage %.2f",
        task.replicate,
        task.dgp.name,
        task.fit_kernel,
        result.percent_bias,
        result.mse,
        result.coverage95,
    )
    return record


def run_study(config: StudyConfig, jobs: int = 1) -> StudyResult:
    """Fit every fitted kernel to every replicate of every DGP.

    Data seeds depend on (master seed, DGP, replicate) and fit seeds on
    (master seed, DGP, kernel, replicate), so records do not depend on
    ``jobs``. Failed fits are kept as rows with ``status == "failed"``.
    """
    tasks = [
        _ReplicateTask(
            dgp_index=d,
            kernel_index=k,
            replicate=r,
            dgp=dgp,
            fit_kernel=family,
            sampler=config.sampler,
            priors=config.priors,
            seed=config.seed,
            bias_mode=config.bias_mode,
            rank_j=config.rank_j,
        )
        for d, dgp in enumerate(config.dgps)
        for k, family in enumerate(config.fit_kernels)
        for r in range(config.replicates)
    ]
    logger.info("Running %d fits over %d DGPs", len(tasks), len(config.dgps))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_replicate, tasks))
    else:
        records = [_run_replicate(task) for task in tasks]
    result = StudyResult(records=pd.DataFrame(records, columns=list(RECORD_COLUMNS)))
    if result.n_failed:
        logger.warning("%d of %d fits failed", result.n_failed, len(tasks))
    return result


@dataclass(frozen=True, eq=False)
class SimulatedReplicate:
    """One generated panel of a study design with its place in the design."""

    dgp_index: int
    replicate: int
    seed: int
    sim: SimulatedPanel


def _generate_seeded(task: tuple[DgpSpec, int]) -> SimulatedPanel:
    dgp, seed = task
    return generate(dgp, seed=seed)


def simulate_panels(config: StudyConfig, replicates: int | None = None, jobs: int = 1) -> list[SimulatedReplicate]:
    """Generate every replicate panel of every DGP of a study.

    Seeds are the data seeds :func:`run_study` uses, so the panels match the
    ones a study with the same master seed fits, for any ``jobs``.

    Args:
        config: Study design.
        replicates: Panels per DGP (default: ``config.replicates``).
        jobs: Worker processes.

    Raises:
        ConfigError: If ``replicates`` or ``jobs`` is below 1.
    """
    n_rep = config.replicates if replicates is None else replicates
    if n_rep < 1 or jobs < 1:
        msg = f"replicates and jobs must be at least 1, got {n_rep} and {jobs}"
        raise ConfigError(msg)
    keys = [(d, r, derived_seed(config.seed, 0, d, r)) for d in range(len(config.dgps)) for r in range(n_rep)]
    tasks = [(config.dgps[d], seed) for d, _, seed in keys]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            sims = list(pool.map(_generate_seeded, tasks))
    else:
        sims = [_generate_seeded(task) for task in tasks]
    return [
        SimulatedReplicate(dgp_index=d, replicate=r, seed=seed, sim=sim)
        for (d, r, seed), sim in zip(keys, sims, strict=True)
    ]


def aggregate(result: StudyResult) -> pd.DataFrame:
    """Mean metrics per DGP, likelihood and fitted kernel over successful replicates.

    Rows follow the DGP × fitted-kernel layout of a simulation results table,
    with counts of successful and failed fits.
    """
    records = result.records
    keys = ["dgp", "likelihood", "fit_kernel"]
    ok = records[records["status"] == "ok"]
    means = ok.groupby(keys, sort=False)[["percent_bias", "mse", "coverage"]].mean()
    counts = records.assign(ok=records["status"] == "ok").groupby(keys, sort=False)["ok"].agg(["sum", "size"])
    table = counts.rename(columns={"sum": "n_ok"}).assign(n_failed=lambda c: c["size"] - c["n_ok"])
    table = table.drop(columns="size").join(means).reset_index()
    return table[["dgp", "likelihood", "fit_kernel", "percent_bias", "mse", "coverage", "n_ok", "n_failed"]]


def _design(
    likelihood: Likelihood, n_side: int, n_times: int, n_treated: int, t_star: int, **extra: Any
) -> tuple[DgpSpec, ...]:
    return tuple(
        DgpSpec(
            name=family.value,
            kernel=kernel,
            likelihood=likelihood,
            n_x=n_side,
            n_y=n_side,
            n_times=n_times,
            n_treated=n_treated,
            t_star=t_star,
            **extra,
        )
        for family, kernel in DGP_KERNELS.items()
    )


NORMAL = Likelihood(LikelihoodFamily.NORMAL, NORMAL_NOISE)
POISSON = Likelihood(LikelihoodFamily.POISSON)
DESK_SAMPLER = SamplerConfig(chains=4, iters=400, burn_in=200)
PRESETS = (
    "full-normal",
    "full-poisson",
    "paper-normal",
    "paper-poisson",
    "desk-normal",
    "desk",
    "desk-poisson",
    "illustration",
    "pipeline",
)


def preset_study(name: str) -> StudyConfig:
    """Named study designs.

    ``full-*`` (aliases ``paper-*``) use a 7×7 grid over 15 periods with 10
    treated units from period 8 and 100 replicates; ``desk-*`` (``desk`` is
    ``desk-normal``) a 5×5 grid over 12 periods with 5 treated units from period 10, 20
    replicates and short chains. ``illustration`` treats 4 units from period
    9 of a 7×7 grid. ``pipeline`` is a Poisson panel with exposures and
    unit effects, fitted with unit fixed effects.

    Raises:
        ConfigError: On an unknown preset.
    """
    if name in ("full-normal", "paper-normal"):
        return StudyConfig(dgps=_design(NORMAL, 7, 15, 10, 8), replicates=100, sampler=SamplerConfig())
    if name in ("full-poisson", "paper-poisson"):
        return StudyConfig(dgps=_design(POISSON, 7, 15, 10, 8), replicates=100, sampler=SamplerConfig())
    if name in ("desk", "desk-normal"):
        return StudyConfig(dgps=_design(NORMAL, 5, 12, 5, 10), replicates=20, sampler=DESK_SAMPLER)
    if name == "desk-poisson":
        return StudyConfig(dgps=_design(POISSON, 5, 12, 5, 10), replicates=20, sampler=DESK_SAMPLER)
    if name == "illustration":
        dgp = DgpSpec(
            name="illustration",
            kernel=DGP_KERNELS[KernelFamily.GNEITING],
            n_x=7,
            n_y=7,
            n_times=15,
            n_treated=4,
            t_star=9,
        )
        return StudyConfig(dgps=(dgp,), fit_kernels=(KernelFamily.GNEITING,), replicates=1, sampler=DESK_SAMPLER)
    if name == "pipeline":
        dgp = DgpSpec(
            name="pipeline",
            kernel=DGP_KERNELS[KernelFamily.GNEITING],
            likelihood=POISSON,
            mu0=-7.0,
            offset_range=(5e4, 2e5),
            unit_effect_sd=0.3,
            unit_fixed_effects=True,
        )
        return StudyConfig(dgps=(dgp,), fit_kernels=(KernelFamily.GNEITING,), replicates=1, sampler=DESK_SAMPLER)
    msg = f"Unknown preset {name!r}; expected one of {', '.join(PRESETS)}"
    raise ConfigError(msg)


def load_study(path: Path) -> StudyConfig:
    """Read a study configuration file.

    Raises:
        ConfigError: If the file is not a valid JSON study block.
    """
    try:
        with path.open(encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        msg = f"Study configuration {path} is not valid JSON: {exc}"
        raise ConfigError(msg) from exc
    if not isinstance(data, dict):
        msg = f"Study configuration {path} must hold a JSON object"
        raise ConfigError(msg)
    return StudyConfig.from_dict(data)
