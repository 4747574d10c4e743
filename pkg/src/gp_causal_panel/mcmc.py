"""Posterior sampling for GP panel models, chain export and R-hat diagnostics.

Normal outcomes marginalise the latent process: hyperparameters and the noise
variance take slice-sampling updates on the marginal likelihood of the
observed cells, mean coefficients take a Gibbs draw, and each kept iteration
draws the missing counterfactuals from the predictive distribution. Poisson
and Bernoulli outcomes keep the latent process explicit and update it by
elliptical slice sampling.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats
from scipy.special import expit

from gp_causal_panel.config import RHAT_THRESHOLD, SamplerConfig
from gp_causal_panel.errors import ConfigError, NumericalError
from gp_causal_panel.gp import (
    KroneckerSolver,
    check_outcomes,
    cholesky_with_jitter,
    condition_normal,
    mvn_logpdf,
    outcome_logpdf,
    sample_predictive,
)
from gp_causal_panel.kernels import (
    BOUNDED_PARAMETERS,
    POSITIVE_PARAMETERS,
    KernelFamily,
    KernelParams,
    assemble,
    cross_covariance,
)
from gp_causal_panel.models import ChainSet, FloatArray, IntArray, Likelihood, LikelihoodFamily
from gp_causal_panel.panel import PanelData, control_cells, design_matrix, partition, treated_pre_cells
from gp_causal_panel.priors import Prior, PriorKind, PriorSpec
from gp_causal_panel.samplers import elliptical_slice, slice_sample

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 100
CHAIN_COLUMNS = ("chain", "iter", "name", "value")


def _coefficient_group(name: str) -> str:
    if name == "mu0":
        return "mu0"
    if name.startswith("delta["):
        return "delta"
    return "beta"


class PanelModel:
    """Fixed pieces of a panel model shared by every chain."""

    def __init__(
        self,
        panel: PanelData,
        kernel: KernelParams,
        likelihood: Likelihood,
        priors: PriorSpec,
        sampler: SamplerConfig,
    ) -> None:
        """Initialise the model and validate it against the panel.

        Args:
            panel: Outcome panel.
            kernel: Kernel family, fixed Φ (if not learned) and values of fixed
                hyperparameters.
            likelihood: Outcome family and initial noise variance.
            priors: Prior configuration.
            sampler: Run configuration.

        Raises:
            ConfigError: On unsupported priors or unidentified fixed effects.
            LikelihoodError: If observed outcomes fall outside the support.
        """
        self.panel = panel
        self.kernel = kernel
        self.likelihood = likelihood
        self.priors = priors
        self.sampler = sampler
        self.partition = partition(panel)
        self.obs = self.partition.obs_index
        self.mis = self.partition.mis_index
        with_pre = sampler.store_pretreatment and panel.t0 > 0
        self.pre = treated_pre_cells(panel) if with_pre else np.zeros(0, dtype=np.int64)
        self.ctrl = control_cells(panel)
        self.design, self.coefficient_names = design_matrix(panel)
        self.y = panel.flat_y()
        self.log_offset = panel.log_offset
        check_outcomes(self.y[self.obs], likelihood)

        names = list(kernel.hyperparameter_names)
        if self.is_normal:
            names.append("sigma2")
        self.param_names = tuple(names)
        unknown = set(sampler.fixed) - set(self.param_names)
        if unknown:
            msg = f"Cannot fix parameters absent from the model: {', '.join(sorted(unknown))}"
            raise ConfigError(msg)
        self.free = tuple(name for name in self.param_names if name not in sampler.fixed)
        self.learn_phi = kernel.family == KernelFamily.ICM_RBF and kernel.learn_phi
        if kernel.family == KernelFamily.ICM_RBF and kernel.rank_j >= panel.n_units:
            msg = f"rank_j must be below the number of units ({panel.n_units}), got {kernel.rank_j}"
            raise ConfigError(msg)

        self.coefficient_priors = tuple(priors.prior(_coefficient_group(n)) for n in self.coefficient_names)
        for name, prior in zip(self.coefficient_names, self.coefficient_priors, strict=True):
            if prior.kind not in (PriorKind.NORMAL, PriorKind.FLAT):
                msg = f"Coefficient {name} needs a normal or flat prior, got {prior.kind}"
                raise ConfigError(msg)
        if panel.unit_fixed_effects and panel.t0 == 0 and priors.prior("delta").kind == PriorKind.FLAT:
            msg = "Unit fixed effects with a flat prior need pre-treatment periods for treated units"
            raise ConfigError(msg)

    @property
    def is_normal(self) -> bool:
        """Whether the latent process is marginalised."""
        return self.likelihood.family == LikelihoodFamily.NORMAL

    def kernel_at(self, values: dict[str, float], phi: FloatArray | None) -> KernelParams:
        """Kernel parameters at the given hyperparameter values."""
        kernel_values = {k: v for k, v in values.items() if k != "sigma2"}
        return self.kernel.replace(phi=phi, **kernel_values)

    def initial_values(self) -> dict[str, float]:
        """Prior medians, or configured values for fixed or flat-prior parameters."""
        values: dict[str, float] = {}
        for name in self.param_names:
            configured = self.likelihood.sigma2 if name == "sigma2" else float(getattr(self.kernel, name))
            median = None if name in self.sampler.fixed else self.priors.prior(name).median()
            values[name] = configured if median is None else median
        return values

    def initial_coefficients(self) -> FloatArray:
        """Empirical level on the intercept (or every unit effect), zeros elsewhere."""
        y_obs = self.y[self.obs]
        if self.likelihood.family == LikelihoodFamily.POISSON:
            exposure = np.exp(self.log_offset[self.obs]).sum()
            level = float(np.log((y_obs.sum() + 0.5) / exposure))
        elif self.likelihood.family == LikelihoodFamily.BERNOULLI:
            rate = float(np.clip(y_obs.mean(), 0.01, 0.99))
            level = float(np.log(rate / (1.0 - rate)))
        else:
            level = float(y_obs.mean())
        coefficients = np.zeros(len(self.coefficient_names))
        for k, name in enumerate(self.coefficient_names):
            if name == "mu0" or name.startswith("delta["):
                coefficients[k] = level
        return coefficients

    def log_prior(self, name: str, value: float) -> float:
        """Log prior of one scalar hyperparameter."""
        return self.priors.prior(name).logpdf(value)

    def coefficient_log_prior(self, coefficients: FloatArray) -> float:
        """Summed log prior of the mean coefficients."""
        return float(sum(p.logpdf(float(c)) for p, c in zip(self.coefficient_priors, coefficients, strict=True)))


class _GaussianField:
    """Zero-mean Gaussian prior of the latent process over the full grid."""

    def __init__(self, panel: PanelData, params: KernelParams, jitter: float) -> None:
        cov = assemble(panel, params)
        self.solver: KroneckerSolver | None = None
        self.factor: FloatArray | None = None
        if cov.is_kronecker:
            self.solver = KroneckerSolver.from_cov(cov, shift=jitter)
        else:
            dense = cov.to_dense()
            self.factor, _ = cholesky_with_jitter(dense + jitter * np.eye(dense.shape[0]))

    def logpdf(self, f: FloatArray) -> float:
        if self.solver is not None:
            return self.solver.logpdf(f)
        if self.factor is None:
            msg = "Gaussian field has no factorisation"
            raise NumericalError(msg)
        half = scipy.linalg.solve_triangular(self.factor, f, lower=True)
        return float(-0.5 * (half @ half) - np.sum(np.log(np.diag(self.factor))) - 0.5 * f.size * np.log(2 * np.pi))

    def draw(self, rng: np.random.Generator) -> FloatArray:
        if self.solver is not None:
            return self.solver.sqrt_multiply(rng.standard_normal(self.solver.eigenvalues.size))
        if self.factor is None:
            msg = "Gaussian field has no factorisation"
            raise NumericalError(msg)
        return np.asarray(self.factor @ rng.standard_normal(self.factor.shape[0]))


@dataclass(eq=False)
class _ChainDraws:
    params: dict[str, FloatArray]
    coefficients: FloatArray
    counterfactual: FloatArray
    pretreatment: FloatArray | None
    phi: FloatArray | None


class _ChainSampler:
    """State and moves shared by the Normal and latent samplers."""

    def __init__(self, model: PanelModel, rng: np.random.Generator) -> None:
        self.model = model
        self.rng = rng
        self.values = model.initial_values()
        kernel = model.kernel
        self.phi: FloatArray | None = None
        if kernel.family == KernelFamily.ICM_RBF:
            if kernel.phi is not None:
                self.phi = np.array(kernel.phi, dtype=np.float64)
            else:
                self.phi = rng.standard_normal((model.panel.n_units, kernel.rank_j))
        self.coefficients = model.initial_coefficients()

    def log_hyper_likelihood(self, values: dict[str, float], phi: FloatArray | None) -> float:
        raise NotImplementedError

    def _safe_hyper_likelihood(self, values: dict[str, float], phi: FloatArray | None) -> float:
        try:
            return self.log_hyper_likelihood(values, phi)
        except (NumericalError, ConfigError) as exc:
            logger.debug("Rejected hyperparameters %s: %s", values, exc)
            return -np.inf

    def check_initial_state(self) -> None:
        """Raise if the starting point has non-finite log posterior."""
        total = self.log_hyper_likelihood(self.values, self.phi)
        total += sum(self.model.log_prior(name, self.values[name]) for name in self.model.free)
        total += self.model.coefficient_log_prior(self.coefficients)
        if not np.isfinite(total):
            msg = f"Non-finite log posterior at initialisation ({total}) with {self.values}"
            raise NumericalError(msg)

    def update_hyperparameters(self) -> None:
        current = self.log_hyper_likelihood(self.values, self.phi)
        for name in self.model.free:
            if name in POSITIVE_PARAMETERS or name == "sigma2":
                current = self._update_positive(name, current)
            else:
                current = self._update_bounded(name, current)
        if self.model.learn_phi and self.phi is not None:
            self._update_phi(current)

    def _update_positive(self, name: str, current: float) -> float:
        def target(z: float) -> float:
            x = float(np.exp(z))
            prior = self.model.log_prior(name, x)
            if not np.isfinite(prior):
                return -np.inf
            return self._safe_hyper_likelihood({**self.values, name: x}, self.phi) + prior + z

        z0 = float(np.log(self.values[name]))
        start = current + self.model.log_prior(name, self.values[name]) + z0
        z1, lp1 = slice_sample(target, z0, self.rng, width=1.0, log_density_x0=start)
        x1 = float(np.exp(z1))
        self.values[name] = x1
        return lp1 - self.model.log_prior(name, x1) - z1

    def _update_bounded(self, name: str, current: float) -> float:
        lo, hi = BOUNDED_PARAMETERS[name]

        def target(x: float) -> float:
            prior = self.model.log_prior(name, x)
            if not np.isfinite(prior):
                return -np.inf
            return self._safe_hyper_likelihood({**self.values, name: x}, self.phi) + prior

        start = current + self.model.log_prior(name, self.values[name])
        x1, lp1 = slice_sample(
            target, self.values[name], self.rng, width=0.25 * (hi - lo), lower=lo, upper=hi, log_density_x0=start
        )
        self.values[name] = x1
        return lp1 - self.model.log_prior(name, x1)

    def _update_phi(self, current: float) -> None:
        if self.phi is None:
            return
        shape = self.phi.shape

        def log_lik(flat: FloatArray) -> float:
            return self._safe_hyper_likelihood(self.values, flat.reshape(shape))

        flat, _ = elliptical_slice(
            self.phi.reshape(-1), log_lik, self.rng.standard_normal(self.phi.size), self.rng, current
        )
        self.phi = flat.reshape(shape)

    def step(self) -> None:
        raise NotImplementedError

    def record(self) -> tuple[FloatArray, FloatArray]:
        raise NotImplementedError

    def run(self, chain: int) -> _ChainDraws:
        """Run every iteration and keep the post burn-in draws."""
        sampler = self.model.sampler
        n_kept = sampler.n_kept
        params = {name: np.empty(n_kept) for name in self.model.param_names}
        coefficients = np.empty((n_kept, len(self.model.coefficient_names)))
        counterfactual = np.empty((n_kept, self.model.mis.size))
        pretreatment = np.empty((n_kept, self.model.pre.size)) if self.model.pre.size else None
        phi = np.empty((n_kept, *self.phi.shape)) if self.phi is not None else None
        self.check_initial_state()
        for iteration in range(sampler.iters):
            self.step()
            if (iteration + 1) % PROGRESS_EVERY == 0:
                logger.debug("Chain %d: iteration %d/%d %s", chain, iteration + 1, sampler.iters, self.values)
            k = iteration - sampler.burn_in
            if k < 0:
                continue
            y0, y0_pre = self.record()
            for name in self.model.param_names:
                params[name][k] = self.values[name]
            coefficients[k] = self.coefficients
            counterfactual[k] = y0
            if pretreatment is not None:
                pretreatment[k] = y0_pre
            if phi is not None and self.phi is not None:
                phi[k] = self.phi
        return _ChainDraws(params, coefficients, counterfactual, pretreatment, phi)


class NormalChain(_ChainSampler):
    """Sampler for Normal outcomes with the latent process marginalised."""

    def _obs_covariance(self, values: dict[str, float], phi: FloatArray | None) -> FloatArray:
        params = self.model.kernel_at(values, phi)
        cov = cross_covariance(self.model.panel, params, self.model.obs, self.model.obs)
        return cov + values["sigma2"] * np.eye(self.model.obs.size)

    def _residual(self) -> FloatArray:
        obs = self.model.obs
        return np.asarray(self.model.y[obs] - self.model.design[obs] @ self.coefficients)

    def log_hyper_likelihood(self, values: dict[str, float], phi: FloatArray | None) -> float:
        return mvn_logpdf(self._residual(), self._obs_covariance(values, phi))

    def update_coefficients(self) -> None:
        """Gibbs draw of the mean coefficients given the hyperparameters."""
        obs = self.model.obs
        design = self.model.design[obs]
        factor, _ = cholesky_with_jitter(self._obs_covariance(self.values, self.phi))
        whitened_design = scipy.linalg.cho_solve((factor, True), design)
        whitened_y = scipy.linalg.cho_solve((factor, True), self.model.y[obs])
        precision = design.T @ whitened_design
        shift = design.T @ whitened_y
        for k, prior in enumerate(self.model.coefficient_priors):
            if prior.kind == PriorKind.NORMAL:
                precision[k, k] += 1.0 / prior.b**2
                shift[k] += prior.a / prior.b**2
        root, _ = cholesky_with_jitter(precision)
        mean = scipy.linalg.cho_solve((root, True), shift)
        noise = scipy.linalg.solve_triangular(root.T, self.rng.standard_normal(mean.size), lower=False)
        self.coefficients = mean + noise

    def step(self) -> None:
        self.update_hyperparameters()
        self.update_coefficients()

    def _predict(self, given: IntArray, target: IntArray, cov: FloatArray) -> FloatArray:
        mean = self.model.design @ self.coefficients
        residual = self.model.y[given] - mean[given]
        post = condition_normal(
            residual,
            cov[np.ix_(given, given)],
            cov[np.ix_(target, given)],
            cov[np.ix_(target, target)],
            self.values["sigma2"],
        )
        return sample_predictive(post, 1, self.rng, add_noise=True)[0] + mean[target]

    def record(self) -> tuple[FloatArray, FloatArray]:
        params = self.model.kernel_at(self.values, self.phi)
        cov = assemble(self.model.panel, params).to_dense()
        y0 = self._predict(self.model.obs, self.model.mis, cov)
        y0_pre = self._predict(self.model.ctrl, self.model.pre, cov) if self.model.pre.size else np.zeros(0)
        return y0, y0_pre


class LatentChain(_ChainSampler):
    """Sampler for Poisson and Bernoulli outcomes with an explicit latent process."""

    def __init__(self, model: PanelModel, rng: np.random.Generator) -> None:
        super().__init__(model, rng)
        self.f = np.zeros(model.panel.n_units * model.panel.n_times)

    def _field(self, values: dict[str, float], phi: FloatArray | None) -> _GaussianField:
        return _GaussianField(self.model.panel, self.model.kernel_at(values, phi), self.model.sampler.latent_jitter)

    def log_hyper_likelihood(self, values: dict[str, float], phi: FloatArray | None) -> float:
        return self._field(values, phi).logpdf(self.f)

    def _obs_loglik(self, f: FloatArray, coefficients: FloatArray) -> float:
        obs = self.model.obs
        eta = self.model.design[obs] @ coefficients + f[obs]
        return outcome_logpdf(self.model.y[obs], eta, self.model.likelihood, self.model.log_offset[obs])

    def check_initial_state(self) -> None:
        super().check_initial_state()
        if not np.isfinite(self._obs_loglik(self.f, self.coefficients)):
            msg = "Non-finite outcome log likelihood at initialisation"
            raise NumericalError(msg)

    def update_latent(self) -> None:
        """Elliptical slice update of the latent process over every cell."""
        field = self._field(self.values, self.phi)
        self.f, _ = elliptical_slice(
            self.f, lambda f: self._obs_loglik(f, self.coefficients), field.draw(self.rng), self.rng
        )

    def update_coefficients(self) -> None:
        """Coordinate-wise slice updates of the mean coefficients."""
        for k, prior in enumerate(self.model.coefficient_priors):
            self.coefficients[k] = self._slice_coefficient(k, prior)

    def _slice_coefficient(self, k: int, prior: Prior) -> float:
        def target(value: float) -> float:
            trial = self.coefficients.copy()
            trial[k] = value
            return self._obs_loglik(self.f, trial) + prior.logpdf(value)

        value, _ = slice_sample(target, float(self.coefficients[k]), self.rng, width=0.5)
        return value

    def step(self) -> None:
        self.update_latent()
        self.update_hyperparameters()
        self.update_coefficients()

    def _outcomes(self, eta: FloatArray) -> FloatArray:
        mean = np.exp(eta) if self.model.likelihood.family == LikelihoodFamily.POISSON else expit(eta)
        if self.model.sampler.y0_scale == "mean":
            return np.asarray(mean)
        if self.model.likelihood.family == LikelihoodFamily.POISSON:
            return self.rng.poisson(mean).astype(np.float64)
        return self.rng.binomial(1, mean).astype(np.float64)

    def _eta(self, cells: IntArray, f: FloatArray) -> FloatArray:
        return np.asarray(self.model.design[cells] @ self.coefficients + f + self.model.log_offset[cells])

    def record(self) -> tuple[FloatArray, FloatArray]:
        y0 = self._outcomes(self._eta(self.model.mis, self.f[self.model.mis]))
        if not self.model.pre.size:
            return y0, np.zeros(0)
        params = self.model.kernel_at(self.values, self.phi)
        panel, ctrl, pre = self.model.panel, self.model.ctrl, self.model.pre
        post = condition_normal(
            self.f[ctrl],
            cross_covariance(panel, params, ctrl, ctrl),
            cross_covariance(panel, params, pre, ctrl),
            cross_covariance(panel, params, pre, pre),
            self.model.sampler.latent_jitter,
        )
        f_pre = sample_predictive(post, 1, self.rng, add_noise=True)[0]
        return y0, self._outcomes(self._eta(pre, f_pre))


@dataclass(frozen=True, eq=False)
class _ChainTask:
    panel: PanelData
    kernel: KernelParams
    likelihood: Likelihood
    priors: PriorSpec
    sampler: SamplerConfig
    chain: int
    seed: np.random.SeedSequence


def _run_chain(task: _ChainTask) -> _ChainDraws:
    model = PanelModel(task.panel, task.kernel, task.likelihood, task.priors, task.sampler)
    rng = np.random.default_rng(task.seed)
    chain_cls = NormalChain if model.is_normal else LatentChain
    draws = chain_cls(model, rng).run(task.chain)
    logger.info("Chain %d finished %d iterations", task.chain, task.sampler.iters)
    return draws


def run_mcmc(
    panel: PanelData,
    kernel: KernelParams | KernelFamily | str,
    likelihood: Likelihood,
    priors: PriorSpec,
    sampler: SamplerConfig | None = None,
    *,
    chains: int | None = None,
    iters: int | None = None,
    burn_in: int | None = None,
    seed: int | None = None,
    jobs: int = 1,
) -> ChainSet:
    """Sample the posterior of a GP panel model.

    Args:
        panel: Outcome panel.
        kernel: Kernel family, or parameters carrying fixed values and Φ.
        likelihood: Outcome family and initial noise variance.
        priors: Prior configuration.
        sampler: Run configuration; the keyword arguments override it.
        chains: Number of chains.
        iters: Iterations per chain, burn-in included.
        burn_in: Discarded iterations per chain.
        seed: Master seed; chain streams are spawned from it.
        jobs: Worker processes; results do not depend on it.

    Returns:
        Post burn-in draws merged in chain order.

    Raises:
        ConfigError: On an invalid run configuration.
        NumericalError: On factorisation failure or a non-finite start.
    """
    overrides = {
        key: value
        for key, value in {"chains": chains, "iters": iters, "burn_in": burn_in, "seed": seed}.items()
        if value is not None
    }
    base = sampler or SamplerConfig()
    if "iters" in overrides and "burn_in" not in overrides:
        overrides["burn_in"] = min(base.burn_in, overrides["iters"] // 2)
    config = replace(base, **overrides)
    if isinstance(kernel, KernelParams):
        template = kernel
    else:
        family = kernel if isinstance(kernel, KernelFamily) else KernelFamily.parse(kernel)
        template = KernelParams(family=family)
    PanelModel(panel, template, likelihood, priors, config)

    streams = np.random.SeedSequence(config.seed).spawn(config.chains)
    tasks = [
        _ChainTask(panel, template, likelihood, priors, config, chain, stream)
        for chain, stream in enumerate(streams)
    ]
    logger.info(
        "Sampling %s/%s: %d chains x %d iterations (%d burn-in)",
        template.family,
        likelihood.family,
        config.chains,
        config.iters,
        config.burn_in,
    )
    if jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.chains)) as pool:
            results = list(pool.map(_run_chain, tasks))
    else:
        results = [_run_chain(task) for task in tasks]

    model_names = results[0].params.keys()
    phi = np.stack([r.phi for r in results if r.phi is not None]) if results[0].phi is not None else None
    pre = (
        np.stack([r.pretreatment for r in results if r.pretreatment is not None])
        if results[0].pretreatment is not None
        else None
    )
    return ChainSet(
        kernel=template.family.value,
        likelihood=likelihood.family,
        n_chains=config.chains,
        n_iter=config.iters,
        burn_in=config.burn_in,
        seed=config.seed,
        params={name: np.stack([r.params[name] for r in results]) for name in model_names},
        coefficients=np.stack([r.coefficients for r in results]),
        coefficient_names=design_matrix(panel)[1],
        counterfactual=np.stack([r.counterfactual for r in results]),
        pretreatment=pre,
        phi=phi,
        y0_scale="outcome" if likelihood.family == LikelihoodFamily.NORMAL else config.y0_scale,
    )


def _split_chains(draws: FloatArray) -> FloatArray:
    half = draws.shape[1] // 2
    return np.concatenate([draws[:, :half], draws[:, draws.shape[1] - half :]], axis=0)


def _basic_rhat(draws: FloatArray) -> float:
    n = draws.shape[1]
    within = float(np.mean(np.var(draws, axis=1, ddof=1)))
    between = n * float(np.var(np.mean(draws, axis=1), ddof=1))
    if within == 0.0:
        return float("nan") if between == 0.0 else float("inf")
    return float(np.sqrt(((n - 1) / n * within + between / n) / within))


def _rank_normalise(draws: FloatArray) -> FloatArray:
    ranks = stats.rankdata(draws, method="average").reshape(draws.shape)
    return np.asarray(stats.norm.ppf((ranks - 0.375) / (draws.size + 0.25)))


def split_rhat(draws: FloatArray) -> float:
    """Rank-normalised split R-hat, the larger of its bulk and tail forms.

    Args:
        draws: Array of shape ``(chains, draws_per_chain)``.

    Returns:
        R-hat; ``inf`` when chains are internally constant but disagree and
        ``nan`` when every draw is identical.

    Raises:
        ConfigError: With fewer than 2 chains or 4 draws per chain.
    """
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim != 2 or draws.shape[0] < 2 or draws.shape[1] < 4:
        msg = f"R-hat needs at least 2 chains of 4 draws, got shape {draws.shape}"
        raise ConfigError(msg)
    split = _split_chains(draws)
    if np.all(split == split.flat[0]):
        return float("nan")
    bulk = _basic_rhat(_rank_normalise(split))
    tail = _basic_rhat(_rank_normalise(np.abs(split - np.median(split))))
    return float(np.nanmax([bulk, tail]))


def rhat(chains: ChainSet, quantity: str) -> float:
    """Rank-normalised split R-hat of a named quantity (see :meth:`ChainSet.quantity`)."""
    return split_rhat(chains.quantity(quantity))


def rhat_report(chains: ChainSet, threshold: float = RHAT_THRESHOLD) -> dict[str, Any]:
    """R-hat of every scalar parameter and the average over counterfactual cells.

    Quantities at or above ``threshold`` are flagged; constant quantities
    (fixed parameters) are skipped.
    """
    if chains.n_chains < 2 or chains.n_kept < 4:
        logger.warning("R-hat needs at least 2 chains of 4 kept draws; convergence not assessed")
        return {"threshold": threshold, "rhat": {}, "counterfactual_mean_rhat": None, "flagged": [], "converged": None}
    values: dict[str, float] = {}
    for name in (*chains.params, *chains.coefficient_names):
        value = rhat(chains, name)
        if not np.isnan(value):
            values[name] = value
    cf_values = [split_rhat(chains.counterfactual[:, :, k]) for k in range(chains.counterfactual.shape[2])]
    finite_cf = [v for v in cf_values if not np.isnan(v)]
    cf_mean = float(np.mean(finite_cf)) if finite_cf else None
    flagged = sorted(name for name, value in values.items() if value >= threshold)
    if cf_mean is not None and cf_mean >= threshold:
        flagged.append("counterfactual_mean")
    if flagged:
        logger.warning("R-hat at or above %.2f for: %s", threshold, ", ".join(flagged))
    return {
        "threshold": threshold,
        "rhat": values,
        "counterfactual_mean_rhat": cf_mean,
        "flagged": flagged,
        "converged": not flagged,
    }


def posterior_median(chains: ChainSet, name: str) -> float:
    """Posterior median of a scalar quantity over every chain."""
    return float(np.median(chains.pooled(name)))


def posterior_point(chains: ChainSet) -> KernelParams:
    """Posterior point estimate of the kernel.

    Scalar hyperparameters take their posterior medians. For ICM, Φ is only
    identified through ΦΦᵀ, so the estimate is the rank-J factor of the
    posterior mean of ΦΦᵀ.
    """
    family = KernelFamily.parse(chains.kernel)
    values = {name: posterior_median(chains, name) for name in chains.params if name != "sigma2"}
    if family != KernelFamily.ICM_RBF or chains.phi is None:
        return KernelParams(family=family, learn_phi=False, **values)
    rank_j = chains.phi.shape[-1]
    gram = np.einsum("cknj,ckmj->nm", chains.phi, chains.phi) / (chains.n_chains * chains.n_kept)
    eigenvalues, vectors = scipy.linalg.eigh(0.5 * (gram + gram.T))
    top = slice(gram.shape[0] - rank_j, None)
    phi = vectors[:, top] * np.sqrt(np.clip(eigenvalues[top], 0.0, None))
    return KernelParams(family=family, phi=phi, rank_j=rank_j, learn_phi=False, **values)


def counterfactual_trace(chains: ChainSet, panel: PanelData, period: int) -> FloatArray:
    """Treated-unit average counterfactual at one post-treatment period, per chain and draw.

    Raises:
        ConfigError: If ``period`` (1-based) precedes treatment or exceeds T.
    """
    if not panel.t_star <= period <= panel.n_times:
        msg = f"Trace period must lie in [{panel.t_star}, {panel.n_times}], got {period}"
        raise ConfigError(msg)
    _, time_index = partition(panel).cells("mis")
    return np.asarray(chains.counterfactual[:, :, time_index == period - 1].mean(axis=2))


def _named_series(chains: ChainSet) -> list[tuple[str, FloatArray]]:
    series = list(chains.params.items())
    series.extend((name, chains.coefficients[:, :, k]) for k, name in enumerate(chains.coefficient_names))
    series.extend((f"y0[{k}]", chains.counterfactual[:, :, k]) for k in range(chains.counterfactual.shape[2]))
    if chains.pretreatment is not None:
        series.extend((f"pre[{k}]", chains.pretreatment[:, :, k]) for k in range(chains.pretreatment.shape[2]))
    if chains.phi is not None:
        n_units, rank_j = chains.phi.shape[2:]
        series.extend(
            (f"phi[{i},{j}]", chains.phi[:, :, i, j]) for i in range(n_units) for j in range(rank_j)
        )
    return series


def chain_metadata(chains: ChainSet) -> dict[str, Any]:
    """Shapes and labels needed to rebuild a ChainSet from its CSV."""
    return {
        "kernel": chains.kernel,
        "likelihood": chains.likelihood.value,
        "n_chains": chains.n_chains,
        "n_iter": chains.n_iter,
        "burn_in": chains.burn_in,
        "seed": chains.seed,
        "param_names": list(chains.params),
        "coefficient_names": list(chains.coefficient_names),
        "n_mis": int(chains.counterfactual.shape[2]),
        "n_pre": None if chains.pretreatment is None else int(chains.pretreatment.shape[2]),
        "phi_shape": None if chains.phi is None else list(chains.phi.shape[2:]),
        "y0_scale": chains.y0_scale,
    }


def chains_frame(chains: ChainSet) -> pd.DataFrame:
    """Long frame with columns ``chain,iter,name,value``; ``iter`` is the 1-based iteration."""
    series = _named_series(chains)
    names = [name for name, _ in series]
    stacked = np.stack([values for _, values in series], axis=-1)
    chain_idx, kept_idx, name_idx = np.indices(stacked.shape).reshape(3, -1)
    return pd.DataFrame(
        {
            "chain": chain_idx,
            "iter": kept_idx + chains.burn_in + 1,
            "name": np.asarray(names, dtype=object)[name_idx],
            "value": stacked.reshape(-1),
        }
    )


def chains_from_frame(frame: pd.DataFrame, metadata: dict[str, Any]) -> ChainSet:
    """Rebuild a ChainSet from :func:`chains_frame` output and :func:`chain_metadata`.

    Raises:
        ConfigError: If the frame does not hold every expected draw.
    """
    missing = [c for c in CHAIN_COLUMNS if c not in frame.columns]
    if missing:
        msg = f"Chains table lacks column(s): {', '.join(missing)}"
        raise ConfigError(msg)
    n_chains, burn_in = int(metadata["n_chains"]), int(metadata["burn_in"])
    n_kept = int(metadata["n_iter"]) - burn_in
    lookup = {name: k for k, name in enumerate(frame["name"].unique())}
    values = np.full((n_chains, n_kept, len(lookup)), np.nan)
    name_idx = frame["name"].map(lookup).to_numpy()
    values[frame["chain"].to_numpy(), frame["iter"].to_numpy() - burn_in - 1, name_idx] = frame["value"].to_numpy()
    if np.isnan(values).any():
        msg = "Chains table is incomplete"
        raise ConfigError(msg)

    def take(names: list[str]) -> FloatArray:
        try:
            return values[:, :, [lookup[n] for n in names]]
        except KeyError as exc:
            msg = f"Chains table lacks draws of {exc.args[0]}"
            raise ConfigError(msg) from exc

    n_mis = int(metadata["n_mis"])
    n_pre = metadata.get("n_pre")
    phi_shape = metadata.get("phi_shape")
    phi = None
    if phi_shape:
        n_units, rank_j = phi_shape
        flat = take([f"phi[{i},{j}]" for i in range(n_units) for j in range(rank_j)])
        phi = flat.reshape(n_chains, n_kept, n_units, rank_j)
    return ChainSet(
        kernel=str(metadata["kernel"]),
        likelihood=LikelihoodFamily(metadata["likelihood"]),
        n_chains=n_chains,
        n_iter=int(metadata["n_iter"]),
        burn_in=burn_in,
        seed=int(metadata["seed"]),
        params={name: take([name])[:, :, 0] for name in metadata["param_names"]},
        coefficients=take(list(metadata["coefficient_names"])),
        coefficient_names=tuple(metadata["coefficient_names"]),
        counterfactual=take([f"y0[{k}]" for k in range(n_mis)]),
        pretreatment=None if n_pre is None else take([f"pre[{k}]" for k in range(int(n_pre))]),
        phi=phi,
        y0_scale=str(metadata.get("y0_scale", "outcome")),
    )

