"""Tests for posterior sampling, chain export and R-hat diagnostics."""

from collections.abc import Callable

import numpy as np
import pytest

from gp_causal_panel.config import SamplerConfig
from gp_causal_panel.errors import ConfigError, LikelihoodError
from gp_causal_panel.kernels import KernelFamily, KernelParams
from gp_causal_panel.mcmc import (
    chain_metadata,
    chains_frame,
    chains_from_frame,
    counterfactual_trace,
    posterior_median,
    posterior_point,
    rhat_report,
    run_mcmc,
    split_rhat,
)
from gp_causal_panel.models import ChainSet, Likelihood, LikelihoodFamily
from gp_causal_panel.panel import PanelData
from gp_causal_panel.priors import application_priors, inverse_gamma, simulation_priors

NORMAL = Likelihood(LikelihoodFamily.NORMAL, sigma2=0.5)
POISSON = Likelihood(LikelihoodFamily.POISSON)


def _chain_set(seed: int = 0, n_chains: int = 2, n_kept: int = 300, spread: float = 0.0) -> ChainSet:
    rng = np.random.default_rng(seed)
    tau2 = rng.normal(1.0, 0.1, size=(n_chains, n_kept)) + spread * np.arange(n_chains)[:, None]
    return ChainSet(
        kernel="rbf_rbf",
        likelihood=LikelihoodFamily.NORMAL,
        n_chains=n_chains,
        n_iter=n_kept + 10,
        burn_in=10,
        seed=seed,
        params={"tau2": tau2, "l_s": np.full((n_chains, n_kept), 0.5)},
        coefficients=rng.normal(size=(n_chains, n_kept, 1)),
        coefficient_names=("mu0",),
        counterfactual=rng.normal(size=(n_chains, n_kept, 2)),
    )


@pytest.fixture
def normal_chains(small_panel: PanelData) -> ChainSet:
    """Run two short chains of an RBF model on the small panel.

    Args:
        small_panel: Shared 4×5 panel.

    Returns:
        ChainSet with 10 kept draws per chain.
    """
    return run_mcmc(
        small_panel, "rbf", NORMAL, simulation_priors(), chains=2, iters=20, burn_in=10, seed=1
    )


def test_run_mcmc_normal_shapes(normal_chains: ChainSet) -> None:
    """Test kept draws are laid out per chain and per missing cell."""
    assert normal_chains.n_kept == 10
    assert set(normal_chains.params) == {"tau2", "l_s", "l_t", "sigma2"}
    assert normal_chains.coefficient_names == ("mu0",)
    assert normal_chains.counterfactual.shape == (2, 10, 2)
    assert normal_chains.pretreatment is not None
    assert normal_chains.pretreatment.shape == (2, 10, 3)
    assert np.all(normal_chains.params["sigma2"] > 0.0)
    assert np.all(np.isfinite(normal_chains.counterfactual))


def test_run_mcmc_is_reproducible(small_panel: PanelData, normal_chains: ChainSet) -> None:
    """Test the master seed fixes every draw, with or without worker processes."""
    again = run_mcmc(small_panel, "rbf", NORMAL, simulation_priors(), chains=2, iters=20, burn_in=10, seed=1, jobs=2)

    np.testing.assert_array_equal(again.counterfactual, normal_chains.counterfactual)
    np.testing.assert_array_equal(again.params["tau2"], normal_chains.params["tau2"])


def test_run_mcmc_fixed_parameter(small_panel: PanelData) -> None:
    """Test a fixed hyperparameter keeps its configured value."""
    kernel = KernelParams(family=KernelFamily.RBF_RBF, l_s=0.4)
    sampler = SamplerConfig(chains=1, iters=6, burn_in=2, seed=3, fixed=("l_s",))

    chains = run_mcmc(small_panel, kernel, NORMAL, simulation_priors(), sampler)

    np.testing.assert_array_equal(chains.params["l_s"], np.full((1, 4), 0.4))


def test_run_mcmc_poisson_icm(make_panel: Callable[..., PanelData]) -> None:
    """Test the latent sampler on counts with learned ICM factors."""
    panel = make_panel(counts=True, offset=True)
    kernel = KernelParams(family=KernelFamily.ICM_RBF, rank_j=2)

    chains = run_mcmc(panel, kernel, POISSON, simulation_priors(), chains=1, iters=8, burn_in=4, seed=2)

    assert chains.phi is not None
    assert chains.phi.shape == (1, 4, 4, 2)
    assert chains.y0_scale == "count"
    y0 = chains.counterfactual
    assert np.all(y0 >= 0.0)
    np.testing.assert_array_equal(y0, np.round(y0))


def test_run_mcmc_rejects_fractional_counts(small_panel: PanelData) -> None:
    """Test Normal outcomes cannot be fitted with a Poisson likelihood."""
    with pytest.raises(LikelihoodError, match="non-negative integers"):
        run_mcmc(small_panel, "gneiting", POISSON, simulation_priors(), chains=1, iters=4, burn_in=2)


def test_run_mcmc_configuration_errors(make_panel: Callable[..., PanelData], small_panel: PanelData) -> None:
    """Test model configurations that cannot be sampled."""
    with pytest.raises(ConfigError, match="Cannot fix parameters absent"):
        run_mcmc(small_panel, "rbf", NORMAL, simulation_priors(), SamplerConfig(iters=4, burn_in=2, fixed=("eta",)))
    with pytest.raises(ConfigError, match="rank_j must be below"):
        run_mcmc(small_panel, KernelParams(family=KernelFamily.ICM_RBF, rank_j=4), NORMAL, simulation_priors())
    with pytest.raises(ConfigError, match="needs a normal or flat prior"):
        priors = simulation_priors().with_overrides({"mu0": inverse_gamma(2.0, 1.0)})
        run_mcmc(small_panel, "rbf", NORMAL, priors)
    panel = make_panel(counts=True, t_star=1, unit_fixed_effects=True)
    with pytest.raises(ConfigError, match="need pre-treatment periods"):
        run_mcmc(panel, "gneiting", POISSON, application_priors(KernelFamily.GNEITING))


def test_split_rhat_mixed_chains() -> None:
    """Test independent draws from one distribution give R-hat near 1."""
    draws = np.random.default_rng(0).normal(size=(4, 500))
    assert split_rhat(draws) < 1.02


def test_split_rhat_disagreeing_chains() -> None:
    """Test chains centred apart are flagged."""
    draws = np.random.default_rng(1).normal(size=(4, 500)) + np.array([0.0, 0.0, 0.0, 3.0])[:, None]
    assert split_rhat(draws) > 1.1


def test_split_rhat_degenerate_inputs() -> None:
    """Test constant draws and too-short inputs."""
    assert np.isnan(split_rhat(np.ones((2, 10))))
    assert split_rhat(np.array([[1.0] * 10, [2.0] * 10])) == float("inf")
    with pytest.raises(ConfigError, match="at least 2 chains of 4 draws"):
        split_rhat(np.ones((1, 10)))


def test_rhat_report_flags_disagreement() -> None:
    """Test the report flags a drifting parameter and skips constant ones."""
    report = rhat_report(_chain_set(spread=1.0))

    assert "tau2" in report["flagged"]
    assert "l_s" not in report["rhat"]
    assert report["converged"] is False


def test_rhat_report_converged() -> None:
    """Test well-mixed chains pass."""
    report = rhat_report(_chain_set(seed=4))

    assert report["converged"] is True
    assert report["counterfactual_mean_rhat"] < 1.05


def test_rhat_report_single_chain() -> None:
    """Test one chain leaves convergence unassessed."""
    report = rhat_report(_chain_set(n_chains=1))

    assert report["converged"] is None
    assert report["rhat"] == {}


def test_posterior_point_rbf() -> None:
    """Test scalar hyperparameters take their posterior medians."""
    chains = _chain_set()

    point = posterior_point(chains)

    assert point.family == KernelFamily.RBF_RBF
    assert point.tau2 == pytest.approx(posterior_median(chains, "tau2"))
    assert point.l_s == 0.5


def test_posterior_point_icm_recovers_gram() -> None:
    """Test the ICM point estimate reproduces ΦΦᵀ when every draw agrees."""
    phi0 = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 2.0], [-1.0, 0.3]])
    base = _chain_set(n_kept=5)
    chains = ChainSet(
        kernel="icm_rbf",
        likelihood=LikelihoodFamily.NORMAL,
        n_chains=2,
        n_iter=15,
        burn_in=10,
        seed=0,
        params={"l_t": np.full((2, 5), 0.9)},
        coefficients=base.coefficients,
        coefficient_names=("mu0",),
        counterfactual=base.counterfactual,
        phi=np.broadcast_to(phi0, (2, 5, 4, 2)).copy(),
    )

    point = posterior_point(chains)

    assert point.phi is not None
    np.testing.assert_allclose(point.phi @ point.phi.T, phi0 @ phi0.T, atol=1e-10)
    assert point.l_t == 0.9
    assert not point.learn_phi


def test_counterfactual_trace(small_panel: PanelData) -> None:
    """Test the trace averages treated cells of one post-treatment period."""
    chains = _chain_set()

    trace = counterfactual_trace(chains, small_panel, 5)

    np.testing.assert_array_equal(trace, chains.counterfactual[:, :, 1])
    with pytest.raises(ConfigError, match="Trace period must lie in"):
        counterfactual_trace(chains, small_panel, 3)


def test_chains_frame_round_trip(normal_chains: ChainSet) -> None:
    """Test the long chains table restores every draw."""
    frame = chains_frame(normal_chains)

    restored = chains_from_frame(frame, chain_metadata(normal_chains))

    assert list(frame.columns) == ["chain", "iter", "name", "value"]
    assert frame["iter"].min() == 11
    np.testing.assert_array_equal(restored.counterfactual, normal_chains.counterfactual)
    np.testing.assert_array_equal(restored.params["sigma2"], normal_chains.params["sigma2"])
    assert restored.pretreatment is not None
    assert restored.coefficient_names == ("mu0",)


def test_chains_from_frame_errors(normal_chains: ChainSet) -> None:
    """Test incomplete chain tables are refused."""
    frame = chains_frame(normal_chains)
    metadata = chain_metadata(normal_chains)

    with pytest.raises(ConfigError, match="incomplete"):
        chains_from_frame(frame.iloc[1:], metadata)
    with pytest.raises(ConfigError, match="lacks column"):
        chains_from_frame(frame.drop(columns="value"), metadata)
