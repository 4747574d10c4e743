"""Tests for prior distributions and prior presets."""

import numpy as np
import pytest
from scipy import stats

from gp_causal_panel.errors import ConfigError
from gp_causal_panel.kernels import KernelFamily, KernelParams
from gp_causal_panel.priors import (
    FLAT,
    Prior,
    PriorKind,
    PriorSpec,
    application_priors,
    inverse_gamma,
    log_prior,
    normal,
    preset_priors,
    sample_kernel_params,
    simulation_priors,
)


def test_inverse_gamma_logpdf() -> None:
    """Test the IG(5, 5) density against a hand-computed value."""
    assert inverse_gamma(5.0, 5.0).logpdf(1.0) == pytest.approx(-0.1312, abs=1e-4)


def test_scale_priors_truncated_at_zero() -> None:
    """Test scale parameters have no mass below zero."""
    spec = simulation_priors()

    assert spec.prior("tau2").logpdf(-1.0) == float("-inf")
    assert spec.prior("sigma2").lower == 0.0


def test_eta_prior_is_truncated_normal() -> None:
    """Test the η prior is renormalised to [0, 1]."""
    prior = simulation_priors().prior("eta")

    expected = stats.truncnorm(-5.0, 5.0, loc=0.5, scale=0.1).logpdf(0.6)
    assert prior.logpdf(0.6) == pytest.approx(expected)
    assert prior.logpdf(1.2) == float("-inf")


def test_application_length_scale_median() -> None:
    """Test a wide normal truncated at zero keeps its median near the mean."""
    prior = application_priors(KernelFamily.GNEITING).prior("l_s")

    median = prior.median()

    assert median is not None
    assert 290.0 < median < 310.0


def test_application_icm_uses_inverse_gamma_variance() -> None:
    """Test the ICM application preset puts an inverse-gamma prior on τ²."""
    assert application_priors(KernelFamily.ICM_RBF).prior("tau2").kind == PriorKind.INVERSE_GAMMA
    assert application_priors(KernelFamily.RBF_RBF).prior("tau2").kind == PriorKind.NORMAL


def test_application_unit_effect_priors() -> None:
    """Test unit effects are flat by default and standard normal for ICM with the normal-effects preset."""
    assert application_priors(KernelFamily.ICM_RBF).prior("delta[0]").kind == PriorKind.FLAT

    shrunk = PriorSpec.from_dict({"preset": "application-normal-effects"}, KernelFamily.ICM_RBF)

    assert shrunk.name == "application-normal-effects"
    assert shrunk.prior("delta[3]").logpdf(0.5) == pytest.approx(stats.norm.logpdf(0.5))
    assert shrunk.prior("l_s") == application_priors(KernelFamily.ICM_RBF).prior("l_s")
    assert PriorSpec.from_dict(shrunk.to_dict(), KernelFamily.ICM_RBF).prior("delta").kind == PriorKind.NORMAL
    gneiting = preset_priors("application-normal-effects", KernelFamily.GNEITING)
    assert gneiting.prior("delta").kind == PriorKind.FLAT


def test_coefficients_default_to_flat() -> None:
    """Test indexed coefficients fall back to a flat prior."""
    spec = simulation_priors()

    assert spec.prior("beta[2]").kind == PriorKind.FLAT
    assert spec.prior("delta[0]").logpdf(123.0) == 0.0


def test_missing_kernel_prior() -> None:
    """Test an empty custom spec has no kernel priors."""
    with pytest.raises(ConfigError, match="No prior configured for tau2"):
        PriorSpec().prior("tau2")


def test_flat_prior_cannot_be_sampled() -> None:
    """Test sampling an improper prior fails."""
    with pytest.raises(ConfigError, match="A flat prior cannot be sampled"):
        FLAT.sample(np.random.default_rng(0))


def test_invalid_prior_parameters() -> None:
    """Test non-positive shape parameters are rejected."""
    with pytest.raises(ConfigError, match="Invalid inverse_gamma prior"):
        inverse_gamma(0.0, 1.0)


def test_prior_spec_from_dict() -> None:
    """Test a preset with a per-parameter override."""
    spec = PriorSpec.from_dict({"preset": "application", "l_s": {"dist": "normal", "m": 1.0, "s": 0.5}})

    assert spec.name == "application"
    assert spec.prior("l_s") == normal(1.0, 0.5).truncated(0.0, float("inf"))
    assert spec.to_dict()["l_s"] == {"dist": "normal", "m": 1.0, "s": 0.5}


@pytest.mark.parametrize(
    ("block", "match"),
    [
        ({"preset": "bayesian"}, "Unknown prior preset"),
        ({"tau2": {"dist": "gamma", "a": 1, "b": 1}}, "Unknown prior distribution"),
        ({"eta": {"dist": "normal", "m": 0.5}}, "normal prior needs s"),
        ({"kappa": {"dist": "flat"}}, "Priors given for unknown parameters: kappa"),
    ],
)
def test_prior_spec_from_dict_errors(block: dict[str, object], match: str) -> None:
    """Test malformed prior blocks."""
    with pytest.raises(ConfigError, match=match):
        PriorSpec.from_dict(block)


def test_preset_priors_custom_is_empty() -> None:
    """Test the custom preset starts without priors."""
    assert preset_priors("custom").priors == {}


def test_log_prior_sums_components() -> None:
    """Test the joint log prior is the sum of the marginal terms."""
    spec = simulation_priors()
    params = KernelParams(family=KernelFamily.RBF_RBF, tau2=1.2, l_s=0.8, l_t=0.9)

    value = log_prior(params, spec, sigma2=0.5, mu0=3.0, beta=np.array([0.1, -0.2]))

    ig = stats.invgamma(5.0, scale=5.0)
    assert value == pytest.approx(ig.logpdf(1.2) + ig.logpdf(0.8) + ig.logpdf(0.9) + ig.logpdf(0.5))
    assert log_prior(params, spec, sigma2=-1.0) == float("-inf")


def test_log_prior_icm_factor_term() -> None:
    """Test learned ICM factors carry a standard normal prior."""
    phi = np.array([[0.5, -1.0], [0.0, 2.0], [1.0, 1.0]])
    params = KernelParams(family=KernelFamily.ICM_RBF, l_t=1.0, phi=phi, rank_j=2)

    value = log_prior(params, simulation_priors())

    expected = stats.invgamma(5.0, scale=5.0).logpdf(1.0) + np.sum(stats.norm.logpdf(phi))
    assert value == pytest.approx(expected)


def test_sample_kernel_params() -> None:
    """Test prior draws are valid parameters for each family."""
    rng = np.random.default_rng(5)
    spec = simulation_priors()

    gneiting = sample_kernel_params(KernelFamily.GNEITING, spec, rng)
    icm = sample_kernel_params(KernelFamily.ICM_RBF, spec, rng, n_units=4, rank_j=2)

    assert 0.0 <= gneiting.eta <= 1.0
    assert gneiting.tau2 > 0.0
    assert icm.phi is not None
    assert icm.phi.shape == (4, 2)


def test_prior_round_trip_block() -> None:
    """Test a uniform prior block parses to the expected interval."""
    prior = Prior.from_dict({"dist": "uniform", "lo": 0.0, "hi": 2.0})

    assert prior.kind == PriorKind.UNIFORM
    assert prior.logpdf(1.0) == pytest.approx(np.log(0.5))
