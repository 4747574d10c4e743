"""Gradient-free MCMC moves: stepping-out slice sampling and elliptical slice sampling."""

import logging
from collections.abc import Callable

import numpy as np

from gp_causal_panel.errors import NumericalError
from gp_causal_panel.models import FloatArray

logger = logging.getLogger(__name__)

MAX_SHRINKS = 200


def slice_sample(
    log_density: Callable[[float], float],
    x0: float,
    rng: np.random.Generator,
    *,
    width: float = 1.0,
    max_steps_out: int = 32,
    lower: float = -np.inf,
    upper: float = np.inf,
    log_density_x0: float | None = None,
) -> tuple[float, float]:
    """One univariate slice-sampling update with stepping out and shrinkage.

    Args:
        log_density: Unnormalised log density.
        x0: Current state, inside ``[lower, upper]``.
        rng: Random stream.
        width: Initial bracket width and stepping-out increment.
        max_steps_out: Total stepping-out budget shared by both ends.
        lower: Lower bound of the support.
        upper: Upper bound of the support.
        log_density_x0: Cached ``log_density(x0)``.

    Returns:
        The new state and its log density.

    Raises:
        NumericalError: If the current state has non-finite density.
    """
    lp0 = log_density(x0) if log_density_x0 is None else log_density_x0
    if not np.isfinite(lp0):
        msg = f"Slice sampler started at a point with log density {lp0}"
        raise NumericalError(msg)
    level = lp0 - rng.exponential()

    left = x0 - width * rng.uniform()
    right = left + width
    steps_left = int(np.floor(max_steps_out * rng.uniform()))
    steps_right = max_steps_out - 1 - steps_left
    while steps_left > 0 and left > lower and log_density(left) > level:
        left -= width
        steps_left -= 1
    while steps_right > 0 and right < upper and log_density(right) > level:
        right += width
        steps_right -= 1
    left, right = max(left, lower), min(right, upper)

    for _ in range(MAX_SHRINKS):
        x1 = rng.uniform(left, right)
        lp1 = log_density(x1)
        if lp1 > level:
            return float(x1), float(lp1)
        if x1 < x0:
            left = x1
        else:
            right = x1
    logger.debug("Slice sampler shrank %d times without acceptance; keeping %.6g", MAX_SHRINKS, x0)
    return float(x0), float(lp0)


def elliptical_slice(
    f: FloatArray,
    log_likelihood: Callable[[FloatArray], float],
    prior_draw: FloatArray,
    rng: np.random.Generator,
    log_likelihood_f: float | None = None,
) -> tuple[FloatArray, float]:
    """One elliptical slice-sampling update for a zero-mean Gaussian prior.

    Args:
        f: Current state.
        log_likelihood: Log likelihood of a state.
        prior_draw: Fresh draw from the Gaussian prior of ``f``.
        rng: Random stream.
        log_likelihood_f: Cached ``log_likelihood(f)``.

    Returns:
        The new state and its log likelihood.

    Raises:
        NumericalError: If the current state has non-finite likelihood.
    """
    current = log_likelihood(f) if log_likelihood_f is None else log_likelihood_f
    if not np.isfinite(current):
        msg = f"Elliptical slice sampler started at a state with log likelihood {current}"
        raise NumericalError(msg)
    level = current - rng.exponential()

    angle = rng.uniform(0.0, 2.0 * np.pi)
    lo, hi = angle - 2.0 * np.pi, angle
    for _ in range(MAX_SHRINKS):
        proposal = f * np.cos(angle) + prior_draw * np.sin(angle)
        value = log_likelihood(proposal)
        if value > level:
            return proposal, float(value)
        if angle < 0.0:
            lo = angle
        else:
            hi = angle
        angle = rng.uniform(lo, hi)
    logger.debug("Elliptical slice bracket collapsed; keeping the current state")
    return f, float(current)
