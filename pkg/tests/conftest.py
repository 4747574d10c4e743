"""Shared fixtures: small panels that keep dense algebra and short chains fast."""

from collections.abc import Callable

import numpy as np
import pytest

from gp_causal_panel.panel import PanelData

PanelFactory = Callable[..., PanelData]


def build_panel(
    n_units: int = 4,
    n_times: int = 5,
    treated: tuple[int, ...] = (0,),
    t_star: int = 4,
    seed: int = 0,
    offset: bool = False,
    counts: bool = False,
    unit_fixed_effects: bool = False,
) -> PanelData:
    """Build a random panel with units on the unit square.

    Args:
        n_units: Number of units.
        n_times: Number of periods.
        treated: Indices of treated units.
        t_star: First treated period (1-based).
        seed: Seed for outcomes and coordinates.
        offset: Attach positive exposures.
        counts: Draw Poisson counts instead of Normal outcomes.
        unit_fixed_effects: Use unit dummies instead of an intercept.

    Returns:
        A validated panel.
    """
    rng = np.random.default_rng(seed)
    treated_unit = np.zeros(n_units, dtype=bool)
    treated_unit[list(treated)] = True
    coords = rng.uniform(size=(n_units, 2))
    y = rng.poisson(5.0, size=(n_units, n_times)).astype(float) if counts else rng.normal(size=(n_units, n_times))
    return PanelData(
        y=y,
        treated_unit=treated_unit,
        t_star=t_star,
        coords=coords,
        offset=rng.uniform(1000.0, 2000.0, size=(n_units, n_times)) if offset else None,
        unit_fixed_effects=unit_fixed_effects,
    )


@pytest.fixture
def make_panel() -> PanelFactory:
    """Provide the panel factory.

    Returns:
        Callable building small random panels.
    """
    return build_panel


@pytest.fixture
def small_panel() -> PanelData:
    """Create a 4-unit, 5-period Normal panel with unit 0 treated from period 4.

    Returns:
        PanelData instance.
    """
    return build_panel()
