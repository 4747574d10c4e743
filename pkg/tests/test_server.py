"""Tests for the MCP server tools over run directories."""

import json
from pathlib import Path

import pytest

from gp_causal_panel.artifacts import ArtifactStore
from gp_causal_panel.server import (
    _evaluate_kernel_impl,
    _read_manifest_impl,
    _separability_verdict_impl,
    _summarise_att_impl,
)


@pytest.fixture
def run_dir(tmp_path: Path) -> Path:
    """Create a run directory holding ATT, verdict and manifest artifacts.

    Args:
        tmp_path: Pytest temporary directory fixture.

    Returns:
        Path to the run directory.
    """
    store = ArtifactStore(tmp_path / "run")
    interval = {"median": 1.5, "lo": 0.5, "hi": 2.5}
    store.write_json(
        "att.json",
        {
            "att": interval,
            "att_by_time": [
                {"period": 1, "time": 1.0, "post": False, **interval},
                {"period": 2, "time": 2.0, "post": True, **interval},
            ],
            "rate_scale": False,
            "n_draws": 40,
            "pretreatment": {"rmse": 0.3, "coverage": 0.9, "n_cells": 2, "by_time": []},
        },
    )
    store.write_json(
        "verdict.json",
        {"verdict": "non-separable", "threshold": 0.05, "eta": {"median": 0.4, "lo": 0.2, "hi": 0.7}},
    )
    store.write_manifest("att", {"rate_scale": False}, seed=7)
    return store.root


def test_summarise_att(run_dir: Path) -> None:
    """Test the ATT summary keeps only post-treatment periods."""
    result = json.loads(_summarise_att_impl(str(run_dir)))

    assert result["att"] == {"median": 1.5, "lo": 0.5, "hi": 2.5}
    assert [block["period"] for block in result["post_treatment"]] == [2]
    assert result["pretreatment"] == {"rmse": 0.3, "coverage": 0.9}
    assert result["n_draws"] == 40


def test_summarise_att_without_pretreatment(tmp_path: Path) -> None:
    """Test runs without stored pre-treatment draws report none."""
    store = ArtifactStore(tmp_path)
    store.write_json(
        "att.json", {"att": {}, "att_by_time": [], "rate_scale": True, "n_draws": 1, "pretreatment": None}
    )

    result = json.loads(_summarise_att_impl(str(tmp_path)))

    assert result["pretreatment"] is None
    assert result["rate_scale"] is True


def test_summarise_att_missing(tmp_path: Path) -> None:
    """Test a directory without att.json yields an error with a suggestion."""
    result = json.loads(_summarise_att_impl(str(tmp_path / "nowhere")))

    assert "att.json not found" in result["error"]
    assert "gp-causal-panel att" in result["suggestion"]


def test_separability_verdict(run_dir: Path) -> None:
    """Test the verdict is returned with its run directory."""
    result = json.loads(_separability_verdict_impl(str(run_dir)))

    assert result["verdict"] == "non-separable"
    assert result["run_dir"] == str(run_dir)


def test_separability_verdict_missing(tmp_path: Path) -> None:
    """Test a missing verdict points at the diagnose command."""
    result = json.loads(_separability_verdict_impl(str(tmp_path)))

    assert "verdict.json not found" in result["error"]
    assert "diagnose" in result["suggestion"]


def test_read_manifest(run_dir: Path) -> None:
    """Test the manifest lists each stage."""
    result = json.loads(_read_manifest_impl(str(run_dir)))

    assert result["runs"][0]["command"] == "att"
    assert result["runs"][0]["seed"] == 7


def test_read_manifest_missing(tmp_path: Path) -> None:
    """Test a directory without a manifest is reported."""
    result = json.loads(_read_manifest_impl(str(tmp_path)))

    assert "manifest.json not found" in result["error"]


def test_evaluate_kernel_gneiting_origin() -> None:
    """Test the Gneiting kernel equals τ² at zero lag."""
    block = json.dumps({"kernel": "gneiting", "tau2": 2.0, "l_s": 0.125, "l_t": 0.57, "eta": 0.5})

    result = json.loads(_evaluate_kernel_impl(block, 0.0, 0.0))

    assert result["value"] == pytest.approx(2.0)
    assert result["kernel"]["kernel"] == "gneiting"


def test_evaluate_kernel_rbf() -> None:
    """Test the RBF kernel factorises over the two lags."""
    block = json.dumps({"kernel": "rbf", "tau2": 1.0, "l_s": 0.3, "l_t": 0.9})

    result = json.loads(_evaluate_kernel_impl(block, 1.0, 1.0))

    assert result["value"] == pytest.approx(0.00387 * 0.5394, rel=1e-2)


def test_evaluate_kernel_invalid_json() -> None:
    """Test malformed input yields an error payload."""
    result = json.loads(_evaluate_kernel_impl("{kernel", 0.0, 0.0))

    assert result["error"].startswith("Invalid JSON")


def test_evaluate_kernel_icm() -> None:
    """Test the ICM kernel has no lag form."""
    result = json.loads(_evaluate_kernel_impl('{"kernel": "icm"}', 1.0, 0.0))

    assert "not a function of spatial lag" in result["error"]
    assert "icm_rbf" in result["suggestion"]
