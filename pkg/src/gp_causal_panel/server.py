"""FastMCP server exposing the results of GP causal panel runs."""

import json
import logging
from pathlib import Path

from fastmcp import FastMCP

from gp_causal_panel.artifacts import MANIFEST_NAME, ArtifactStore
from gp_causal_panel.errors import ConfigError
from gp_causal_panel.kernels import KernelParams, kernel_lag_value

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

# Initialise FastMCP server
mcp = FastMCP(name="gp-causal-panel")


def _missing(run_dir: str, name: str, command: str) -> str:
    return json.dumps(
        {
            "error": f"{name} not found in run directory: {run_dir}",
            "suggestion": f"Run 'gp-causal-panel {command} --fit {run_dir}' first.",
        }
    )


def _store(run_dir: str) -> ArtifactStore | None:
    root = Path(run_dir)
    return ArtifactStore(root) if root.is_dir() else None


def _summarise_att_impl(run_dir: str) -> str:
    """Core implementation of summarise_att.

    Args:
        run_dir: Directory holding ``att.json``.

    Returns:
        JSON with the overall ATT, the post-treatment per-period ATT and the
        pre-treatment fit, or an error payload.
    """
    store = _store(run_dir)
    if store is None or not store.exists("att.json"):
        return _missing(run_dir, "att.json", "att")
    payload = store.read_json("att.json")
    post = [block for block in payload["att_by_time"] if block["post"]]
    pre = payload.get("pretreatment")
    return json.dumps(
        {
            "run_dir": run_dir,
            "att": payload["att"],
            "rate_scale": payload["rate_scale"],
            "n_draws": payload["n_draws"],
            "post_treatment": post,
            "pretreatment": None if pre is None else {"rmse": pre["rmse"], "coverage": pre["coverage"]},
        },
        indent=2,
    )


def _separability_verdict_impl(run_dir: str) -> str:
    """Core implementation of separability_verdict.

    Args:
        run_dir: Directory holding ``verdict.json``.

    Returns:
        The verdict JSON, or an error payload.
    """
    store = _store(run_dir)
    if store is None or not store.exists("verdict.json"):
        return _missing(run_dir, "verdict.json", "diagnose")
    return json.dumps({"run_dir": run_dir, **store.read_json("verdict.json")}, indent=2)


def _read_manifest_impl(run_dir: str) -> str:
    """Core implementation of read_manifest.

    Args:
        run_dir: Run directory.

    Returns:
        The manifest with one entry per stage, or an error payload.
    """
    store = _store(run_dir)
    if store is None or not store.exists(MANIFEST_NAME):
        return json.dumps(
            {
                "error": f"{MANIFEST_NAME} not found in run directory: {run_dir}",
                "suggestion": "Pass a directory written by 'gp-causal-panel fit', 'simulate' or 'study'.",
            }
        )
    return json.dumps(store.read_json(MANIFEST_NAME), indent=2)


def _evaluate_kernel_impl(kernel_json: str, spatial_lag: float, temporal_lag: float) -> str:
    """Core implementation of evaluate_kernel.

    Args:
        kernel_json: JSON kernel block.
        spatial_lag: Distance between units.
        temporal_lag: Difference between periods.

    Returns:
        JSON with the kernel value, or an error payload.
    """
    try:
        params = KernelParams.from_dict(json.loads(kernel_json))
        value = float(kernel_lag_value(params, spatial_lag, temporal_lag))
    except json.JSONDecodeError as exc:
        return json.dumps({"error": f"Invalid JSON: {exc}", "suggestion": 'Pass a block like {"kernel": "gneiting"}.'})
    except ConfigError as exc:
        return json.dumps(
            {
                "error": str(exc),
                "suggestion": "Use rbf_rbf or gneiting with valid parameters; icm_rbf has no spatial lag.",
            }
        )
    return json.dumps(
        {"kernel": params.to_dict(), "spatial_lag": spatial_lag, "temporal_lag": temporal_lag, "value": value},
        indent=2,
    )


@mcp.tool()
def summarise_att(run_dir: str) -> str:
    """Summarise the average treatment effect on the treated of a fitted run.

    Args:
        run_dir: Run directory after 'gp-causal-panel att' has written att.json.

    Returns:
        JSON-formatted overall ATT (median and 95% interval), post-treatment
        ATT per period and the pre-treatment fit.
    """
    return _summarise_att_impl(run_dir)


@mcp.tool()
def separability_verdict(run_dir: str) -> str:
    """Report whether a Gneiting fit supports a separable space-time kernel.

    Args:
        run_dir: Run directory after 'gp-causal-panel diagnose' has written
                 verdict.json.

    Returns:
        JSON-formatted verdict ("near-separable" or "non-separable"), the
        eta posterior summary and any convergence warnings.
    """
    return _separability_verdict_impl(run_dir)


@mcp.tool()
def read_manifest(run_dir: str) -> str:
    """Read the manifest recording how a run directory was produced.

    Args:
        run_dir: Run directory.

    Returns:
        JSON-formatted manifest: per stage the command, configuration and its
        hash, seed, package versions and artifacts.
    """
    return _read_manifest_impl(run_dir)


@mcp.tool()
def evaluate_kernel(kernel_json: str, spatial_lag: float, temporal_lag: float) -> str:
    """Evaluate a stationary space-time kernel at one pair of lags.

    Args:
        kernel_json: JSON kernel block, e.g. '{"kernel": "gneiting", "tau2": 1,
                     "l_s": 0.125, "l_t": 0.57, "alpha": 1, "gamma": 1,
                     "eta": 0.5}'.
        spatial_lag: Distance between the two units.
        temporal_lag: Difference between the two time points.

    Returns:
        JSON-formatted kernel value.
    """
    return _evaluate_kernel_impl(kernel_json, spatial_lag, temporal_lag)


def run_server() -> None:
    """Run the MCP server with STDIO transport."""
    mcp.run(transport="stdio")


if __name__ == "__main__":
    run_server()
