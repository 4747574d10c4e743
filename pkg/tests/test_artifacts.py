"""Tests for the run directory artifact store."""

import json
from pathlib import Path

import pandas as pd
import pytest

from gp_causal_panel.artifacts import (
    CELL_ORDER,
    MANIFEST_NAME,
    VERSIONED_PACKAGES,
    ArtifactStore,
    atomic_write,
    config_hash,
    package_versions,
)


@pytest.fixture
def store(tmp_path: Path) -> ArtifactStore:
    """Create a store over a fresh run directory.

    Args:
        tmp_path: Pytest temporary directory fixture.

    Returns:
        ArtifactStore instance.
    """
    return ArtifactStore(tmp_path / "run")


def test_atomic_write_replaces_on_success(tmp_path: Path) -> None:
    """Test the destination appears only once the block completes."""
    target = tmp_path / "out" / "a.txt"

    with atomic_write(target) as handle:
        handle.write("hello")
        assert not target.exists()

    assert target.read_text() == "hello"
    assert list(target.parent.iterdir()) == [target]


def test_atomic_write_cleans_up_on_error(tmp_path: Path) -> None:
    """Test a failed write leaves neither the file nor its temporary."""
    target = tmp_path / "a.txt"

    with pytest.raises(RuntimeError, match="boom"), atomic_write(target) as handle:
        handle.write("partial")
        raise RuntimeError("boom")

    assert list(tmp_path.iterdir()) == []


def test_config_hash_ignores_key_order() -> None:
    """Test the hash is canonical and sensitive to values."""
    first = config_hash({"a": 1, "b": {"c": 2, "d": 3}})

    assert first == config_hash({"b": {"d": 3, "c": 2}, "a": 1})
    assert first != config_hash({"a": 1, "b": {"c": 2, "d": 4}})
    assert len(first) == 64


def test_package_versions_covers_stack() -> None:
    """Test every tracked package is reported."""
    versions = package_versions()

    assert set(versions) == set(VERSIONED_PACKAGES)
    assert all(isinstance(value, str) and value for value in versions.values())


def test_json_round_trip(store: ArtifactStore) -> None:
    """Test JSON artifacts are sorted, indented and readable."""
    path = store.write_json("att.json", {"b": 2.5, "a": [1, 2]})

    assert store.read_json("att.json") == {"a": [1, 2], "b": 2.5}
    assert path.read_text().startswith('{\n  "a"')


def test_frame_round_trip(store: ArtifactStore) -> None:
    """Test CSV artifacts keep full float precision and drop the index."""
    frame = pd.DataFrame({"unit_id": ["a", "b"], "value": [0.1 + 0.2, 1.0 / 3.0]})

    store.write_frame("values.csv", frame)

    pd.testing.assert_frame_equal(store.read_frame("values.csv"), frame)


def test_read_missing_artifact(store: ArtifactStore) -> None:
    """Test reading an absent artifact raises."""
    assert not store.exists("att.json")
    with pytest.raises(FileNotFoundError):
        store.read_json("att.json")


def test_manifest_appends_stages(tmp_path: Path) -> None:
    """Test each stage adds an entry with its own artifacts."""
    root = tmp_path / "run"
    fit = ArtifactStore(root)
    fit.write_json("fit.json", {"kernel": "rbf"})
    fit.record("chains.csv")
    fit.write_manifest("fit", {"sampler": {"seed": 3}}, seed=3)

    att = ArtifactStore(root)
    att.write_json("att.json", {"att": 1.0})
    att.write_manifest("att", {"rate_scale": False}, seed=None)

    manifest = json.loads((root / MANIFEST_NAME).read_text())
    assert manifest["cell_order"] == CELL_ORDER
    assert [run["command"] for run in manifest["runs"]] == ["fit", "att"]
    assert manifest["runs"][0]["artifacts"] == ["chains.csv", "fit.json"]
    assert manifest["runs"][0]["config_hash"] == config_hash({"sampler": {"seed": 3}})
    assert manifest["runs"][0]["seed"] == 3
    assert manifest["runs"][1]["artifacts"] == ["att.json"]
    assert manifest["runs"][1]["seed"] is None
    assert set(manifest["runs"][1]["versions"]) == set(VERSIONED_PACKAGES)
