"""Flat-file artifact store for run outputs with atomic writes."""

import hashlib
import json
import logging
import os
import tempfile
from collections.abc import Generator, Mapping
from contextlib import contextmanager
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import IO, Any

import pandas as pd

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CELL_ORDER = "unit-major,time-minor"
VERSIONED_PACKAGES = ("gp-causal-panel", "numpy", "scipy", "pandas")


@contextmanager
def atomic_write(path: Path) -> Generator[IO[str], None, None]:
    """Context manager writing text to a temporary file renamed on success.

    Args:
        path: Final destination of the file.

    Yields:
        Text handle to the temporary file.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            yield handle
        os.replace(temp_name, path)
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def package_versions() -> dict[str, str]:
    """Installed versions of this package and its numerical stack."""
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class ArtifactStore:
    """Reads and writes the JSON and CSV artifacts of one run directory."""

    def __init__(self, root: Path) -> None:
        """Initialise the store, creating the directory if needed.

        Args:
            root: Run output directory.
        """
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self._written: list[str] = []

    def path(self, name: str) -> Path:
        """Absolute path of an artifact inside the run directory."""
        return self.root / name

    def exists(self, name: str) -> bool:
        """Whether the artifact is present."""
        return self.path(name).exists()

    def write_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        """Write a JSON artifact atomically.

        Args:
            name: File name relative to the run directory.
            payload: JSON-serialisable mapping.

        Returns:
            Path of the written file.
        """
        target = self.path(name)
        with atomic_write(target) as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, default=float)
            handle.write("\n")
        self.record(name)
        return target

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        """Write a tidy CSV artifact atomically.

        Args:
            name: File name relative to the run directory.
            frame: Frame written without its index.

        Returns:
            Path of the written file.
        """
        target = self.path(name)
        with atomic_write(target) as handle:
            frame.to_csv(handle, index=False)
        self.record(name)
        return target

    def read_json(self, name: str) -> dict[str, Any]:
        """Read a JSON artifact.

        Raises:
            FileNotFoundError: If the artifact is missing.
        """
        with self.path(name).open(encoding="utf-8") as handle:
            payload: dict[str, Any] = json.load(handle)
        return payload

    def read_frame(self, name: str) -> pd.DataFrame:
        """Read a CSV artifact with round-trip float parsing.

        Raises:
            FileNotFoundError: If the artifact is missing.
        """
        return pd.read_csv(self.path(name), float_precision="round_trip")

    def write_manifest(self, command: str, config: Mapping[str, Any], seed: int | None) -> Path:
        """Append this stage to the run manifest.

        A run directory can hold several stages (``fit`` then ``att`` and
        ``diagnose``); each appends one entry to ``runs`` with the
        configuration, its hash, the seed, package versions and the artifacts
        it wrote.

        Args:
            command: Subcommand that produced the artifacts.
            config: Effective configuration.
            seed: Master seed of the run.

        Returns:
            Path of the manifest.
        """
        manifest = self.read_json(MANIFEST_NAME) if self.exists(MANIFEST_NAME) else {"runs": []}
        artifacts = sorted(set(self._written))
        manifest["cell_order"] = CELL_ORDER
        manifest["runs"].append(
            {
                "command": command,
                "config": dict(config),
                "config_hash": config_hash(config),
                "seed": seed,
                "versions": package_versions(),
                "artifacts": artifacts,
            }
        )
        path = self.write_json(MANIFEST_NAME, manifest)
        logger.info("Wrote %d artifacts to %s", len(artifacts), self.root)
        return path

    def record(self, name: str) -> None:
        """Register a file written into the run directory by other means."""
        logger.debug("Wrote %s", self.path(name))
        self._written.append(name)
