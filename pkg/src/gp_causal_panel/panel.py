"""Panel data model, CSV ingestion and the observed/missing partition."""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from gp_causal_panel.artifacts import atomic_write
from gp_causal_panel.errors import PanelValidationError
from gp_causal_panel.models import BoolArray, FloatArray, IntArray, ObsMisPartition

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("unit_id", "time", "y", "treated", "lon", "lat")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class PanelData:
    """N×T outcome panel with block treatment adoption.

    Treatment of cell ``(i, t)`` is ``treated_unit[i] and t >= t_star`` with
    1-based ``t``. Arrays are copied and made read-only on construction.
    """

    y: FloatArray
    treated_unit: BoolArray
    t_star: int
    coords: FloatArray
    offset: FloatArray | None = None
    covariates: FloatArray | None = None
    unit_fixed_effects: bool = False
    times: FloatArray | None = None
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        """Validate shapes and the treatment invariants, then freeze arrays."""
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 2:
            msg = f"Outcome panel must be two-dimensional, got shape {y.shape}"
            raise PanelValidationError(msg)
        n_units, n_times = y.shape
        treated = np.asarray(self.treated_unit, dtype=bool)
        if treated.shape != (n_units,):
            msg = f"treated_unit must have one entry per unit ({n_units}), got {treated.shape}"
            raise PanelValidationError(msg)
        if not treated.any():
            msg = "no treated units"
            raise PanelValidationError(msg)
        if treated.all():
            msg = "no control units"
            raise PanelValidationError(msg)
        if not 1 <= self.t_star <= n_times:
            msg = f"t_star must lie in [1, {n_times}], got {self.t_star}"
            raise PanelValidationError(msg)
        if not np.all(np.isfinite(y)):
            msg = "Outcome panel contains missing or non-finite values"
            raise PanelValidationError(msg)

        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (n_units, 2):
            msg = f"coords must have shape ({n_units}, 2), got {coords.shape}"
            raise PanelValidationError(msg)

        times = np.arange(1, n_times + 1, dtype=np.float64) if self.times is None else self.times
        times = np.asarray(times, dtype=np.float64)
        if times.shape != (n_times,) or np.any(np.diff(times) <= 0):
            msg = "times must be strictly increasing with one stamp per period"
            raise PanelValidationError(msg)

        offset = self.offset
        if offset is not None:
            offset = np.asarray(offset, dtype=np.float64)
            if offset.shape != y.shape:
                msg = f"offset must have shape {y.shape}, got {offset.shape}"
                raise PanelValidationError(msg)
            if not np.all(offset > 0):
                msg = "non-positive offset"
                raise PanelValidationError(msg)

        covariates = self.covariates
        names = self.covariate_names
        if covariates is not None:
            covariates = np.asarray(covariates, dtype=np.float64)
            if covariates.ndim != 3 or covariates.shape[:2] != y.shape:
                msg = f"covariates must have shape ({n_units}, {n_times}, p), got {covariates.shape}"
                raise PanelValidationError(msg)
            if not names:
                names = tuple(f"x{k + 1}" for k in range(covariates.shape[2]))
            if len(names) != covariates.shape[2]:
                msg = "covariate_names must name every covariate column"
                raise PanelValidationError(msg)

        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "treated_unit", _frozen(treated))
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "offset", None if offset is None else _frozen(offset))
        object.__setattr__(self, "covariates", None if covariates is None else _frozen(covariates))
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def n_units(self) -> int:
        """Number of units N."""
        return int(self.y.shape[0])

    @property
    def n_times(self) -> int:
        """Number of periods T."""
        return int(self.y.shape[1])

    @property
    def n_treated(self) -> int:
        """Number of treated units N1."""
        return int(self.treated_unit.sum())

    @property
    def t0(self) -> int:
        """Number of pre-treatment periods T0 = T* - 1."""
        return self.t_star - 1

    @property
    def time_stamps(self) -> FloatArray:
        """Kernel time coordinates, one per period."""
        if self.times is None:
            return np.arange(1, self.n_times + 1, dtype=np.float64)
        return self.times

    @property
    def treatment(self) -> BoolArray:
        """Treatment mask D of shape (N, T)."""
        post = np.arange(1, self.n_times + 1) >= self.t_star
        return np.outer(self.treated_unit, post)

    @property
    def log_offset(self) -> FloatArray:
        """log θ per cell, flattened unit-major (zeros without offsets)."""
        if self.offset is None:
            return np.zeros(self.n_units * self.n_times)
        return np.log(self.offset).reshape(-1)

    def flat_y(self) -> FloatArray:
        """Outcomes flattened unit-major."""
        return self.y.reshape(-1)


@dataclass(frozen=True)
class PanelIndex:
    """Relabelling between original CSV labels and dense panel indices.

    Units map to 0-based rows, times to 1-based periods.
    """

    unit_labels: tuple[str, ...]
    time_labels: tuple[float, ...]

    @property
    def unit_index(self) -> dict[str, int]:
        """Original unit label to 0-based row."""
        return {label: i for i, label in enumerate(self.unit_labels)}

    @property
    def time_index(self) -> dict[float, int]:
        """Original time label to 1-based period."""
        return {label: t + 1 for t, label in enumerate(self.time_labels)}


def _resolve_schema(schema: Mapping[str, str | Sequence[str]] | None) -> tuple[dict[str, str], list[str] | None]:
    columns = {name: name for name in (*REQUIRED_COLUMNS, "offset")}
    covariates: list[str] | None = None
    for key, value in (schema or {}).items():
        if key == "covariates":
            covariates = [value] if isinstance(value, str) else list(value)
        elif isinstance(value, str):
            columns[key] = value
        else:
            msg = f"Schema entry {key!r} must name a single column"
            raise PanelValidationError(msg)
    return columns, covariates


def load_panel(
    path: Path,
    schema: Mapping[str, str | Sequence[str]] | None = None,
    unit_fixed_effects: bool = False,
    use_time_values: bool = False,
) -> tuple[PanelData, PanelIndex]:
    """Load and validate a long-format panel CSV.

    Args:
        path: CSV file with one row per (unit, time) cell.
        schema: Optional map from canonical column names (``unit_id``, ``time``,
            ``y``, ``treated``, ``lon``, ``lat``, ``offset``) to CSV column
            names; ``covariates`` lists covariate columns. Without it,
            columns named ``x1``, ``x2``, ... are taken as covariates.
        unit_fixed_effects: Whether to add unit dummy columns to the design.
        use_time_values: Use the CSV time values as kernel time coordinates
            instead of the periods 1..T.

    Returns:
        The validated panel and the relabelling map.

    Raises:
        PanelValidationError: On missing columns, a non-rectangular panel,
            non-positive offsets, treatment gaps or staggered adoption.
    """
    columns, covariates = _resolve_schema(schema)
    frame = pd.read_csv(path, float_precision="round_trip", dtype={columns["unit_id"]: str})

    missing = [columns[name] for name in REQUIRED_COLUMNS if columns[name] not in frame.columns]
    if missing:
        msg = f"missing column(s): {', '.join(missing)}"
        raise PanelValidationError(msg)
    if covariates is None:
        covariates = sorted(
            (c for c in frame.columns if c.startswith("x") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
    absent = [c for c in covariates if c not in frame.columns]
    if absent:
        msg = f"missing column(s): {', '.join(absent)}"
        raise PanelValidationError(msg)

    unit_col, time_col = columns["unit_id"], columns["time"]
    if frame.duplicated([unit_col, time_col]).any():
        msg = "non-rectangular panel: duplicated (unit, time) rows"
        raise PanelValidationError(msg)
    unit_labels = tuple(str(u) for u in np.unique(frame[unit_col].astype(str)))
    time_labels = tuple(float(t) for t in np.unique(frame[time_col].astype(np.float64)))
    n_units, n_times = len(unit_labels), len(time_labels)
    if len(frame) != n_units * n_times:
        msg = f"non-rectangular panel: {len(frame)} rows for {n_units} units × {n_times} times"
        raise PanelValidationError(msg)

    frame = frame.assign(
        _unit=frame[unit_col].astype(str).map({label: i for i, label in enumerate(unit_labels)}),
        _time=frame[time_col].astype(np.float64).map({label: t for t, label in enumerate(time_labels)}),
    ).sort_values(["_unit", "_time"], kind="stable")

    def grid(column: str) -> FloatArray:
        return frame[column].to_numpy(dtype=np.float64).reshape(n_units, n_times)

    d = grid(columns["treated"])
    if not np.isin(d, (0.0, 1.0)).all():
        msg = "treated column must be 0/1"
        raise PanelValidationError(msg)
    treated_unit, t_star = _treatment_block(d.astype(bool))

    lon, lat = grid(columns["lon"]), grid(columns["lat"])
    if np.any(lon != lon[:, :1]) or np.any(lat != lat[:, :1]):
        msg = "coordinates must be constant within each unit"
        raise PanelValidationError(msg)

    offset = grid(columns["offset"]) if columns["offset"] in frame.columns else None
    covariate_grid = np.stack([grid(c) for c in covariates], axis=-1) if covariates else None

    panel = PanelData(
        y=grid(columns["y"]),
        treated_unit=treated_unit,
        t_star=t_star,
        coords=np.column_stack([lon[:, 0], lat[:, 0]]),
        offset=offset,
        covariates=covariate_grid,
        covariate_names=tuple(covariates),
        unit_fixed_effects=unit_fixed_effects,
        times=np.asarray(time_labels) if use_time_values else None,
    )
    index = PanelIndex(unit_labels=unit_labels, time_labels=time_labels)
    logger.info(
        "Loaded panel %s: N=%d, T=%d, N1=%d, T*=%d",
        path,
        panel.n_units,
        panel.n_times,
        panel.n_treated,
        panel.t_star,
    )
    return panel, index


def _treatment_block(d: BoolArray) -> tuple[BoolArray, int]:
    treated_unit = d.any(axis=1)
    if not treated_unit.any():
        msg = "no treated units"
        raise PanelValidationError(msg)
    first = np.argmax(d[treated_unit], axis=1) + 1
    if np.unique(first).size > 1:
        msg = "staggered adoption is not supported: treated units start at different times"
        raise PanelValidationError(msg)
    t_star = int(first[0])
    expected = np.arange(1, d.shape[1] + 1) >= t_star
    if np.any(d[treated_unit] != expected):
        msg = "treated unit with treatment gap"
        raise PanelValidationError(msg)
    return treated_unit, t_star


def panel_frame(panel: PanelData, index: PanelIndex | None = None) -> pd.DataFrame:
    """Return the panel as a long frame in canonical column order."""
    units = index.unit_labels if index else tuple(str(i) for i in range(panel.n_units))
    times = index.time_labels if index else tuple(float(t) for t in range(1, panel.n_times + 1))
    unit_idx, time_idx = np.divmod(np.arange(panel.n_units * panel.n_times), panel.n_times)
    data: dict[str, object] = {
        "unit_id": np.asarray(units, dtype=object)[unit_idx],
        "time": np.asarray(times)[time_idx],
        "y": panel.flat_y(),
        "treated": panel.treatment.reshape(-1).astype(np.int64),
        "lon": panel.coords[unit_idx, 0],
        "lat": panel.coords[unit_idx, 1],
    }
    if panel.offset is not None:
        data["offset"] = panel.offset.reshape(-1)
    if panel.covariates is not None:
        for k, name in enumerate(panel.covariate_names):
            data[name] = panel.covariates[:, :, k].reshape(-1)
    return pd.DataFrame(data)


def write_panel(panel: PanelData, path: Path, index: PanelIndex | None = None) -> None:
    """Write the panel as CSV in unit-major order with original labels.

    Floats are written in shortest round-trip form so that ``load_panel``
    reproduces every cell value exactly.
    """
    with atomic_write(path) as handle:
        panel_frame(panel, index).to_csv(handle, index=False)


def partition(panel: PanelData) -> ObsMisPartition:
    """Split cells into untreated (observed) and treated post-treatment (missing).

    Raises:
        PanelValidationError: If no cell is treated.
    """
    flat = panel.treatment.reshape(-1)
    mis_index = np.flatnonzero(flat).astype(np.int64)
    if mis_index.size == 0:
        msg = "nothing to predict"
        raise PanelValidationError(msg)
    return ObsMisPartition(
        obs_index=np.flatnonzero(~flat).astype(np.int64),
        mis_index=mis_index,
        n_units=panel.n_units,
        n_times=panel.n_times,
    )


def treated_pre_cells(panel: PanelData) -> IntArray:
    """Flat indices of treated units' pre-treatment cells, unit-major."""
    pre = np.arange(1, panel.n_times + 1) < panel.t_star
    return np.flatnonzero(np.outer(panel.treated_unit, pre).reshape(-1)).astype(np.int64)


def control_cells(panel: PanelData) -> IntArray:
    """Flat indices of every control-unit cell, unit-major."""
    mask = np.repeat(~panel.treated_unit, panel.n_times)
    return np.flatnonzero(mask).astype(np.int64)


def design_matrix(panel: PanelData, cells: IntArray | None = None) -> tuple[FloatArray, tuple[str, ...]]:
    """Mean-structure design over the given cells.

    Columns are the global intercept ``mu0`` (dropped when unit fixed effects
    are on), the covariates, then one dummy ``delta[i]`` per unit.

    Args:
        panel: Panel providing covariates and the fixed-effect flag.
        cells: Flat cell indices; all cells when omitted.

    Returns:
        Design matrix and its column names.
    """
    if cells is None:
        cells = np.arange(panel.n_units * panel.n_times, dtype=np.int64)
    units = cells // panel.n_times
    blocks: list[FloatArray] = []
    names: list[str] = []
    if not panel.unit_fixed_effects:
        blocks.append(np.ones((cells.size, 1)))
        names.append("mu0")
    if panel.covariates is not None:
        blocks.append(panel.covariates.reshape(-1, panel.covariates.shape[2])[cells])
        names.extend(panel.covariate_names)
    if panel.unit_fixed_effects:
        blocks.append(np.eye(panel.n_units)[units])
        names.extend(f"delta[{i}]" for i in range(panel.n_units))
    return np.hstack(blocks), tuple(names)
