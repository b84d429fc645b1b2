"""CSV, field-dump and metadata writers. Floats are printed with 17 significant digits."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .assembly import FieldSource, PointSet
from .config import RunConfig, config_hash
from .diagnostics import CONSERVATION_HEADER, DIAG_HEADER, DiagnosticsRecord, conservation_drift
from .exceptions import OutputError

logger = logging.getLogger(__name__)

FIELD_HEADER = ("x", "y", "omega", "u_x", "u_y", "P")
SWEEP_HEADER = ("N", "p", "k", "mode", "e_omega", "e_u", "e_p", "order_local")
PARTIAL_MARKER = ".partial"

PathLike = Union[str, Path]


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write a header line and rows of formatted cells.

    Raises:
        OutputError: If the file cannot be written
    """
    path = Path(path)
    lines = [",".join(header)]
    lines.extend(",".join(format_cell(cell) for cell in row) for row in rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as err:
        raise OutputError(f"Cannot write {path.name}: {err}", path=str(path)) from err
    logger.debug("Wrote %d rows to %s", len(lines) - 1, path)
    return path


def write_diagnostics(directory: PathLike, records: Sequence[DiagnosticsRecord]) -> Path:
    """diag.csv and its companion conservation.csv."""
    directory = Path(directory)
    write_csv(directory / "conservation.csv", CONSERVATION_HEADER, conservation_drift(records))
    return write_csv(directory / "diag.csv", DIAG_HEADER, (r.row() for r in records))


def field_filename(prefix: str, t: float) -> str:
    return f"{prefix}_t{t:g}.csv"


def write_field_dump(path: PathLike, source: FieldSource, points: PointSet) -> Path:
    """
    Sample a field on a plotting grid and write `x,y,omega,u_x,u_y,P` rows.

    P is the Bernoulli pressure (zero when the source carries none).
    """
    sample = source.sample(points)
    pressure = sample.pressure if sample.pressure is not None else np.zeros_like(sample.omega)
    columns = np.column_stack(
        [
            sample.x.ravel(),
            sample.y.ravel(),
            sample.omega.ravel(),
            sample.u[..., 0].ravel(),
            sample.u[..., 1].ravel(),
            pressure.ravel(),
        ]
    )
    return write_csv(path, FIELD_HEADER, columns.tolist())


def write_metadata(
    directory: PathLike, config: RunConfig, extra: Optional[Mapping[str, Any]] = None
) -> Path:
    """metadata.json: effective config, its hash and the package version."""
    from . import __version__

    path = Path(directory) / "metadata.json"
    payload: dict[str, Any] = {
        "config": config.as_dict(),
        "config_hash": config_hash(config),
        "version": __version__,
    }
    if extra:
        payload.update(extra)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as err:
        raise OutputError(f"Cannot write metadata: {err}", path=str(path)) from err
    return path


def mark_partial(directory: PathLike, reason: str) -> Path:
    """Flag a directory whose sweep stopped early."""
    path = Path(directory) / PARTIAL_MARKER
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(reason + "\n", encoding="utf-8")
    except OSError as err:
        raise OutputError(f"Cannot write partial marker: {err}", path=str(path)) from err
    logger.warning("Results in %s are partial: %s", directory, reason)
    return path
