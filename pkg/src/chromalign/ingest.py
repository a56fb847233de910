from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import ArgumentError, ChannelNotFoundError, DataValidationError, ParseError
from .schemas import Peak

logger = logging.getLogger(__name__)

RT_SPACING_RTOL = 1e-6
PEAK_TABLE_COLUMNS = ["sample_id", "mz", "rt_start", "rt_apex", "rt_end", "area", "group"]
PEAK_DETAIL_COLUMNS = ["height", "apex_index"]


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def _check_rt_axis(rt_axis: np.ndarray, *, require_uniform: bool) -> None:
    if rt_axis.ndim != 1:
        raise DataValidationError("rt axis must be one-dimensional")
    if not np.all(np.isfinite(rt_axis)):
        raise DataValidationError("rt axis contains non-finite values")
    steps = np.diff(rt_axis)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise DataValidationError(f"rt axis not strictly increasing at index {bad}")
    if require_uniform and steps.size:
        reference = float(np.median(steps))
        if np.any(np.abs(steps - reference) > RT_SPACING_RTOL * reference):
            bad = int(np.argmax(np.abs(steps - reference) > RT_SPACING_RTOL * reference)) + 1
            raise DataValidationError(
                f"rt spacing is not constant (first deviation at index {bad})"
            )


def _check_intensity(intensity: np.ndarray) -> None:
    if not np.all(np.isfinite(intensity)):
        raise DataValidationError("intensity contains non-finite values")
    if np.any(intensity < 0):
        raise DataValidationError("intensity contains negative values")


@dataclass(frozen=True, eq=False)
class ChromatogramMatrix:
    sample_id: str
    rt_axis: np.ndarray
    mz_axis: np.ndarray
    intensity: np.ndarray

    def __post_init__(self) -> None:
        rt_axis = np.array(self.rt_axis, dtype=np.float64)
        mz_axis = np.array(self.mz_axis, dtype=np.int64)
        intensity = np.array(self.intensity, dtype=np.float64)
        if rt_axis.size < 2:
            raise DataValidationError("matrix needs at least two retention times")
        _check_rt_axis(rt_axis, require_uniform=True)
        if mz_axis.ndim != 1 or mz_axis.size == 0 or np.any(np.diff(mz_axis) <= 0):
            raise DataValidationError("m/z axis must be strictly increasing integers")
        if intensity.shape != (rt_axis.size, mz_axis.size):
            raise DataValidationError(
                f"intensity shape {intensity.shape} does not match axes "
                f"({rt_axis.size}, {mz_axis.size})"
            )
        _check_intensity(intensity)
        object.__setattr__(self, "rt_axis", _frozen(rt_axis))
        object.__setattr__(self, "mz_axis", _frozen(mz_axis))
        object.__setattr__(self, "intensity", _frozen(intensity))

    @property
    def dt(self) -> float:
        return float(self.rt_axis[1] - self.rt_axis[0])

    def channel_index(self, mz: int) -> int:
        idx = int(np.searchsorted(self.mz_axis, mz))
        if idx >= self.mz_axis.size or self.mz_axis[idx] != mz:
            raise ChannelNotFoundError(int(mz), [int(m) for m in self.mz_axis])
        return idx

    def rt_index(self, rt: float, atol: float | None = None) -> int:
        """Index of the grid point at ``rt``; raises ArgumentError when off-grid."""
        tolerance = atol if atol is not None else 1e-3 * self.dt
        idx = int(np.argmin(np.abs(self.rt_axis - rt)))
        if abs(self.rt_axis[idx] - rt) > tolerance:
            raise ArgumentError(f"retention time {rt} is not on the rt grid of {self.sample_id}")
        return idx


@dataclass(frozen=True, eq=False)
class SicTrace:
    sample_id: str
    mz: int
    rt_axis: np.ndarray
    intensity: np.ndarray

    def __post_init__(self) -> None:
        rt_axis = np.array(self.rt_axis, dtype=np.float64)
        intensity = np.array(self.intensity, dtype=np.float64)
        if intensity.shape != rt_axis.shape:
            raise DataValidationError("trace intensity and rt axis differ in length")
        _check_rt_axis(rt_axis, require_uniform=False)
        _check_intensity(intensity)
        object.__setattr__(self, "rt_axis", _frozen(rt_axis))
        object.__setattr__(self, "intensity", _frozen(intensity))

    def __len__(self) -> int:
        return int(self.intensity.size)

    def with_intensity(self, intensity: np.ndarray) -> SicTrace:
        return SicTrace(self.sample_id, self.mz, self.rt_axis, intensity)

    def rt_index(self, rt: float) -> int:
        if len(self) == 0:
            raise ArgumentError("empty trace has no retention times")
        step = float(self.rt_axis[1] - self.rt_axis[0]) if len(self) > 1 else 1.0
        idx = int(np.argmin(np.abs(self.rt_axis - rt)))
        if abs(self.rt_axis[idx] - rt) > 1e-3 * step:
            raise ArgumentError(f"retention time {rt} is not on the trace grid")
        return idx


def bin_mz(mz_values: Iterable[float], intensity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Round m/z columns to the nearest integer (halves up) and sum merged columns."""
    mz = np.asarray(list(mz_values), dtype=np.float64)
    binned = np.floor(mz + 0.5).astype(np.int64)
    unique, inverse = np.unique(binned, return_inverse=True)
    merged = np.zeros((intensity.shape[0], unique.size), dtype=np.float64)
    for column, target in enumerate(inverse):
        merged[:, target] += intensity[:, column]
    return unique, merged


def _to_floats(
    cells: list[str], *, row: int | None = None, column: str | None = None, first_column: int = 1
) -> np.ndarray:
    try:
        return np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError:
        for offset, cell in enumerate(cells):
            try:
                float(cell)
            except ValueError:
                raise ParseError(
                    f"not a number: {cell!r}",
                    row=row if row is not None else offset + 2,
                    column=column if column is not None else offset + first_column,
                ) from None
        raise


def _malformed(exc: Exception) -> ParseError:
    match = re.search(r"line (\d+)", str(exc))
    return ParseError(f"malformed CSV: {exc}", row=int(match.group(1)) if match else None)


def _read_cells(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, encoding="utf-8"
        )
    except pd.errors.ParserError as exc:
        raise _malformed(exc) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError("empty matrix file", row=1) from exc


def load_matrix(path: str | Path, sample_id: str | None = None) -> ChromatogramMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cells = _read_cells(path)
    header = [c.strip() for c in cells.iloc[0].tolist()]
    if not header or header[0] != "rt":
        raise ParseError("first header cell must be 'rt'", row=1, column=1)
    if len(header) < 2:
        raise ParseError("matrix has no m/z columns", row=1)
    mz_values = _to_floats(header[1:], row=1, first_column=2)
    body = cells.iloc[1:]
    if body.empty:
        raise ParseError("matrix has no data rows", row=2)
    columns = []
    for col_pos, name in enumerate(header):
        columns.append(
            _to_floats([c.strip() for c in body.iloc[:, col_pos].tolist()], column=name)
        )
    rt_axis = columns[0]
    intensity = np.column_stack(columns[1:])
    _check_rt_axis(rt_axis, require_uniform=False)
    _check_intensity(intensity)
    mz_axis, merged = bin_mz(mz_values, intensity)
    if mz_axis.size != mz_values.size:
        logger.debug("%s: merged %d m/z columns into %d", path.name, mz_values.size, mz_axis.size)
    return ChromatogramMatrix(sample_id or path.stem, rt_axis, mz_axis, merged)


def save_matrix(matrix: ChromatogramMatrix, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["rt," + ",".join(str(int(m)) for m in matrix.mz_axis)]
    for rt, row in zip(matrix.rt_axis, matrix.intensity):
        lines.append(",".join([repr(float(rt))] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def slice_sic(matrix: ChromatogramMatrix, mz: int) -> SicTrace:
    idx = matrix.channel_index(mz)
    return SicTrace(matrix.sample_id, int(mz), matrix.rt_axis, matrix.intensity[:, idx])


def slice_window(trace: SicTrace, rt_lo: float, rt_hi: float) -> SicTrace:
    if rt_lo >= rt_hi:
        raise ArgumentError(f"empty window: rt_lo={rt_lo} >= rt_hi={rt_hi}")
    keep = (trace.rt_axis >= rt_lo) & (trace.rt_axis <= rt_hi)
    return SicTrace(trace.sample_id, trace.mz, trace.rt_axis[keep], trace.intensity[keep])


def total_ion_chromatogram(matrix: ChromatogramMatrix) -> np.ndarray:
    return matrix.intensity.sum(axis=1)


def load_peak_table(path: str | Path) -> list[Peak]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise _malformed(exc) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError("empty peak table", row=1) from exc
    if list(frame.columns) not in (PEAK_TABLE_COLUMNS, PEAK_TABLE_COLUMNS + PEAK_DETAIL_COLUMNS):
        raise ParseError(
            f"peak table header must be {','.join(PEAK_TABLE_COLUMNS)}"
            f" with optional {','.join(PEAK_DETAIL_COLUMNS)}",
            row=1,
        )
    peaks: list[Peak] = []
    for offset, record in enumerate(frame.to_dict(orient="records")):
        for column in PEAK_DETAIL_COLUMNS:
            if record.get(column) == "":
                record[column] = None
        try:
            peaks.append(Peak.model_validate(record))
        except ValidationError as exc:
            first = exc.errors()[0]
            column = first["loc"][0] if first["loc"] else None
            raise ParseError(first["msg"], row=offset + 2, column=column) from exc
    return peaks


def save_peak_table(peaks: Iterable[Peak], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(PEAK_TABLE_COLUMNS + PEAK_DETAIL_COLUMNS)]
    for peak in peaks:
        lines.append(
            ",".join(
                [
                    peak.sample_id,
                    str(peak.mz),
                    repr(float(peak.rt_start)),
                    repr(float(peak.rt_apex)),
                    repr(float(peak.rt_end)),
                    repr(float(peak.area)),
                    str(peak.group),
                    "" if peak.height is None else repr(float(peak.height)),
                    "" if peak.apex_index is None else str(peak.apex_index),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
