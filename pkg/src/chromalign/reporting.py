from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import ParseError
from .evaluation import RocCurve
from .features import PeakFeatures
from .grouping import PairwiseResults, scatter_rows
from .schemas import (
    AlignedPeak,
    AlignmentResult,
    GroupMetrics,
    LinearFit,
    PairwiseMetrics,
    Peak,
    Provenance,
    TimingRow,
)

REPORT_COLUMNS = ["sample_id", "mz", "rt_apex", "area", "group", "group_rt"]
SCATTER_COLUMNS = ["sample_index", "rt", "group"]
PAIR_COLUMNS = ["i", "j", "probability", "within_cutoff"]
ROC_COLUMNS = ["threshold", "fp_rate", "tp_rate"]
TIMING_COLUMNS = ["combinations", "seconds"]


def _num(value: float) -> str:
    return repr(float(value))


def _write_lines(header: Sequence[str], rows: list[list[str]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _write_json(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def _read_table(path: str | Path, columns: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path.name} is empty", row=1) from exc
    if list(frame.columns) != columns:
        raise ParseError(f"{path.name} header must be {','.join(columns)}", row=1)
    return frame


def sidecar(path: str | Path, kind: str) -> Path:
    """``out/report.csv`` -> ``out/report.<kind>``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.{kind}")


# alignment -------------------------------------------------------------------


def build_alignment_rows(
    result: AlignmentResult, peaks: Sequence[Peak | PeakFeatures]
) -> list[AlignedPeak]:
    rows = []
    for item, group in zip(peaks, result.assignment):
        peak = item.peak if isinstance(item, PeakFeatures) else item
        rows.append(
            AlignedPeak(
                sample_id=peak.sample_id,
                mz=peak.mz,
                rt_apex=peak.rt_apex,
                area=peak.area,
                group=group,
                group_rt=result.group_rt[group],
            )
        )
    return rows


def build_provenance_payload(result: AlignmentResult) -> dict:
    return {
        **result.provenance.model_dump(),
        "n_peaks": len(result.assignment),
        "n_groups": result.n_groups,
    }


def write_alignment_report(
    result: AlignmentResult, peaks: Sequence[Peak | PeakFeatures], path: str | Path
) -> dict[str, Path]:
    """Report CSV plus ``<stem>.provenance.json`` and ``<stem>.scatter.csv``."""
    rows = [
        [r.sample_id, str(r.mz), _num(r.rt_apex), _num(r.area), str(r.group), _num(r.group_rt)]
        for r in build_alignment_rows(result, peaks)
    ]
    scatter = [
        [str(sample), _num(rt), str(group)] for sample, rt, group in scatter_rows(result, peaks)
    ]
    return {
        "report": _write_lines(REPORT_COLUMNS, rows, path),
        "provenance": _write_json(
            build_provenance_payload(result), sidecar(path, "provenance.json")
        ),
        "scatter": _write_lines(SCATTER_COLUMNS, scatter, sidecar(path, "scatter.csv")),
    }


def load_alignment_report(path: str | Path) -> tuple[list[AlignedPeak], AlignmentResult]:
    frame = _read_table(path, REPORT_COLUMNS)
    rows: list[AlignedPeak] = []
    group_rt: dict[int, float] = {}
    for offset, record in enumerate(frame.to_dict(orient="records")):
        try:
            row = AlignedPeak.model_validate(record)
        except ValidationError as exc:
            first = exc.errors()[0]
            column = first["loc"][0] if first["loc"] else None
            raise ParseError(first["msg"], row=offset + 2, column=column) from exc
        if group_rt.setdefault(row.group, row.group_rt) != row.group_rt:
            raise ParseError(f"group {row.group} has two group_rt values", row=offset + 2)
        rows.append(row)
    provenance_path = sidecar(path, "provenance.json")
    if provenance_path.exists():
        payload = json.loads(provenance_path.read_text(encoding="utf-8"))
        provenance = Provenance.model_validate(
            {k: v for k, v in payload.items() if k in Provenance.model_fields}
        )
    else:
        provenance = Provenance(method="unknown")
    result = AlignmentResult(
        assignment=[r.group for r in rows], group_rt=group_rt, provenance=provenance
    )
    return rows, result


# pair scores -----------------------------------------------------------------


def write_pair_scores(results: PairwiseResults, path: str | Path) -> Path:
    rows = [
        [str(r.i), str(r.j), _num(r.probability), "1" if r.within_cutoff else "0"]
        for r in results
    ]
    return _write_lines(PAIR_COLUMNS, rows, path)


def load_pair_scores(path: str | Path, n: int | None = None) -> PairwiseResults:
    frame = _read_table(path, PAIR_COLUMNS)
    try:
        i = frame["i"].astype(np.int64).to_numpy()
        j = frame["j"].astype(np.int64).to_numpy()
        probability = frame["probability"].astype(np.float64).to_numpy()
        within = frame["within_cutoff"].astype(np.int64).to_numpy().astype(bool)
    except ValueError as exc:
        raise ParseError(f"{Path(path).name}: {exc}") from exc
    if np.any(i >= j):
        raise ParseError(f"{Path(path).name}: pairs must satisfy i < j")
    size = n if n is not None else (int(j.max()) + 1 if j.size else 0)
    if j.size and int(j.max()) >= size:
        raise ParseError(f"{Path(path).name}: peak index {int(j.max())} beyond {size} peaks")
    return PairwiseResults(size, i, j, probability, within)


# metrics ---------------------------------------------------------------------


def build_metrics_payload(
    groups: GroupMetrics,
    pairwise: PairwiseMetrics | None = None,
    roc: RocCurve | None = None,
    provenance: Provenance | None = None,
) -> dict:
    payload: dict = {"group": groups.model_dump()}
    if pairwise is not None:
        payload["pairwise"] = pairwise.model_dump()
    if roc is not None:
        payload["auc"] = roc.auc
    if provenance is not None:
        payload["provenance"] = provenance.model_dump()
    return payload


def write_metrics(payload: dict, path: str | Path) -> Path:
    return _write_json(payload, path)


def write_roc(roc: RocCurve, path: str | Path) -> Path:
    rows = [[_num(t), _num(fpr), _num(tpr)] for t, fpr, tpr in roc.points()]
    return _write_lines(ROC_COLUMNS, rows, path)


# timing ----------------------------------------------------------------------


def write_timing(
    rows: Sequence[TimingRow], fit: LinearFit | None, path: str | Path
) -> dict[str, Path]:
    written = {
        "timing": _write_lines(
            TIMING_COLUMNS, [[str(r.combinations), _num(r.seconds)] for r in rows], path
        )
    }
    if fit is not None:
        written["fit"] = _write_json(fit.model_dump(), sidecar(path, "fit.json"))
    return written
