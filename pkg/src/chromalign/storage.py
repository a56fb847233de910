from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ValidationError

from .errors import ConfigError, ParseError
from .features import PeakFeatures
from .ingest import ChromatogramMatrix, load_matrix, save_matrix
from .model import ModelParams
from .schemas import FeatureConfig, HistoryRecord, Peak, RunConfig, TruthRecord

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = ".features.json"
TRUTH_COLUMNS = ["sample_id", "mz", "rt_apex_true", "group"]
HISTORY_COLUMNS = ["epoch", "split", "output", "loss", "accuracy"]


def _write_json(payload: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def _read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path.name}: {exc.msg}", row=exc.lineno, column=exc.colno) from exc


# matrices --------------------------------------------------------------------


def list_matrix_files(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    return sorted(p for p in directory.glob("*.csv") if p.is_file())


def load_matrices(directory: str | Path) -> list[ChromatogramMatrix]:
    files = list_matrix_files(directory)
    if not files:
        raise FileNotFoundError(f"no matrix CSV files in {directory}")
    return [load_matrix(path) for path in files]


def save_matrices(matrices: Iterable[ChromatogramMatrix], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return [save_matrix(m, directory / f"{m.sample_id}.csv") for m in matrices]


# truth -----------------------------------------------------------------------


def save_truth(records: Iterable[TruthRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(TRUTH_COLUMNS)]
    for r in records:
        lines.append(f"{r.sample_id},{r.mz},{float(r.rt_apex_true)!r},{r.group}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_truth(path: str | Path) -> list[TruthRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if list(frame.columns) != TRUTH_COLUMNS:
        raise ParseError(f"truth header must be {','.join(TRUTH_COLUMNS)}", row=1)
    records = []
    for offset, row in enumerate(frame.to_dict(orient="records")):
        try:
            records.append(TruthRecord.model_validate(row))
        except ValidationError as exc:
            first = exc.errors()[0]
            raise ParseError(first["msg"], row=offset + 2, column=first["loc"][0]) from exc
    return records


# features --------------------------------------------------------------------


def _feature_record(f: PeakFeatures) -> dict[str, Any]:
    return {
        "peak": f.peak.model_dump(),
        "rt": f.rt,
        "height": f.height,
        "spectrum_degenerate": f.spectrum_degenerate,
        "mass_spectrum": f.mass_spectrum.tolist(),
        "peak_profile": f.peak_profile.tolist(),
        "chrom_segment": f.chrom_segment.tolist(),
    }


def save_features(
    features: Sequence[PeakFeatures], cfg: FeatureConfig, directory: str | Path
) -> list[Path]:
    """One ``<sample_id>.features.json`` bundle per sample."""
    by_sample: dict[str, list[PeakFeatures]] = {}
    for f in features:
        by_sample.setdefault(f.sample_id, []).append(f)
    directory = Path(directory)
    paths = []
    for sample_id in sorted(by_sample):
        payload = {
            "sample_id": sample_id,
            "config": cfg.model_dump(),
            "peaks": [_feature_record(f) for f in by_sample[sample_id]],
        }
        paths.append(_write_json(payload, directory / f"{sample_id}{FEATURE_SUFFIX}"))
    return paths


def load_feature_bundle(path: str | Path) -> tuple[list[PeakFeatures], FeatureConfig]:
    payload = _read_json(path)
    try:
        cfg = FeatureConfig.model_validate(payload["config"])
        features = [
            PeakFeatures(
                peak=Peak.model_validate(record["peak"]),
                mass_spectrum=np.array(record["mass_spectrum"], dtype=np.float64),
                peak_profile=np.array(record["peak_profile"], dtype=np.float64),
                chrom_segment=np.array(record["chrom_segment"], dtype=np.float64),
                rt=float(record["rt"]),
                height=float(record["height"]),
                spectrum_degenerate=bool(record["spectrum_degenerate"]),
            )
            for record in payload["peaks"]
        ]
    except KeyError as exc:
        raise ParseError(f"{Path(path).name}: missing field {exc.args[0]!r}") from exc
    return features, cfg


def load_features(directory: str | Path) -> tuple[list[PeakFeatures], FeatureConfig]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    paths = sorted(directory.glob(f"*{FEATURE_SUFFIX}"))
    if not paths:
        raise FileNotFoundError(f"no feature bundles in {directory}")
    features: list[PeakFeatures] = []
    config: FeatureConfig | None = None
    for path in paths:
        bundle, cfg = load_feature_bundle(path)
        if config is not None and cfg != config:
            raise ConfigError(f"{path.name} was built with a different feature config")
        config = cfg
        features.extend(bundle)
    return features, config


# model -----------------------------------------------------------------------


def save_weights(params: ModelParams, path: str | Path) -> Path:
    return _write_json(params.to_dict(), Path(path))


def load_weights(path: str | Path) -> ModelParams:
    return ModelParams.from_dict(_read_json(path))


def save_history(history: Iterable[HistoryRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(HISTORY_COLUMNS)]
    for h in history:
        lines.append(f"{h.epoch},{h.split},{h.output},{float(h.loss)!r},{float(h.accuracy)!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_history(path: str | Path) -> list[HistoryRecord]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if list(frame.columns) != HISTORY_COLUMNS:
        raise ParseError(f"history header must be {','.join(HISTORY_COLUMNS)}", row=1)
    return [HistoryRecord.model_validate(row) for row in frame.to_dict(orient="records")]


# run configuration -----------------------------------------------------------


def parse_assignment(text: str, *, line: int | None = None) -> tuple[list[str], Any]:
    """Split ``section.key = value`` into a key path and a YAML-typed value."""
    if "=" not in text:
        raise ConfigError(f"expected 'key = value', got {text.strip()!r}" + _at(line))
    key, raw = text.split("=", 1)
    path = [part.strip() for part in key.strip().split(".")]
    if not all(path):
        raise ConfigError(f"malformed key {key.strip()!r}" + _at(line))
    try:
        value = yaml.safe_load(raw.strip()) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key.strip()}: {exc}" + _at(line)) from exc
    return path, value


def _at(line: int | None) -> str:
    return f" (line {line})" if line is not None else ""


def _assign(target: dict[str, Any], path: list[str], value: Any) -> None:
    for part in path[:-1]:
        node = target.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{'.'.join(path)} conflicts with a scalar setting {part!r}")
        target = node
    target[path[-1]] = value


def _merge(target: dict[str, Any], source: dict[str, Any]) -> None:
    for key, value in source.items():
        if isinstance(value, dict) and isinstance(target.get(key), dict):
            _merge(target[key], value)
        else:
            target[key] = value


def read_run_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    values: dict[str, Any] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        key_path, value = parse_assignment(text, line=number)
        _assign(values, key_path, value)
    return values


def build_run_config(
    path: str | Path | None = None,
    overrides: Iterable[str] = (),
    flags: dict[str, Any] | None = None,
    defaults: dict[str, Any] | None = None,
) -> RunConfig:
    """Defaults, then file values, then ``--set`` overrides, then explicit flags.

    ``flags`` and ``defaults`` use dotted keys; ``None`` flag values are skipped.
    """
    values: dict[str, Any] = {}
    for key, value in (defaults or {}).items():
        _assign(values, key.split("."), value)
    if path:
        _merge(values, read_run_config_file(path))
    for item in overrides:
        key_path, value = parse_assignment(item)
        _assign(values, key_path, value)
    for key, value in (flags or {}).items():
        if value is not None:
            _assign(values, key.split("."), value)
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"invalid run configuration: {problems}") from exc


def run_config_lines(config: RunConfig | None = None) -> list[str]:
    """``section.key = value  # description`` lines, readable back as a run-config file."""
    lines: list[str] = []

    def walk(model: BaseModel, prefix: str) -> None:
        for name, field in type(model).model_fields.items():
            value = getattr(model, name)
            if isinstance(value, BaseModel):
                walk(value, f"{prefix}{name}.")
                continue
            text = f"{prefix}{name} = {json.dumps(value)}"
            if field.description:
                text += f"  # {field.description}"
            lines.append(text)

    walk(config or RunConfig(), "")
    return lines
