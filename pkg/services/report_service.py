"""
Report service
Experiment configs in, report files out: JSON or KEY=VALUE configs are validated into
ExperimentConfig, and each run is written as a fixed-header CSV plus a sorted JSON summary.
"""
import csv
import json
import logging
import platform
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
import pydantic
import scipy
from dotenv import dotenv_values
from pydantic import ValidationError

from schemas.requests import ExperimentConfig
from schemas.responses import ExperimentSummary, VerificationRow
from services.errors import ConfigError

logger = logging.getLogger(__name__)

CSV_HEADER = ("experiment_id", "parameters", "lhs", "rhs", "ratio", "status", "note")
# KEY=VALUE entries split on commas
LIST_KEYS = {"thetas", "moduli", "radii", "zetas", "slope_window", "potential.values"}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _key_lines(path: Path) -> Dict[str, int]:
    """First line number of every KEY in a KEY=VALUE file."""
    lines = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#") or "=" not in text:
            continue
        key = text.split("=", 1)[0].strip()
        if key.startswith("export "):
            key = key[len("export "):].strip()
        lines.setdefault(key, number)
    return lines


def _nest(flat: Dict[str, Any], lines: Dict[str, int]) -> Dict[str, Any]:
    """Dotted keys become nested sections, comma lists become lists."""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None or value.strip() == "":
            raise ConfigError("missing value", field=key, line=lines.get(key))
        if key in LIST_KEYS:
            value = [item.strip() for item in value.split(",") if item.strip()]
        section = nested
        parts = key.split(".")
        for part in parts[:-1]:
            child = section.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"'{part}' is both a value and a section", field=key, line=lines.get(key))
            section = child
        section[parts[-1]] = value
    return nested


def _validation_error(exc: ValidationError, prefix: str = "", lines: Optional[Dict[str, int]] = None) -> ConfigError:
    first = exc.errors()[0]
    location = ".".join(str(part) for part in first["loc"])
    field = f"{prefix}{location}" if location else prefix.rstrip(".") or None
    line = None
    if lines:
        parts = location.split(".")
        # the deepest key (or enclosing section) that appears in the file
        for depth in range(len(parts), 0, -1):
            candidate = ".".join(parts[:depth])
            matches = [number for key, number in lines.items() if key == candidate or key.startswith(candidate + ".")]
            if matches:
                line = min(matches)
                break
    return ConfigError(first["msg"], field=field, line=line)


def _with_node_cap(raw: Dict[str, Any], node_cap: Optional[int]) -> Dict[str, Any]:
    if node_cap is not None and isinstance(raw.get("grid"), dict):
        raw = {**raw, "grid": {"node_cap": node_cap, **raw["grid"]}}
    return raw


def _load_json(path: Path, node_cap: Optional[int]) -> List[ExperimentConfig]:
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from exc
    if isinstance(document, dict) and "experiments" in document:
        entries, prefix = document["experiments"], "experiments[{}]."
    else:
        entries, prefix = [document], ""
    if not isinstance(entries, list) or not all(isinstance(entry, dict) for entry in entries):
        raise ConfigError("expected an experiment object or a list of them", field="experiments")

    configs = []
    for position, entry in enumerate(entries):
        try:
            configs.append(ExperimentConfig(**_with_node_cap(entry, node_cap)))
        except ValidationError as exc:
            raise _validation_error(exc, prefix.format(position)) from exc
    return configs


def _load_key_value(path: Path, node_cap: Optional[int]) -> List[ExperimentConfig]:
    lines = _key_lines(path)
    raw = _nest(dict(dotenv_values(path)), lines)
    try:
        return [ExperimentConfig(**_with_node_cap(raw, node_cap))]
    except ValidationError as exc:
        raise _validation_error(exc, lines=lines) from exc


def load_configs(path: Union[str, Path], node_cap: Optional[int] = None) -> List[ExperimentConfig]:
    """Every experiment in a .json file (one object or {"experiments": [...]}) or a KEY=VALUE file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    configs = _load_json(path, node_cap) if path.suffix.lower() == ".json" else _load_key_value(path, node_cap)
    identifiers = [cfg.experiment_id for cfg in configs]
    if len(set(identifiers)) != len(identifiers):
        raise ConfigError("experiment ids must be unique", field="experiment_id")
    logger.info(f"✅ loaded {len(configs)} experiment(s) from {path}")
    return configs


def load_config(path: Union[str, Path], experiment_id: Optional[str] = None,
                node_cap: Optional[int] = None) -> ExperimentConfig:
    """The experiment named experiment_id, or the only one in the file."""
    configs = load_configs(path, node_cap)
    if experiment_id is None:
        if len(configs) > 1:
            raise ConfigError(f"{path} holds {len(configs)} experiments, name one", field="experiment_id")
        return configs[0]
    for cfg in configs:
        if cfg.experiment_id == experiment_id:
            return cfg
    raise ConfigError(f"no experiment '{experiment_id}' in {path}", field="experiment_id")


def load_defaults(path: Union[str, Path]) -> Dict[str, str]:
    """Flat argument defaults from a KEY=VALUE or flat JSON file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    if path.suffix.lower() == ".json":
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno) from exc
        if not isinstance(document, dict):
            raise ConfigError("expected a flat JSON object")
        return {str(key): value for key, value in document.items()}
    lines = _key_lines(path)
    values = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise ConfigError("missing value", field=key, line=lines.get(key))
        values[key] = value
    return values


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def environment_fingerprint() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mpmath": mpmath.__version__,
        "pydantic": pydantic.VERSION,
        "platform": platform.platform(),
    }


def format_parameters(parameters: Dict[str, float]) -> str:
    return ";".join(f"{key}={value!r}" for key, value in parameters.items())


def _csv_record(row: VerificationRow) -> Tuple[str, ...]:
    return (row.experiment_id, format_parameters(row.parameters), repr(row.lhs), repr(row.rhs), repr(row.ratio),
            row.status, row.note)


def emit_report(rows: Sequence[VerificationRow], summary: ExperimentSummary,
                out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """Write <id>.csv and <id>.summary.json; both are byte-stable for a fixed config and seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{summary.experiment_id}.csv"
    json_path = out_dir / f"{summary.experiment_id}.summary.json"

    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(_csv_record(row))

    record = summary.model_copy(update={"environment": environment_fingerprint()}).model_dump()
    json_path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    logger.info(f"💾 wrote {len(rows)} rows to {csv_path} and the summary to {json_path}")
    return csv_path, json_path


class ReportService:
    """Config loading and report writing for one output directory"""

    def __init__(self, out_dir: Optional[Union[str, Path]] = None, node_cap: Optional[int] = None):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.node_cap = node_cap
        if self.out_dir is None:
            logger.warning("Report service has no output directory, results will not be written")

    def is_configured(self) -> bool:
        """Check if an output directory is set"""
        return self.out_dir is not None

    def experiments(self, path: Union[str, Path], experiment_id: Optional[str] = None) -> List[ExperimentConfig]:
        """The named experiment, or every experiment in the file."""
        if experiment_id is not None:
            return [load_config(path, experiment_id, self.node_cap)]
        return load_configs(path, self.node_cap)

    def write_result(self, name: str, result: Dict[str, Any]) -> Path:
        """<out>/<name>.json, also echoed to stdout."""
        if not self.is_configured():
            raise ConfigError("no output directory configured", field="FRACLAB_OUTPUT_DIR")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{name}.json"
        text = json.dumps(result, sort_keys=True, indent=2)
        path.write_text(text + "\n")
        print(text)
        logger.info(f"💾 wrote {path}")
        return path

    def emit(self, rows: Sequence[VerificationRow], summary: ExperimentSummary,
             out_dir: Optional[Union[str, Path]] = None) -> Tuple[Path, Path]:
        target = out_dir if out_dir is not None else self.out_dir
        if target is None:
            raise ConfigError("no output directory configured", field="FRACLAB_OUTPUT_DIR")
        return emit_report(rows, summary, target)
