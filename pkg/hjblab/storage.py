"""Local CSV/JSON storage for run outputs.

Every file carries the provenance triple (config hash, seed, version): CSV files
on a leading comment line, JSON files in a top-level "meta" object. Nothing
time-dependent is written, so identical configs give byte-identical files.
"""

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .config import OUTPUT_DIR
from .errors import ConfigurationError
from .fbsde import ValueEstimate
from .models import RunConfig

logger = logging.getLogger(__name__)

# Default results directory; --out and the config's output block override it
RESULTS_DIR = OUTPUT_DIR

RESOLVED_CONFIG_NAME = "resolved_config.json"
ESTIMATE_NAME = "estimate.json"


def _ensure_dir(directory: Optional[Path]) -> Path:
    """Ensure the output directory exists."""
    path = Path(directory) if directory is not None else RESULTS_DIR
    path.mkdir(parents=True, exist_ok=True)
    return path


def _canonical(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON form of the resolved config."""
    return hashlib.sha256(_canonical(config).encode("utf-8")).hexdigest()


def provenance(config: RunConfig) -> dict[str, Any]:
    return {"config_hash": config_hash(config), "seed": config.mc.seed, "version": __version__}


def _plain(value: Any) -> Any:
    """numpy scalars and arrays to JSON-native values."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_csv(
    name: str,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    meta: dict[str, Any],
    directory: Optional[Path] = None,
) -> Path:
    """Write a provenance line, a header row and the data rows."""
    path = _ensure_dir(directory) / name
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={meta['config_hash']},seed={meta['seed']},version={meta['version']}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_plain(v) for v in row])
    logger.info(f"Wrote {path}")
    return path


def read_csv(path: Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Return the provenance fields and the data rows keyed by column."""
    with open(path, newline="") as f:
        first = f.readline().strip()
        if not first.startswith("# "):
            raise ConfigurationError(f"{path} has no provenance line")
        meta = dict(item.split("=", 1) for item in first[2:].split(","))
        rows = list(csv.DictReader(f))
    return meta, rows


def write_json(name: str, payload: dict[str, Any], meta: dict[str, Any], directory: Optional[Path] = None) -> Path:
    path = _ensure_dir(directory) / name
    document = {"meta": dict(meta), **_plain(payload)}
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path


def read_json(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"File not found: {path}")
    with open(path) as f:
        return json.load(f)


def write_resolved_config(config: RunConfig, directory: Optional[Path] = None) -> Path:
    """The fully defaulted config, written next to every output."""
    return write_json(RESOLVED_CONFIG_NAME, {"config": config.model_dump(mode="json")}, provenance(config), directory)


def load_config(path: Path) -> RunConfig:
    """Validate a config file; a resolved config written by this module is accepted too."""
    data = read_json(path)
    if "meta" in data and "config" in data:
        data = data["config"]
    return RunConfig.model_validate(data)


def save_estimate(est: ValueEstimate, meta: dict[str, Any], extra: Optional[dict[str, Any]] = None,
                  directory: Optional[Path] = None) -> Path:
    payload = {"estimate": est.to_dict()}
    if extra:
        payload.update(extra)
    return write_json(ESTIMATE_NAME, payload, meta, directory)


def load_estimate(path: Path) -> tuple[ValueEstimate, dict[str, Any]]:
    """Reload an estimate; the caller binds φ again with est.bind_terminal."""
    data = read_json(path)
    try:
        return ValueEstimate.from_dict(data["estimate"]), data.get("meta", {})
    except KeyError as e:
        raise ConfigurationError(f"{path} is not a saved estimate (missing {e})") from None


def write_matrix_csv(name: str, matrix: np.ndarray, meta: dict[str, Any], directory: Optional[Path] = None) -> Path:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    header = [f"c{k}" for k in range(matrix.shape[1])]
    return write_csv(name, header, matrix.tolist(), meta, directory)
