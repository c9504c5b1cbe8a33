"""
Data I/O Service

CSV ingestion and emission in the flat format

    y, t_1_1 ... t_p_q (row-major), x_1 ... x_L

plus JSON documents and the reproducibility manifest written by every run.
"""

import hashlib
import json
import platform
import re
from pathlib import Path
from typing import Any, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy

from .. import __version__
from ..core.exceptions import InputError
from ..core.logging import get_logger
from ..models.dataset import Dataset

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"
_TREATMENT = re.compile(r"^t_(\d+)_(\d+)$")
_COVARIATE = re.compile(r"^x_(\d+)$")


def _infer_dims(columns: List[str]) -> Tuple[int, int]:
    pairs = [tuple(int(g) for g in _TREATMENT.match(c).groups()) for c in columns if _TREATMENT.match(c)]
    if not pairs:
        raise InputError("no treatment columns (t_a_b) in the CSV header")
    return max(a for a, _ in pairs), max(b for _, b in pairs)


def read_dataset_csv(path, p: Optional[int] = None, q: Optional[int] = None) -> Dataset:
    """
    Parse a dataset CSV; p and q are inferred from the header when omitted.

    Values are parsed with round-trip float precision.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}")

    columns = [str(c).strip() for c in frame.columns]
    if not columns or columns[0] != "y":
        raise InputError(f"{path}: first column must be 'y', found {columns[:1]}")

    inferred = _infer_dims(columns)
    p = p or inferred[0]
    q = q or inferred[1]
    expected_t = [f"t_{a + 1}_{b + 1}" for a in range(p) for b in range(q)]
    if columns[1:1 + p * q] != expected_t:
        raise InputError(
            f"{path}: expected treatment columns {expected_t[0]} ... {expected_t[-1]} (row-major, p={p}, q={q}) "
            f"after 'y'; check --p/--q"
        )
    rest = columns[1 + p * q:]
    expected_x = [f"x_{j + 1}" for j in range(len(rest))]
    if not rest or rest != expected_x:
        raise InputError(f"{path}: expected covariate columns x_1 ... x_L after the treatments, found {rest[:3]}")

    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value ({exc})")

    n = values.shape[0]
    logger.info("dataset_loaded", path=str(path), n=n, p=p, q=q, covariates=len(rest))
    return Dataset(
        treatments=values[:, 1:1 + p * q].reshape(n, p, q),
        covariates=values[:, 1 + p * q:],
        outcomes=values[:, 0],
    )


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    columns = ["y"] + dataset.treatment_names() + dataset.covariate_names()
    values = np.column_stack([
        dataset.outcomes,
        dataset.treatments.reshape(dataset.n, -1),
        dataset.covariates,
    ])
    return pd.DataFrame(values, columns=columns)


def write_dataset_csv(dataset: Dataset, path) -> Path:
    """Write a dataset with 17 significant digits so it re-reads value-identical."""
    return write_frame(dataset_frame(dataset), path)


def write_frame(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
    return path


def write_json(document: Any, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}")


def config_hash(document: dict) -> str:
    """sha256 of the canonical (sorted-key) JSON form."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def environment_versions() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "app": __version__,
    }


def write_manifest(output_dir, command: str, arguments: dict, seed: Optional[int], files: Iterable[Path]) -> Path:
    """manifest.json: enough to rerun the command exactly."""
    output_dir = Path(output_dir)
    document = {
        "command": command,
        "arguments": arguments,
        "config_hash": config_hash({"command": command, "arguments": arguments}),
        "seed": seed,
        "versions": environment_versions(),
        "platform": platform.platform(),
        "files": sorted(Path(f).name for f in files),
    }
    return write_json(document, output_dir / "manifest.json")
