"""Run directories and the CSV / text artifacts written by experiments."""

import logging
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, Tuple, Union

import numpy as np

from app.core.exceptions import FileOperationError
from app.pipeline.engine import COLUMNS, RunRecord

logger = logging.getLogger(__name__)


def generate_run_id() -> str:
    """Run ID in the format YYYYMMDD_HHMMSS_<uuid8>."""
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    return f"{timestamp}_{str(uuid.uuid4())[:8]}"


def format_value(value: Any, float_format: str = "%.17g") -> str:
    if isinstance(value, (float, np.floating)):
        return float_format % value
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v, float_format) for v in value) + "]"
    return str(value)


class ArtifactWriter:
    """Writes the artifacts of one experiment into a single directory."""

    def __init__(self, out_dir: Union[str, Path], float_format: str = "%.17g"):
        """Initialize writer.

        Args:
            out_dir: Output directory, created if missing.
            float_format: printf-style format for floats in CSV and summaries.
        """
        self.out_dir = Path(out_dir)
        self.float_format = float_format
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise FileOperationError(f"Failed to create output directory {self.out_dir}: {str(e)}")

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _save(self, name: str, array: np.ndarray, header: str) -> Path:
        path = self.path(name)
        try:
            np.savetxt(path, array, fmt=self.float_format, delimiter=",", header=header, comments="")
        except OSError as e:
            raise FileOperationError(f"Failed to write {path}: {str(e)}")
        logger.info(f"Wrote {path}")
        return path

    def write_run(self, record: RunRecord, name: str = "run.csv") -> Path:
        """Decimated series with columns t,x,xdot,K,C,P,mu,J."""
        return self._save(name, record.data, ",".join(COLUMNS))

    def write_surface(self, k_values, c_values, power, name: str = "surface.csv") -> Path:
        """Map body P_bar; header row holds C values, first column K values."""
        k_values = np.asarray(k_values, dtype=float)
        body = np.column_stack([k_values, np.asarray(power, dtype=float)])
        header = "K\\C," + ",".join(self.float_format % c for c in c_values)
        return self._save(name, body, header)

    def write_phases(self, sea, name: str = "phases.csv") -> Path:
        """Sea components: omega, amplitude, wavenumber, phase."""
        body = np.column_stack([sea.omegas, sea.amplitudes, sea.wavenumbers, sea.phases])
        return self._save(name, body, "omega,amplitude,wavenumber,phase")

    def write_summary(self, entries: Iterable[Tuple[str, Any]], name: str = "summary.txt") -> Path:
        """``key: value`` lines in the given order."""
        path = self.path(name)
        lines = [f"{key}: {format_value(value, self.float_format)}" for key, value in entries]
        try:
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            raise FileOperationError(f"Failed to write {path}: {str(e)}")
        logger.info(f"Wrote {path}")
        return path


def read_run_csv(path: Union[str, Path]) -> np.ndarray:
    """Parse a run CSV back into an (n, 8) array.

    Raises:
        FileOperationError: On unreadable files or a foreign header.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            data = np.loadtxt(f, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise FileOperationError(f"Failed to read {path}: {str(e)}")
    if tuple(header.split(",")) != COLUMNS:
        raise FileOperationError(f"{path} does not have run columns {','.join(COLUMNS)}")
    return data


def read_surface_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(K values, C values, P_bar body) from a surface CSV."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            c_values = np.array([float(v) for v in f.readline().strip().split(",")[1:]])
            body = np.loadtxt(f, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise FileOperationError(f"Failed to read {path}: {str(e)}")
    return body[:, 0], c_values, body[:, 1:]


def read_summary(path: Union[str, Path]) -> Dict[str, str]:
    """``key: value`` lines as a dict of strings."""
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition(": ")
        if sep:
            entries[key] = value
    return entries
