"""Hydrodynamic coefficient tables, radiation state space and fixtures.

A table holds A(omega), B(omega) and the excitation gain Gamma(omega) on a
strictly increasing grid, plus A_inf and a radiation state space
(A_r, B_r, C_r) whose transfer function approximates
K_r(j omega) = B(omega) + j omega (A(omega) - A_inf).

Synthetic fixtures are anchored on a few (omega, A, B) points. Their
radiation model is a non-negative combination of positive-real second-order
sections, so the fitted radiation force is passive at every frequency.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import nnls

from app.core.exceptions import FixtureError, HydroRangeError
from app.core.scenario import PlantConfig
from app.services.waves import GRAVITY, solve_dispersion

logger = logging.getLogger(__name__)

# Relative anchor mismatch tolerated by the radiation fit
FIT_TOLERANCE = 0.05

# Damping ratios of the candidate second-order sections
SECTION_DAMPING = (0.1, 0.25, 0.5, 1.0, 2.0)
SECTION_FREQUENCIES = 32

# Radiation memory is fitted with at most this many second-order sections
MAX_SECTIONS = 4


@dataclass(frozen=True)
class RadiationModel:
    """State-space radiation memory zeta' = A_r zeta + B_r xdot, F = C_r zeta."""
    ar: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    br: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cr: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def order(self) -> int:
        return int(self.br.size)

    def transfer(self, omega) -> np.ndarray:
        """K_r(j omega) for scalar or array omega."""
        omegas = np.atleast_1d(np.asarray(omega, dtype=float))
        if not self.order:
            return np.zeros(omegas.shape, dtype=complex)
        eye = np.eye(self.order)
        return np.array([self.cr @ np.linalg.solve(1j * w * eye - self.ar, self.br) for w in omegas])

    def is_stable(self) -> bool:
        return not self.order or bool(np.max(np.linalg.eigvals(self.ar).real) < 0)


@dataclass(frozen=True)
class HydroTable:
    """Frequency-sampled hydrodynamic coefficients for one body."""
    omega: np.ndarray
    added_mass: np.ndarray
    damping: np.ndarray
    excitation: np.ndarray
    a_inf: float
    radiation: RadiationModel = field(default_factory=RadiationModel)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim != 1 or omega.size < 1:
            raise FixtureError("Hydro table needs at least one frequency")
        if np.any(np.diff(omega) <= 0):
            raise FixtureError("Hydro table frequencies must be strictly increasing")
        for name in ("added_mass", "damping", "excitation"):
            if np.asarray(getattr(self, name)).shape != omega.shape:
                raise FixtureError(f"Hydro column {name} does not match the frequency grid")
        if np.any(np.asarray(self.damping) < 0):
            raise FixtureError("Radiation damping B(omega) must be non-negative")
        if not math.isfinite(self.a_inf):
            raise FixtureError("A_inf must be finite")
        if not self.radiation.is_stable():
            raise FixtureError("Radiation state space is not stable")

    @property
    def bounds(self) -> Tuple[float, float]:
        return float(self.omega[0]), float(self.omega[-1])

    def interp(self, omega: float) -> Tuple[float, float, float]:
        """(A, B, Gamma) at ``omega`` by piecewise-linear interpolation.

        Raises:
            HydroRangeError: If ``omega`` is outside the grid.
        """
        low, high = self.bounds
        if not low <= omega <= high:
            raise HydroRangeError(
                f"omega={omega:.6g} rad/s outside hydro table range [{low:.6g}, {high:.6g}]",
                omega,
                (low, high),
            )
        return (
            float(np.interp(omega, self.omega, self.added_mass)),
            float(np.interp(omega, self.omega, self.damping)),
            float(np.interp(omega, self.omega, self.excitation)),
        )


def interp(table: HydroTable, omega: float) -> Tuple[float, float, float]:
    """(A, B, Gamma) of ``table`` at ``omega``."""
    return table.interp(omega)


def optimal_msd(m: float, k: float, omega: float, c: float) -> Tuple[float, float]:
    """Impedance-matched (K_opt, C_opt) of the harmonically forced MSD."""
    if m <= 0:
        raise ValueError("m must be > 0")
    return omega * omega * m - k, c


def optimal_pa(table: HydroTable, m: float, omega: float) -> Tuple[float, float]:
    """Drag-free (K_opt, C_opt) = (omega^2 (m + A), B) of a point absorber.

    With viscous drag the resistive optimum lies above B(omega).
    """
    added_mass, damping, _ = table.interp(omega)
    return omega * omega * (m + added_mass), damping


def excitation_gain(omega, depth: float, submergence: float, frontal_area: float, rho_w: float = 1025.0, g: float = GRAVITY):
    """Froude-Krylov gain rho g S_x exp(-kappa d_s) per unit wave amplitude."""
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    kappa = np.array([solve_dispersion(w, depth, g) for w in omegas])
    return rho_w * g * frontal_area * np.exp(-kappa * submergence)


def _section_bases(omegas: np.ndarray, natural: float, damping_ratio: float) -> Tuple[np.ndarray, np.ndarray]:
    """s/D and (s + a1)/D at s = j omega for D = s^2 + a1 s + a0."""
    s = 1j * omegas
    a1 = 2.0 * damping_ratio * natural
    denominator = s * s + a1 * s + natural * natural
    return s / denominator, (s + a1) / denominator


def _realize(sections: List[Tuple[float, float, float, float]]) -> RadiationModel:
    """Block-diagonal companion realization of (b1 s + b0)/(s^2 + a1 s + a0)."""
    n = 2 * len(sections)
    ar = np.zeros((n, n))
    br = np.zeros(n)
    cr = np.zeros(n)
    for i, (a1, a0, b1, b0) in enumerate(sections):
        j = 2 * i
        ar[j, j + 1] = 1.0
        ar[j + 1, j] = -a0
        ar[j + 1, j + 1] = -a1
        br[j + 1] = 1.0
        cr[j] = b0
        cr[j + 1] = b1
    return RadiationModel(ar, br, cr)


def fit_radiation(
    omegas: Sequence[float],
    added_mass: Sequence[float],
    damping: Sequence[float],
    max_order: int = 2 * MAX_SECTIONS,
) -> Tuple[RadiationModel, float]:
    """Passive radiation state space through anchor points.

    Solves a non-negative least-squares problem over a dictionary of
    positive-real second-order sections with A_inf as an extra non-negative
    unknown. Sections beyond ``max_order / 2`` are pruned by contribution.

    Args:
        omegas: Anchor frequencies (rad/s).
        added_mass: A at the anchors.
        damping: B at the anchors (>= 0).
        max_order: Upper bound on the state dimension (even, 2 to 8).

    Returns:
        (radiation model, A_inf).

    Raises:
        FixtureError: If B is negative or the fit misses an anchor by more than 5%.
    """
    w = np.asarray(omegas, dtype=float)
    a = np.asarray(added_mass, dtype=float)
    b = np.asarray(damping, dtype=float)
    if np.any(b < 0):
        raise FixtureError("Infeasible radiation fit: negative damping anchor")
    if max_order < 2:
        raise FixtureError("max_order must be >= 2 for a radiation fit")
    if max_order > 2 * MAX_SECTIONS:
        raise FixtureError(f"max_order {max_order} exceeds {MAX_SECTIONS} second-order sections")

    scale = np.maximum(b, 0.1 * max(float(b.max()), 1e-12))
    naturals = np.geomspace(0.25 * w.min(), 4.0 * w.max(), SECTION_FREQUENCIES)
    candidates = [(wn, zeta) for wn in naturals for zeta in SECTION_DAMPING]

    def solve(pool):
        columns = []
        for wn, zeta in pool:
            columns.extend(_section_bases(w, wn, zeta))
        basis = np.array(columns).T
        matrix = np.vstack([
            np.hstack([basis.real, np.zeros((w.size, 1))]),
            np.hstack([basis.imag, w[:, None]]),
        ])
        target = np.concatenate([b, w * a])
        weights = np.concatenate([1.0 / scale, 1.0 / scale])
        weighted = matrix * weights[:, None]
        norms = np.linalg.norm(weighted, axis=0)
        norms[norms == 0] = 1.0
        solution, _ = nnls(weighted / norms, target * weights, maxiter=50 * weighted.shape[1])
        return solution / norms

    def sections_of(pool, coefficients):
        out = []
        for i, (wn, zeta) in enumerate(pool):
            c1, c2 = coefficients[2 * i], coefficients[2 * i + 1]
            if c1 > 0 or c2 > 0:
                a1 = 2.0 * zeta * wn
                out.append(((wn, zeta), (a1, wn * wn, c1 + c2, c2 * a1)))
        return out

    coefficients = solve(candidates)
    active = sections_of(candidates, coefficients)

    if 2 * len(active) > max_order:
        def weight(item):
            (wn, zeta), (_, _, b1, b0) = item
            basis1, basis2 = _section_bases(w, wn, zeta)
            c2 = b0 / (2.0 * zeta * wn)
            return float(np.sum(np.abs((b1 - c2) * basis1 + c2 * basis2) / scale))

        keep = sorted(active, key=weight, reverse=True)[: max_order // 2]
        pool = [item[0] for item in keep]
        logger.info(f"Radiation fit pruned from {len(active)} to {len(pool)} sections")
        coefficients = solve(pool)
        active = sections_of(pool, coefficients)

    a_inf = float(coefficients[-1])
    model = _realize([item[1] for item in active])

    fitted = model.transfer(w)
    target = b + 1j * w * (a - a_inf)
    errors = np.abs(fitted - target) / np.maximum(np.abs(target), 1e-12)
    logger.info(
        f"Radiation fit: order {model.order}, A_inf={a_inf:.6g}, "
        f"max anchor error {100.0 * errors.max():.3g}%"
    )
    if np.any(errors > FIT_TOLERANCE):
        raise FixtureError(
            f"Radiation fit misses anchors by up to {100.0 * errors.max():.3g}%",
            {"errors": errors.tolist()},
        )
    return model, a_inf


def synth_fixture(
    anchors: Sequence[Tuple[float, float, float]],
    max_order: int,
    depth: float,
    submergence: float,
    frontal_area: float,
    rho_w: float = 1025.0,
    omega_min: Optional[float] = None,
    omega_max: Optional[float] = None,
    grid_points: int = 400,
) -> HydroTable:
    """Synthetic hydro table through (omega, A, B) anchors.

    Inside the anchor band A and B follow monotone cubic interpolation
    through the anchors. Outside it they follow the fitted radiation model
    (flat for ``max_order == 0``), and the highest node carries A_inf.

    Args:
        anchors: (omega, A, B) triples.
        max_order: Radiation state order bound; 0 builds the constant-coefficient variant.
        depth: Water depth (m).
        submergence: Body centre depth (m).
        frontal_area: S_x in the Froude-Krylov gain.
        rho_w: Water density (kg/m^3).
        omega_min: Lowest grid frequency; default 0.2 x lowest anchor.
        omega_max: Highest grid frequency; default 5 x highest anchor.
        grid_points: Log-spaced nodes added to the anchors.

    Raises:
        FixtureError: On negative damping, duplicate anchors or a failed fit.
    """
    if not anchors:
        raise FixtureError("Fixture needs at least one anchor")
    ordered = sorted((float(w), float(a), float(b)) for w, a, b in anchors)
    w_anchor = np.array([item[0] for item in ordered])
    a_anchor = np.array([item[1] for item in ordered])
    b_anchor = np.array([item[2] for item in ordered])
    if np.any(b_anchor < 0):
        raise FixtureError("Infeasible fixture: negative damping anchor")
    if np.any(np.diff(w_anchor) <= 0):
        raise FixtureError("Fixture anchors must have distinct frequencies")

    low = omega_min if omega_min is not None else 0.2 * w_anchor[0]
    high = omega_max if omega_max is not None else 5.0 * w_anchor[-1]
    if not low < w_anchor[0] or not w_anchor[-1] < high:
        raise FixtureError("Fixture grid must extend beyond the anchors")
    grid = np.union1d(np.geomspace(low, high, grid_points), w_anchor)

    if max_order == 0:
        radiation = RadiationModel()
        tail_a = lambda x: np.interp(x, w_anchor, a_anchor)
        tail_b = lambda x: np.interp(x, w_anchor, b_anchor)
        a_inf = float(a_anchor[-1])
    else:
        radiation, a_inf = fit_radiation(w_anchor, a_anchor, b_anchor, max_order)
        tail_a = lambda x: a_inf + radiation.transfer(x).imag / x
        tail_b = lambda x: np.maximum(radiation.transfer(x).real, 0.0)

    inside = (grid >= w_anchor[0]) & (grid <= w_anchor[-1])
    added_mass = np.empty_like(grid)
    damping = np.empty_like(grid)
    if w_anchor.size >= 2:
        added_mass[inside] = PchipInterpolator(w_anchor, a_anchor)(grid[inside])
        damping[inside] = PchipInterpolator(w_anchor, b_anchor)(grid[inside])
    else:
        added_mass[inside] = a_anchor[0]
        damping[inside] = b_anchor[0]
    added_mass[~inside] = tail_a(grid[~inside])
    damping[~inside] = tail_b(grid[~inside])

    # Anchors are stored exactly
    idx = np.searchsorted(grid, w_anchor)
    added_mass[idx] = a_anchor
    damping[idx] = b_anchor
    added_mass[-1] = a_inf

    gain = excitation_gain(grid, depth, submergence, frontal_area, rho_w)
    return HydroTable(grid, added_mass, damping, gain, a_inf, radiation)


def build_hydro_table(plant: PlantConfig) -> HydroTable:
    """Hydro table for a point-absorber config (file or anchors)."""
    hydro = plant.hydro
    if hydro is None:
        raise FixtureError("Plant has no hydro section")
    if hydro.file is not None:
        return read_hydro_table(hydro.file)
    anchors = [
        (anchor.frequency, anchor.added_mass_for(plant.m), anchor.damping)
        for anchor in hydro.anchors
    ]
    return synth_fixture(
        anchors,
        hydro.max_order,
        depth=plant.depth,
        submergence=plant.submergence,
        frontal_area=plant.frontal_area,
        rho_w=plant.rho_w,
        omega_min=hydro.omega_min,
        omega_max=hydro.omega_max,
        grid_points=hydro.grid_points,
    )


def _format_row(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def write_hydro_table(table: HydroTable, path: Union[str, Path]) -> Path:
    """Write ``table`` in the columnar text format read by read_hydro_table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    radiation = table.radiation
    lines = [
        "# wave-esc hydro table",
        f"# A_inf: {table.a_inf:.17g}",
        f"# n_r: {radiation.order}",
        f"# A_r: {_format_row(radiation.ar.reshape(-1))}",
        f"# B_r: {_format_row(radiation.br)}",
        f"# C_r: {_format_row(radiation.cr)}",
        "# columns: omega A B Gamma",
    ]
    for row in zip(table.omega, table.added_mass, table.damping, table.excitation):
        lines.append(_format_row(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_hydro_table(path: Union[str, Path]) -> HydroTable:
    """Parse a hydro text file.

    Header lines ``# key: values`` carry A_inf, n_r and the row-major
    radiation matrices; body rows are ``omega A B Gamma``.

    Raises:
        FixtureError: On missing keys, malformed rows or non-monotone omega.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise FixtureError(f"Cannot read hydro table {path}: {e}")

    header = {}
    rows = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition(":")
            if sep:
                header[key.strip()] = value.split()
            continue
        try:
            row = [float(v) for v in stripped.split()]
        except ValueError:
            raise FixtureError(f"{path}:{number}: non-numeric row")
        if len(row) != 4:
            raise FixtureError(f"{path}:{number}: expected 4 columns, got {len(row)}")
        rows.append(row)

    try:
        a_inf = float(header["A_inf"][0])
        order = int(header["n_r"][0])
        ar = np.array([float(v) for v in header.get("A_r", [])])
        br = np.array([float(v) for v in header.get("B_r", [])])
        cr = np.array([float(v) for v in header.get("C_r", [])])
    except (KeyError, IndexError, ValueError) as e:
        raise FixtureError(f"{path}: bad header ({e})")
    if ar.size != order * order or br.size != order or cr.size != order:
        raise FixtureError(f"{path}: radiation blocks do not match n_r={order}")
    if not rows:
        raise FixtureError(f"{path}: no data rows")

    data = np.array(rows)
    if np.any(np.diff(data[:, 0]) <= 0):
        raise FixtureError(f"{path}: omega column is not strictly increasing")

    radiation = RadiationModel(ar.reshape(order, order), br, cr)
    return HydroTable(data[:, 0], data[:, 1], data[:, 2], data[:, 3], a_inf, radiation)
