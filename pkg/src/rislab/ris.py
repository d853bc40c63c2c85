"""RIS panel model: element grid, phase levels and the practical amplitude response."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
MAX_PHASE_BITS = 16
TWO_PI = 2.0 * math.pi

# level-unit slack under which two candidate levels count as equidistant
_TIE_TOL = 1e-9


def wavelength(fc_hz: float) -> float:
    return SPEED_OF_LIGHT / fc_hz


@dataclass(frozen=True)
class AmplitudeParams:
    """Parameters of the phase-dependent reflection amplitude.

    The defaults describe a realistic varactor-based element; ``omega=0``
    gives the lossless case.
    """

    rho_min: float = 0.2
    xi_rad: float = 0.43 * math.pi
    omega: float = 1.6

    def __post_init__(self):
        if not 0.0 <= self.rho_min <= 1.0:
            raise ValueError(f"rho_min must lie in [0, 1], got {self.rho_min}")
        if self.xi_rad < 0 or self.omega < 0:
            raise ValueError("xi_rad and omega must be non-negative")

    @classmethod
    def ideal(cls) -> "AmplitudeParams":
        return cls(rho_min=1.0, xi_rad=0.0, omega=0.0)

    @property
    def is_ideal(self) -> bool:
        return self.omega == 0.0 or self.rho_min == 1.0


@dataclass(frozen=True)
class RisSpec:
    rows: int
    cols: int
    phase_bits: int
    spacing_m: float
    center: tuple[float, float, float]
    normal: tuple[float, float, float] = (-1.0, 0.0, 0.0)
    element_aperture_m: float | None = None
    amp: AmplitudeParams = field(default_factory=AmplitudeParams)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"panel needs at least one element, got {self.rows} x {self.cols}")
        if not 0 <= self.phase_bits <= MAX_PHASE_BITS:
            raise ValueError(f"phase_bits must lie in [0, {MAX_PHASE_BITS}], got {self.phase_bits}")
        if not self.spacing_m > 0:
            raise ValueError(f"spacing_m must be positive, got {self.spacing_m}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        normal = tuple(float(v) for v in self.normal)
        if abs(math.sqrt(sum(v * v for v in normal)) - 1.0) > 1e-9:
            raise ValueError(f"normal must be a unit vector, got {normal}")
        object.__setattr__(self, "normal", normal)
        if self.element_aperture_m is None:
            object.__setattr__(self, "element_aperture_m", self.spacing_m)

    @classmethod
    def for_frequency(cls, rows: int, cols: int, phase_bits: int, fc_hz: float, center, **kwargs) -> "RisSpec":
        """Half-wavelength pitch at ``fc_hz`` unless ``spacing_m`` is given."""
        kwargs.setdefault("spacing_m", wavelength(fc_hz) / 2.0)
        return cls(rows=rows, cols=cols, phase_bits=phase_bits, center=center, **kwargs)

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols

    @property
    def continuous(self) -> bool:
        return self.phase_bits == 0

    @property
    def panel_width_m(self) -> float:
        return self.cols * self.spacing_m

    @property
    def panel_height_m(self) -> float:
        return self.rows * self.spacing_m

    @property
    def fingerprint(self) -> tuple:
        return (self.n_elements, self.phase_bits, self.amp.rho_min, self.amp.xi_rad, self.amp.omega)


class PhaseConfig:
    """Per-element phase assignment.

    ``bits > 0`` holds level indices into ``phase_set(bits)``; ``bits == 0``
    holds continuous phases in radians, wrapped into ``[0, 2*pi)``.
    """

    __slots__ = ("bits", "values")

    def __init__(self, values, bits: int):
        if not 0 <= bits <= MAX_PHASE_BITS:
            raise ValueError(f"bits must lie in [0, {MAX_PHASE_BITS}], got {bits}")
        if bits:
            arr = np.asarray(values)
            if arr.size and not np.issubdtype(arr.dtype, np.integer):
                if not np.all(arr == np.round(arr)):
                    raise ValueError("discrete phase config needs integer level indices")
            arr = arr.astype(np.int64).reshape(-1)
            if arr.size and (arr.min() < 0 or arr.max() >= 1 << bits):
                raise ValueError(f"level index outside [0, {(1 << bits) - 1}]")
        else:
            arr = np.asarray(values, dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)) or (arr.size and (arr.min() < 0 or arr.max() >= TWO_PI)):
                raise ValueError("continuous phases must lie in [0, 2*pi)")
        arr.setflags(write=False)
        self.bits = bits
        self.values = arr

    @classmethod
    def zeros(cls, n: int, bits: int) -> "PhaseConfig":
        return cls(np.zeros(n, dtype=np.int64 if bits else float), bits)

    @classmethod
    def continuous(cls, radians) -> "PhaseConfig":
        return cls(wrap_phase(np.asarray(radians, dtype=float)), 0)

    @property
    def mode(self) -> str:
        return "discrete" if self.bits else "continuous"

    def __len__(self) -> int:
        return self.values.size

    def phases(self) -> np.ndarray:
        if self.bits:
            return self.values * (TWO_PI / (1 << self.bits))
        return self.values.astype(float)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhaseConfig):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.bits, self.values.tobytes()))

    def __repr__(self) -> str:
        head = ", ".join(str(v) for v in self.values[:8].tolist())
        more = ", ..." if len(self) > 8 else ""
        return f"PhaseConfig(bits={self.bits}, n={len(self)}, values=[{head}{more}])"


def wrap_phase(theta):
    """Wrap radians into ``[0, 2*pi)``."""
    w = np.mod(theta, TWO_PI)
    # np.mod can round tiny negatives up to exactly 2*pi
    return np.where(w >= TWO_PI, 0.0, w)


def _check_bits(b: int) -> None:
    if not 1 <= b <= MAX_PHASE_BITS:
        raise ValueError(f"phase bits must lie in [1, {MAX_PHASE_BITS}] for a discrete set, got {b}")


def phase_set(b: int) -> np.ndarray:
    """The ``2**b`` uniformly spaced phase levels in ascending order."""
    _check_bits(b)
    levels = 1 << b
    return np.arange(levels) * (TWO_PI / levels)


def reflection_amplitude(theta, amp: AmplitudeParams):
    """Phase-dependent amplitude, between ``rho_min`` and 1."""
    if amp.omega == 0.0:
        return np.ones_like(np.asarray(theta, dtype=float))[()]
    base = (np.sin(np.asarray(theta, dtype=float) - amp.xi_rad) + 1.0) / 2.0
    return ((1.0 - amp.rho_min) * np.power(base, amp.omega) + amp.rho_min)[()]


def reflection_coefficient(theta, amp: AmplitudeParams):
    theta = np.asarray(theta, dtype=float)
    return (reflection_amplitude(theta, amp) * np.exp(1j * theta))[()]


def level_coefficients(b: int, amp: AmplitudeParams) -> np.ndarray:
    """Complex reflection coefficient of every level of a ``b``-bit element."""
    return np.asarray(reflection_coefficient(phase_set(b), amp), dtype=complex)


def quantize_phase(theta, b: int):
    """Nearest level index on the circle; exact ties go to the smaller phase."""
    _check_bits(b)
    levels = 1 << b
    x = np.mod(np.asarray(theta, dtype=float) * (levels / TWO_PI), levels)
    x = np.where(x >= levels, 0.0, x)
    lo = np.floor(x).astype(np.int64)
    frac = x - lo
    lo %= levels
    hi = (lo + 1) % levels
    d_lo, d_hi = frac, 1.0 - frac
    tie = np.abs(d_hi - d_lo) <= _TIE_TOL
    # hi is the smaller phase only when it wrapped around to level 0
    idx = np.where(tie, np.where(hi == 0, hi, lo), np.where(d_hi < d_lo, hi, lo))
    return idx[()] if idx.ndim == 0 else idx


def panel_axes(normal) -> tuple[np.ndarray, np.ndarray]:
    """In-plane (column, row) unit axes for a panel facing ``normal``.

    The column axis is horizontal whenever the panel is not horizontal;
    the row axis completes the frame as ``normal x column``.
    """
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("panel normal must be non-zero")
    n = n / norm
    u = np.cross([0.0, 0.0, 1.0], n)
    if np.linalg.norm(u) < 1e-12:
        # ceiling/floor panel
        u = np.array([1.0, 0.0, 0.0])
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


@lru_cache(maxsize=64)
def _element_grid(rows, cols, spacing, center, normal) -> np.ndarray:
    u, v = panel_axes(normal)
    r = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    c = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    # row-major: row index varies slowest
    rr, cc = np.meshgrid(r, c, indexing="ij")
    pts = np.asarray(center) + rr.reshape(-1, 1) * v + cc.reshape(-1, 1) * u
    pts.setflags(write=False)
    return pts


def element_positions(spec: RisSpec) -> np.ndarray:
    """``(N, 3)`` element centres, row-major, centred on ``spec.center``."""
    return _element_grid(spec.rows, spec.cols, spec.spacing_m, spec.center, spec.normal)
