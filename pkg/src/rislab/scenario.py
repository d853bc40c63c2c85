"""Indoor-factory deployment scenarios and hall geometry.

A scenario is one of the five InF variants together with the hall layout,
the clutter statistics and the AP / RIS / UE placement. ``validate_scenario``
is the only way to obtain an :class:`InfScenario`; everything downstream
assumes it has been through the checks here.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

Point = tuple[float, float, float]

AREA_MIN_M2 = 20.0
AREA_MAX_M2 = 160_000.0
DENSE_THRESHOLD = 0.4


class InfVariant(str, enum.Enum):
    SL = "SL"
    DL = "DL"
    SH = "SH"
    DH = "DH"
    HH = "HH"

    @property
    def dense(self) -> bool:
        return self in (InfVariant.DL, InfVariant.DH)

    @property
    def sparse(self) -> bool:
        return self in (InfVariant.SL, InfVariant.SH)

    @property
    def clutter_embedded_ap(self) -> bool:
        return self in (InfVariant.SL, InfVariant.DL)

    @classmethod
    def parse(cls, text: str) -> "InfVariant":
        key = text.strip().upper()
        if key.startswith("INF-"):
            key = key[4:]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown InF variant {text!r}") from None


CEILING_RANGE_M = {
    InfVariant.SL: (5.0, 25.0),
    InfVariant.DL: (5.0, 15.0),
    InfVariant.SH: (5.0, 25.0),
    InfVariant.DH: (5.0, 15.0),
    InfVariant.HH: (5.0, 25.0),
}

# HH has no typical size; the caller must supply one.
DEFAULT_CLUTTER_SIZE_M = {
    InfVariant.SL: 10.0,
    InfVariant.DL: 2.0,
    InfVariant.SH: 10.0,
    InfVariant.DH: 2.0,
}


class ScenarioError(ValueError):
    """Base class for every scenario constraint violation."""


class AreaOutOfRange(ScenarioError):
    pass


class CeilingHeightOutOfRange(ScenarioError):
    pass


class ClutterHeightError(ScenarioError):
    pass


class ClutterDensityError(ScenarioError):
    pass


class ClutterSizeError(ScenarioError):
    pass


class ApHeightMismatch(ScenarioError):
    pass


class UeHeightMismatch(ScenarioError):
    pass


class OutsideHall(ScenarioError):
    pass


@dataclass(frozen=True)
class FactoryLayout:
    length_m: float
    width_m: float
    ceiling_height_m: float
    clutter_density: float
    clutter_height_m: float
    clutter_size_m: float | None = None

    @property
    def area_m2(self) -> float:
        return self.length_m * self.width_m

    def contains(self, p, tol: float = 1e-9) -> bool:
        x, y, z = p
        return (
            -tol <= x <= self.length_m + tol
            and -tol <= y <= self.width_m + tol
            and -tol <= z <= self.ceiling_height_m + tol
        )


@dataclass(frozen=True)
class Placement:
    ap_pos: Point
    ris_center: Point
    ue_pos: Point

    def __post_init__(self):
        for name in ("ap_pos", "ris_center", "ue_pos"):
            p = tuple(float(v) for v in getattr(self, name))
            if len(p) != 3 or not all(math.isfinite(v) for v in p):
                raise ValueError(f"{name} must be three finite coordinates, got {p}")
            object.__setattr__(self, name, p)


@dataclass(frozen=True)
class InfScenario:
    """A validated scenario. Build it with :func:`validate_scenario`."""

    variant: InfVariant
    layout: FactoryLayout
    placement: Placement

    @property
    def clutter_size_m(self) -> float:
        # always resolved during validation
        return self.layout.clutter_size_m  # type: ignore[return-value]

    def with_placement(self, placement: Placement) -> "InfScenario":
        return validate_scenario(self.variant, self.layout, placement)

    def with_ue(self, ue_pos) -> "InfScenario":
        return self.with_placement(replace(self.placement, ue_pos=tuple(ue_pos)))


def validate_scenario(variant, layout: FactoryLayout, placement: Placement) -> InfScenario:
    """Check every deployment constraint and return an immutable scenario.

    Raises the :class:`ScenarioError` subclass naming the first violated
    constraint. Area and the dense-density threshold are closed intervals.
    """
    variant = InfVariant(variant)
    area = layout.area_m2
    if not (layout.length_m > 0 and layout.width_m > 0):
        raise AreaOutOfRange(f"hall sides must be positive, got {layout.length_m} x {layout.width_m}")
    if not AREA_MIN_M2 <= area <= AREA_MAX_M2:
        raise AreaOutOfRange(f"hall area {area:g} m^2 outside [{AREA_MIN_M2:g}, {AREA_MAX_M2:g}]")

    lo, hi = CEILING_RANGE_M[variant]
    if not lo <= layout.ceiling_height_m <= hi:
        raise CeilingHeightOutOfRange(
            f"ceiling height {layout.ceiling_height_m:g} m outside [{lo:g}, {hi:g}] for InF-{variant.value}"
        )

    h_c = layout.clutter_height_m
    if not 0.0 <= h_c <= 10.0:
        raise ClutterHeightError(f"clutter height {h_c:g} m outside [0, 10]")
    if h_c >= layout.ceiling_height_m:
        raise ClutterHeightError(f"clutter height {h_c:g} m not below ceiling {layout.ceiling_height_m:g} m")

    r = layout.clutter_density
    if not 0.0 < r < 1.0:
        raise ClutterDensityError(f"clutter density {r:g} outside (0, 1)")
    if variant.sparse and r >= DENSE_THRESHOLD:
        raise ClutterDensityError(f"density {r:g} not below {DENSE_THRESHOLD} for sparse InF-{variant.value}")
    if variant.dense and r < DENSE_THRESHOLD:
        raise ClutterDensityError(f"density {r:g} below {DENSE_THRESHOLD} for dense InF-{variant.value}")

    size = layout.clutter_size_m
    if size is None:
        if variant not in DEFAULT_CLUTTER_SIZE_M:
            raise ClutterSizeError("InF-HH has no typical clutter size; supply clutter_size_m")
        size = DEFAULT_CLUTTER_SIZE_M[variant]
        layout = replace(layout, clutter_size_m=size)
    if not size > 0:
        raise ClutterSizeError(f"clutter size must be positive, got {size:g}")

    for name in ("ap_pos", "ris_center", "ue_pos"):
        p = getattr(placement, name)
        if not layout.contains(p, tol=0.0):
            raise OutsideHall(f"{name} {p} outside the hall")

    ap_z, ue_z = placement.ap_pos[2], placement.ue_pos[2]
    if variant.clutter_embedded_ap and ap_z > h_c:
        raise ApHeightMismatch(f"InF-{variant.value} needs a clutter-embedded AP (z <= {h_c:g}), got z = {ap_z:g}")
    if not variant.clutter_embedded_ap and ap_z <= h_c:
        raise ApHeightMismatch(f"InF-{variant.value} needs the AP above clutter (z > {h_c:g}), got z = {ap_z:g}")
    if variant is InfVariant.HH and ue_z <= h_c:
        raise UeHeightMismatch(f"InF-HH needs the UE above clutter (z > {h_c:g}), got z = {ue_z:g}")
    if variant is not InfVariant.HH and ue_z > h_c:
        raise UeHeightMismatch(f"InF-{variant.value} needs a clutter-embedded UE (z <= {h_c:g}), got z = {ue_z:g}")

    return InfScenario(variant, layout, placement)


def distances(p, q) -> tuple[float, float]:
    """Horizontal and full Euclidean distance between two 3D points."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dx, dy, dz = q - p
    d2 = math.hypot(dx, dy)
    return d2, math.hypot(d2, dz)


def case_study_scenario() -> InfScenario:
    """The 75 x 50 x 10 m InF-DH hall with the near UE."""
    layout = FactoryLayout(
        length_m=75.0,
        width_m=50.0,
        ceiling_height_m=10.0,
        clutter_density=0.6,
        clutter_height_m=2.0,
        clutter_size_m=2.0,
    )
    placement = Placement(ap_pos=(30.0, 0.0, 8.0), ris_center=(75.0, 30.0, 6.0), ue_pos=(72.0, 32.0, 1.5))
    return validate_scenario(InfVariant.DH, layout, placement)
