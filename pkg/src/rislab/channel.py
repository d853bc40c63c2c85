"""InF large-scale models and per-draw channel generation.

Pathloss and shadow-fading constants follow the 3GPP InF tables. Small-scale
fading is a simplified model: each link is a deterministic LoS ray (phase
from the exact path length) optionally mixed with a circularly-symmetric
Gaussian diffuse term according to a Rician K-factor. NLoS direct paths are
Rayleigh.

Random streams
--------------
Every draw takes an explicit ``numpy.random.Generator``. Monte Carlo code
derives one generator per (seed, realization index, stream label) with
:func:`substream`, which keys a ``SeedSequence`` by ``seed`` and the spawn
key ``(realization_idx, crc32(label))``. Inside one realization the draws
happen in a fixed order: LoS uniform, shadow fading (direct, AP-RIS, RIS-UE;
only when enabled), direct-path fading, AP-RIS diffuse, RIS-UE diffuse
(diffuse terms only when the K-factor is finite).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ris import RisSpec, element_positions, wavelength
from .scenario import InfScenario, InfVariant, Placement, distances

# NLoS pathloss: intercept, distance slope, frequency slope
_NLOS_PL = {
    InfVariant.SL: (33.0, 25.5, 20.0),
    InfVariant.DL: (18.6, 35.7, 20.0),
    InfVariant.SH: (32.4, 23.0, 20.0),
    InfVariant.DH: (33.63, 21.9, 20.0),
}
SIGMA_SF_LOS_DB = 4.3
SIGMA_SF_NLOS_DB = {
    InfVariant.SL: 5.7,
    InfVariant.DL: 7.2,
    InfVariant.SH: 5.9,
    InfVariant.DH: 4.0,
}


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LinkParams:
    fc_hz: float = 28e9
    k_ris_links_db: float = math.inf
    k_bu_db: float = 10.0
    shadow_fading: bool = True
    direct_blocked: bool = False

    def __post_init__(self):
        if not self.fc_hz > 0:
            raise ValueError(f"fc_hz must be positive, got {self.fc_hz}")
        for name in ("k_ris_links_db", "k_bu_db"):
            if math.isnan(getattr(self, name)) or getattr(self, name) == -math.inf:
                raise ValueError(f"{name} must be a finite dB value or +inf")

    @property
    def wavelength_m(self) -> float:
        return wavelength(self.fc_hz)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    h_br: np.ndarray
    h_ru: np.ndarray
    h_bu: complex
    los: bool = True
    seed_tag: tuple = ()

    def __post_init__(self):
        h_br = np.asarray(self.h_br, dtype=complex).reshape(-1)
        h_ru = np.asarray(self.h_ru, dtype=complex).reshape(-1)
        if h_br.shape != h_ru.shape:
            raise ValueError(f"h_br and h_ru lengths differ: {h_br.size} vs {h_ru.size}")
        object.__setattr__(self, "h_br", h_br)
        object.__setattr__(self, "h_ru", h_ru)
        object.__setattr__(self, "h_bu", complex(self.h_bu))

    @property
    def n_elements(self) -> int:
        return self.h_br.size

    @property
    def cascaded(self) -> np.ndarray:
        return self.h_br * self.h_ru


def substream(seed: int, realization_idx: int, label: str = "") -> np.random.Generator:
    """Independent generator for one realization of one named stream."""
    key = (int(realization_idx), zlib.crc32(label.encode()))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def los_probability(scenario: InfScenario, placement: Placement | None = None) -> float:
    """LoS probability of the AP-UE link."""
    placement = placement or scenario.placement
    v = scenario.variant
    if v is InfVariant.HH:
        return 1.0
    r = scenario.layout.clutter_density
    if r >= 1.0:
        raise GeometryError("clutter density of 1 blocks every path")
    k = -scenario.clutter_size_m / math.log(1.0 - r)
    if v in (InfVariant.SH, InfVariant.DH):
        h_ap = placement.ap_pos[2]
        h_ue = placement.ue_pos[2]
        h_c = scenario.layout.clutter_height_m
        if h_c == h_ue:
            raise GeometryError("clutter height equals UE height; LoS decay length undefined")
        k *= (h_ap - h_ue) / (h_c - h_ue)
    d2, _ = distances(placement.ap_pos, placement.ue_pos)
    return min(1.0, max(0.0, math.exp(-d2 / k)))


def pathloss_los_db(d_3d, fc_ghz):
    return 31.84 + 21.50 * np.log10(d_3d) + 19.00 * np.log10(fc_ghz)


def pathloss_db(variant, los: bool, d_3d: float, fc_ghz: float, *, include_sl_floor: bool = False) -> float:
    """InF pathloss in dB.

    NLoS is floored by the LoS curve. With ``include_sl_floor`` the DL curve
    is additionally floored by the SL curve, as 3GPP does for InF-DL.
    """
    variant = InfVariant(variant)
    if not np.all(np.asarray(d_3d) >= 1.0):
        raise GeometryError(f"3D distance {d_3d} m below the 1 m model validity limit")
    if not fc_ghz > 0:
        raise ValueError(f"carrier frequency must be positive, got {fc_ghz}")
    pl_los = pathloss_los_db(d_3d, fc_ghz)
    if los or variant is InfVariant.HH:
        return pl_los
    a, bd, bf = _NLOS_PL[variant]
    pl = np.maximum(pl_los, a + bd * np.log10(d_3d) + bf * np.log10(fc_ghz))
    if include_sl_floor and variant is InfVariant.DL:
        a, bd, bf = _NLOS_PL[InfVariant.SL]
        pl = np.maximum(pl, a + bd * np.log10(d_3d) + bf * np.log10(fc_ghz))
    return pl


def shadow_fading_sigma_db(variant, los: bool) -> float:
    variant = InfVariant(variant)
    if los or variant is InfVariant.HH:
        return SIGMA_SF_LOS_DB
    return SIGMA_SF_NLOS_DB[variant]


def sample_shadow_fading_db(variant, los: bool, rng: np.random.Generator, enabled: bool = True, size=None):
    if not enabled:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, shadow_fading_sigma_db(variant, los), size=size)


def _cn(rng: np.random.Generator, size=None):
    """Unit-power circularly-symmetric complex Gaussian."""
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return (re + 1j * im) / math.sqrt(2.0)


def _mix(los_part, k_db: float, diffuse):
    if math.isinf(k_db):
        return los_part
    k = 10.0 ** (k_db / 10.0)
    return math.sqrt(k / (k + 1.0)) * los_part + math.sqrt(1.0 / (k + 1.0)) * diffuse


def _rician(los_part, k_db: float, rng: np.random.Generator):
    if math.isinf(k_db):
        return los_part
    return _mix(los_part, k_db, _cn(rng, np.shape(los_part)))


@lru_cache(maxsize=256)
def _ris_link(spec: RisSpec, endpoint: tuple, layout, lam: float) -> tuple[float, np.ndarray]:
    """Centre distance and unit LoS phasors ``exp(-j 2 pi d_n / lam)`` per element."""
    pts = element_positions(spec)
    if not (layout.contains(pts.min(axis=0)) and layout.contains(pts.max(axis=0))):
        raise GeometryError("RIS elements fall outside the hall")
    _, d_center = distances(endpoint, spec.center)
    d_n = np.linalg.norm(pts - np.asarray(endpoint), axis=1)
    phasors = np.exp(-2j * np.pi * d_n / lam)
    phasors.setflags(write=False)
    return d_center, phasors


def generate_realization(
    scenario: InfScenario,
    placement: Placement | None,
    spec: RisSpec,
    link: LinkParams,
    rng: np.random.Generator,
    *,
    force_los: bool | None = None,
    seed_tag: tuple = (),
) -> ChannelRealization:
    """Draw one (h_br, h_ru, h_bu) triple.

    ``force_los`` overrides the Bernoulli LoS draw of the direct path (the
    uniform is still consumed so stream alignment does not depend on it).
    """
    if placement is not None and placement != scenario.placement:
        scenario = scenario.with_placement(placement)
    pl_ = scenario.placement
    variant = scenario.variant
    lam = link.wavelength_m
    fc_ghz = link.fc_hz / 1e9
    sf_on = link.shadow_fading

    u = rng.random()
    los = bool(u < los_probability(scenario)) if force_los is None else bool(force_los)

    sf_bu = sample_shadow_fading_db(variant, los, rng, sf_on)
    sf_br = sample_shadow_fading_db(variant, True, rng, sf_on)
    sf_ru = sample_shadow_fading_db(variant, True, rng, sf_on)

    _, d_bu = distances(pl_.ap_pos, pl_.ue_pos)
    amp_bu = 10.0 ** (-(pathloss_db(variant, los, d_bu, fc_ghz) + sf_bu) / 20.0)
    g = _cn(rng)
    if link.direct_blocked:
        h_bu = 0j
    elif los:
        h_bu = amp_bu * _mix(complex(np.exp(-2j * math.pi * d_bu / lam)), link.k_bu_db, g)
    else:
        h_bu = amp_bu * g

    d_br, los_br = _ris_link(spec, pl_.ap_pos, scenario.layout, lam)
    d_ru, los_ru = _ris_link(spec, pl_.ue_pos, scenario.layout, lam)
    amp_br = 10.0 ** (-(pathloss_db(variant, True, d_br, fc_ghz) + sf_br) / 20.0)
    amp_ru = 10.0 ** (-(pathloss_db(variant, True, d_ru, fc_ghz) + sf_ru) / 20.0)
    h_br = amp_br * _rician(los_br, link.k_ris_links_db, rng)
    h_ru = amp_ru * _rician(los_ru, link.k_ris_links_db, rng)
    return ChannelRealization(h_br=h_br, h_ru=h_ru, h_bu=complex(h_bu), los=los, seed_tag=seed_tag)
