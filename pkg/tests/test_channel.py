import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rislab.channel import (
    GeometryError,
    LinkParams,
    generate_realization,
    los_probability,
    pathloss_db,
    sample_shadow_fading_db,
    substream,
)
from rislab.ris import RisSpec, wavelength
from rislab.scenario import FactoryLayout, InfVariant, Placement, validate_scenario

HALL_DH = FactoryLayout(75, 50, 10, 0.6, 2.0, 2.0)
HALL_SL = FactoryLayout(75, 50, 10, 0.2, 2.0, 10.0)
PURE = LinkParams(shadow_fading=False)


def dh_at(d2d):
    return validate_scenario("DH", HALL_DH, Placement((30, 0, 8), (75, 30, 6), (30 + d2d, 0, 1.5)))


def test_los_probability_hh_is_one():
    sc = validate_scenario("HH", HALL_DH, Placement((30, 0, 8), (75, 30, 6), (70, 45, 3)))
    assert los_probability(sc) == 1.0


def test_los_probability_sl():
    k = -10 / math.log(0.8)
    assert k == pytest.approx(44.814, abs=1e-3)
    sc = validate_scenario("SL", HALL_SL, Placement((1, 0, 1.5), (75, 30, 6), (1 + k, 0, 1.5)))
    assert los_probability(sc) == pytest.approx(math.exp(-1), abs=1e-9)
    assert los_probability(sc) == pytest.approx(0.3679, abs=1e-4)


def test_los_probability_dh():
    # k = -2/ln(0.4) * (8 - 1.5)/(2 - 1.5), by hand 28.375
    assert los_probability(dh_at(20.0)) == pytest.approx(math.exp(-20 / 28.3753), abs=1e-4)
    assert los_probability(dh_at(20.0)) == pytest.approx(0.494, abs=1e-3)


def test_los_probability_degenerate():
    sc = validate_scenario("DH", HALL_DH, Placement((30, 0, 8), (75, 30, 6), (50, 0, 2.0)))
    with pytest.raises(GeometryError):
        los_probability(sc)


@given(st.floats(0, 40), st.floats(0, 40))
def test_los_probability_monotone(a, b):
    lo, hi = sorted((a, b))
    assert los_probability(dh_at(hi)) <= los_probability(dh_at(lo))


@pytest.mark.parametrize(
    "variant, los, d, fc, expected",
    [
        ("DH", True, 10, 28, 80.84),
        ("SL", True, 1, 1, 31.84),
        # LoS: 31.84 + 21.5 log10 2 + 19 log10 28 = 65.81; DL: 18.6 + 35.7 log10 2 + 20 log10 28 = 58.29
        ("DL", False, 2, 28, 65.81),
    ],
)
def test_pathloss_values(variant, los, d, fc, expected):
    assert pathloss_db(variant, los, d, fc) == pytest.approx(expected, abs=0.01)


def test_pathloss_nlos_branches():
    # DH NLoS at 100 m / 28 GHz: 33.63 + 43.8 + 28.943 beats LoS 31.84 + 43 + 27.496
    assert pathloss_db("DH", False, 100, 28) == pytest.approx(33.63 + 21.9 * 2 + 20 * math.log10(28))
    assert pathloss_db("HH", False, 100, 28) == pathloss_db("HH", True, 100, 28)
    sl = 33.0 + 25.5 * math.log10(2) + 20 * math.log10(28)
    assert pathloss_db("DL", False, 2, 28, include_sl_floor=True) == pytest.approx(sl)


def test_pathloss_rejects_short_distance():
    with pytest.raises(GeometryError):
        pathloss_db("DH", True, 0.5, 28)


@given(
    st.sampled_from(list(InfVariant)),
    st.floats(1, 2000),
    st.floats(1, 2000),
    st.floats(0.5, 100),
    st.floats(0.5, 100),
)
def test_pathloss_monotone_and_nlos_floor(variant, d1, d2, f1, f2):
    for los in (True, False):
        assert pathloss_db(variant, los, max(d1, d2), f1) >= pathloss_db(variant, los, min(d1, d2), f1)
        assert pathloss_db(variant, los, d1, max(f1, f2)) >= pathloss_db(variant, los, d1, min(f1, f2))
    assert pathloss_db(variant, False, d1, f1) >= pathloss_db(variant, True, d1, f1)


def test_shadow_fading_statistics():
    assert sample_shadow_fading_db("DH", True, np.random.default_rng(0), enabled=False) == 0.0
    los = sample_shadow_fading_db("DH", True, np.random.default_rng(1), size=100_000)
    assert abs(los.std() / 4.3 - 1) < 0.02
    nlos = sample_shadow_fading_db("DH", False, np.random.default_rng(2), size=100_000)
    assert abs(nlos.mean()) < 0.05
    assert abs(nlos.std() / 4.0 - 1) < 0.02


def spec_at(center, rows=4, cols=4, **kw):
    return RisSpec.for_frequency(rows, cols, 1, 28e9, center, **kw)


def test_hh_always_los(rng):
    sc = validate_scenario("HH", HALL_DH, Placement((30, 0, 8), (75, 30, 6), (70, 45, 3)))
    spec = spec_at((75, 30, 6))
    assert all(generate_realization(sc, None, spec, LinkParams(), rng).los for _ in range(200))


def test_pure_los_ris_links_share_amplitude(scenario, rng):
    spec = spec_at((75, 30, 6), 8, 8)
    ch = generate_realization(scenario, None, spec, PURE, rng)
    d_br = math.dist((30, 0, 8), (75, 30, 6))
    expected = 10 ** (-pathloss_db("DH", True, d_br, 28.0) / 20)
    np.testing.assert_allclose(np.abs(ch.h_br), expected, rtol=1e-12)
    assert ch.h_br.size == ch.h_ru.size == 64


def test_element_phase_difference_matches_path_difference():
    # ceiling-style panel facing down: columns run along +x, towards/away from the AP
    lam = wavelength(28e9)
    center = (60.0, 20.0, 9.0)
    spec = RisSpec(1, 2, 1, lam / 2, center, normal=(0.0, 0.0, -1.0))
    ap = (40.0, 20.0, 9.0)
    sc = validate_scenario("DH", HALL_DH, Placement(ap, center, (50, 25, 1.5)))
    ch = generate_realization(sc, None, spec, PURE, np.random.default_rng(0))
    d0 = 20.0 - lam / 4  # hand-computed exact distances to the two elements
    d1 = 20.0 + lam / 4
    want = (-2 * math.pi * (d1 - d0) / lam) % (2 * math.pi)
    got = np.angle(ch.h_br[1] / ch.h_br[0]) % (2 * math.pi)
    assert min(abs(got - want), 2 * math.pi - abs(got - want)) < 1e-6


def test_reproducible_with_same_stream(scenario):
    spec = spec_at((75, 30, 6))
    link = LinkParams(k_ris_links_db=5.0)
    a = generate_realization(scenario, None, spec, link, substream(7, 3, "x"))
    b = generate_realization(scenario, None, spec, link, substream(7, 3, "x"))
    c = generate_realization(scenario, None, spec, link, substream(7, 4, "x"))
    assert np.array_equal(a.h_br, b.h_br) and np.array_equal(a.h_ru, b.h_ru) and a.h_bu == b.h_bu
    assert not np.array_equal(a.h_br, c.h_br)


def test_deterministic_apart_from_los_draw(scenario):
    spec = spec_at((75, 30, 6))
    link = LinkParams(shadow_fading=False, k_bu_db=math.inf)
    draws = [generate_realization(scenario, None, spec, link, np.random.default_rng(s)) for s in range(40)]
    by_state = {}
    for ch in draws:
        by_state.setdefault(ch.los, []).append(ch)
    for ch in draws[1:]:
        np.testing.assert_array_equal(ch.h_br, draws[0].h_br)
        np.testing.assert_array_equal(ch.h_ru, draws[0].h_ru)
    for ch in by_state.get(True, [])[1:]:
        assert ch.h_bu == by_state[True][0].h_bu


def test_nlos_direct_power_converges(scenario):
    spec = spec_at((75, 30, 6), 1, 1)
    link = LinkParams(shadow_fading=False)
    rng = np.random.default_rng(11)
    p = np.array([
        abs(generate_realization(scenario, None, spec, link, rng, force_los=False).h_bu) ** 2
        for _ in range(100_000)
    ])
    d = math.dist((30, 0, 8), (72, 32, 1.5))
    expected = 10 ** (-pathloss_db("DH", False, d, 28.0) / 10)
    assert abs(p.mean() / expected - 1) < 0.03


def test_blocked_direct_path(scenario, rng):
    ch = generate_realization(scenario, None, spec_at((75, 30, 6)), LinkParams(direct_blocked=True), rng)
    assert ch.h_bu == 0


def test_ris_outside_hall_rejected(scenario, rng):
    # panel facing +y placed on the x = 75 wall pokes its columns through the wall
    spec = RisSpec(4, 4, 1, 0.5, (75, 30, 6), normal=(0.0, 1.0, 0.0))
    with pytest.raises(GeometryError):
        generate_realization(scenario, None, spec, PURE, rng)


def test_link_params_validation():
    with pytest.raises(ValueError):
        LinkParams(fc_hz=0)
    with pytest.raises(ValueError):
        LinkParams(k_bu_db=float("nan"))
