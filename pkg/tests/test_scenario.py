from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from rislab.scenario import (
    ApHeightMismatch,
    AreaOutOfRange,
    ClutterDensityError,
    ClutterHeightError,
    ClutterSizeError,
    CeilingHeightOutOfRange,
    FactoryLayout,
    InfVariant,
    OutsideHall,
    Placement,
    UeHeightMismatch,
    distances,
    validate_scenario,
)

HALL = FactoryLayout(75.0, 50.0, 10.0, clutter_density=0.6, clutter_height_m=2.0, clutter_size_m=2.0)
CASE = Placement((30, 0, 8), (75, 30, 6), (72, 32, 1.5))


def test_case_study_is_valid():
    sc = validate_scenario(InfVariant.DH, HALL, CASE)
    assert sc.variant is InfVariant.DH
    assert sc.clutter_size_m == 2.0
    with pytest.raises(AttributeError):
        sc.variant = InfVariant.SL


def test_revalidation_is_idempotent(scenario):
    again = validate_scenario(scenario.variant, scenario.layout, scenario.placement)
    assert again == scenario


def test_dense_variant_rejects_low_density():
    with pytest.raises(ClutterDensityError, match="below 0.4"):
        validate_scenario("DH", replace(HALL, clutter_density=0.3), CASE)


def test_density_boundary_is_dense():
    validate_scenario("DH", replace(HALL, clutter_density=0.4), CASE)
    with pytest.raises(ClutterDensityError):
        validate_scenario("SH", replace(HALL, clutter_density=0.4), CASE)


def test_area_bounds():
    small = FactoryLayout(4, 4, 5, 0.2, 1.0)
    with pytest.raises(AreaOutOfRange):
        validate_scenario("SL", small, Placement((1, 1, 0.5), (4, 2, 1), (2, 2, 0.5)))
    edge = FactoryLayout(5, 4, 5, 0.2, 1.0)  # exactly 20 m^2
    validate_scenario("SL", edge, Placement((1, 1, 0.5), (5, 2, 1), (2, 2, 0.5)))
    big = FactoryLayout(400, 400, 10, 0.2, 2.0)  # exactly 160000 m^2
    validate_scenario("SH", big, Placement((1, 1, 5), (400, 2, 4), (2, 2, 1)))
    with pytest.raises(AreaOutOfRange):
        validate_scenario("SH", replace(big, width_m=401), Placement((1, 1, 5), (400, 2, 4), (2, 2, 1)))


@pytest.mark.parametrize(
    "variant, change, err",
    [
        ("DL", dict(ceiling_height_m=20.0), CeilingHeightOutOfRange),
        ("SL", dict(ceiling_height_m=26.0), CeilingHeightOutOfRange),
        ("DH", dict(clutter_height_m=10.0), ClutterHeightError),
        ("DH", dict(clutter_height_m=11.0), ClutterHeightError),
        ("SL", dict(clutter_density=0.6), ClutterDensityError),
        ("HH", dict(clutter_size_m=None), ClutterSizeError),
    ],
)
def test_layout_violations(variant, change, err):
    placement = CASE
    if variant == "SL":
        placement = Placement((30, 0, 1.5), (75, 30, 6), (72, 32, 1.5))
    if variant == "HH":
        placement = Placement((30, 0, 8), (75, 30, 6), (72, 32, 3.0))
    with pytest.raises(err):
        validate_scenario(variant, replace(HALL, **change), placement)


def test_heights_must_match_variant():
    with pytest.raises(ApHeightMismatch):
        validate_scenario("DL", HALL, CASE)  # AP at 8 m above 2 m clutter
    with pytest.raises(ApHeightMismatch):
        validate_scenario("DH", HALL, replace(CASE, ap_pos=(30, 0, 2)))
    with pytest.raises(UeHeightMismatch):
        validate_scenario("HH", HALL, CASE)  # UE at 1.5 m inside clutter
    with pytest.raises(UeHeightMismatch):
        validate_scenario("DH", HALL, replace(CASE, ue_pos=(72, 32, 3)))
    validate_scenario("HH", HALL, replace(CASE, ue_pos=(72, 32, 3)))


def test_positions_inside_hall():
    with pytest.raises(OutsideHall):
        validate_scenario("DH", HALL, replace(CASE, ris_center=(76, 30, 6)))
    with pytest.raises(OutsideHall):
        validate_scenario("DH", HALL, replace(CASE, ue_pos=(72, -1, 1.5)))


def test_default_clutter_size_per_variant():
    layout = replace(HALL, clutter_size_m=None)
    assert validate_scenario("DH", layout, CASE).clutter_size_m == 2.0
    sparse = replace(layout, clutter_density=0.2)
    assert validate_scenario("SH", sparse, CASE).clutter_size_m == 10.0


def test_variant_parsing():
    assert InfVariant.parse("inf-dh") is InfVariant.DH
    with pytest.raises(ValueError):
        InfVariant.parse("XX")


@pytest.mark.parametrize(
    "p, q, expected",
    [
        ((0, 0, 0), (3, 4, 0), (5.0, 5.0)),
        ((0, 0, 0), (0, 0, 7), (0.0, 7.0)),
        ((30, 0, 8), (72, 32, 1.5), (52.802, 53.200)),
    ],
)
def test_distances(p, q, expected):
    d2, d3 = distances(p, q)
    assert d2 == pytest.approx(expected[0], abs=5e-4)
    assert d3 == pytest.approx(expected[1], abs=5e-4)


coord = st.floats(-1e4, 1e4, allow_nan=False)


@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord))
def test_distance_pythagoras(p, q):
    d2, d3 = distances(p, q)
    dz = q[2] - p[2]
    assert d3 >= d2
    assert d3**2 == pytest.approx(d2**2 + dz**2, rel=1e-12, abs=1e-9)


@given(st.sampled_from(list(InfVariant)), st.floats(0.0, 10.0), st.floats(0.5, 9.5))
def test_accepted_scenarios_respect_ap_height_rule(variant, ap_z, h_c):
    density = 0.6 if variant.dense else 0.2
    layout = FactoryLayout(75, 50, 10, density, h_c, clutter_size_m=2.0)
    ue_z = h_c + 0.1 if variant is InfVariant.HH else h_c / 2
    try:
        sc = validate_scenario(variant, layout, Placement((30, 0, ap_z), (75, 30, 6), (60, 20, ue_z)))
    except ValueError:
        return
    if variant.clutter_embedded_ap:
        assert sc.placement.ap_pos[2] <= h_c
    else:
        assert sc.placement.ap_pos[2] > h_c
