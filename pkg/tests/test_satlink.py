from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from hybridqnet.bellstate import ParameterError
from hybridqnet.satlink import (
    EARTH_RADIUS_M,
    GEO_ALTITUDE_M,
    MAP_CENTER,
    GeoPoint,
    SatelliteParams,
    StationParams,
    VisibilityError,
    atm_valid,
    atmospheric_eta,
    beam_spot,
    diffraction_eta,
    downlink_budget,
    downlink_eta,
    downlink_eta_array,
    geo_satellite,
    pair_rate,
    slant_geometry,
)

MEO = SatelliteParams()
STATION = StationParams()


def test_parameter_domains():
    with pytest.raises(ParameterError):
        GeoPoint(95.0, 0.0)
    with pytest.raises(ParameterError):
        SatelliteParams(source_fidelity=0.4)
    with pytest.raises(ParameterError):
        StationParams(eta_rec=1.2)
    with pytest.raises(ParameterError):
        StationParams(telescope_radius_m=0.0)


def test_nadir_geometry():
    z, theta = slant_geometry(MAP_CENTER, MEO)
    assert z == pytest.approx(1e7, rel=1e-12)
    assert theta == pytest.approx(0.0, abs=1e-6)


def test_slant_range_law_of_cosines():
    sat = replace(MEO, subsatellite=GeoPoint(0.0, 0.0))
    arc = 1000e3
    station = GeoPoint(0.0, math.degrees(arc / EARTH_RADIUS_M))
    z, _ = slant_geometry(station, sat)
    r, R = EARTH_RADIUS_M, EARTH_RADIUS_M + 1e7
    assert z == pytest.approx(math.sqrt(r * r + R * R - 2 * r * R * math.cos(arc / r)), rel=1e-12)


def test_geometry_is_symmetric():
    sat = replace(MEO, subsatellite=GeoPoint(10.0, 20.0))
    east = slant_geometry(GeoPoint(10.0, 27.0), sat)
    west = slant_geometry(GeoPoint(10.0, 13.0), sat)
    assert east == pytest.approx(west, rel=1e-12)


def test_below_horizon():
    with pytest.raises(VisibilityError):
        slant_geometry(GeoPoint(-36.8, 84.2), MEO)


def test_beam_spot():
    assert MEO.rayleigh_range_m == pytest.approx(8.727e4, rel=1e-3)
    assert beam_spot(0.0, MEO) == 0.15
    assert beam_spot(1e7, MEO) == pytest.approx(17.19, rel=1e-3)


def test_diffraction():
    assert diffraction_eta(1e7, MEO, STATION) == pytest.approx(1.692e-3, rel=2e-3)
    exact = diffraction_eta(1e7, MEO, STATION, "exact")
    assert abs(exact - diffraction_eta(1e7, MEO, STATION)) / exact < 1e-3
    big = replace(STATION, telescope_radius_m=5.0)
    assert diffraction_eta(1e3, MEO, big, "exact") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        diffraction_eta(1e7, MEO, STATION, "near")


def test_atmosphere():
    assert atmospheric_eta(0.0, STATION) == pytest.approx(0.967)
    assert atmospheric_eta(1.0, STATION) == pytest.approx(0.967 ** (1 / math.cos(1.0)), rel=1e-12)
    assert atmospheric_eta(1.0, STATION) == pytest.approx(0.9398, abs=1e-4)
    thetas = np.linspace(0.0, 1.4, 30)
    etas = [atmospheric_eta(t, STATION) for t in thetas]
    assert all(x > y for x, y in zip(etas, etas[1:]))
    assert atm_valid(0.9) and not atm_valid(1.2)


def test_downlink_budget():
    b = downlink_budget(MAP_CENTER, MEO, STATION)
    assert b.eta == pytest.approx(2.3e-4, rel=0.05)
    assert b.far_field_valid and b.atm_valid
    assert downlink_eta(MAP_CENTER, MEO, replace(STATION, eta_coup=0.0)) == 0.0
    geo = replace(MEO, altitude_m=GEO_ALTITUDE_M)
    ratio = downlink_eta(MAP_CENTER, MEO, STATION) / downlink_eta(MAP_CENTER, geo, STATION)
    assert ratio == pytest.approx((GEO_ALTITUDE_M / 1e7) ** 2, rel=0.01)


def test_vectorised_budget_matches_scalar():
    lat = np.array([30.0, 40.0, 45.0])
    lon = np.array([-100.0, -80.0, -120.0])
    arr = downlink_eta_array(lat, lon, MEO, STATION)
    ref = [downlink_eta(GeoPoint(a, o), MEO, STATION) for a, o in zip(lat, lon)]
    assert arr == pytest.approx(ref, rel=1e-12)


def test_pair_rate():
    a = GeoPoint(MAP_CENTER.latitude_deg + 2, MAP_CENTER.longitude_deg - 5)
    b = GeoPoint(MAP_CENTER.latitude_deg - 2, MAP_CENTER.longitude_deg + 5)
    r = pair_rate(a, b, MEO, STATION)
    assert r == pair_rate(b, a, MEO, STATION)
    assert 2.4 <= r <= 3.9
    assert pair_rate(MAP_CENTER, MAP_CENTER, MEO, STATION) > r
    assert r <= MEO.pair_rate_hz


def test_telescope_scaling():
    a, b = GeoPoint(40.0, -100.0), GeoPoint(33.0, -88.0)
    rates = [pair_rate(a, b, MEO, replace(STATION, telescope_radius_m=ar)) for ar in (0.5, 1.0, 2.0)]
    assert rates[1] / rates[0] == pytest.approx(16.0, rel=1e-12)
    assert rates[2] / rates[1] == pytest.approx(16.0, rel=1e-12)


def test_subsatellite_position_has_small_effect():
    a, b = GeoPoint(40.0, -100.0), GeoPoint(35.0, -90.0)
    rates = [
        pair_rate(a, b, replace(MEO, subsatellite=GeoPoint(lat, lon)), STATION)
        for lat in (30.0, 36.8, 43.0)
        for lon in (-110.0, -95.8, -80.0)
    ]
    assert max(rates) / min(rates) < 3


def test_geo_longitude_optimised():
    lat = np.array([30.0, 45.0, 40.0])
    lon = np.array([-120.0, -75.0, -95.0])
    sat = geo_satellite(lat, lon)
    assert sat.subsatellite.latitude_deg == 0.0
    assert -120.0 <= sat.subsatellite.longitude_deg <= -75.0
    r = pair_rate(GeoPoint(40.0, -100.0), GeoPoint(35.0, -90.0), sat, STATION)
    assert 0.01 <= r <= 0.04
