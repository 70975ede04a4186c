"""Satellite-to-ground entanglement distribution.

A satellite at altitude ``h`` above a fixed subsatellite point emits
``N_s`` entangled pairs per second, one photon to each of two ground stations.
Each downlink loses photons to beam diffraction, atmospheric extinction and a
chain of fixed optical efficiencies. Earth is a sphere of radius 6371 km.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .bellstate import BellDiagonalState, ParameterError

EARTH_RADIUS_M = 6.371e6
MEO_ALTITUDE_M = 1.0e7
GEO_ALTITUDE_M = 3.6e7
# Extinction model only holds up to about one radian from zenith.
ATM_VALID_MAX_RAD = 1.0
FAR_FIELD_FACTOR = 100.0


class VisibilityError(ValueError):
    """The satellite is at or below a station's horizon."""


@dataclass(frozen=True)
class GeoPoint:
    latitude_deg: float
    longitude_deg: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ParameterError(f"latitude {self.latitude_deg!r} outside [-90, 90]")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ParameterError(f"longitude {self.longitude_deg!r} outside [-180, 180]")

    def unit_vector(self) -> np.ndarray:
        return unit_vectors(np.array([self.latitude_deg]), np.array([self.longitude_deg]))[0]


MAP_CENTER = GeoPoint(36.8, -95.8)


def unit_vectors(lat_deg: np.ndarray, lon_deg: np.ndarray) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


@dataclass(frozen=True)
class SatelliteParams:
    altitude_m: float = MEO_ALTITUDE_M
    pair_rate_hz: float = 6.0e7
    wavelength_m: float = 810e-9
    beam_waist_m: float = 0.15
    source_fidelity: float = 0.87
    subsatellite: GeoPoint = field(default=MAP_CENTER)

    def __post_init__(self) -> None:
        for name in ("altitude_m", "pair_rate_hz", "wavelength_m", "beam_waist_m"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name}={getattr(self, name)!r} must be > 0")
        if not 0.5 < self.source_fidelity <= 1.0:
            raise ParameterError(f"source_fidelity={self.source_fidelity!r} outside (0.5, 1]")

    @property
    def rayleigh_range_m(self) -> float:
        return math.pi * self.beam_waist_m**2 / self.wavelength_m

    def pair_state(self) -> BellDiagonalState:
        """Delivered pair as a Psi-/Psi+ mixture with the source fidelity."""
        return BellDiagonalState.two_component(self.source_fidelity)


@dataclass(frozen=True)
class StationParams:
    telescope_radius_m: float = 0.5
    eta_tran: float = 0.5
    eta_rec: float = 0.5
    eta_det: float = 0.9
    eta_filt: float = 0.9
    eta_coup: float = 0.7
    eta_atm_zenith: float = 0.967

    def __post_init__(self) -> None:
        if not self.telescope_radius_m > 0:
            raise ParameterError(f"telescope_radius_m={self.telescope_radius_m!r} must be > 0")
        for name in ("eta_tran", "eta_rec", "eta_det", "eta_filt", "eta_coup", "eta_atm_zenith"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v!r} outside [0, 1]")

    @property
    def eta_fixed(self) -> float:
        return self.eta_tran * self.eta_rec * self.eta_det * self.eta_filt * self.eta_coup


@dataclass(frozen=True)
class LinkBudget:
    slant_range_m: float
    zenith_rad: float
    eta_diffraction: float
    eta_atm: float
    eta: float
    far_field_valid: bool
    atm_valid: bool


def slant_geometry(station: GeoPoint, sat: SatelliteParams) -> tuple[float, float]:
    """Slant range (m) and zenith angle (rad) from ``station`` to the satellite."""
    up = station.unit_vector()
    ground = EARTH_RADIUS_M * up
    sat_pos = (EARTH_RADIUS_M + sat.altitude_m) * sat.subsatellite.unit_vector()
    los = sat_pos - ground
    z = float(np.linalg.norm(los))
    cos_theta = float(np.dot(los, up) / z)
    theta = math.acos(max(-1.0, min(1.0, cos_theta)))
    if cos_theta <= 0.0:
        raise VisibilityError(f"satellite below horizon at {station} (zenith {math.degrees(theta):.1f} deg)")
    return z, theta


def beam_spot(z: float, sat: SatelliteParams) -> float:
    if z < 0:
        raise ParameterError(f"z={z!r} must be >= 0")
    return sat.beam_waist_m * math.sqrt(1.0 + (z / sat.rayleigh_range_m) ** 2)


def diffraction_eta(z: float, sat: SatelliteParams, station: StationParams, mode: str = "far_field") -> float:
    """Fraction of the Gaussian beam collected by the receiving telescope."""
    w = beam_spot(z, sat)
    x = 2.0 * station.telescope_radius_m**2 / w**2
    if mode == "exact":
        return -math.expm1(-x)
    if mode == "far_field":
        return x
    raise ValueError(f"unknown diffraction mode {mode!r}")


def far_field_valid(z: float, sat: SatelliteParams) -> bool:
    return z > FAR_FIELD_FACTOR * sat.rayleigh_range_m


def atmospheric_eta(theta: float, station: StationParams) -> float:
    """Zenith transmissivity raised to ``sec(theta)``; see :func:`atm_valid` for range."""
    if not 0.0 <= theta < math.pi / 2:
        raise VisibilityError(f"zenith angle {theta!r} rad has no line of sight")
    return station.eta_atm_zenith ** (1.0 / math.cos(theta))


def atm_valid(theta: float) -> bool:
    return 0.0 <= theta <= ATM_VALID_MAX_RAD


def downlink_budget(point: GeoPoint, sat: SatelliteParams, station: StationParams, mode: str = "far_field") -> LinkBudget:
    z, theta = slant_geometry(point, sat)
    eta_d = diffraction_eta(z, sat, station, mode)
    eta_a = atmospheric_eta(theta, station)
    return LinkBudget(
        slant_range_m=z,
        zenith_rad=theta,
        eta_diffraction=eta_d,
        eta_atm=eta_a,
        eta=station.eta_fixed * eta_d * eta_a,
        far_field_valid=far_field_valid(z, sat),
        atm_valid=atm_valid(theta),
    )


def downlink_eta(point: GeoPoint, sat: SatelliteParams, station: StationParams) -> float:
    return downlink_budget(point, sat, station).eta


def pair_rate(a: GeoPoint, b: GeoPoint, sat: SatelliteParams, station: StationParams) -> float:
    """Rate (1/s) of pairs detected at both ``a`` and ``b``."""
    return sat.pair_rate_hz * downlink_eta(a, sat, station) * downlink_eta(b, sat, station)


def downlink_eta_array(lat_deg: np.ndarray, lon_deg: np.ndarray, sat: SatelliteParams, station: StationParams) -> np.ndarray:
    """Vectorised far-field :func:`downlink_eta`; stations below the horizon get ``nan``."""
    up = unit_vectors(np.asarray(lat_deg, float), np.asarray(lon_deg, float))
    sat_pos = (EARTH_RADIUS_M + sat.altitude_m) * sat.subsatellite.unit_vector()
    los = sat_pos - EARTH_RADIUS_M * up
    z = np.linalg.norm(los, axis=-1)
    cos_theta = np.einsum("...i,...i->...", los, up) / z
    w2 = sat.beam_waist_m**2 * (1.0 + (z / sat.rayleigh_range_m) ** 2)
    eta_d = 2.0 * station.telescope_radius_m**2 / w2
    with np.errstate(divide="ignore", invalid="ignore"):
        eta_a = np.where(cos_theta > 0, station.eta_atm_zenith ** (1.0 / cos_theta), np.nan)
    return station.eta_fixed * eta_d * eta_a


def optimal_geo_longitude(lat_deg: np.ndarray, lon_deg: np.ndarray, altitude_m: float = GEO_ALTITUDE_M) -> float:
    """Equatorial longitude minimising the mean slant range to the given points."""
    up = unit_vectors(np.asarray(lat_deg, float), np.asarray(lon_deg, float))
    ground = EARTH_RADIUS_M * up

    def mean_range(lon: float) -> float:
        sat = (EARTH_RADIUS_M + altitude_m) * unit_vectors(np.array([0.0]), np.array([lon]))[0]
        return float(np.linalg.norm(sat - ground, axis=1).mean())

    lo, hi = float(np.min(lon_deg)), float(np.max(lon_deg))
    res = minimize_scalar(mean_range, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    return float(res.x)


def geo_satellite(lat_deg: np.ndarray, lon_deg: np.ndarray, **overrides) -> SatelliteParams:
    lon = optimal_geo_longitude(lat_deg, lon_deg)
    return SatelliteParams(altitude_m=GEO_ALTITUDE_M, subsatellite=GeoPoint(0.0, lon), **overrides)
