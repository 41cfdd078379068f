"""Photon link budget for a ground-satellite-ground retroreflector channel.

The uplink beam illuminates a corner-cube array on the satellite, which
returns a diffraction-limited cone toward the receiving telescope. All
quantities are SI floats; there is no unit library.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK

from .errors import InvalidParameterError

OPTICAL_BAND_M = (100e-9, 10e-6)


def db_to_linear(db: float) -> float:
    """Convert an attenuation in dB (positive = loss) to a linear transmission factor."""
    return 10.0 ** (-db / 10.0)


def linear_to_db(factor: float) -> float:
    """Inverse of :func:`db_to_linear`."""
    if factor <= 0:
        raise InvalidParameterError(f"linear factor must be positive, got {factor!r}")
    return -10.0 * math.log10(factor)


def photons_per_joule(wavelength_m: float) -> float:
    """Number of photons carried by one joule of monochromatic light, lambda/(h c)."""
    lo, hi = OPTICAL_BAND_M
    if not (lo <= wavelength_m <= hi):
        raise InvalidParameterError(
            f"wavelength_m={wavelength_m!r} outside optical band [{lo}, {hi}] m"
        )
    return wavelength_m / (PLANCK * SPEED_OF_LIGHT)


_UNIT_INTERVAL = (
    "transmit_efficiency",
    "receive_efficiency",
    "detector_efficiency",
    "atmospheric_transmission",
    "attenuation_factor",
)
_POSITIVE = (
    "pulse_rate_hz",
    "photons_per_joule",
    "wavelength_m",
    "range_m",
    "retroreflector_area_m2",
    "receiver_area_m2",
    "transmit_divergence_rad",
    "retro_divergence_rad",
)


@dataclass(frozen=True)
class ChannelParams:
    """Parameters of the two-way optical link, validated on construction.

    ``attenuation_factor`` is linear (0.05 rather than 13 dB). A zero pulse
    energy is accepted so that signal-free runs can be configured.
    """

    pulse_rate_hz: float
    pulse_energy_j: float
    photons_per_joule: float
    wavelength_m: float
    range_m: float
    retroreflector_area_m2: float
    receiver_area_m2: float
    transmit_efficiency: float
    receive_efficiency: float
    detector_efficiency: float
    atmospheric_transmission: float
    attenuation_factor: float
    transmit_divergence_rad: float
    retro_divergence_rad: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidParameterError(f"{f.name}: expected a number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidParameterError(f"{f.name}: must be finite, got {value!r}")
        for name in _POSITIVE:
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name}: must be > 0, got {getattr(self, name)!r}")
        for name in _UNIT_INTERVAL:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidParameterError(f"{name}: must lie in [0, 1], got {v!r}")
        if self.pulse_energy_j < 0:
            raise InvalidParameterError(f"pulse_energy_j: must be >= 0, got {self.pulse_energy_j!r}")
        expected = photons_per_joule(self.wavelength_m)
        if abs(self.photons_per_joule / expected - 1.0) > 0.01:
            raise InvalidParameterError(
                f"photons_per_joule={self.photons_per_joule:.4g} disagrees with "
                f"wavelength_m={self.wavelength_m!r} (expected {expected:.4g} within 1%)"
            )

    def with_(self, **changes) -> "ChannelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelParams":
        """Build from a key/value mapping.

        A key ``attenuation_factor_db`` may replace ``attenuation_factor``.
        If ``photons_per_joule`` is omitted it is derived from the wavelength.
        Unknown keys and missing keys raise :class:`InvalidParameterError`
        naming the offending key.
        """
        data = dict(data)
        if "attenuation_factor_db" in data:
            if "attenuation_factor" in data:
                raise InvalidParameterError(
                    "attenuation_factor: give either the linear value or attenuation_factor_db, not both"
                )
            data["attenuation_factor"] = db_to_linear(float(data.pop("attenuation_factor_db")))
        if "photons_per_joule" not in data and "wavelength_m" in data:
            data["photons_per_joule"] = photons_per_joule(float(data["wavelength_m"]))
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise InvalidParameterError(f"{unknown[0]}: unknown channel parameter")
        for name in names:
            if name not in data:
                raise InvalidParameterError(f"{name}: missing required channel parameter")
        return cls(**{name: data[name] for name in names})


#: The Champ pass parameters (702 nm, 400 km, 76 MHz).
CHAMP = ChannelParams(
    pulse_rate_hz=76e6,
    pulse_energy_j=0.4e-9,
    photons_per_joule=3.53e18,
    wavelength_m=702e-9,
    range_m=400e3,
    retroreflector_area_m2=11.34e-4,
    receiver_area_m2=0.25,
    transmit_efficiency=0.20,
    receive_efficiency=0.15,
    detector_efficiency=0.65,
    atmospheric_transmission=0.60,
    attenuation_factor=0.05,
    transmit_divergence_rad=300e-6,
    retro_divergence_rad=38e-6,
)


def uplink_geometry(params: ChannelParams) -> float:
    """Fraction of the transmitted beam intercepted by the retroreflector area."""
    return 4.0 * params.retroreflector_area_m2 / (
        math.pi * params.transmit_divergence_rad**2 * params.range_m**2
    )


def downlink_geometry(params: ChannelParams) -> float:
    """Fraction of the retro-reflected cone intercepted by the receiving telescope."""
    return 4.0 * params.receiver_area_m2 / (
        math.pi * params.retro_divergence_rad**2 * params.range_m**2
    )


def uplink_attenuation(params: ChannelParams) -> float:
    """One-way ground-to-satellite transmission."""
    return (
        uplink_geometry(params)
        * params.transmit_efficiency
        * params.atmospheric_transmission
        * params.attenuation_factor
    )


def photons_at_satellite(params: ChannelParams) -> float:
    """Mean number of photons per pulse leaving the retroreflector."""
    return params.pulse_energy_j * params.photons_per_joule * uplink_attenuation(params)


def downlink_attenuation(params: ChannelParams) -> float:
    """One-way satellite-to-ground transmission, detector efficiency included."""
    return (
        downlink_geometry(params)
        * params.receive_efficiency
        * params.atmospheric_transmission
        * params.detector_efficiency
    )


def expected_detections_per_pulse(params: ChannelParams) -> float:
    """Mean number of detected photons per emitted pulse."""
    return photons_at_satellite(params) * downlink_attenuation(params)


@dataclass(frozen=True)
class LinkBudgetReport:
    uplink_attenuation: float
    photons_at_satellite: float
    downlink_attenuation: float
    detections_per_pulse: float
    uplink_geometry: float
    downlink_geometry: float
    predicted_rate_cps: float
    duty: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def link_budget(params: ChannelParams, duty: float = 1.0) -> LinkBudgetReport:
    """Evaluate every link-budget term at once.

    ``predicted_rate_cps`` is detections/pulse times the pulse rate times
    ``duty``, the fraction of time the receiver is gated open.
    """
    if not (0.0 < duty <= 1.0):
        raise InvalidParameterError(f"duty must lie in (0, 1], got {duty!r}")
    n0 = photons_at_satellite(params)
    down = downlink_attenuation(params)
    n = n0 * down
    return LinkBudgetReport(
        uplink_attenuation=uplink_attenuation(params),
        photons_at_satellite=n0,
        downlink_attenuation=down,
        detections_per_pulse=n,
        uplink_geometry=uplink_geometry(params),
        downlink_geometry=downlink_geometry(params),
        predicted_rate_cps=n * params.pulse_rate_hz * duty,
        duty=duty,
    )
