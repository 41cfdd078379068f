"""Round-trip light time over a satellite pass.

A pass is represented by a polynomial giving the round-trip time as a
function of emission time. The polynomial is stored in ascending powers of
the normalized variable ``u = (t - mid) / half`` where ``[mid - half,
mid + half]`` is the fitted time span; this keeps degree-4 fits over
seconds-long arcs well conditioned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import (
    ConditioningError,
    ConvergenceError,
    DomainError,
    InsufficientDataError,
    InvalidParameterError,
)

DEFAULT_DEGREE = 4
MAX_CONDITION = 1e10
MAX_INVERSION_ITER = 50
ROUNDTRIP_LIMITS_S = (1e-4, 1e-1)


@dataclass(frozen=True)
class RangeSample:
    emit_time_s: float
    roundtrip_s: float

    def __post_init__(self):
        if not math.isfinite(self.emit_time_s):
            raise InvalidParameterError(f"emit_time_s must be finite, got {self.emit_time_s!r}")
        lo, hi = ROUNDTRIP_LIMITS_S
        if not (lo < self.roundtrip_s < hi):
            raise InvalidParameterError(
                f"roundtrip_s={self.roundtrip_s!r} outside ({lo}, {hi}) s at t={self.emit_time_s!r}"
            )


@dataclass(frozen=True)
class RangeModel:
    """Fitted round-trip time curve.

    Attributes
    ----------
    coefficients : tuple of float
        Ascending powers of the normalized time ``u``.
    domain : (float, float)
        Emission-time span the model is valid on, in seconds.
    residual_rms_s : float
        RMS of the fit residuals.
    """

    coefficients: tuple
    domain: tuple
    residual_rms_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if not self.coefficients:
            raise InvalidParameterError("a range model needs at least one coefficient")
        t_min, t_max = self.domain
        if not (math.isfinite(t_min) and math.isfinite(t_max)) or t_max < t_min:
            raise InvalidParameterError(f"invalid domain {self.domain!r}")
        if len(self.coefficients) > 1:
            grid = np.linspace(t_min, t_max, 513)
            rate = np.abs(self.rate_at(grid))
            if not np.all(rate < 1.0):
                raise InvalidParameterError(
                    f"range rate reaches {rate.max():.3g} (|d roundtrip/dt| must stay below 1)"
                )

    @property
    def _mid(self) -> float:
        return 0.5 * (self.domain[0] + self.domain[1])

    @property
    def _half(self) -> float:
        half = 0.5 * (self.domain[1] - self.domain[0])
        return half if half > 0 else 1.0

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def normalize(self, t):
        return (np.asarray(t, dtype=float) - self._mid) / self._half

    def contains(self, t, tol: float = 0.0):
        t = np.asarray(t, dtype=float)
        return (t >= self.domain[0] - tol) & (t <= self.domain[1] + tol)

    def _eval(self, t):
        # Horner on the normalized variable, no domain check
        return P.polyval(self.normalize(t), self.coefficients)

    def rate_at(self, t):
        """Derivative d(roundtrip)/d(emit time), dimensionless."""
        deriv = P.polyder(self.coefficients)
        return P.polyval(self.normalize(t), deriv) / self._half

    @classmethod
    def from_power_coefficients(cls, coefficients: Sequence[float], domain, residual_rms_s=0.0):
        """Build a model from ascending raw-time coefficients ``sum c_k t**k``."""
        t_min, t_max = float(domain[0]), float(domain[1])
        mid = 0.5 * (t_min + t_max)
        half = 0.5 * (t_max - t_min) or 1.0
        # substitute t = mid + half*u
        raw = np.polynomial.Polynomial(coefficients)
        norm = raw(np.polynomial.Polynomial([mid, half]))
        coef = np.zeros(len(coefficients))
        coef[: len(norm.coef)] = norm.coef
        return cls(tuple(coef), (t_min, t_max), residual_rms_s)

    def to_dict(self) -> dict:
        return {
            "basis": "power series in u = (t - (t_min + t_max)/2) / ((t_max - t_min)/2)",
            "coefficients": list(self.coefficients),
            "domain": list(self.domain),
            "residual_rms_s": self.residual_rms_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RangeModel":
        try:
            return cls(tuple(data["coefficients"]), tuple(data["domain"]), float(data["residual_rms_s"]))
        except KeyError as exc:
            raise InvalidParameterError(f"{exc.args[0]}: missing range model key") from None


def roundtrip_at(model: RangeModel, emit_time_s):
    """Round-trip light time for pulses emitted at ``emit_time_s``.

    Accepts a scalar or an array; raises :class:`DomainError` if any time
    lies outside ``model.domain``.
    """
    t = np.asarray(emit_time_s, dtype=float)
    inside = model.contains(t)
    if not np.all(inside):
        bad = t[~inside] if t.ndim else t
        raise DomainError(
            f"emit time {float(np.ravel(bad)[0])!r} s outside model domain {model.domain!r}"
        )
    out = model._eval(t)
    return float(out) if out.ndim == 0 else out


def _solve_light_time(model: RangeModel, detect):
    t_min, t_max = model.domain
    est = detect - model._eval(np.clip(detect, t_min, t_max))
    for _ in range(MAX_INVERSION_ITER):
        new = detect - model._eval(est)
        step = np.abs(new - est)
        est = new
        tol = np.maximum(1e-14, 4.0 * np.spacing(np.abs(detect)))
        if np.all(step <= tol):
            return est, True
    return est, False


def expected_emission_time(model: RangeModel, detect_time_s):
    """Emission time ``t0`` with ``t0 + roundtrip(t0) == detect_time_s``.

    Solved by fixed-point iteration, which contracts by the range rate
    (about 2e-5 for a low orbit) per step. Accepts scalars or arrays.
    """
    detect = np.asarray(detect_time_s, dtype=float)
    est, ok = _solve_light_time(model, detect)
    if not ok:
        raise ConvergenceError(f"light-time iteration did not converge in {MAX_INVERSION_ITER} steps")
    inside = model.contains(est, tol=1e-12)
    if not np.all(inside):
        bad = np.ravel(detect[~inside] if detect.ndim else detect)[0]
        raise DomainError(f"detection at {float(bad)!r} s maps to an emission time outside {model.domain!r}")
    return float(est) if est.ndim == 0 else est


def fit_range(samples: Sequence[RangeSample], degree: int = DEFAULT_DEGREE) -> RangeModel:
    """Least-squares polynomial fit of round-trip time against emission time."""
    if degree < 0 or int(degree) != degree:
        raise InvalidParameterError(f"degree must be a non-negative integer, got {degree!r}")
    degree = int(degree)
    if len(samples) < degree + 1:
        raise InsufficientDataError(
            f"{len(samples)} samples cannot determine a degree-{degree} polynomial "
            f"(need at least {degree + 1})"
        )
    t = np.array([s.emit_time_s for s in samples], dtype=float)
    y = np.array([s.roundtrip_s for s in samples], dtype=float)
    if np.unique(t).size != t.size:
        raise InvalidParameterError("sample emission times must be distinct")
    domain = (float(t.min()), float(t.max()))
    shell = RangeModel((0.0,), domain)
    vander = P.polyvander(shell.normalize(t), degree)
    cond = np.linalg.cond(vander)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConditioningError(
            f"degree-{degree} fit is ill-conditioned (condition number {cond:.3g}); use a lower degree"
        )
    coef, *_ = np.linalg.lstsq(vander, y, rcond=None)
    resid = y - vander @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    return RangeModel(tuple(coef), domain, rms)


def synth_pass(
    altitude_m: float,
    ground_speed_mps: float,
    closest_approach_s: float,
    duration_s: float,
    sample_interval_s: float,
) -> list[RangeSample]:
    """Noise-free straight-line flyover sampled from t=0 to ``duration_s``.

    Range is ``sqrt(h**2 + (v (t - t_ca))**2)`` over a flat earth.
    """
    if altitude_m <= 100e3:
        raise InvalidParameterError(f"altitude_m must exceed 100 km, got {altitude_m!r}")
    if duration_s <= 0 or sample_interval_s <= 0:
        raise InvalidParameterError("duration_s and sample_interval_s must be positive")
    if ground_speed_mps < 0:
        raise InvalidParameterError(f"ground_speed_mps must be >= 0, got {ground_speed_mps!r}")
    n = int(math.floor(duration_s / sample_interval_s + 1e-9)) + 1
    t = np.arange(n) * sample_interval_s
    rng = np.hypot(altitude_m, ground_speed_mps * (t - closest_approach_s))
    rt = 2.0 * rng / SPEED_OF_LIGHT
    return [RangeSample(float(a), float(b)) for a, b in zip(t, rt)]


def champ_pass_geometry(
    altitude_m: float = 330e3,
    start_roundtrip_s: float = 2.63e-3,
    end_roundtrip_s: float = 2.30e-3,
    duration_s: float = 15.0,
) -> dict:
    """Flyover parameters whose round trip falls from 2.63 ms to 2.30 ms in 15 s.

    Returns keyword arguments for :func:`synth_pass` (minus the interval).
    """
    x0 = math.sqrt((start_roundtrip_s * SPEED_OF_LIGHT / 2) ** 2 - altitude_m**2)
    x1 = math.sqrt((end_roundtrip_s * SPEED_OF_LIGHT / 2) ** 2 - altitude_m**2)
    speed = (x0 - x1) / duration_s
    return {
        "altitude_m": altitude_m,
        "ground_speed_mps": speed,
        "closest_approach_s": x0 / speed,
        "duration_s": duration_s,
    }


def add_noise(samples: Iterable[RangeSample], sigma_s: float, seed: int) -> list[RangeSample]:
    rng = np.random.default_rng(seed)
    samples = list(samples)
    noise = rng.normal(0.0, sigma_s, len(samples))
    return [RangeSample(s.emit_time_s, s.roundtrip_s + e) for s, e in zip(samples, noise)]


def write_range_csv(path, samples: Iterable[RangeSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["emit_time_s", "roundtrip_s"])
        for s in samples:
            w.writerow([repr(s.emit_time_s), repr(s.roundtrip_s)])


def read_range_csv(path) -> list[RangeSample]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["emit_time_s", "roundtrip_s"]:
            raise InvalidParameterError(f"{path}: expected header 'emit_time_s,roundtrip_s', got {header!r}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(RangeSample(float(row[0]), float(row[1])))
            except (IndexError, ValueError) as exc:
                raise InvalidParameterError(f"{path}:{lineno}: {exc}") from None
    return out
