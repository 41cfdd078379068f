"""Monte Carlo generation of detector time tags for a simulated pass.

The laser emits a regular pulse train; a chopper alternates between a
transmit window and a short detection gate. Each pulse emitted in the
transmit window is detected with probability ``1 - exp(-N)`` where ``N`` is
the link-budget mean. Detections arrive one round trip later, blurred by a
Gaussian jitter, and are kept only if they land in an open gate.
Background is a homogeneous Poisson process, also gated. Timestamps are
floored onto the TDC grid.

Generation is split into fixed time chunks, each with its own generator
seeded from ``(seed, chunk index)``, so running chunks on several threads
gives the same bytes as running them in order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from . import linkbudget
from .errors import DomainError, InvalidParameterError, ResourceError
from .linkbudget import ChannelParams
from .orbit import RangeModel

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence([seed, chunk_index])"
PS = 1e-12

TAG_DTYPE = np.dtype([("channel", "u1"), ("timestamp_ps", "<u8")])

#: Jitter budget: detector, TDC, orbit fit, and the laser term that brings the total to 1.35 ns.
CHAMP_JITTER_FWHM_S = (350e-12, 160e-12, 1000e-12, 821e-12)


class Channel(IntEnum):
    DETECTION = 0


class TimeTag(NamedTuple):
    channel: Channel
    timestamp_ps: int


def _to_ps(seconds: float, name: str) -> int:
    ps = round(seconds / PS)
    if abs(ps * PS - seconds) > 1e-6 * PS + 1e-9 * abs(seconds):
        raise InvalidParameterError(f"{name}={seconds!r} s is not a whole number of picoseconds")
    return int(ps)


@dataclass(frozen=True)
class SimConfig:
    """Everything a simulated run depends on.

    Setting ``chopper_period_s`` to ``None`` disables the chopper: every
    pulse is transmitted and the detector is always open. Chopper timings
    and the TDC step must be whole picoseconds.
    """

    channel: ChannelParams = linkbudget.CHAMP
    chopper_period_s: float | None = 16e-3
    chopper_open_s: float = 1.65e-3
    chopper_phase_s: float = 0.0
    guard_s: float = 200e-6
    background_rate_cps: float = 89.0
    jitter_fwhm_components_s: tuple = CHAMP_JITTER_FWHM_S
    tdc_resolution_s: float = 10e-12
    duration_s: float = 10.0
    start_s: float | None = None
    seed: int = 0
    chunk_s: float = 0.1
    max_events: int = 50_000_000

    def __post_init__(self):
        object.__setattr__(
            self, "jitter_fwhm_components_s", tuple(float(x) for x in self.jitter_fwhm_components_s)
        )
        if self.chopper_period_s is not None:
            if not (0 < self.chopper_open_s < self.chopper_period_s):
                raise InvalidParameterError(
                    "chopper_open_s must lie strictly between 0 and chopper_period_s"
                )
            if not (0 <= self.guard_s < self.chopper_period_s - self.chopper_open_s):
                raise InvalidParameterError("guard_s must be >= 0 and shorter than the transmit window")
            _to_ps(self.chopper_period_s, "chopper_period_s")
            _to_ps(self.chopper_open_s, "chopper_open_s")
            _to_ps(self.guard_s, "guard_s")
        _to_ps(self.chopper_phase_s, "chopper_phase_s")
        if self.background_rate_cps < 0:
            raise InvalidParameterError("background_rate_cps must be >= 0")
        if any(x < 0 for x in self.jitter_fwhm_components_s):
            raise InvalidParameterError("jitter components must be >= 0")
        if self.tdc_resolution_s <= 0 or _to_ps(self.tdc_resolution_s, "tdc_resolution_s") < 1:
            raise InvalidParameterError("tdc_resolution_s must be a positive whole number of ps")
        if self.duration_s <= 0 or self.chunk_s <= 0:
            raise InvalidParameterError("duration_s and chunk_s must be positive")
        if self.start_s is not None and self.start_s < 0:
            raise InvalidParameterError("start_s must be >= 0 (timestamps are unsigned)")

    @property
    def gated(self) -> bool:
        return self.chopper_period_s is not None

    @property
    def duty(self) -> float:
        return self.chopper_open_s / self.chopper_period_s if self.gated else 1.0

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel"] = self.channel.to_dict()
        d["jitter_fwhm_components_s"] = list(self.jitter_fwhm_components_s)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidParameterError(f"{unknown[0]}: unknown simulation parameter")
        if "channel" in data and not isinstance(data["channel"], ChannelParams):
            data["channel"] = ChannelParams.from_dict(data["channel"])
        if "jitter_fwhm_components_s" in data:
            data["jitter_fwhm_components_s"] = tuple(data["jitter_fwhm_components_s"])
        return cls(**data)


@dataclass
class TagStream:
    """Time-sorted detector events plus the metadata describing how they were made."""

    records: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        for ch, ts in self.records:
            yield TimeTag(Channel(int(ch)), int(ts))

    @property
    def timestamps_ps(self) -> np.ndarray:
        return self.records["timestamp_ps"]

    @property
    def times_s(self) -> np.ndarray:
        return self.records["timestamp_ps"].astype(float) * PS

    @classmethod
    def from_timestamps(cls, timestamps_ps, metadata=None, channel=Channel.DETECTION):
        rec = np.zeros(len(timestamps_ps), dtype=TAG_DTYPE)
        rec["channel"] = channel
        rec["timestamp_ps"] = np.asarray(timestamps_ps, dtype=np.uint64)
        return cls(rec, dict(metadata or {}))


def compose_jitter(components: Sequence[float]) -> float:
    """Total FWHM of independent Gaussian contributions (quadrature sum)."""
    comps = [float(c) for c in components]
    if any(c < 0 for c in comps):
        raise InvalidParameterError("jitter components must be >= 0")
    return math.sqrt(sum(c * c for c in comps))


def chopper_open(config: SimConfig, t_s) -> bool:
    """Whether the detection gate is open at time ``t_s``."""
    if not config.gated:
        return np.ones_like(np.asarray(t_s), dtype=bool) if np.ndim(t_s) else True
    phase = np.mod(np.asarray(t_s, dtype=float) - config.chopper_phase_s, config.chopper_period_s)
    out = phase < config.chopper_open_s
    return bool(out) if out.ndim == 0 else out


def transmit_open(config: SimConfig, t_s):
    """Whether the laser is transmitting at ``t_s``.

    Transmission covers the rest of the period after the detection gate,
    minus a guard interval before the next gate opens so that atmospheric
    backscatter has died out.
    """
    t = np.asarray(t_s, dtype=float)
    if not config.gated:
        return np.ones(t.shape, dtype=bool)
    phase = np.mod(t - config.chopper_phase_s, config.chopper_period_s)
    return (phase >= config.chopper_open_s) & (phase < config.chopper_period_s - config.guard_s)


def gate_open_ps(config: SimConfig, timestamps_ps) -> np.ndarray:
    """Exact integer version of :func:`chopper_open` for picosecond timestamps."""
    ts = np.asarray(timestamps_ps, dtype=np.int64)
    if not config.gated:
        return np.ones(ts.shape, dtype=bool)
    period = _to_ps(config.chopper_period_s, "chopper_period_s")
    opened = _to_ps(config.chopper_open_s, "chopper_open_s")
    phase = _to_ps(config.chopper_phase_s, "chopper_phase_s")
    return np.mod(ts - phase, period) < opened


def detection_probability(config: SimConfig) -> float:
    """Click probability per transmitted pulse for a non-number-resolving detector."""
    return -math.expm1(-linkbudget.expected_detections_per_pulse(config.channel))


def _span(config: SimConfig, model: RangeModel) -> tuple[float, float]:
    start = model.domain[0] if config.start_s is None else config.start_s
    stop = start + config.duration_s
    if start < model.domain[0] or stop > model.domain[1] + 1e-12:
        raise DomainError(
            f"simulated span [{start}, {stop}] s not covered by model domain {model.domain!r}"
        )
    if start < 0:
        raise DomainError("simulation cannot start before the pass epoch (t < 0)")
    return start, stop


def _first_pulse_at_or_after(t: float, phase: float, rate: float) -> int:
    x = (t - phase) * rate
    k = round(x)
    return int(k) if abs(x - k) < 1e-6 else int(math.ceil(x))


def _chunk_bounds(start: float, stop: float, chunk_s: float) -> list[tuple[float, float]]:
    n = max(1, int(math.ceil((stop - start) / chunk_s - 1e-9)))
    edges = [start + j * chunk_s for j in range(n)] + [stop]
    return list(zip(edges[:-1], edges[1:]))


def _successes(rng: np.random.Generator, n_trials: int, p: float) -> np.ndarray:
    """Indices in ``range(n_trials)`` of Bernoulli(p) successes, via geometric gaps."""
    if p <= 0 or n_trials <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(n_trials, dtype=np.int64)
    out = []
    pos = -1
    mean = n_trials * p
    batch = int(mean + 6 * math.sqrt(mean) + 16)
    while True:
        idx = pos + np.cumsum(rng.geometric(p, size=batch))
        out.append(idx[idx < n_trials])
        if idx[-1] >= n_trials:
            break
        pos = int(idx[-1])
    return np.concatenate(out)


def _quantize(times_s: np.ndarray, res_ps: int) -> np.ndarray:
    ps = np.floor(times_s / PS).astype(np.int64)
    return (ps // res_ps) * res_ps


def _simulate_chunk(config: SimConfig, model: RangeModel, index: int, bounds) -> np.ndarray:
    t_a, t_b = bounds
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, index])))
    rate = config.channel.pulse_rate_hz
    res_ps = _to_ps(config.tdc_resolution_s, "tdc_resolution_s")
    k_a = _first_pulse_at_or_after(t_a, config.chopper_phase_s, rate)
    k_b = _first_pulse_at_or_after(t_b, config.chopper_phase_s, rate)

    hits = _successes(rng, k_b - k_a, detection_probability(config))
    t0 = config.chopper_phase_s + (k_a + hits) / rate
    t0 = t0[transmit_open(config, t0)]
    sigma = compose_jitter(config.jitter_fwhm_components_s) / FWHM_PER_SIGMA
    arrival = t0 + model._eval(t0)
    if sigma > 0:
        arrival = arrival + rng.normal(0.0, sigma, arrival.size)
    signal_ps = _quantize(arrival, res_ps)

    n_bg = rng.poisson(config.background_rate_cps * (t_b - t_a))
    bg = rng.uniform(t_a, t_b, n_bg)
    bg_ps = _quantize(bg, res_ps)

    ts = np.concatenate([signal_ps, bg_ps])
    ts = ts[(ts >= 0) & gate_open_ps(config, ts)]
    return np.sort(ts, kind="stable")


def expected_event_count(config: SimConfig) -> float:
    """Upper estimate of the number of events generated before gating."""
    return (
        detection_probability(config) * config.channel.pulse_rate_hz + config.background_rate_cps
    ) * config.duration_s


def simulate_pass(config: SimConfig, model: RangeModel, workers: int = 1) -> TagStream:
    """Generate the time-tag stream for one pass.

    ``workers > 1`` runs chunks on a thread pool; the result is identical
    to the serial run.
    """
    start, stop = _span(config, model)
    expected = expected_event_count(config)
    if expected > config.max_events:
        raise ResourceError(
            f"run would generate about {expected:.3g} events, above max_events={config.max_events}"
        )
    chunks = _chunk_bounds(start, stop, config.chunk_s)
    jobs = [(config, model, j, b) for j, b in enumerate(chunks)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _simulate_chunk(*a), jobs))
    else:
        parts = [_simulate_chunk(*a) for a in jobs]
    ts = np.sort(np.concatenate(parts), kind="stable") if parts else np.empty(0, np.int64)
    meta = {
        "rng": RNG_ALGORITHM,
        "seed": config.seed,
        "epoch": "emit_time_s = 0 of the range model",
        "start_s": start,
        "duration_s": config.duration_s,
        "n_chunks": len(chunks),
        "detection_probability": detection_probability(config),
        "jitter_fwhm_s": compose_jitter(config.jitter_fwhm_components_s),
        "config": config.to_dict(),
    }
    return TagStream.from_timestamps(ts, meta)
