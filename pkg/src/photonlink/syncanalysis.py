"""Offline synchronization analysis of a detected tag stream.

Each detection is mapped back to its emission time through the range
model, assigned to the nearest laser pulse, and the offset ``D = t0 -
t_exp`` is folded into one pulse period. The histogram of offsets has a
Gaussian timing peak over a flat background floor; its fitted width is the
synchronization accuracy, and counts inside a narrow window around the
peak give the signal-to-noise ratio.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy.special import erf

from .errors import ConvergenceError, InvalidParameterError
from .orbit import RangeModel, _solve_light_time
from .photonsim import FWHM_PER_SIGMA, TagStream

DEFAULT_HIST_BIN_S = 0.1e-9
DEFAULT_SIGNAL_BIN_S = 2e-9
BACKGROUND_EXCLUSION_FWHM = 3.0


class OffsetRecord(NamedTuple):
    detect_time_s: float
    t_exp_s: float
    pulse_index: int
    d_s: float


@dataclass
class Offsets:
    """Columnar offset table; iterating yields :class:`OffsetRecord` rows."""

    detect_time_s: np.ndarray
    t_exp_s: np.ndarray
    pulse_index: np.ndarray
    d_s: np.ndarray
    pulse_rate_hz: float
    chopper_phase_s: float = 0.0
    n_skipped: int = 0

    def __len__(self):
        return len(self.d_s)

    def __iter__(self) -> Iterator[OffsetRecord]:
        for row in zip(self.detect_time_s, self.t_exp_s, self.pulse_index, self.d_s):
            yield OffsetRecord(float(row[0]), float(row[1]), int(row[2]), float(row[3]))

    @property
    def period_s(self) -> float:
        return 1.0 / self.pulse_rate_hz

    @classmethod
    def from_d(cls, d_s, pulse_rate_hz: float) -> "Offsets":
        """Offsets known only by their D values (synthetic data, tests)."""
        d = np.asarray(d_s, dtype=float)
        nan = np.full(d.shape, np.nan)
        return cls(nan, nan.copy(), np.zeros(d.shape, dtype=np.int64), d, pulse_rate_hz)


def fold_offsets(t_exp_s, pulse_rate_hz: float, chopper_phase_s: float = 0.0):
    """Nearest pulse index and ``t0 - t_exp`` folded into ``[-T/2, T/2)``."""
    x = (np.asarray(t_exp_s, dtype=float) - chopper_phase_s) * pulse_rate_hz
    k = np.ceil(x - 0.5)
    d = (k - x) / pulse_rate_hz
    return k.astype(np.int64), d


def compute_offsets(
    tags: TagStream | np.ndarray,
    model: RangeModel,
    pulse_rate_hz: float,
    chopper_phase_s: float = 0.0,
) -> Offsets:
    """Offsets of every tag whose emission time falls inside the model domain.

    Tags mapping outside the domain are skipped and counted in
    ``n_skipped``.
    """
    if pulse_rate_hz <= 0:
        raise InvalidParameterError(f"pulse_rate_hz must be positive, got {pulse_rate_hz!r}")
    if isinstance(tags, TagStream):
        t = tags.times_s
    else:
        t = np.asarray(tags, dtype=np.uint64).astype(float) * 1e-12
    if t.size == 0:
        empty = np.empty(0)
        return Offsets(empty, empty, np.empty(0, np.int64), empty, pulse_rate_hz, chopper_phase_s)
    t_exp, ok = _solve_light_time(model, t)
    if not ok:
        raise ConvergenceError("light-time inversion did not converge for some tags")
    keep = model.contains(t_exp, tol=1e-12)
    t, t_exp = t[keep], t_exp[keep]
    k, d = fold_offsets(t_exp, pulse_rate_hz, chopper_phase_s)
    return Offsets(t, t_exp, k, d, pulse_rate_hz, chopper_phase_s, int((~keep).sum()))


@dataclass(frozen=True)
class OffsetHistogram:
    bin_width_s: float
    origin_s: float
    counts: np.ndarray

    @property
    def edges_s(self) -> np.ndarray:
        return self.origin_s + self.bin_width_s * np.arange(len(self.counts) + 1)

    @property
    def centers_s(self) -> np.ndarray:
        return self.origin_s + self.bin_width_s * (np.arange(len(self.counts)) + 0.5)

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


def build_histogram(offsets: Offsets, bin_width_s: float = DEFAULT_HIST_BIN_S) -> OffsetHistogram:
    """Left-closed bins of width ``bin_width_s`` starting at ``-T/2``.

    The last bin may extend past ``T/2`` when the period is not a whole
    number of bins.
    """
    if not bin_width_s > 0:
        raise InvalidParameterError(f"bin_width_s must be positive, got {bin_width_s!r}")
    period = offsets.period_s
    origin = -0.5 * period
    n_bins = int(math.ceil(period / bin_width_s - 1e-9))
    idx = np.floor((offsets.d_s - origin) / bin_width_s).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return OffsetHistogram(bin_width_s, origin, counts)


@dataclass(frozen=True)
class GaussianFitResult:
    amplitude: float
    mean_s: float
    sigma_s: float
    baseline: float
    fwhm_s: float
    fwhm_stderr_s: float
    converged: bool
    degenerate: bool = False
    stderr: tuple = (math.nan, math.nan, math.nan, math.nan)
    iterations: int = 0
    chi2: float = math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stderr"] = dict(zip(("amplitude", "mean_s", "sigma_s", "baseline"), self.stderr))
        return d


def gaussian_model(x, amplitude, mean, sigma, baseline):
    return amplitude * np.exp(-0.5 * ((x - mean) / sigma) ** 2) + baseline


def _jacobian(x, p):
    a, mu, s, _ = p
    z = (x - mu) / s
    g = np.exp(-0.5 * z * z)
    return np.column_stack([g, a * g * z / s, a * g * z * z / s, np.ones_like(x)])


def _initial_guess(x, y, bin_width):
    baseline = float(np.median(y))
    n_top = max(1, int(math.ceil(0.1 * len(y))))
    top = np.argsort(y, kind="stable")[-n_top:]
    w_top = y[top]
    mu = float(np.sum(w_top * x[top]) / np.sum(w_top)) if np.sum(w_top) > 0 else float(x[np.argmax(y)])
    excess = np.clip(y - baseline, 0, None)
    if excess.sum() > 0:
        var = float(np.sum(excess * (x - mu) ** 2) / excess.sum())
    else:
        var = bin_width**2
    sigma = max(math.sqrt(var), bin_width)
    amplitude = max(float(y.max()) - baseline, 1.0)
    return np.array([amplitude, mu, sigma, baseline])


def fit_gaussian(
    hist: OffsetHistogram, rtol: float = 1e-8, max_iter: int = 200
) -> GaussianFitResult:
    """Weighted Levenberg-Marquardt fit of a Gaussian on a constant floor.

    Bins are weighted by ``1 / max(count, 1)`` (Poisson variance). The
    reported standard errors come from the inverse of ``J^T W J`` at the
    solution.
    """
    x = hist.centers_s
    y = np.asarray(hist.counts, dtype=float)
    width = hist.bin_width_s
    nonempty = int(np.count_nonzero(y))
    if nonempty < 5:
        peak = int(np.argmax(y)) if y.size else 0
        mu = float(x[peak]) if y.size else 0.0
        sigma = width / FWHM_PER_SIGMA
        return GaussianFitResult(
            amplitude=float(y.max()) if y.size else 0.0,
            mean_s=mu,
            sigma_s=sigma,
            baseline=0.0,
            fwhm_s=FWHM_PER_SIGMA * sigma,
            fwhm_stderr_s=math.nan,
            converged=False,
            degenerate=True,
        )

    w = 1.0 / np.maximum(y, 1.0)
    p = _initial_guess(x, y, width)
    # work in units of the bin width so the normal matrix is well scaled
    xs = x / width
    p[1] /= width
    p[2] /= width

    def chi2_of(q):
        r = y - gaussian_model(xs, *q)
        return float(np.sum(w * r * r))

    lam = 1e-3
    chi2 = chi2_of(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = _jacobian(xs, p)
        r = y - gaussian_model(xs, *p)
        jtw = jac.T * w
        normal = jtw @ jac
        grad = jtw @ r
        while True:
            damped = normal + lam * np.diag(np.diag(normal))
            try:
                step = np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(damped, grad, rcond=None)[0]
            trial = p + step
            trial[2] = abs(trial[2])
            new_chi2 = chi2_of(trial) if trial[2] > 0 else math.inf
            if new_chi2 <= chi2:
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e12:
                step = np.zeros_like(p)
                trial = p
                new_chi2 = chi2
                break
        scale = np.array([abs(p[0]), p[2], p[2], abs(p[0])]) + np.abs(p)
        small = np.all(np.abs(step) <= rtol * np.maximum(scale, 1e-300))
        p, chi2 = trial, new_chi2
        if small:
            converged = True
            break

    jac = _jacobian(xs, p)
    try:
        cov = np.linalg.inv((jac.T * w) @ jac)
        err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        err = np.full(4, math.nan)
    amplitude, mu, sigma, baseline = p[0], p[1] * width, abs(p[2]) * width, p[3]
    err = err * np.array([1.0, width, width, 1.0])

    span = len(y) * width
    degenerate = bool(
        not converged
        or amplitude <= 0
        or not (amplitude > 3.0 * err[0])
        or sigma < 0.5 * width
        or FWHM_PER_SIGMA * sigma > 0.5 * span
    )
    if degenerate and sigma < width:
        sigma = min(sigma, width)
    return GaussianFitResult(
        amplitude=float(amplitude),
        mean_s=float(mu),
        sigma_s=float(sigma),
        baseline=float(baseline),
        fwhm_s=float(FWHM_PER_SIGMA * sigma),
        fwhm_stderr_s=float(FWHM_PER_SIGMA * err[2]),
        converged=converged,
        degenerate=degenerate,
        stderr=tuple(float(e) for e in err),
        iterations=it,
        chi2=chi2,
    )


class RateReport(NamedTuple):
    mean_rate_cps: float
    background_rate_cps: float
    photons_per_pulse: float

    @property
    def photons_per_pulse_display(self) -> float:
        """Non-negative value for display; the raw estimate is kept in ``photons_per_pulse``."""
        return max(self.photons_per_pulse, 0.0)


def rate_report(
    tags,
    duration_s: float,
    duty: float,
    pulse_rate_hz: float,
    background_rate_cps: float | None = None,
    *,
    offsets: Offsets | None = None,
    fit: GaussianFitResult | None = None,
) -> RateReport:
    """Duty-corrected count rate and detected photons per pulse.

    ``tags`` may be a tag stream, an array, or simply the number of tags.
    Without an explicit ``background_rate_cps`` the background is estimated
    from the off-peak part of ``offsets`` (which needs ``fit``).
    """
    if not duration_s > 0:
        raise InvalidParameterError("duration_s must be positive")
    if not (0 < duty <= 1):
        raise InvalidParameterError(f"duty must lie in (0, 1], got {duty!r}")
    n = tags if isinstance(tags, (int, np.integer)) else len(tags)
    mean_rate = n / duration_s / duty
    if background_rate_cps is None:
        if offsets is None or fit is None:
            raise InvalidParameterError("background rate needs either a value or offsets plus a fit")
        outside, out_width = _off_peak(offsets, fit.mean_s, fit.fwhm_s)
        background_rate_cps = outside * offsets.period_s / out_width / duration_s / duty
    n_exp = (mean_rate - background_rate_cps) / pulse_rate_hz
    return RateReport(float(mean_rate), float(background_rate_cps), float(n_exp))


def signal_fraction(bin_width_s: float, fwhm_s: float) -> float:
    """Probability mass of a centered Gaussian inside a window of ``bin_width_s``."""
    if not (bin_width_s > 0 and fwhm_s > 0):
        raise InvalidParameterError("bin width and FWHM must be positive")
    sigma = fwhm_s / FWHM_PER_SIGMA
    if math.isinf(bin_width_s):
        return 1.0
    return float(erf(bin_width_s / (2.0 * sigma * math.sqrt(2.0))))


def snr_from_counts(signal_counts: float, background_counts: float) -> float:
    """(N' - N'_b) / N'_b; infinite when the background is zero."""
    if background_counts == 0:
        return math.inf if signal_counts > 0 else math.nan
    return (signal_counts - background_counts) / background_counts


@dataclass(frozen=True)
class SnrReport:
    signal_bin_width_s: float
    signal_counts: int
    background_counts: float
    snr: float
    snr_stderr: float
    mean_rate_cps: float = math.nan
    background_rate_cps: float = math.nan
    photons_per_pulse: float = math.nan
    window_center_s: float = 0.0
    background_region_s: float = math.nan
    background_region_counts: int = 0
    infinite: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _wrapped(d, center, period):
    return np.mod(d - center + 0.5 * period, period) - 0.5 * period


def _off_peak(offsets: Offsets, center_s: float, fwhm_s: float) -> tuple[int, float]:
    period = offsets.period_s
    half = BACKGROUND_EXCLUSION_FWHM * fwhm_s
    out_width = period - 2.0 * half
    if out_width <= 0:
        raise InvalidParameterError(
            f"exclusion of +/-{half:.3g} s around the peak leaves no background region in a {period:.3g} s period"
        )
    rel = _wrapped(offsets.d_s, center_s, period)
    return int(np.count_nonzero(np.abs(rel) > half)), out_width


def snr(
    offsets: Offsets,
    fit: GaussianFitResult,
    signal_bin_width_s: float = DEFAULT_SIGNAL_BIN_S,
    rates: RateReport | None = None,
    *,
    center_s: float | None = None,
    fwhm_s: float | None = None,
) -> SnrReport:
    """Counts in a window centered on the fitted peak against the off-peak floor.

    The background expected in the window is the count outside
    ``+/-3 FWHM`` of the peak scaled by window width over the width of that
    outside region. ``center_s``/``fwhm_s`` override the fit, for example
    when the fit is degenerate.
    """
    period = offsets.period_s
    if not (0 < signal_bin_width_s < period):
        raise InvalidParameterError("signal_bin_width_s must be positive and shorter than the pulse period")
    if center_s is None or fwhm_s is None:
        if not fit.converged:
            raise InvalidParameterError("SNR needs a converged Gaussian fit (or explicit center/fwhm)")
    center = fit.mean_s if center_s is None else center_s
    fwhm = fit.fwhm_s if fwhm_s is None else fwhm_s
    rel = _wrapped(offsets.d_s, center, period)
    half_w = 0.5 * signal_bin_width_s
    n_sig = int(np.count_nonzero((rel >= -half_w) & (rel < half_w)))
    outside, out_width = _off_peak(offsets, center, fwhm)
    n_bg = outside * signal_bin_width_s / out_width
    value = snr_from_counts(n_sig, n_bg)
    infinite = math.isinf(value)
    if n_bg > 0 and n_sig > 0 and outside > 0:
        stderr = (n_sig / n_bg) * math.sqrt(1.0 / n_sig + 1.0 / outside)
    else:
        stderr = math.nan
    r = rates or RateReport(math.nan, math.nan, math.nan)
    return SnrReport(
        signal_bin_width_s=signal_bin_width_s,
        signal_counts=n_sig,
        background_counts=float(n_bg),
        snr=float(value),
        snr_stderr=float(stderr),
        mean_rate_cps=r.mean_rate_cps,
        background_rate_cps=r.background_rate_cps,
        photons_per_pulse=r.photons_per_pulse,
        window_center_s=float(center),
        background_region_s=float(out_width),
        background_region_counts=outside,
        infinite=infinite,
    )


def predicted_snr(
    signal_events: float,
    background_events: float,
    period_s: float,
    signal_bin_width_s: float,
    fwhm_s: float,
) -> float:
    """SNR expected from event totals: signal share in the window over uniform background share."""
    sig = signal_events * signal_fraction(signal_bin_width_s, fwhm_s)
    bg = background_events * signal_bin_width_s / period_s
    return sig / bg if bg > 0 else math.inf
