"""Figures written next to the delimited report output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .orbit import RangeModel, roundtrip_at  # noqa: E402
from .syncanalysis import GaussianFitResult, OffsetHistogram, gaussian_model  # noqa: E402

# PNG metadata without version strings so reruns are byte-stable
_PNG_META = {"Software": None}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_range_fit(samples, model: RangeModel, path) -> None:
    t = np.array([s.emit_time_s for s in samples])
    rt = np.array([s.roundtrip_s for s in samples])
    grid = np.linspace(*model.domain, 400)
    fig, (ax, axr) = plt.subplots(2, 1, sharex=True, figsize=(6, 5), gridspec_kw={"height_ratios": [3, 1]})
    ax.plot(t, rt * 1e3, ".", color="tab:blue", ms=3, label="range samples")
    ax.plot(grid, roundtrip_at(model, grid) * 1e3, "-", color="tab:red", label=f"degree {model.degree} fit")
    ax.set_ylabel("round trip (ms)")
    ax.legend(frameon=False)
    axr.plot(t, (rt - roundtrip_at(model, t)) * 1e9, ".", color="k", ms=2)
    axr.axhline(0, color="0.6", lw=0.8)
    axr.set_xlabel("emission time (s)")
    axr.set_ylabel("resid. (ns)")
    _finish(fig, path)


def plot_offset_histogram(hist: OffsetHistogram, fit: GaussianFitResult | None, path, signal_bin_s=None) -> None:
    x_ns = hist.centers_s * 1e9
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x_ns, hist.counts, width=hist.bin_width_s * 1e9, color="0.55", edgecolor="none", label="D offsets")
    if fit is not None and fit.converged:
        fine = np.linspace(hist.edges_s[0], hist.edges_s[-1], 1000)
        ax.plot(fine * 1e9, gaussian_model(fine, fit.amplitude, fit.mean_s, fit.sigma_s, fit.baseline),
                color="tab:red", lw=1.2, label=f"Gaussian fit, FWHM {fit.fwhm_s * 1e9:.3f} ns")
    if signal_bin_s and fit is not None:
        lo, hi = (fit.mean_s - signal_bin_s / 2) * 1e9, (fit.mean_s + signal_bin_s / 2) * 1e9
        ax.axvspan(lo, hi, color="tab:blue", alpha=0.12, label=f"{signal_bin_s * 1e9:g} ns signal bin")
    ax.set_xlabel("D = t0 - t_exp (ns)")
    ax.set_ylabel(f"counts / {hist.bin_width_s * 1e9:g} ns")
    ax.legend(frameon=False, fontsize=8)
    _finish(fig, path)
