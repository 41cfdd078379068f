"""Command-line front end.

Exit status: 0 on success, 2 for usage/validation/format problems, 3 for
runtime or numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, linkbudget, orbit, photonsim, syncanalysis, tagio
from .errors import InvalidParameterError, PhotonLinkError
from .linkbudget import ChannelParams
from .photonsim import SimConfig

CONFIG_DIR_ENV = "PHOTONLINK_CONFIG_DIR"


class Inputs:
    """Tracks the exact bytes read so the manifest can record their digests."""

    def __init__(self):
        self.digests = {}

    def read(self, path) -> bytes:
        data = Path(path).read_bytes()
        self.digests[str(path)] = hashlib.sha256(data).hexdigest()
        return data


def resolve_config_path(name) -> Path:
    p = Path(name)
    if p.exists():
        return p
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir and (Path(env_dir) / name).exists():
        return Path(env_dir) / name
    bundled = resources.files("photonlink") / "data" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise InvalidParameterError(f"config file {name!r} not found (also looked in ${CONFIG_DIR_ENV} and bundled data)")


def load_config(path, inputs: Inputs) -> tuple[ChannelParams, dict]:
    resolved = resolve_config_path(path)
    try:
        doc = json.loads(inputs.read(resolved).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidParameterError(f"{path}: cannot parse configuration: {exc}") from None
    if not isinstance(doc, dict):
        raise InvalidParameterError(f"{path}: configuration must be a key/value object")
    sim = doc.pop("simulation", {}) or {}
    return ChannelParams.from_dict(doc), dict(sim)


def sim_config(channel: ChannelParams, section: dict, **overrides) -> SimConfig:
    data = dict(section)
    data.update({k: v for k, v in overrides.items() if v is not None})
    data["channel"] = channel
    return SimConfig.from_dict(data)


def load_model(path, inputs: Inputs) -> orbit.RangeModel:
    try:
        doc = json.loads(inputs.read(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidParameterError(f"{path}: cannot parse range model: {exc}") from None
    return orbit.RangeModel.from_dict(doc.get("model", doc))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def manifest(command: str, config: dict, inputs: Inputs, seed, outputs) -> dict:
    return {
        "command": command,
        "config": config,
        "inputs": dict(sorted(inputs.digests.items())),
        "seed": seed,
        "tool_version": __version__,
        "outputs": [Path(o).name for o in outputs],
    }


def _stem_sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _say(args, text: str):
    if not args.quiet:
        print(text, end="" if text.endswith("\n") else "\n")


def cmd_budget(args) -> int:
    inputs = Inputs()
    channel, sim = load_config(args.config, inputs)
    duty = args.duty
    if duty is None:
        duty = sim_config(channel, sim).duty if sim else 1.0
    report = linkbudget.link_budget(channel, duty)
    outputs = [args.out] if args.out else []
    doc = {
        "manifest": manifest("budget", {"channel": channel.to_dict(), "duty": duty}, inputs, None, outputs),
        "link_budget": report.to_dict(),
    }
    text = dumps(doc)
    if args.out:
        Path(args.out).write_text(text)
    if not args.quiet:
        print(
            f"uplink attenuation     {report.uplink_attenuation:.3e}\n"
            f"photons at satellite   {report.photons_at_satellite:.3f}\n"
            f"downlink attenuation   {report.downlink_attenuation:.3e}\n"
            f"detections per pulse   {report.detections_per_pulse:.3e}\n"
            f"uplink geometry        {report.uplink_geometry:.3e}\n"
            f"downlink geometry      {report.downlink_geometry:.3e}\n"
            f"predicted rate (cps)   {report.predicted_rate_cps:.1f}  (duty {duty:.5g})"
        )
        if args.json:
            print(text, end="")
    return 0


def cmd_synth_pass(args) -> int:
    geom = orbit.champ_pass_geometry(duration_s=args.duration)
    for key in ("altitude_m", "ground_speed_mps", "closest_approach_s"):
        if getattr(args, key) is not None:
            geom[key] = getattr(args, key)
    samples = orbit.synth_pass(sample_interval_s=args.interval, **geom)
    if args.noise_s > 0:
        samples = orbit.add_noise(samples, args.noise_s, args.seed if args.seed is not None else 0)
    out = Path(args.out or "pass.csv")
    orbit.write_range_csv(out, samples)
    _say(args, f"wrote {len(samples)} range samples to {out}")
    return 0


def cmd_fit_range(args) -> int:
    inputs = Inputs()
    inputs.read(args.input)
    samples = orbit.read_range_csv(args.input)
    model = orbit.fit_range(samples, args.degree)
    out = Path(args.out or "range_model.json")
    figure = _stem_sibling(out, ".png")
    outputs = [out] if args.no_plot else [out, figure]
    doc = {
        "manifest": manifest("fit-range", {"degree": args.degree}, inputs, None, outputs),
        "model": model.to_dict(),
    }
    out.write_text(dumps(doc))
    if not args.no_plot:
        from .plots import plot_range_fit

        plot_range_fit(samples, model, figure)
    _say(args, f"residual_rms_s {model.residual_rms_s:.4e}\nwrote {out}")
    return 0


def cmd_simulate(args) -> int:
    inputs = Inputs()
    channel, section = load_config(args.config, inputs)
    model = load_model(args.model, inputs)
    config = sim_config(channel, section, duration_s=args.duration, seed=args.seed, start_s=args.start)
    stream = photonsim.simulate_pass(config, model, workers=args.workers)
    out = Path(args.out or "tags.qtt1")
    csv_path = _stem_sibling(out, ".csv")
    outputs = [out, csv_path] if args.csv else [out]
    stream.metadata["manifest"] = manifest("simulate", config.to_dict(), inputs, config.seed, outputs)
    tagio.write_qtt1(out, stream)
    if args.csv:
        tagio.write_csv(csv_path, stream)
    _say(args, f"wrote {len(stream)} tags to {out}" + (f" and {csv_path}" if args.csv else ""))
    return 0


def cmd_analyze(args) -> int:
    inputs = Inputs()
    inputs.read(args.tags)
    stream = tagio.read_tags(args.tags)
    model = load_model(args.model, inputs)
    meta_cfg = stream.metadata.get("config")
    if args.config:
        channel, section = load_config(args.config, inputs)
        config = sim_config(channel, section)
    elif meta_cfg:
        config = SimConfig.from_dict(meta_cfg)
    else:
        config = SimConfig()
    duration = args.duration or stream.metadata.get("duration_s") or config.duration_s
    duty = args.duty or config.duty
    rate = config.channel.pulse_rate_hz
    phase = config.chopper_phase_s

    offsets = syncanalysis.compute_offsets(stream, model, rate, phase)
    hist = syncanalysis.build_histogram(offsets, args.hist_bin)
    fit = syncanalysis.fit_gaussian(hist)
    warnings = []
    if offsets.n_skipped:
        warnings.append(f"{offsets.n_skipped} tags fall outside the range model domain and were skipped")
    if not fit.converged:
        warnings.append("Gaussian fit did not converge")
    if fit.degenerate:
        warnings.append("Gaussian fit is degenerate (no resolved timing peak)")

    if args.estimate_background and fit.converged and not fit.degenerate:
        rates = syncanalysis.rate_report(len(stream), duration, duty, rate, offsets=offsets, fit=fit)
    else:
        background = args.background_rate if args.background_rate is not None else config.background_rate_cps
        rates = syncanalysis.rate_report(len(stream), duration, duty, rate, background)
    if fit.converged and not fit.degenerate:
        snr = syncanalysis.snr(offsets, fit, args.signal_bin, rates)
    else:
        # no usable peak: window at the nominal zero offset
        snr = syncanalysis.snr(offsets, fit, args.signal_bin, rates, center_s=0.0, fwhm_s=args.signal_bin / 2)

    out = Path(args.out or "analysis.json")
    hist_csv = _stem_sibling(out, ".hist.csv")
    figure = _stem_sibling(out, ".hist.png")
    outputs = [out, hist_csv] if args.no_plot else [out, hist_csv, figure]
    resolved = {
        "pulse_rate_hz": rate,
        "chopper_phase_s": phase,
        "duration_s": duration,
        "duty": duty,
        "hist_bin_s": args.hist_bin,
        "signal_bin_s": args.signal_bin,
        "background_source": "off-peak estimate" if args.estimate_background else "configured rate",
    }
    doc = {
        "manifest": manifest("analyze", resolved, inputs, stream.metadata.get("seed"), outputs),
        "offsets": {"n_tags": len(stream), "n_used": len(offsets), "n_skipped": offsets.n_skipped},
        "histogram": {
            "bin_width_s": hist.bin_width_s,
            "origin_s": hist.origin_s,
            "n_bins": len(hist.counts),
            "total": hist.total,
            "csv": hist_csv.name,
        },
        "fit": fit.to_dict(),
        "rates": {
            "mean_rate_cps": rates.mean_rate_cps,
            "background_rate_cps": rates.background_rate_cps,
            "photons_per_pulse": rates.photons_per_pulse,
            "photons_per_pulse_display": rates.photons_per_pulse_display,
        },
        "snr": snr.to_dict(),
        "warnings": warnings,
    }
    out.write_text(dumps(doc))
    with open(hist_csv, "w") as fh:
        fh.write("bin_center_s,count\n")
        for c, n in zip(hist.centers_s, hist.counts):
            fh.write(f"{c!r},{int(n)}\n")
    if not args.no_plot:
        from .plots import plot_offset_histogram

        plot_offset_histogram(hist, fit, figure, args.signal_bin)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    _say(
        args,
        f"FWHM {fit.fwhm_s * 1e9:.3f} +/- {fit.fwhm_stderr_s * 1e9:.3f} ns, "
        f"N_exp {rates.photons_per_pulse:.3e}, SNR {snr.snr:.1f}\nwrote {out}",
    )
    return 0


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="RNG seed")
    parser.add_argument("--out", default=default, help="output file")
    parser.add_argument("--csv", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="also write a CSV twin of the tag file")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="suppress console output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photonlink", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("budget", parents=[common], help="evaluate the link budget")
    p.add_argument("config")
    p.add_argument("--duty", type=float, help="receiver duty fraction for the predicted rate")
    p.add_argument("--json", action="store_true", help="print the full report document")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("synth-pass", parents=[common], help="write synthetic range samples")
    p.add_argument("--altitude-m", dest="altitude_m", type=float)
    p.add_argument("--ground-speed-mps", dest="ground_speed_mps", type=float)
    p.add_argument("--closest-approach-s", dest="closest_approach_s", type=float)
    p.add_argument("--duration", type=float, default=15.0)
    p.add_argument("--interval", type=float, default=0.05)
    p.add_argument("--noise-s", type=float, default=0.0, help="Gaussian noise on round trips")
    p.set_defaults(func=cmd_synth_pass)

    p = sub.add_parser("fit-range", parents=[common], help="fit a range model to CSV samples")
    p.add_argument("input")
    p.add_argument("--degree", type=int, default=orbit.DEFAULT_DEGREE)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_fit_range)

    p = sub.add_parser("simulate", parents=[common], help="simulate a detector tag stream")
    p.add_argument("config")
    p.add_argument("model")
    p.add_argument("--duration", type=float)
    p.add_argument("--start", type=float, help="emission start time (default: model domain start)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="offsets, histogram, fit, rates and SNR")
    p.add_argument("tags")
    p.add_argument("model")
    p.add_argument("--config", help="configuration (default: the one embedded in the tag file)")
    p.add_argument("--hist-bin", type=float, default=syncanalysis.DEFAULT_HIST_BIN_S)
    p.add_argument("--signal-bin", type=float, default=syncanalysis.DEFAULT_SIGNAL_BIN_S)
    p.add_argument("--duration", type=float)
    p.add_argument("--duty", type=float)
    p.add_argument("--background-rate", type=float)
    p.add_argument("--estimate-background", action="store_true",
                   help="estimate the background rate from off-peak offsets")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PhotonLinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
