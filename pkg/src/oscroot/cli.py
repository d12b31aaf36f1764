"""Command line entry point: ``oscroot analyze|fft|filter|edmd|synth``.

Exit codes: 0 ok, 2 no dominant mode, 3 data quality, 4 configuration,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .bandpass import isolate_band
from .edmd import build_snapshots, debug_dump, estimate_operator, reduce_and_decompose, select_truncation
from .errors import ConfigError, OscrootError
from .ingest import write_direct_csv
from .modal import mode_report
from .pipeline import (
    AnalysisConfig,
    detrend,
    dominant_modes,
    dump_json,
    eigen_table,
    load_channels,
    load_mapping,
    parse_window,
    run_analysis,
    write_outputs,
    write_participation_csv,
    participation_filename,
    write_spectrum_csv,
    aggregate_spectrum,
)
from .synth import generate, scenario_from_dict

logger = logging.getLogger("oscroot")

DEFAULTS_HELP = """\
configuration keys (TOML or JSON; [section] key):
  schema = auto|phasor|direct        input layout (artifact default: auto)
  window = [start, end]              analysis window in s (artifact default: automatic)
  lpf_cut_hz                         optional zero-phase low-pass before analysis;
                                     3.0 Hz was used for low-frequency field data
                                     (artifact default: off)
  aggregation = mag_sum|sum_mag      plant aggregation (artifact default: mag_sum)
  top_k                              contributors listed per mode (artifact default: 5)
  debug_edmd                         also write debug_edmd.json (artifact default: false)
  [fft] threshold_rel                peak threshold vs. spectral max (artifact default: 0.3)
  [fft] floor_factor                 peak must exceed this x median level (artifact default: 5)
  [fft] harmonic_tol                 relative harmonic tolerance (artifact default: 0.02)
  [fft] window_cycles                automatic window length in cycles (artifact default: 60;
                                     never below 5 cycles)
  [bandpass] ratio_lo, ratio_hi      cutoffs as fraction of f_s (0.9, 1.1)
  [bandpass] order                   Butterworth prototype order (4)
  [bandpass] retain_frac             central fraction kept, 0.5-0.8 (artifact default: 0.65)
  [truncation] r                     fixed truncation order (artifact default: elbow rule)
  [match] tolerance                  mode matching tolerance (artifact default: 0.15)
  [clean] outlier_k                  outlier threshold in MADs (artifact default: 6)
  [clean] max_gap                    longest repairable gap (artifact default: 5 samples)
  [clean] max_removed_frac           data-quality limit (artifact default: 0.2)

exit codes: 0 ok, 2 no dominant mode, 3 data quality, 4 configuration, 5 numerical
"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON configuration file")
    common.add_argument("--input", help="input CSV (phasor or direct schema)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--r", type=int, help="truncation order override")
    common.add_argument("--window", help="analysis window 'start,end' in seconds")
    common.add_argument("--fs", type=float, help="mode frequency of interest in Hz")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="oscroot",
        description="Locate the plants driving poorly damped oscillations in PMU P/Q data.",
        epilog=DEFAULTS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter
    sub.add_parser("analyze", parents=[common], help="full pipeline; writes report.json", epilog=DEFAULTS_HELP, formatter_class=fmt)
    sub.add_parser("fft", parents=[common], help="spectrum.csv and candidates.json", formatter_class=fmt)
    sub.add_parser("filter", parents=[common], help="band-pass around --fs and keep the centre", formatter_class=fmt)
    sub.add_parser("edmd", parents=[common], help="EDMD on already filtered data", formatter_class=fmt)
    sub.add_parser("synth", parents=[common], help="synthetic event from a scenario file", formatter_class=fmt)
    return parser


def resolve_config(args) -> AnalysisConfig:
    data = load_mapping(args.config) if args.config else {}
    cfg = AnalysisConfig.from_mapping({k: v for k, v in data.items() if k != "scenario"})
    if args.input:
        cfg.input = args.input
    if args.out:
        cfg.out = args.out
    if args.r is not None:
        cfg.truncation_r = args.r
    if args.window:
        cfg.window = parse_window(args.window)
    if args.fs is not None:
        cfg.fs = args.fs
    cfg.validate()
    return cfg


def cmd_analyze(cfg: AnalysisConfig) -> int:
    result = run_analysis(load_channels(cfg), cfg)
    for path in write_outputs(result, cfg.out):
        logger.info("wrote %s", path)
    for m in result.modes:
        top = ", ".join(p for p, _ in m.report.ranking(cfg.top_k))
        print(
            f"{m.candidate.f_s:.4f} Hz -> {m.report.freq_hz:.4f} Hz, "
            f"damping {m.report.damping_pct:.2f}%, r={m.report.truncation_r}, top: {top}"
        )
    return 0


def cmd_fft(cfg: AnalysisConfig) -> int:
    cs = detrend(load_channels(cfg))
    freqs, mags = aggregate_spectrum(cs)
    cands = dominant_modes(cs, cfg.threshold_rel, cfg.floor_factor, cfg.harmonic_tol)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_spectrum_csv(freqs, mags, out / "spectrum.csv")
    dump_json([c.to_dict() for c in cands], out / "candidates.json")
    for c in cands:
        note = f" (harmonic of {c.harmonic_of:.4f} Hz)" if c.is_harmonic else ""
        print(f"{c.f_s:.4f} Hz  amplitude {c.amplitude:.4g}{note}")
    return 0 if any(not c.is_harmonic for c in cands) else 2


def _require_fs(cfg: AnalysisConfig) -> float:
    if cfg.fs is None:
        raise ConfigError("this stage needs the mode frequency (--fs or 'fs' in the config)")
    return cfg.fs


def cmd_filter(cfg: AnalysisConfig) -> int:
    f_s = _require_fs(cfg)
    cs = detrend(load_channels(cfg))
    if cfg.window is not None:
        cs = cs.slice_time(*cfg.window)
    spec = cfg.bandpass_spec(f_s)
    filtered = isolate_band(cs.matrix(), spec, cs.dt)
    lead = (cs.n_samples - filtered.shape[1]) // 2
    out_cs = cs.with_matrix(filtered, t0=cs.t0 + lead * cs.dt)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_direct_csv(out_cs, out / "filtered.csv")
    print(f"kept {filtered.shape[1]} of {cs.n_samples} samples, band {spec.f_lo:.4g}-{spec.f_hi:.4g} Hz")
    return 0


def cmd_edmd(cfg: AnalysisConfig) -> int:
    cs = load_channels(cfg)
    op = estimate_operator(build_snapshots(cs))
    r = select_truncation(op.singular_values, 1, cfg.truncation_r)
    if cfg.truncation_r is None:
        r = max(min(r, op.rank), 1)
    dec = reduce_and_decompose(op, r)
    doc = {"r": r, "singular_values": op.singular_values.tolist(), "eigenvalues": eigen_table(dec)}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.fs is not None:
        report = mode_report(dec, cfg.fs, cfg.aggregation, cfg.match_tolerance)
        mode = report.to_dict()
        mode["top_contributors"] = [p for p, _ in report.ranking(cfg.top_k)]
        doc["modes"] = [mode]
        write_participation_csv(report, out / participation_filename(cfg.fs))
        print(f"{report.freq_hz:.4f} Hz, damping {report.damping_pct:.2f}%, r={r}, "
              f"top: {', '.join(mode['top_contributors'])}")
    dump_json(doc, out / "report.json")
    dump_json(debug_dump(op, dec), out / "debug_edmd.json")
    return 0


def cmd_synth(args, cfg: AnalysisConfig) -> int:
    if not args.config:
        raise ConfigError("synth needs a scenario file (--config)")
    scn = scenario_from_dict(load_mapping(args.config))
    cs = generate(scn)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "synthetic.csv"
    write_direct_csv(cs, path)
    print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            data = load_mapping(args.config) if args.config else {}
            cfg = AnalysisConfig(out=args.out or data.get("out", "oscroot_out"))
            return cmd_synth(args, cfg)
        cfg = resolve_config(args)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "fft":
            return cmd_fft(cfg)
        if args.command == "filter":
            return cmd_filter(cfg)
        return cmd_edmd(cfg)
    except OscrootError as exc:
        print(f"oscroot: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
