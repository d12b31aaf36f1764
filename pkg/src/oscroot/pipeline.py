"""End-to-end analysis: clean, screen, window, and one EDMD pass per dominant mode."""

from __future__ import annotations

import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bandpass import BandpassSpec, design_butterworth_bandpass, isolate_band, magnitude_response
from .edmd import (
    KoopmanDecomposition,
    KoopmanOperator,
    build_snapshots,
    debug_dump,
    estimate_operator,
    reduce_and_decompose,
    select_truncation,
    to_continuous,
)
from .errors import ConfigError, NoDominantModeError
from .ingest import ChannelSet, CleanConfig, check_grouping, clean, detrend, lowpass_denoise, read_csv
from .modal import AGGREGATIONS, MATCH_TOLERANCE, ModeReport, mode_report
from .spectral import ModeCandidate, aggregate_spectrum, dominant_modes, select_window

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

# config file section -> {key in section: AnalysisConfig field}
SECTIONS = {
    "fft": {
        "threshold_rel": "threshold_rel",
        "floor_factor": "floor_factor",
        "harmonic_tol": "harmonic_tol",
        "window_cycles": "window_cycles",
    },
    "bandpass": {
        "ratio_lo": "ratio_lo",
        "ratio_hi": "ratio_hi",
        "order": "order",
        "retain_frac": "retain_frac",
    },
    "truncation": {"r": "truncation_r"},
    "clean": {
        "outlier_k": "outlier_k",
        "outlier_halfwidth": "outlier_halfwidth",
        "max_gap": "max_gap",
        "max_removed_frac": "max_removed_frac",
    },
    "match": {"tolerance": "match_tolerance"},
}


@dataclass
class AnalysisConfig:
    input: str | None = None
    schema: str = "auto"
    out: str = "oscroot_out"
    window: tuple[float, float] | None = None
    fs: float | None = None
    lpf_cut_hz: float | None = None
    threshold_rel: float = 0.3
    floor_factor: float = 5.0
    harmonic_tol: float = 0.02
    window_cycles: float = 60.0
    ratio_lo: float = 0.9
    ratio_hi: float = 1.1
    order: int = 4
    retain_frac: float = 0.65
    truncation_r: int | None = None
    aggregation: str = "mag_sum"
    top_k: int = 5
    match_tolerance: float = MATCH_TOLERANCE
    outlier_k: float | None = 6.0
    outlier_halfwidth: int = 15
    max_gap: int = 5
    max_removed_frac: float = 0.2
    debug_edmd: bool = False

    def validate(self) -> None:
        if self.schema not in ("auto", "phasor", "direct"):
            raise ConfigError(f"schema must be auto, phasor or direct, got {self.schema!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if not 0 < self.threshold_rel <= 1:
            raise ConfigError(f"fft.threshold_rel must lie in (0, 1], got {self.threshold_rel}")
        if not 0.5 <= self.retain_frac <= 0.8:
            raise ConfigError(f"bandpass.retain_frac must lie in [0.5, 0.8], got {self.retain_frac}")
        if not 0 < self.ratio_lo < 1 < self.ratio_hi:
            raise ConfigError("bandpass ratios must satisfy 0 < ratio_lo < 1 < ratio_hi")
        if self.order < 1:
            raise ConfigError("bandpass.order must be >= 1")
        if self.truncation_r is not None and self.truncation_r < 1:
            raise ConfigError("truncation.r must be >= 1")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise ConfigError(f"window start must precede its end, got {self.window}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")

    @classmethod
    def from_mapping(cls, data: dict) -> AnalysisConfig:
        names = {f.name for f in fields(cls)}
        kw = {}
        for key, value in data.items():
            if key in SECTIONS and isinstance(value, dict):
                for sub, sub_value in value.items():
                    if sub not in SECTIONS[key]:
                        raise ConfigError(f"unknown config key {key}.{sub}")
                    kw[SECTIONS[key][sub]] = sub_value
            elif key in names:
                kw[key] = value
            elif key == "scenario":
                continue
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if kw.get("window") is not None:
            kw["window"] = parse_window(kw["window"])
        try:
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def bandpass_spec(self, f_s: float) -> BandpassSpec:
        return BandpassSpec(f_s, self.ratio_lo, self.ratio_hi, self.order, self.retain_frac)

    def clean_config(self) -> CleanConfig:
        return CleanConfig(
            outlier_k=self.outlier_k,
            outlier_halfwidth=self.outlier_halfwidth,
            max_gap=self.max_gap,
            max_removed_frac=self.max_removed_frac,
        )

    def echo(self) -> dict:
        """Fully resolved configuration in config-file layout."""
        flat = asdict(self)
        out: dict = {}
        nested = {v: (sec, k) for sec, keys in SECTIONS.items() for k, v in keys.items()}
        for key, value in flat.items():
            if isinstance(value, tuple):
                value = list(value)
            if key in nested:
                sec, sub = nested[key]
                out.setdefault(sec, {})[sub] = value
            else:
                out[key] = value
        return out


def parse_window(value) -> tuple[float, float]:
    if isinstance(value, str):
        parts = value.replace(" ", "").split(",")
    else:
        parts = list(value)
    if len(parts) != 2:
        raise ConfigError(f"window must be two numbers 'start,end', got {value!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"window must be two numbers 'start,end', got {value!r}") from exc


def load_mapping(path: str | Path) -> dict:
    """Parse a TOML or JSON config file (by suffix; TOML otherwise)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


@dataclass
class ModeAnalysis:
    candidate: ModeCandidate
    report: ModeReport
    operator: KoopmanOperator
    decomposition: KoopmanDecomposition


@dataclass
class AnalysisResult:
    config: AnalysisConfig
    freqs: np.ndarray
    spectrum: np.ndarray
    candidates: list[ModeCandidate]
    window: tuple[float, float]
    modes: list[ModeAnalysis] = field(default_factory=list)

    @property
    def reports(self) -> list[ModeReport]:
        return [m.report for m in self.modes]

    def to_dict(self) -> dict:
        top_k = self.config.top_k
        modes = []
        for m in self.modes:
            d = m.report.to_dict()
            d["top_contributors"] = [p for p, _ in m.report.ranking(top_k)]
            d["singular_values"] = m.operator.singular_values.tolist()
            d["fft_amplitude"] = m.candidate.amplitude
            modes.append(d)
        return {
            "config": self.config.echo(),
            "window": list(self.window),
            "candidates": [c.to_dict() for c in self.candidates],
            "modes": modes,
        }


def load_channels(cfg: AnalysisConfig) -> ChannelSet:
    if not cfg.input:
        raise ConfigError("no input file given (--input or 'input' in the config)")
    raw = read_csv(cfg.input, cfg.schema)
    cs = clean(raw, cfg.clean_config())
    check_grouping(cs, require_pq=cfg.schema == "phasor")
    if cfg.lpf_cut_hz is not None:
        cs = lowpass_denoise(cs, cfg.lpf_cut_hz)
    return cs


# modes attenuated by more than 20 dB after forward-backward filtering are
# treated as removed when sizing the truncation order
IN_BAND_GAIN = 0.01


def modes_in_band(spec: BandpassSpec, dt: float, freqs) -> int:
    """How many of ``freqs`` pass the zero-phase band-pass with gain >= IN_BAND_GAIN."""
    gain = magnitude_response(design_butterworth_bandpass(spec, dt), list(freqs), dt) ** 2
    return max(int(np.sum(gain >= IN_BAND_GAIN)), 1)


def analyze_mode(
    cs: ChannelSet,
    f_s: float,
    n_dominant: int,
    cfg: AnalysisConfig,
) -> tuple[ModeReport, KoopmanOperator, KoopmanDecomposition]:
    """Band-pass around ``f_s``, fit EDMD, and build the participation report."""
    filtered = isolate_band(cs.matrix(), cfg.bandpass_spec(f_s), cs.dt)
    op = estimate_operator(build_snapshots(cs.with_matrix(filtered)))
    r = select_truncation(op.singular_values, n_dominant, cfg.truncation_r)
    if cfg.truncation_r is None and r > op.rank:
        logger.info("truncation order %d capped at numerical rank %d", r, op.rank)
        r = max(op.rank, 1)
    dec = reduce_and_decompose(op, r)
    report = mode_report(dec, f_s, cfg.aggregation, cfg.match_tolerance)
    return report, op, dec


def run_analysis(cs: ChannelSet, cfg: AnalysisConfig) -> AnalysisResult:
    cfg.validate()
    detrended = detrend(cs)
    freqs, mags = aggregate_spectrum(detrended)
    if cfg.fs is not None:
        k = int(np.argmin(np.abs(freqs - cfg.fs)))
        candidates = [ModeCandidate(float(cfg.fs), float(mags[k]), (cs.t0, cs.times[-1]))]
    else:
        candidates = dominant_modes(detrended, cfg.threshold_rel, cfg.floor_factor, cfg.harmonic_tol)
    dominant = [c for c in candidates if not c.is_harmonic]
    if not dominant:
        raise NoDominantModeError(
            f"no spectral peak above {cfg.threshold_rel:g} of the maximum stands out from the noise floor"
        )
    window = select_window(detrended, dominant, cfg.window, cfg.window_cycles, cfg.retain_frac)
    windowed = detrend(cs.slice_time(*window))
    result = AnalysisResult(cfg, freqs, mags, candidates, window)
    for cand in dominant:
        spec = cfg.bandpass_spec(cand.f_s)
        n_dom = modes_in_band(spec, cs.dt, [c.f_s for c in dominant])
        report, op, dec = analyze_mode(windowed, cand.f_s, n_dom, cfg)
        result.modes.append(ModeAnalysis(cand, report, op, dec))
        logger.info(
            "mode %.4g Hz: estimated %.4g Hz, damping %.3g%%, r=%d, top %s",
            cand.f_s, report.freq_hz, report.damping_pct, report.truncation_r,
            report.ranking(1)[0][0],
        )
    return result


def canonical(obj):
    """Round floats to 12 significant digits, recursively."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.12g}")
    return obj


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(canonical(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_spectrum_csv(freqs, mags, path: Path) -> None:
    lines = ["freq_hz,magnitude"] + [f"{f:.12g},{m:.12g}" for f, m in zip(freqs, mags)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_participation_csv(report: ModeReport, path: Path) -> None:
    lines = ["plant,participation"] + [f"{p},{v:.12g}" for p, v in report.ranking()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def participation_filename(f_s: float) -> str:
    return f"participation_{f_s:.3f}.csv"


def write_outputs(result: AnalysisResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "spectrum.csv"]
    dump_json(result.to_dict(), written[0])
    write_spectrum_csv(result.freqs, result.spectrum, written[1])
    for m in result.modes:
        path = out / participation_filename(m.candidate.f_s)
        write_participation_csv(m.report, path)
        written.append(path)
    if result.config.debug_edmd:
        dumps = {f"{m.candidate.f_s:.3f}": debug_dump(m.operator, m.decomposition) for m in result.modes}
        path = out / "debug_edmd.json"
        dump_json(dumps, path)
        written.append(path)
    return written


def eigen_table(dec: KoopmanDecomposition) -> list[dict]:
    rows = []
    for mu in dec.mu:
        lam, freq, zeta = to_continuous(mu, dec.dt)
        rows.append(
            {
                "mu_re": mu.real,
                "mu_im": mu.imag,
                "lambda_re": lam.real,
                "lambda_im": lam.imag,
                "freq_hz": freq,
                "damping_pct": 100 * zeta,
            }
        )
    return rows
