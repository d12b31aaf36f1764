"""FFT screening for dominant oscillation frequencies and window selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .bandpass import BandpassSpec, design_butterworth_bandpass, filtfilt, padlen
from .errors import ConfigError, InsufficientDataError, NoDominantModeError
from .ingest import ChannelSet

MIN_SPECTRUM_LENGTH = 8


@dataclass
class ModeCandidate:
    f_s: float
    amplitude: float
    window: tuple[float, float]
    harmonic_of: float | None = None

    @property
    def is_harmonic(self) -> bool:
        return self.harmonic_of is not None

    def to_dict(self) -> dict:
        return {
            "f_s": self.f_s,
            "amplitude": self.amplitude,
            "window": list(self.window),
            "harmonic_of": self.harmonic_of,
        }


def spectrum(x: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided amplitude spectrum of the Hann-tapered signal.

    Magnitudes are scaled so a sinusoid of amplitude ``A`` centred on a bin
    reads ``A`` there: ``2 |X_k| / sum(w)`` for interior bins and
    ``|X_k| / sum(w)`` at DC and (for even N) Nyquist.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < MIN_SPECTRUM_LENGTH:
        raise InsufficientDataError(f"spectrum needs at least {MIN_SPECTRUM_LENGTH} samples, got {n}")
    w = signal.get_window("hann", n)
    X = np.fft.rfft(w * x)
    mags = 2.0 * np.abs(X) / w.sum()
    mags[0] *= 0.5
    if n % 2 == 0:
        mags[-1] *= 0.5
    return np.fft.rfftfreq(n, dt), mags


def aggregate_spectrum(cs: ChannelSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin maximum of the channel spectra."""
    freqs = None
    agg = None
    for c in cs.channels:
        freqs, mags = spectrum(c.samples, cs.dt)
        agg = mags if agg is None else np.maximum(agg, mags)
    if agg is None:
        raise InsufficientDataError("no channels to analyse")
    return freqs, agg


def _refine(mags: np.ndarray, k: int) -> float:
    a, b, c = mags[k - 1], mags[k], mags[k + 1]
    denom = a - 2 * b + c
    if denom == 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))


def dominant_modes(
    cs: ChannelSet,
    threshold_rel: float = 0.3,
    floor_factor: float = 5.0,
    harmonic_tol: float = 0.02,
) -> list[ModeCandidate]:
    """Significant spectral peaks, strongest first.

    A local maximum of the aggregated spectrum counts when it reaches
    ``threshold_rel`` of the largest non-DC magnitude and also stands
    ``floor_factor`` times above the median level (the noise floor). Peaks
    that sit at an integer multiple (2% tolerance) of a lower detected peak
    are kept but marked ``harmonic_of``.
    """
    if not 0 < threshold_rel <= 1:
        raise ConfigError(f"threshold_rel must lie in (0, 1], got {threshold_rel}")
    freqs, agg = aggregate_spectrum(cs)
    n = cs.n_samples
    df = 1.0 / (n * cs.dt)
    body = agg[1:]
    peak_level = body.max()
    if peak_level <= 0:
        return []
    floor = floor_factor * float(np.median(body))
    level = max(threshold_rel * peak_level, floor)

    found: list[tuple[float, float]] = []
    for k in range(1, len(agg) - 1):
        if agg[k] > agg[k - 1] and agg[k] >= agg[k + 1] and agg[k] >= level:
            found.append(((k + _refine(agg, k)) * df, float(agg[k])))

    merged: list[tuple[float, float]] = []
    for f, a in sorted(found):
        if merged and f - merged[-1][0] < df:
            if a > merged[-1][1]:
                merged[-1] = (f, a)
            continue
        merged.append((f, a))

    window = (cs.t0, cs.t0 + (n - 1) * cs.dt)
    out: list[ModeCandidate] = []
    for f, a in merged:  # ascending frequency
        base = None
        for cand in out:
            if cand.is_harmonic:
                continue
            mult = round(f / cand.f_s)
            if mult >= 2 and abs(f - mult * cand.f_s) <= harmonic_tol * f:
                base = cand.f_s
                break
        out.append(ModeCandidate(f, a, window, base))
    out.sort(key=lambda m: (-m.amplitude, m.f_s))
    return out


def select_window(
    cs: ChannelSet,
    modes: list[ModeCandidate],
    requested: tuple[float, float] | None = None,
    window_cycles: float = 60.0,
    retain_frac: float = 0.65,
) -> tuple[float, float]:
    """Pick the analysis window (inclusive sample times).

    A valid ``requested`` window is returned as given. Otherwise the window
    spans ``window_cycles`` periods of the lowest dominant frequency (at least
    five periods after central retention, at most the whole record) and is
    placed where the strongest mode carries the most band-limited energy.
    """
    primary = [m for m in modes if not m.is_harmonic] or list(modes)
    if not primary:
        raise NoDominantModeError("no dominant mode to size the analysis window")
    f_min = min(m.f_s for m in primary)
    min_len = 5.0 / f_min
    n = cs.n_samples
    t_first, t_last = cs.t0, cs.t0 + (n - 1) * cs.dt
    if n * cs.dt < min_len - 1e-9:
        raise InsufficientDataError(
            f"{n * cs.dt:.3f} s of data cover fewer than 5 cycles of {f_min:.4g} Hz ({min_len:.3f} s)"
        )

    if requested is not None:
        start, end = (float(v) for v in requested)
        tol = 0.5 * cs.dt
        if not (t_first - tol <= start < end <= t_last + tol):
            raise ConfigError(
                f"requested window {start:g}-{end:g} s lies outside the data ({t_first:g}-{t_last:g} s)"
            )
        if end - start + cs.dt < min_len - 1e-9:
            raise InsufficientDataError(
                f"requested window {start:g}-{end:g} s is shorter than 5 cycles of {f_min:.4g} Hz"
            )
        return (start, end)

    length = max(window_cycles / f_min, min_len / retain_frac)
    n_win = int(math.ceil(length / cs.dt))
    if n_win >= n:
        return (t_first, t_last)

    strongest = primary[0]
    data = cs.matrix()
    try:
        sos = design_butterworth_bandpass(BandpassSpec(strongest.f_s), cs.dt)
        if n > padlen(sos):
            data = filtfilt(data, sos)
    except ConfigError:
        pass
    energy = np.concatenate([[0.0], np.cumsum((data**2).sum(axis=0))])
    totals = energy[n_win:] - energy[:-n_win]
    i = int(np.argmax(totals))
    return (t_first + i * cs.dt, t_first + (i + n_win - 1) * cs.dt)
