"""Butterworth band isolation around one dominant frequency.

The filter is designed from the analog Butterworth prototype, mapped to a
band-pass, and discretised with the bilinear transform with both band edges
prewarped, so the -3 dB points land exactly on the requested cutoffs. It is
applied forward and backward (zero phase), after which only the central part
of the record is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigError, InsufficientDataError


@dataclass(frozen=True)
class BandpassSpec:
    f_s: float
    ratio_lo: float = 0.9
    ratio_hi: float = 1.1
    order: int = 4
    retain_frac: float = 0.65

    @property
    def f_lo(self) -> float:
        return self.ratio_lo * self.f_s

    @property
    def f_hi(self) -> float:
        return self.ratio_hi * self.f_s

    def validate(self, dt: float) -> None:
        nyquist = 0.5 / dt
        if not 0 < self.f_lo < self.f_hi:
            raise ConfigError(
                f"band edges must satisfy 0 < f_lo < f_hi, got {self.f_lo:g}, {self.f_hi:g} Hz"
            )
        if self.f_hi >= nyquist:
            raise ConfigError(
                f"upper cutoff {self.f_hi:g} Hz is not below the Nyquist frequency "
                f"{nyquist:g} Hz; use a higher sampling rate or a narrower band"
            )
        if self.order < 1:
            raise ConfigError("filter order must be >= 1")
        if not 0.5 <= self.retain_frac <= 0.8:
            raise ConfigError(f"retain_frac must lie in [0.5, 0.8], got {self.retain_frac}")


def _prewarp(f: float, dt: float) -> float:
    # analog rad/s that the bilinear transform maps onto digital frequency f
    return 2.0 / dt * math.tan(math.pi * f * dt)


def design_butterworth_bandpass(spec: BandpassSpec, dt: float) -> np.ndarray:
    """Second-order sections of the digital Butterworth band-pass.

    ``spec.order`` is the order of the analog low-pass prototype, so the
    resulting band-pass has ``2 * order`` poles.
    """
    spec.validate(dt)
    w_lo, w_hi = _prewarp(spec.f_lo, dt), _prewarp(spec.f_hi, dt)
    z, p, k = signal.buttap(spec.order)
    z, p, k = signal.lp2bp_zpk(z, p, k, wo=math.sqrt(w_lo * w_hi), bw=w_hi - w_lo)
    z, p, k = signal.bilinear_zpk(z, p, k, fs=1.0 / dt)
    return signal.zpk2sos(z, p, k)


def design_butterworth_lowpass(f_cut: float, dt: float, order: int = 4) -> np.ndarray:
    nyquist = 0.5 / dt
    if not 0 < f_cut < nyquist:
        raise ConfigError(f"low-pass cutoff {f_cut:g} Hz must lie in (0, {nyquist:g}) Hz")
    z, p, k = signal.buttap(order)
    z, p, k = signal.lp2lp_zpk(z, p, k, wo=_prewarp(f_cut, dt))
    z, p, k = signal.bilinear_zpk(z, p, k, fs=1.0 / dt)
    return signal.zpk2sos(z, p, k)


def magnitude_response(sos: np.ndarray, freqs_hz, dt: float) -> np.ndarray:
    """|H(e^{j 2 pi f dt})| of a single pass."""
    _, h = signal.sosfreqz(sos, worN=np.atleast_1d(np.asarray(freqs_hz, dtype=float)), fs=1.0 / dt)
    return np.abs(h)


def padlen(sos: np.ndarray) -> int:
    return 3 * 2 * len(sos)


def filtfilt(x: np.ndarray, sos: np.ndarray) -> np.ndarray:
    """Forward-backward filtering along the last axis.

    Edges are extended by odd reflection of length three times the number of
    poles; the extension is dropped after the backward pass.
    """
    x = np.asarray(x, dtype=float)
    n_pad = padlen(sos)
    if x.shape[-1] <= n_pad:
        raise InsufficientDataError(
            f"zero-phase filtering needs more than {n_pad} samples, got {x.shape[-1]}"
        )
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=n_pad)


def retain_center(
    x: np.ndarray,
    retain_frac: float,
    f_s: float | None = None,
    dt: float | None = None,
) -> np.ndarray:
    """Central ``round(retain_frac * N)`` samples along the last axis.

    When ``f_s`` and ``dt`` are given the kept slice must still span five
    cycles of ``f_s``.
    """
    if not 0.5 <= retain_frac <= 0.8:
        raise ConfigError(f"retain_frac must lie in [0.5, 0.8], got {retain_frac}")
    x = np.asarray(x)
    n = x.shape[-1]
    keep = int(math.floor(retain_frac * n + 0.5))
    lead = (n - keep) // 2
    if f_s is not None and dt is not None and keep * dt < 5.0 / f_s - 1e-9:
        raise InsufficientDataError(
            f"retained {keep} samples ({keep * dt:.3f} s) cover fewer than 5 cycles "
            f"of {f_s:g} Hz ({5.0 / f_s:.3f} s)"
        )
    return x[..., lead : lead + keep]


def isolate_band(data: np.ndarray, spec: BandpassSpec, dt: float) -> np.ndarray:
    """Band-pass every row of ``data`` and keep the centre."""
    sos = design_butterworth_bandpass(spec, dt)
    return retain_center(filtfilt(data, sos), spec.retain_frac, spec.f_s, dt)
