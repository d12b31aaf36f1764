"""Mode matching and data-driven participation factors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .edmd import KoopmanDecomposition, to_continuous
from .errors import DegenerateModeError, NoMatchingModeError, OscrootError

MATCH_TOLERANCE = 0.15
AGGREGATIONS = ("mag_sum", "sum_mag")


@dataclass
class ModeReport:
    f_s_requested: float
    lam: complex
    freq_hz: float
    damping_pct: float
    plant_participation: dict[str, float]
    raw_participation: dict[tuple[str, str], complex]
    truncation_r: int
    mode_index: int = 0
    singular_values: list[float] = field(default_factory=list)

    def ranking(self, top_k: int | None = None) -> list[tuple[str, float]]:
        return rank_contributors(self, top_k)

    def to_dict(self) -> dict:
        return {
            "f_s": self.f_s_requested,
            "freq_hz": self.freq_hz,
            "damping_pct": self.damping_pct,
            "lambda_re": self.lam.real,
            "lambda_im": self.lam.imag,
            "r": self.truncation_r,
            "plants": [{"id": p, "participation": v} for p, v in self.ranking()],
            "channels": [
                {"plant": plant, "kind": kind, "p_re": p.real, "p_im": p.imag}
                for (plant, kind), p in self.raw_participation.items()
            ],
        }


def participation_factors(dec: KoopmanDecomposition, mode_index: int) -> np.ndarray:
    """p_s = Phi_hat[s, i] * Xi_hat[i, s] for every observable s."""
    if not 0 <= mode_index < dec.r:
        raise IndexError(f"mode index {mode_index} outside [0, {dec.r})")
    return dec.Phi_hat[:, mode_index] * dec.Xi_hat[mode_index, :]


def aggregate_by_plant(p, labels, rule: str = "mag_sum") -> dict[str, float]:
    """Per-plant participation.

    ``mag_sum`` adds the magnitudes of the channel factors, ``sum_mag`` takes
    the magnitude of their complex sum.
    """
    if rule not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation rule {rule!r}; expected one of {AGGREGATIONS}")
    p = np.asarray(p, dtype=complex)
    if len(labels) != p.size:
        raise ValueError(f"{p.size} participation factors but {len(labels)} labels")
    sums: dict[str, complex] = {}
    mags: dict[str, float] = {}
    for (plant, _kind), v in zip(labels, p):
        sums[plant] = sums.get(plant, 0j) + v
        mags[plant] = mags.get(plant, 0.0) + abs(v)
    if rule == "mag_sum":
        return mags
    return {k: abs(v) for k, v in sums.items()}


def normalize(P: dict[str, float]) -> dict[str, float]:
    if not P:
        raise DegenerateModeError("no plants to normalise")
    top = max(P.values())
    if not top > 0:
        raise DegenerateModeError("all plant participations are zero")
    return {k: v / top for k, v in P.items()}


def match_mode(dec: KoopmanDecomposition, f_s: float, tolerance: float = MATCH_TOLERANCE) -> int:
    """Index of the oscillatory eigenvalue closest in frequency to ``f_s``."""
    if dec.r == 0:
        raise NoMatchingModeError("empty decomposition")
    best, best_err = None, math.inf
    for i, mu in enumerate(dec.mu):
        try:
            lam, freq, _ = to_continuous(mu, dec.dt)
        except OscrootError:
            continue
        if lam.imag <= 0:
            continue
        err = abs(freq - f_s)
        if err < best_err:
            best, best_err = i, err
    if best is None or best_err > tolerance * f_s:
        found = sorted({round(to_continuous(m, dec.dt)[1], 4) for m in dec.mu if m != 0})
        raise NoMatchingModeError(
            f"no eigenvalue within {tolerance:.0%} of {f_s:.4g} Hz (frequencies found: {found}); "
            "revisit the truncation order or the band-pass"
        )
    return best


def mode_report(
    dec: KoopmanDecomposition,
    f_s: float,
    rule: str = "mag_sum",
    tolerance: float = MATCH_TOLERANCE,
) -> ModeReport:
    i = match_mode(dec, f_s, tolerance)
    lam, freq, zeta = to_continuous(dec.mu[i], dec.dt)
    p = participation_factors(dec, i)
    plants = normalize(aggregate_by_plant(p, dec.channel_labels, rule))
    return ModeReport(
        f_s_requested=f_s,
        lam=lam,
        freq_hz=freq,
        damping_pct=100.0 * zeta,
        plant_participation=plants,
        raw_participation={tuple(lbl): complex(v) for lbl, v in zip(dec.channel_labels, p)},
        truncation_r=dec.r,
        mode_index=i,
        singular_values=[] if dec.singular_values is None else dec.singular_values.tolist(),
    )


def rank_contributors(report: ModeReport, top_k: int | None = None) -> list[tuple[str, float]]:
    """Plants by descending normalised participation, ties by plant id."""
    ranked = sorted(report.plant_participation.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if top_k is None else ranked[:top_k]
