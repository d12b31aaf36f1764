"""Loading and preprocessing of PMU-style data into P/Q observable channels.

Two CSV layouts are understood:

* phasor schema, long format: ``t,plant,V,theta_V,I,theta_I[,quality]``
* direct schema, wide format: ``t,<plant>:P,<plant>:Q,...``

Everything ends up as a :class:`ChannelSet` on a strictly uniform grid.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigError,
    DataQualityError,
    InsufficientDataError,
    RejectedSampleError,
    ResamplingError,
)

logger = logging.getLogger(__name__)

QUALITIES = ("good", "bad", "missing")
KINDS = ("P", "Q")


@dataclass(frozen=True)
class PhasorRecord:
    t: float
    V: float
    theta_V: float
    I: float
    theta_I: float
    quality: str = "good"


@dataclass
class Channel:
    plant: str
    kind: str
    samples: np.ndarray

    @property
    def label(self) -> tuple[str, str]:
        return (self.plant, self.kind)


@dataclass
class ChannelSet:
    """Uniformly sampled multi-channel data grouped by plant.

    ``dt`` is the sampling interval in seconds and ``t0`` the time of the
    first sample. All channels share the same length.
    """

    dt: float
    channels: list[Channel]
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"sampling interval must be positive, got {self.dt}")
        lengths = {len(c.samples) for c in self.channels}
        if len(lengths) > 1:
            raise DataQualityError(f"channels have unequal lengths {sorted(lengths)}")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_samples(self) -> int:
        return len(self.channels[0].samples) if self.channels else 0

    @property
    def labels(self) -> list[tuple[str, str]]:
        return [c.label for c in self.channels]

    @property
    def plants(self) -> list[str]:
        seen: dict[str, None] = {}
        for c in self.channels:
            seen.setdefault(c.plant, None)
        return list(seen)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    def matrix(self) -> np.ndarray:
        """Samples stacked as an (n_channels, n_samples) array."""
        return np.vstack([c.samples for c in self.channels])

    def with_matrix(self, data: np.ndarray, t0: float | None = None) -> ChannelSet:
        data = np.asarray(data, dtype=float)
        channels = [Channel(c.plant, c.kind, row.copy()) for c, row in zip(self.channels, data)]
        return ChannelSet(self.dt, channels, self.t0 if t0 is None else t0)

    def slice_time(self, start_s: float, end_s: float) -> ChannelSet:
        """Samples with ``start_s <= t <= end_s`` (half a sample of slack)."""
        t = self.times
        eps = 0.5 * self.dt
        keep = (t >= start_s - eps) & (t <= end_s + eps)
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            raise InsufficientDataError(f"window {start_s}-{end_s} s contains no samples")
        data = self.matrix()[:, idx[0] : idx[-1] + 1]
        return self.with_matrix(data, t0=float(t[idx[0]]))


@dataclass
class RawChannel:
    """One channel as read from disk; ``NaN`` marks bad or missing samples."""

    plant: str
    kind: str
    t: np.ndarray
    x: np.ndarray


@dataclass
class CleanConfig:
    dt: float | None = None
    outlier_k: float | None = 6.0
    outlier_halfwidth: int = 15
    max_gap: int = 5
    max_removed_frac: float = 0.2
    jitter_tol: float = 0.01


def compute_pq(rec: PhasorRecord, index: int | None = None) -> tuple[float, float]:
    """Active and reactive power from one voltage/current phasor pair."""
    values = (rec.V, rec.theta_V, rec.I, rec.theta_I)
    if not all(math.isfinite(v) for v in values) or rec.V < 0 or rec.I < 0:
        raise RejectedSampleError(index if index is not None else -1)
    s = rec.V * rec.I
    delta = rec.theta_V - rec.theta_I
    return s * math.cos(delta), s * math.sin(delta)


def raw_from_phasors(records: dict[str, Sequence[PhasorRecord]]) -> list[RawChannel]:
    """Turn per-plant phasor records into raw P and Q channels.

    Records whose quality is not ``good`` become NaN and are repaired by
    :func:`clean`.
    """
    out = []
    offset = 0
    for plant, recs in records.items():
        t = np.array([r.t for r in recs], dtype=float)
        p = np.full(len(recs), np.nan)
        q = np.full(len(recs), np.nan)
        for k, rec in enumerate(recs):
            if rec.quality not in QUALITIES:
                raise DataQualityError(f"unknown quality flag {rec.quality!r} at record {offset + k}")
            if rec.quality == "good":
                p[k], q[k] = compute_pq(rec, offset + k)
        offset += len(recs)
        out.append(RawChannel(plant, "P", t, p))
        out.append(RawChannel(plant, "Q", t.copy(), q))
    return out


def _float(cell: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() in ("nan", "na", "null"):
        return math.nan
    return float(cell)


def read_csv(path: str | Path, schema: str = "auto") -> list[RawChannel]:
    """Read a phasor- or direct-schema CSV into raw channels."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataQualityError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataQualityError(f"{path} has no data rows")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if schema == "auto":
        schema = "phasor" if "plant" in header and "V" in header else "direct"
    try:
        if schema == "phasor":
            return _parse_phasor(header, body)
        if schema == "direct":
            return _parse_direct(header, body)
    except ValueError as exc:
        raise DataQualityError(f"{path}: {exc}") from exc
    raise ConfigError(f"unknown schema {schema!r}; expected 'phasor' or 'direct'")


def _parse_direct(header: list[str], body: list[list[str]]) -> list[RawChannel]:
    if header[0] != "t":
        raise DataQualityError("direct schema must start with a 't' column")
    labels = []
    for col in header[1:]:
        plant, sep, kind = col.rpartition(":")
        if not sep or not plant or kind.upper() not in KINDS:
            raise DataQualityError(f"column {col!r} is not of the form <plant>:P or <plant>:Q")
        labels.append((plant, kind.upper()))
    if len(set(labels)) != len(labels):
        raise DataQualityError("duplicate channel columns")
    data = np.array([[_float(c) for c in row] for row in body], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DataQualityError("ragged rows in direct-schema CSV")
    t = data[:, 0]
    if not np.all(np.isfinite(t)):
        raise DataQualityError("non-finite timestamps")
    return [RawChannel(p, k, t.copy(), data[:, j + 1].copy()) for j, (p, k) in enumerate(labels)]


def _parse_phasor(header: list[str], body: list[list[str]]) -> list[RawChannel]:
    required = ["t", "plant", "V", "theta_V", "I", "theta_I"]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataQualityError(f"phasor schema missing columns {missing}")
    col = {name: header.index(name) for name in header}
    records: dict[str, list[PhasorRecord]] = {}
    for row in body:
        quality = row[col["quality"]].strip().lower() if "quality" in col else ""
        rec = PhasorRecord(
            t=_float(row[col["t"]]),
            V=_float(row[col["V"]]),
            theta_V=_float(row[col["theta_V"]]),
            I=_float(row[col["I"]]),
            theta_I=_float(row[col["theta_I"]]),
            quality=quality or "good",
        )
        records.setdefault(row[col["plant"]].strip(), []).append(rec)
    return raw_from_phasors(records)


def write_direct_csv(cs: ChannelSet, path: str | Path, fmt: str = "%.12g") -> None:
    header = ["t"] + [f"{c.plant}:{c.kind}" for c in cs.channels]
    data = np.column_stack([cs.times, cs.matrix().T])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(fmt % v for v in row) + "\n")


def detrend_array(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Subtract the least-squares line over sample index.

    With ``mask`` the line is fitted on the masked samples only and
    subtracted everywhere.
    """
    x = np.asarray(x, dtype=float)
    k = np.arange(x.size, dtype=float)
    if mask is None:
        mask = np.ones(x.size, dtype=bool)
    if mask.sum() < 2:
        return x - np.nanmean(x[mask]) if mask.any() else x.copy()
    # centred abscissa keeps the 2x2 normal equations well conditioned
    kc = k[mask].mean()
    A = np.column_stack([np.ones(mask.sum()), k[mask] - kc])
    coef, *_ = np.linalg.lstsq(A, x[mask], rcond=None)
    return x - (coef[0] + coef[1] * (k - kc))


def detrend(cs: ChannelSet) -> ChannelSet:
    return cs.with_matrix(np.vstack([detrend_array(c.samples) for c in cs.channels]))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """(start, stop) of each run of True values."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def find_outliers(x: np.ndarray, valid: np.ndarray, k: float, halfwidth: int) -> np.ndarray:
    """Flag samples far from the local median of the detrended channel.

    The deviation is compared against ``k`` times the larger of the local
    (rolling) and whole-channel median absolute deviations, so slowly
    decaying ringdowns are not mistaken for outliers.
    """
    y = np.where(valid, detrend_array(np.where(valid, x, 0.0), valid), np.nan)
    scale = np.nanmax(np.abs(x[valid])) if valid.any() else 0.0
    global_med = np.nanmedian(y)
    global_mad = np.nanmedian(np.abs(y - global_med))
    padded = np.pad(y, halfwidth, constant_values=np.nan)
    windows = sliding_window_view(padded, 2 * halfwidth + 1)
    local_med = np.nanmedian(windows, axis=1)
    local_mad = np.nanmedian(np.abs(windows - local_med[:, None]), axis=1)
    spread = np.maximum(np.maximum(local_mad, global_mad), 1e-9 * scale)
    with np.errstate(invalid="ignore"):
        out = np.abs(y - local_med) > k * spread
    return out & valid


def _snap_or_resample(rc: RawChannel, t0: float, dt: float, n: int, cfg: CleanConfig) -> np.ndarray:
    t, x = rc.t, rc.x
    if np.any(np.diff(t) <= 0):
        raise ResamplingError(f"timestamps of {rc.plant}:{rc.kind} are not strictly increasing")
    k = np.rint((t - t0) / dt)
    jitter = np.abs(t - t0 - k * dt)
    out = np.full(n, np.nan)
    if np.all(jitter <= cfg.jitter_tol * dt):
        inside = (k >= 0) & (k < n)
        out[k[inside].astype(int)] = x[inside]
        return out
    # irregular stream: linear resampling, refusing to bridge long holes
    good = np.isfinite(x)
    if good.sum() < 2:
        return out
    if np.max(np.diff(t[good])) > (cfg.max_gap + 1) * dt:
        raise ResamplingError(
            f"{rc.plant}:{rc.kind} has a timestamp gap longer than {cfg.max_gap} samples"
        )
    logger.info("resampling %s:%s onto uniform grid", rc.plant, rc.kind)
    grid = t0 + dt * np.arange(n)
    inside = (grid >= t[good][0] - cfg.jitter_tol * dt) & (grid <= t[good][-1] + cfg.jitter_tol * dt)
    out[inside] = np.interp(grid[inside], t[good], x[good])
    return out


def _nominal_dt(t: np.ndarray) -> float:
    """Median step refined by a least-squares fit of time against grid index."""
    d0 = float(np.median(np.diff(t)))
    if not d0 > 0:
        return d0
    k = np.rint((t - t[0]) / d0)
    if np.unique(k).size < 2:
        return d0
    return float(np.polyfit(k, t, 1)[0])


def clean(raw: Iterable[RawChannel] | ChannelSet, cfg: CleanConfig | None = None) -> ChannelSet:
    """Repair bad samples and outliers and put all channels on one uniform grid.

    Raises:
        DataQualityError: more than ``max_removed_frac`` of a channel removed,
            or a repaired gap longer than ``max_gap`` samples.
        ResamplingError: timestamps that cannot be mapped onto a common grid.
    """
    cfg = cfg or CleanConfig()
    if isinstance(raw, ChannelSet):
        raw = [RawChannel(c.plant, c.kind, raw.times, c.samples) for c in raw.channels]
    raw = list(raw)
    if not raw:
        raise DataQualityError("no channels")
    for rc in raw:
        if len(rc.t) < 2:
            raise InsufficientDataError(f"{rc.plant}:{rc.kind} has fewer than 2 samples")

    dts = [_nominal_dt(rc.t) for rc in raw]
    dt = cfg.dt or float(np.median(dts))
    if not dt > 0:
        raise ResamplingError("non-increasing timestamps")
    if any(abs(d - dt) > cfg.jitter_tol * dt for d in dts):
        raise ResamplingError("channels report at different rates; align them before analysis")
    t0 = max(rc.t[0] for rc in raw)
    t_end = min(rc.t[-1] for rc in raw)
    n = int(math.floor((t_end - t0) / dt + cfg.jitter_tol)) + 1
    if n < 2:
        raise InsufficientDataError("channels do not overlap in time")

    channels = []
    for rc in raw:
        x = _snap_or_resample(rc, t0, dt, n, cfg)
        label = f"{rc.plant}:{rc.kind}"
        valid = np.isfinite(x)
        if cfg.outlier_k is not None and valid.sum() >= 3:
            outliers = find_outliers(x, valid, cfg.outlier_k, cfg.outlier_halfwidth)
            if outliers.any():
                logger.info("%s: %d outlier(s) replaced", label, int(outliers.sum()))
            valid &= ~outliers
        removed = 1.0 - valid.mean()
        if removed > cfg.max_removed_frac:
            raise DataQualityError(
                f"{label}: {removed:.0%} of samples bad, missing or outliers "
                f"(limit {cfg.max_removed_frac:.0%})"
            )
        if valid.sum() < 2:
            raise InsufficientDataError(f"{label} has fewer than 2 valid samples")
        for start, stop in _runs(~valid):
            if stop - start > cfg.max_gap:
                raise DataQualityError(
                    f"{label}: gap of {stop - start} samples at t={t0 + start * dt:.3f} s "
                    f"exceeds {cfg.max_gap}"
                )
        idx = np.arange(n)
        # interior gaps: linear; edge gaps: nearest valid value
        filled = np.interp(idx, idx[valid], x[valid])
        channels.append(Channel(rc.plant, rc.kind, filled))
    return ChannelSet(dt, channels, float(t0))


def lowpass_denoise(cs: ChannelSet, f_cut: float, order: int = 4) -> ChannelSet:
    """Zero-phase Butterworth low-pass applied to every channel."""
    from .bandpass import design_butterworth_lowpass, filtfilt

    sos = design_butterworth_lowpass(f_cut, cs.dt, order)
    return cs.with_matrix(np.vstack([filtfilt(c.samples, sos) for c in cs.channels]))


def check_grouping(cs: ChannelSet, require_pq: bool = False) -> None:
    """Verify every plant has at most one P and one Q channel (both when asked)."""
    kinds: dict[str, list[str]] = {}
    for plant, kind in cs.labels:
        kinds.setdefault(plant, []).append(kind)
    for plant, ks in kinds.items():
        if len(ks) != len(set(ks)):
            raise DataQualityError(f"plant {plant} has duplicate channels {ks}")
        if require_pq and sorted(ks) != ["P", "Q"]:
            raise DataQualityError(f"plant {plant} needs both P and Q channels, has {ks}")


__all__ = [
    "Channel",
    "ChannelSet",
    "CleanConfig",
    "PhasorRecord",
    "RawChannel",
    "check_grouping",
    "clean",
    "compute_pq",
    "detrend",
    "detrend_array",
    "find_outliers",
    "lowpass_denoise",
    "raw_from_phasors",
    "read_csv",
    "write_direct_csv",
]
