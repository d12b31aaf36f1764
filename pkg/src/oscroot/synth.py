"""Synthetic multi-plant events with known modal ground truth.

Each scenario is backed by an explicit real continuous-time state matrix in
channel coordinates. Its oscillatory eigenvectors are the requested mode
shapes; the remaining directions (the orthogonal complement of the mode
shapes) are filled with fast real decays. The generated noise-free signal is
exactly the free response of that system, which makes a dense
eigendecomposition of the stored matrix an independent reference for the
EDMD pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import ConfigError
from .ingest import Channel, ChannelSet
from .modal import aggregate_by_plant, normalize

WAVEFORMS = ("sine", "rectangular")


@dataclass
class SynthMode:
    freq_hz: float
    damping_ratio: float
    shape: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=complex)

    @property
    def lam(self) -> complex:
        zeta = self.damping_ratio
        wn = 2 * math.pi * self.freq_hz / math.sqrt(1 - zeta**2)
        return complex(-zeta * wn, wn * math.sqrt(1 - zeta**2))


@dataclass
class Forcing:
    """Periodic injection added on top of the free response.

    ``target`` is either a channel label ``"<plant>:<kind>"`` or a plant id;
    a plant target drives its P channel with the waveform and its Q channel
    with the same waveform delayed a quarter period at ``q_ratio`` amplitude.
    """

    freq_hz: float
    waveform: str = "sine"
    target: str = ""
    amplitude: float = 1.0
    q_ratio: float = 0.5

    def wave(self, t: np.ndarray) -> np.ndarray:
        phase = np.mod(self.freq_hz * t, 1.0)
        if self.waveform == "sine":
            return np.sin(2 * math.pi * phase)
        return np.where(phase < 0.5, 1.0, -1.0)


@dataclass
class SyntheticScenario:
    modes: list[SynthMode]
    channels: list[tuple[str, str]]
    dt: float = 1.0 / 30.0
    duration: float = 10.0
    noise_std: float = 0.0
    forcing: Forcing | None = None
    seed: int = 0
    filler_decay: float = 40.0
    t0: float = 0.0
    _system: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def for_plants(cls, plants, modes, **kw) -> SyntheticScenario:
        channels = [(str(p), k) for p in plants for k in ("P", "Q")]
        return cls(modes=modes, channels=channels, **kw)

    @property
    def n(self) -> int:
        return len(self.channels)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    def validate(self) -> None:
        if not self.dt > 0 or not self.duration > 0:
            raise ConfigError("dt and duration must be positive")
        nyquist = 0.5 / self.dt
        if not self.modes and self.forcing is None:
            raise ConfigError("scenario needs at least one mode or a forcing")
        if 2 * len(self.modes) > self.n:
            raise ConfigError(f"{len(self.modes)} oscillatory modes need at least {2 * len(self.modes)} channels")
        for m in self.modes:
            if not 0 < m.freq_hz < nyquist:
                raise ConfigError(f"mode frequency {m.freq_hz} Hz outside (0, {nyquist}) Hz")
            if not -1 < m.damping_ratio < 1:
                raise ConfigError(f"damping ratio {m.damping_ratio} outside (-1, 1)")
            if m.shape.shape != (self.n,) or not np.any(m.shape):
                raise ConfigError("mode shapes must be nonzero vectors over the channels")
        if self.forcing is not None:
            f = self.forcing
            if f.waveform not in WAVEFORMS:
                raise ConfigError(f"unknown waveform {f.waveform!r}")
            if not 0 < f.freq_hz < nyquist:
                raise ConfigError(f"forcing frequency {f.freq_hz} Hz outside (0, {nyquist}) Hz")
            self._forcing_rows()

    def _forcing_rows(self) -> list[tuple[int, float, float]]:
        """(channel index, gain, delay in periods) for each forced channel."""
        f = self.forcing
        labels = [f"{p}:{k}" for p, k in self.channels]
        if f.target in labels:
            return [(labels.index(f.target), 1.0, 0.0)]
        rows = []
        for i, (p, k) in enumerate(self.channels):
            if p == f.target:
                rows.append((i, 1.0, 0.0) if k == "P" else (i, f.q_ratio, 0.25))
        if not rows:
            raise ConfigError(f"forcing target {f.target!r} matches no channel or plant")
        return rows

    def eigvectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Right eigenvector matrix and eigenvalues of the stored system."""
        cols, lams = [], []
        for m in self.modes:
            v = m.shape.astype(complex)
            cols += [v, v.conj()]
            lams += [m.lam, m.lam.conjugate()]
        basis = np.column_stack([np.column_stack([c.real, c.imag]) for c in cols[::2]]) if cols else np.zeros((self.n, 0))
        if basis.shape[1] and np.linalg.matrix_rank(basis) < basis.shape[1]:
            raise ConfigError("real and imaginary parts of the mode shapes must be linearly independent")
        fill = null_space(basis.T) if basis.shape[1] else np.eye(self.n)
        for j in range(fill.shape[1]):
            cols.append(fill[:, j].astype(complex))
            lams.append(complex(-self.filler_decay * (1 + 0.05 * j)))
        return np.column_stack(cols), np.array(lams)

    def system_matrix(self) -> np.ndarray:
        if self._system is None:
            W, lams = self.eigvectors()
            self._system = np.real(W @ np.diag(lams) @ np.linalg.inv(W))
        return self._system


def generate(scn: SyntheticScenario) -> ChannelSet:
    scn.validate()
    t = scn.t0 + scn.dt * np.arange(scn.n_samples)
    data = np.zeros((scn.n, t.size))
    for m in scn.modes:
        data += np.real(np.outer(m.shape, np.exp(m.lam * (t - scn.t0))))
    if scn.forcing is not None:
        f = scn.forcing
        for i, gain, delay in scn._forcing_rows():
            data[i] += f.amplitude * gain * f.wave(t - delay / f.freq_hz)
    if scn.noise_std > 0:
        rng = np.random.default_rng(scn.seed)
        data += rng.normal(0.0, scn.noise_std, size=data.shape)
    channels = [Channel(p, k, row.copy()) for (p, k), row in zip(scn.channels, data)]
    return ChannelSet(scn.dt, channels, scn.t0)


@dataclass
class OracleMode:
    lam: complex
    freq_hz: float
    damping_ratio: float
    participation: np.ndarray
    plant_participation: dict[str, float]

    def top(self) -> str:
        return min(self.plant_participation.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def oracle_eig(scn: SyntheticScenario, rule: str = "mag_sum") -> list[OracleMode]:
    """Ground truth for each scenario mode from a dense eigensolve of the system matrix."""
    scn.validate()
    A = scn.system_matrix()
    lams, W = np.linalg.eig(A)
    left = np.linalg.inv(W)
    out = []
    for m in scn.modes:
        i = int(np.argmin(np.abs(lams - m.lam)))
        lam = complex(lams[i])
        p = W[:, i] * left[i, :]
        wn = abs(lam)
        out.append(
            OracleMode(
                lam=lam,
                freq_hz=abs(lam.imag) / (2 * math.pi),
                damping_ratio=-lam.real / wn,
                participation=p,
                plant_participation=normalize(aggregate_by_plant(p, scn.channels, rule)),
            )
        )
    return out


def _shape_from(spec, channels: list[tuple[str, str]]) -> np.ndarray:
    labels = [f"{p}:{k}" for p, k in channels]
    v = np.zeros(len(channels), dtype=complex)
    if isinstance(spec, dict):
        for key, val in spec.items():
            if key not in labels:
                raise ConfigError(f"mode shape refers to unknown channel {key!r}")
            v[labels.index(key)] = complex(*val) if isinstance(val, (list, tuple)) else complex(val)
        return v
    vals = list(spec)
    if len(vals) != len(channels):
        raise ConfigError(f"mode shape has {len(vals)} entries for {len(channels)} channels")
    return np.array([complex(*x) if isinstance(x, (list, tuple)) else complex(x) for x in vals])


def scenario_from_dict(d: dict) -> SyntheticScenario:
    """Build a scenario from a parsed JSON/TOML definition.

    Keys: ``plants`` (P and Q channel per plant) or ``channels``
    (``"<plant>:<kind>"`` strings); ``dt`` or ``fs``; ``duration``;
    ``noise_std``; ``seed``; ``modes`` as a list of tables with ``freq_hz``,
    ``damping_ratio`` and ``shape`` (channel label -> ``[re, im]``); optional
    ``forcing`` table with ``freq_hz``, ``waveform``, ``target``, ``amplitude``.
    """
    d = dict(d.get("scenario", d))
    if "channels" in d:
        channels = []
        for lbl in d["channels"]:
            plant, _, kind = str(lbl).rpartition(":")
            channels.append((plant, kind.upper()))
    elif "plants" in d:
        channels = [(str(p), k) for p in d["plants"] for k in ("P", "Q")]
    else:
        raise ConfigError("scenario needs 'plants' or 'channels'")
    if "dt" in d:
        dt = float(d["dt"])
    elif "fs" in d:
        dt = 1.0 / float(d["fs"])
    else:
        dt = 1.0 / 30.0
    modes = [
        SynthMode(float(m["freq_hz"]), float(m.get("damping_ratio", 0.0)), _shape_from(m["shape"], channels))
        for m in d.get("modes", [])
    ]
    forcing = None
    if d.get("forcing"):
        f = d["forcing"]
        forcing = Forcing(
            freq_hz=float(f["freq_hz"]),
            waveform=str(f.get("waveform", "sine")),
            target=str(f.get("target", "")),
            amplitude=float(f.get("amplitude", 1.0)),
            q_ratio=float(f.get("q_ratio", 0.5)),
        )
    scn = SyntheticScenario(
        modes=modes,
        channels=channels,
        dt=dt,
        duration=float(d.get("duration", 10.0)),
        noise_std=float(d.get("noise_std", 0.0)),
        forcing=forcing,
        seed=int(d.get("seed", 0)),
        filler_decay=float(d.get("filler_decay", 40.0)),
        t0=float(d.get("t0", 0.0)),
    )
    scn.validate()
    return scn
