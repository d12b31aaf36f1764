"""Extended DMD with the raw P/Q channels as the observable dictionary.

The finite-dimensional Koopman matrix is built from the Gram matrices

    G = (1/M) sum_j psi(x_j)^* psi(x_j),    H = (1/M) sum_j psi(x_j)^* psi(y_j)

with ``K = pinv(G) H`` and ``M_K = K^T``. The model is reduced with the SVD of
``G = U S R^*`` to ``M~ = U_r^* H R_r S_r^{-1}``, whose eigenvectors are lifted
back with ``U_r``; left eigenvectors are the Moore-Penrose pseudoinverse of
the lifted right eigenvectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataQualityError,
    DegenerateDataError,
    IllConditionedTruncationError,
    InsufficientDataError,
    UndefinedEigenvalueError,
)
from .ingest import ChannelSet

PINV_RCOND = 1e-12
MIN_SIGMA_RATIO = 1e-12


@dataclass
class SnapshotPair:
    X: np.ndarray
    Y: np.ndarray
    channel_labels: list[tuple[str, str]]
    dt: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass
class KoopmanOperator:
    G: np.ndarray
    H: np.ndarray
    M_K: np.ndarray
    singular_values: np.ndarray
    U: np.ndarray
    R: np.ndarray
    channel_labels: list[tuple[str, str]] = field(default_factory=list)
    dt: float = 1.0

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def rank(self) -> int:
        s = self.singular_values
        if s.size == 0 or s[0] == 0:
            return 0
        return int(np.sum(s > PINV_RCOND * s[0]))

    def truncation(self, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(U_r, Sigma_r, R_r)."""
        return self.U[:, :r], np.diag(self.singular_values[:r]), self.R[:, :r]


@dataclass
class KoopmanDecomposition:
    mu: np.ndarray
    Phi_hat: np.ndarray
    Xi_hat: np.ndarray
    dt: float
    channel_labels: list[tuple[str, str]]
    M_tilde: np.ndarray | None = None
    singular_values: np.ndarray | None = None

    @property
    def r(self) -> int:
        return self.mu.size

    def continuous(self) -> list[tuple[complex, float, float]]:
        return [to_continuous(m, self.dt) for m in self.mu]


def build_snapshots(cs: ChannelSet) -> SnapshotPair:
    """Pair every sample with its successor: X = columns 0..M-1, Y = 1..M."""
    data = cs.matrix()
    n, m_total = data.shape
    if n == 0:
        raise DataQualityError("no channels")
    if m_total < n + 1:
        raise InsufficientDataError(
            f"{n} observables need at least {n + 1} samples, got {m_total}"
        )
    return SnapshotPair(data[:, :-1].copy(), data[:, 1:].copy(), cs.labels, cs.dt)


def estimate_operator(sp: SnapshotPair) -> KoopmanOperator:
    X, Y = sp.X, sp.Y
    if X.shape != Y.shape:
        raise DataQualityError(f"snapshot shapes differ: {X.shape} vs {Y.shape}")
    m = X.shape[1]
    G = X.conj() @ X.T / m
    H = X.conj() @ Y.T / m
    G = 0.5 * (G + G.conj().T)
    U, s, Rh = np.linalg.svd(G)
    R = Rh.conj().T
    if s.size == 0 or not s[0] > 0:
        raise DegenerateDataError("all observables are zero; the Gram matrix has rank 0")
    keep = s > PINV_RCOND * s[0]
    G_pinv = (R[:, keep] / s[keep]) @ U[:, keep].conj().T
    K = G_pinv @ H
    return KoopmanOperator(G, H, K.T, s, U, R, list(sp.channel_labels), sp.dt)


def second_difference(singular_values) -> np.ndarray:
    """s[k+1] - 2 s[k] + s[k-1] at interior indices k = 1..n-2 (0-based)."""
    s = np.asarray(singular_values, dtype=float)
    return s[2:] - 2.0 * s[1:-1] + s[:-2]


def find_elbow(singular_values, tol: float = 1e-10) -> int | None:
    """First elbow of a descending singular value profile.

    Second differences within ``tol * s[0]`` of zero carry no sign and are
    skipped. At the first sign change between the remaining interior points,
    the convex one (positive second difference) marks the bottom of the drop;
    its 0-based index, i.e. the number of singular values in front of it, is
    the elbow. ``None`` when no sign change exists.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.size < 3 or not s[0] > 0:
        return None
    d2 = second_difference(s)
    signed = [(k + 1, int(np.sign(v))) for k, v in enumerate(d2) if abs(v) > tol * s[0]]
    for (ka, a), (kb, b) in zip(signed, signed[1:]):
        if a != b:
            return ka if a > 0 else kb
    return None


def select_truncation(singular_values, n_dominant_modes: int, override: int | None = None) -> int:
    """Truncation order: the elbow, at least two per dominant mode, within [2, n]."""
    n = len(singular_values)
    if override is not None:
        return int(override)
    elbow = find_elbow(singular_values)
    r = 2 * n_dominant_modes if elbow is None else max(elbow, 2 * n_dominant_modes)
    return int(min(max(r, 2), n))


def _pair_order(mu: np.ndarray, tol: float = 1e-8) -> list[int]:
    """Descending |mu|, conjugates adjacent with the positive-imaginary one first."""
    scale = max(1.0, float(np.max(np.abs(mu)))) if mu.size else 1.0
    order = sorted(range(mu.size), key=lambda i: (-abs(mu[i]), -mu[i].imag))
    used: set[int] = set()
    out: list[int] = []
    for i in order:
        if i in used:
            continue
        used.add(i)
        if abs(mu[i].imag) <= tol * scale:
            out.append(i)
            continue
        rest = [j for j in order if j not in used]
        if not rest:
            out.append(i)
            continue
        j = min(rest, key=lambda j: abs(mu[j] - mu[i].conjugate()))
        if abs(mu[j] - mu[i].conjugate()) > 1e-6 * scale:
            out.append(i)
            continue
        used.add(j)
        out.extend([i, j] if mu[i].imag > 0 else [j, i])
    return out


def reduce_and_decompose(op: KoopmanOperator, r: int) -> KoopmanDecomposition:
    n = op.n
    if not 1 <= r <= n:
        raise IllConditionedTruncationError(f"truncation order r={r} outside [1, {n}]")
    s = op.singular_values
    if s[r - 1] < MIN_SIGMA_RATIO * s[0]:
        raise IllConditionedTruncationError(
            f"sigma_{r}/sigma_1 = {s[r - 1] / s[0]:.2e} is below {MIN_SIGMA_RATIO:g}; "
            f"choose a smaller truncation order (numerical rank is {op.rank})"
        )
    U_r, S_r, R_r = op.truncation(r)
    M_tilde = U_r.conj().T @ op.H @ R_r / s[:r]
    mu, Phi_tilde = np.linalg.eig(M_tilde)
    order = _pair_order(mu)
    mu = mu[order]
    Phi_hat = U_r @ Phi_tilde[:, order]
    Xi_hat = np.linalg.pinv(Phi_hat)
    return KoopmanDecomposition(
        mu=mu.astype(complex),
        Phi_hat=Phi_hat.astype(complex),
        Xi_hat=Xi_hat.astype(complex),
        dt=op.dt,
        channel_labels=list(op.channel_labels),
        M_tilde=M_tilde,
        singular_values=s.copy(),
    )


def to_continuous(mu: complex, dt: float) -> tuple[complex, float, float]:
    """Continuous eigenvalue, frequency in Hz and damping ratio of ``mu``."""
    mu = complex(mu)
    if mu == 0:
        raise UndefinedEigenvalueError("eigenvalue 0 has no continuous-time counterpart")
    lam = complex(np.log(mu)) / dt
    sigma, omega = lam.real, lam.imag
    mag = math.hypot(sigma, omega)
    zeta = 0.0 if mag == 0 else -sigma / mag
    return lam, abs(omega) / (2 * math.pi), zeta


def debug_dump(op: KoopmanOperator, dec: KoopmanDecomposition) -> dict:
    def real(a):
        return np.real(a).tolist()

    return {
        "G": real(op.G),
        "H": real(op.H),
        "sigma": real(op.singular_values),
        "M_tilde": real(dec.M_tilde) if dec.M_tilde is not None else None,
        "mu_re": real(dec.mu),
        "mu_im": np.imag(dec.mu).tolist(),
    }
