"""Linear state-space identification (N4SID) and the time-inverted reconstructability map."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DimensionError, IdentifiabilityError, InvertibilityError, ObservabilityError, OrderError


@dataclass
class LinearSS:
    """x_{t+1} = A x_t + B u_t,  y_t = C x_t  (no feed-through)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionError(f"inconsistent shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")
        if not all(np.all(np.isfinite(M)) for M in (self.A, self.B, self.C)):
            raise DimensionError("non-finite state-space matrix")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def markov(self, count: int) -> np.ndarray:
        """C A^k B for k = 0..count-1, shape (count, n_y, n_u)."""
        out = np.empty((count, self.n_y, self.n_u))
        AkB = self.B.copy()
        for k in range(count):
            out[k] = self.C @ AkB
            AkB = self.A @ AkB
        return out

    def to_dict(self) -> dict:
        return {"n_x": self.n_x, "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LinearSS":
        ss = cls(d["A"], d["B"], d["C"])
        if "n_x" in d and int(d["n_x"]) != ss.n_x:
            raise DimensionError(f"n_x={d['n_x']} does not match A of size {ss.n_x}")
        return ss

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "LinearSS":
        return cls.from_dict(json.loads(Path(path).read_text()))


def simulate_lss(ss: LinearSS, u, x0=None) -> np.ndarray:
    """Exact recursion; returns y of shape (N, n_y)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != ss.n_u:
        raise DimensionError(f"u has {u.shape[1]} channels, model expects {ss.n_u}")
    x = np.zeros(ss.n_x) if x0 is None else np.array(x0, dtype=float).reshape(ss.n_x)
    A, C = ss.A, ss.C
    Bu = u @ ss.B.T
    X = np.empty((u.shape[0], ss.n_x))
    for k in range(u.shape[0]):
        X[k] = x
        x = A @ x + Bu[k]
    return X @ C.T


def _block_hankel(w, rows, cols):
    m = w.shape[1]
    H = np.empty((rows * m, cols))
    for r in range(rows):
        H[r * m:(r + 1) * m] = w[r:r + cols].T
    return H


def n4sid_estimate(ds: Dataset, n_x: int, horizon: int | None = None) -> LinearSS:
    """Deterministic-stochastic N4SID with D fixed to zero.

    A and C come from the shift structure of the extended observability matrix
    obtained by SVD of the oblique projection ``Y_f /_{U_f} W_p``. B (and a
    discarded initial state) are then fitted by least squares on the output
    equation, which keeps D exactly zero.
    """
    horizon = 4 * n_x if horizon is None else int(horizon)
    u, y = ds.u, ds.y
    N, m = u.shape
    l = y.shape[1]
    if horizon <= n_x:
        raise IdentifiabilityError(f"horizon {horizon} must exceed n_x={n_x}")
    if N < 10 * horizon * max(m, l):
        raise IdentifiabilityError(f"N={N} too short for horizon {horizon} (need {10 * horizon * max(m, l)})")

    i = horizon
    j = N - 2 * i + 1
    U = _block_hankel(u, 2 * i, j)
    Y = _block_hankel(y, 2 * i, j)
    H = np.vstack([U[m * i:], U[:m * i], Y[:l * i], Y[l * i:]]) / np.sqrt(j)
    L = np.linalg.qr(H.T, mode="r").T  # H = L Q^T, L lower triangular

    mi, li = m * i, l * i
    s_u = np.linalg.svd(L[:2 * mi, :2 * mi], compute_uv=False)
    if s_u[-1] <= 1e-10 * s_u[0]:
        raise IdentifiabilityError("input is not persistently exciting for this horizon")

    wp = slice(mi, 2 * mi + li)  # rows of [U_p; Y_p]
    yf = slice(2 * mi + li, 2 * mi + 2 * li)
    Lw_perp = L[wp, mi:2 * mi + li]
    Ly_perp = L[yf, mi:2 * mi + li]
    O = Ly_perp @ np.linalg.pinv(Lw_perp, rcond=1e-12) @ L[wp, :2 * mi + li]

    Uo, s, _ = np.linalg.svd(O, full_matrices=False)
    if s[0] <= 0 or not np.isfinite(s[0]):
        raise IdentifiabilityError("oblique projection vanished; no dynamics in data")
    if n_x > len(s) or s[n_x - 1] <= 1e-10 * s[0]:
        rank = int(np.sum(s > 1e-10 * s[0]))
        raise OrderError(f"requested order {n_x} exceeds numerical rank {rank} of the projection")

    gamma = Uo[:, :n_x] * np.sqrt(s[:n_x])
    C = gamma[:l]
    A = np.linalg.lstsq(gamma[:-l], gamma[l:], rcond=None)[0]
    if max(abs(np.linalg.eigvals(A))) >= 1:
        warnings.warn("estimated A is not Schur stable", RuntimeWarning, stacklevel=2)
    B = _fit_b(A, C, u, y)
    return LinearSS(A, B, C)


def _fit_b(A, C, u, y):
    """Least-squares B (with a nuisance initial state) for y_k = C x_k."""
    n, m, l = A.shape[0], u.shape[1], C.shape[0]
    N = u.shape[0]
    # columns: x0 basis (n), then B entries in row-major order (n*m)
    S = np.zeros((n, n + n * m))
    S[:, :n] = np.eye(n)
    phi = np.empty((N, l, n + n * m))
    drive = np.zeros((N, n, n * m))
    for p in range(n):
        drive[:, p, p * m:(p + 1) * m] = u
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            phi[k] = C @ S
            S = A @ S
            S[:, n:] += drive[k]
    phi = phi.reshape(N * l, -1)
    if not np.all(np.isfinite(phi)):
        raise IdentifiabilityError("output-equation regressors diverged (unstable A estimate)")
    theta = np.linalg.lstsq(phi, y.reshape(-1), rcond=None)[0]
    return theta[n:].reshape(n, m)


@dataclass(frozen=True)
class ReconMaps:
    """Time-inverted output and input maps over a past window of length ``n``.

    ``cab_map`` follows the anti-triangular block layout where column block c
    multiplies u_{t-1-c} (most recent input first). ``input_map`` is the same
    matrix with column blocks in chronological order u_{t-n}, ..., u_{t-1},
    which is the stacking used by the encoder.
    """

    ca_map: np.ndarray
    cab_map: np.ndarray
    ca_pinv: np.ndarray
    n: int
    n_u: int

    @property
    def input_map(self) -> np.ndarray:
        blocks = np.split(self.cab_map, self.n, axis=1)
        return np.hstack(blocks[::-1])

    def encoder_weights(self):
        """(W_u, W_y) of the linear reconstructability map for chronological windows."""
        return self.ca_pinv @ self.input_map, self.ca_pinv.copy()


def build_recon_maps(ss: LinearSS, n: int) -> ReconMaps:
    if n < 1:
        raise ValueError("past window length must be >= 1")
    A, B, C = ss.A, ss.B, ss.C
    n_x, n_u, n_y = ss.n_x, ss.n_u, ss.n_y
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] >= 1e12:
        raise InvertibilityError("state matrix is singular or too ill-conditioned to invert")

    # CA^{-k}, k = 1..n, by repeated solves
    CAinv = [None] * (n + 1)
    M = C
    for k in range(1, n + 1):
        M = np.linalg.solve(A.T, M.T).T
        CAinv[k] = M
    ca_map = np.vstack([CAinv[n - r] for r in range(n)])

    cab_map = np.zeros((n * n_y, n * n_u))
    for r in range(n):
        for c in range(n - r):
            cab_map[r * n_y:(r + 1) * n_y, c * n_u:(c + 1) * n_u] = CAinv[n - r - c] @ B

    s = np.linalg.svd(ca_map, compute_uv=False)
    rank = int(np.sum(s > 1e-10 * s[0])) if s[0] > 0 else 0
    if rank < n_x:
        raise ObservabilityError(f"time-inverted observability map has rank {rank} < n_x={n_x} "
                                 f"(window n={n})")
    ca_pinv = np.linalg.pinv(ca_map, rcond=1e-10)
    return ReconMaps(ca_map, cab_map, ca_pinv, n, n_u)


def reconstruct_state(maps: ReconMaps, ss: LinearSS, y_past, u_past) -> np.ndarray:
    """State at time t from the windows y_{t-n:t-1}, u_{t-n:t-1} (chronological).

    Windows may be given flat or as (n, n_y)/(n, n_u) arrays; a leading batch
    axis is supported for flat windows.
    """
    y_past = np.asarray(y_past, dtype=float)
    u_past = np.asarray(u_past, dtype=float)
    ny, nu = maps.n * ss.n_y, maps.n * ss.n_u
    if y_past.ndim == 2 and y_past.shape == (maps.n, ss.n_y):
        y_past = y_past.reshape(-1)
    if u_past.ndim == 2 and u_past.shape == (maps.n, ss.n_u):
        u_past = u_past.reshape(-1)
    if y_past.shape[-1] != ny or u_past.shape[-1] != nu:
        raise DimensionError(f"expected windows of length {ny} (y) and {nu} (u), "
                             f"got {y_past.shape[-1]} and {u_past.shape[-1]}")
    return (y_past + u_past @ maps.input_map.T) @ maps.ca_pinv.T
