"""Datasets, normalization, splitting and the Wiener-Hammerstein test system."""

from __future__ import annotations

import csv
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import (CalibrationError, DegenerateChannelError, ParseError, SchemaError,
                     SplitError, StabilityError, DimensionError)

_COLUMN_RE = re.compile(r"^([uy])_(\d+)$")


@dataclass
class Dataset:
    """Aligned input/output record. ``u`` has shape (N, n_u), ``y`` has shape (N, n_y)."""

    u: np.ndarray
    y: np.ndarray
    sample_rate: float | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if u.ndim != 2 or y.ndim != 2:
            raise DimensionError("u and y must be 1-D or 2-D arrays")
        if u.shape[0] != y.shape[0]:
            raise DimensionError(f"length mismatch: len(u)={u.shape[0]}, len(y)={y.shape[0]}")
        if u.shape[0] < 1:
            raise DimensionError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise DimensionError("dataset contains non-finite values")
        self.u = u
        self.y = y

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    def __len__(self):
        return self.N

    def __getitem__(self, idx: slice) -> "Dataset":
        if not isinstance(idx, slice):
            raise TypeError("Dataset only supports slice indexing")
        return Dataset(self.u[idx], self.y[idx], self.sample_rate)


def load_dataset(path, n_u: int | None = None, n_y: int | None = None) -> Dataset:
    """Read a CSV with header ``u_0..u_{n_u-1},y_0..y_{n_y-1}``.

    When ``n_u``/``n_y`` are omitted they are inferred from the header; in both
    cases every index in the implied range must be present.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header required") from None
        rows = list(reader)

    positions = {}
    for col, name in enumerate(header):
        if _COLUMN_RE.match(name):
            positions[name] = col
    if n_u is None:
        n_u = _infer_count(header, "u")
    if n_y is None:
        n_y = _infer_count(header, "y")
    wanted = [f"u_{i}" for i in range(n_u)] + [f"y_{i}" for i in range(n_y)]
    for name in wanted:
        if name not in positions:
            raise SchemaError(f"{path}: missing column {name!r}")
    if n_u < 1 or n_y < 1:
        raise SchemaError(f"{path}: need at least one u_ and one y_ column")

    cols = [positions[name] for name in wanted]
    data = np.empty((len(rows), len(cols)))
    for r, row in enumerate(rows):
        for j, c in enumerate(cols):
            try:
                data[r, j] = float(row[c])
            except (ValueError, IndexError):
                cell = row[c] if c < len(row) else "<missing>"
                raise ParseError(f"{path}: row {r}: cannot parse {wanted[j]}={cell!r}") from None
    if len(rows) == 0:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(data[:, :n_u], data[:, n_u:])


def _infer_count(header, prefix):
    idx = sorted(int(m.group(2)) for h in header if (m := _COLUMN_RE.match(h)) and m.group(1) == prefix)
    if not idx:
        return 1  # forces a "missing u_0 / y_0" schema error
    return max(idx) + 1


def save_dataset(ds: Dataset, path) -> None:
    header = [f"u_{i}" for i in range(ds.n_u)] + [f"y_{i}" for i in range(ds.n_y)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.hstack([ds.u, ds.y]):
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class Normalizer:
    mean_u: np.ndarray
    std_u: np.ndarray
    mean_y: np.ndarray
    std_y: np.ndarray

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset((ds.u - self.mean_u) / self.std_u, (ds.y - self.mean_y) / self.std_y, ds.sample_rate)

    def invert(self, ds: Dataset) -> Dataset:
        return Dataset(ds.u * self.std_u + self.mean_u, ds.y * self.std_y + self.mean_y, ds.sample_rate)

    def y_to_raw(self, y):
        return np.asarray(y) * self.std_y + self.mean_y

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mean_u", "std_u", "mean_y", "std_y")}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("mean_u", "std_u", "mean_y", "std_y")))


def fit_normalizer(ds: Dataset) -> Normalizer:
    """Per-channel mean and population standard deviation."""
    if ds.N < 2:
        raise DegenerateChannelError("need at least 2 samples to fit a normalizer")
    std_u, std_y = ds.u.std(axis=0), ds.y.std(axis=0)
    for name, std in (("u", std_u), ("y", std_y)):
        bad = np.flatnonzero(std <= 1e-12)
        if bad.size:
            raise DegenerateChannelError(f"constant channel {name}_{bad[0]}")
    return Normalizer(ds.u.mean(axis=0), std_u, ds.y.mean(axis=0), std_y)


def apply_normalizer(ds: Dataset, nz: Normalizer) -> Dataset:
    return nz.apply(ds)


def split_dataset(ds: Dataset, fractions=(0.5, 0.25, 0.25)) -> tuple[Dataset, Dataset, Dataset]:
    """Contiguous train/val/test split; the last segment absorbs rounding."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_train = int(round(fr[0] * ds.N))
    n_val = int(round(fr[1] * ds.N))
    n_test = ds.N - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise SplitError(f"split of N={ds.N} by {tuple(fractions)} gives an empty segment "
                         f"({n_train}, {n_val}, {n_test})")
    a, b = n_train, n_train + n_val
    return ds[:a], ds[a:b], ds[b:]


def generate_white_gaussian(N: int, std: float = 1.0, seed: int = 0, n_u: int = 1) -> np.ndarray:
    """i.i.d. zero-mean Gaussian input of shape (N, n_u), PCG64 stream."""
    if N < 1 or std <= 0:
        raise ValueError("need N >= 1 and std > 0")
    return std * np.random.default_rng(seed).standard_normal((N, n_u))


# --- Wiener-Hammerstein simulation system -------------------------------------------------

_NONLINEARITIES = {"sine": np.sin, "identity": lambda x: x}


def lowpass_ss(cutoff_hz: float, sample_rate: float = 1000.0):
    """2nd-order Butterworth low-pass without feed-through, controllable canonical form.

    The analog prototype is discretized with a zero-order hold so that D = 0 exactly.
    """
    b, a = signal.butter(2, 2 * np.pi * cutoff_hz, analog=True)
    num, den, _ = signal.cont2discrete((b, a), 1.0 / sample_rate, method="zoh")
    num = np.atleast_2d(num)[0]
    den = np.asarray(den, dtype=float)
    num = num / den[0]
    den = den / den[0]
    # ZOH gives a strictly proper numerator; its leading coefficient is round-off
    b1, b2 = num[-2], num[-1]
    A = np.array([[-den[1], -den[2]], [1.0, 0.0]])
    B = np.array([[1.0], [0.0]])
    C = np.array([[b1, b2]])
    return A, B, C


@dataclass
class WhSystemConfig:
    A1: np.ndarray
    B1: np.ndarray
    C1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    C2: np.ndarray
    nonlinearity: str = "sine"
    sample_rate: float = 1000.0
    input_std: float = 1.0

    def __post_init__(self):
        for k in ("A1", "B1", "C1", "A2", "B2", "C2"):
            setattr(self, k, np.atleast_2d(np.asarray(getattr(self, k), dtype=float)))
        if self.nonlinearity not in _NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def n_x(self) -> int:
        return self.A1.shape[0] + self.A2.shape[0]

    def check_stable(self):
        for name in ("A1", "A2"):
            rho = max(abs(np.linalg.eigvals(getattr(self, name))))
            if not rho < 1:
                raise StabilityError(f"{name} is not Schur stable (spectral radius {rho:.6g})")

    def full_ss(self):
        """Block-diagonal 4-state matrices of the interconnection."""
        n1, n2 = self.A1.shape[0], self.A2.shape[0]
        A = np.zeros((n1 + n2, n1 + n2))
        A[:n1, :n1] = self.A1
        A[n1:, n1:] = self.A2
        Bu = np.vstack([self.B1, np.zeros((n2, self.B1.shape[1]))])
        Bg = np.vstack([np.zeros((n1, self.B2.shape[1])), self.B2])
        Cz = np.hstack([self.C1, np.zeros((self.C1.shape[0], n2))])
        Cy = np.hstack([np.zeros((self.C2.shape[0], n1)), self.C2])
        return A, Bu, Bg, Cz, Cy

    def with_input_std(self, std: float) -> "WhSystemConfig":
        d = self.to_dict()
        d["input_std"] = float(std)
        return WhSystemConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in ("A1", "B1", "C1", "A2", "B2", "C2")}
        d.update(nonlinearity=self.nonlinearity, sample_rate=self.sample_rate, input_std=self.input_std)
        return d

    @classmethod
    def from_dict(cls, d) -> "WhSystemConfig":
        return cls(**{k: d[k] for k in ("A1", "B1", "C1", "A2", "B2", "C2")},
                   nonlinearity=d.get("nonlinearity", "sine"),
                   sample_rate=float(d.get("sample_rate", 1000.0)),
                   input_std=float(d.get("input_std", 1.0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "WhSystemConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_wh_config(nonlinearity: str = "sine", input_std: float = 1.0) -> WhSystemConfig:
    fs = 1000.0
    A1, B1, C1 = lowpass_ss(200.0, fs)
    A2, B2, C2 = lowpass_ss(350.0, fs)
    return WhSystemConfig(A1, B1, C1, A2, B2, C2, nonlinearity, fs, input_std)


def _state_trajectory(A, B, v):
    """States x_0..x_{N-1} of x_{k+1} = A x_k + B v_k from x_0 = 0, via per-state IIR filters."""
    n, m = B.shape
    N = v.shape[0]
    X = np.zeros((N, n))
    for j in range(m):
        # strictly proper per-state transfer functions: x_k depends on v_0..v_{k-1}
        num, den = signal.ss2tf(A, B, np.eye(n), np.zeros((n, m)), input=j)
        for i in range(n):
            X[:, i] += signal.lfilter(num[i], den, v[:, j])
    return X


def simulate_wh(cfg: WhSystemConfig, u, noise_std: float = 0.0, seed: int | None = None,
                return_states: bool = False):
    """Simulate the Wiener-Hammerstein system from zero initial state.

    With ``return_states`` the (N, 4) state trajectory is returned as a second value.
    """
    cfg.check_stable()
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if not np.all(np.isfinite(u)):
        raise ValueError("input contains non-finite values")
    g = _NONLINEARITIES[cfg.nonlinearity]
    X1 = _state_trajectory(cfg.A1, cfg.B1, u)
    w = g(X1 @ cfg.C1.T)
    X2 = _state_trajectory(cfg.A2, cfg.B2, w)
    y = X2 @ cfg.C2.T
    if noise_std > 0:
        y = y + noise_std * np.random.default_rng(seed).standard_normal(y.shape)
    ds = Dataset(u, y, cfg.sample_rate)
    if return_states:
        return ds, np.hstack([X1, X2])
    return ds


# --- nonlinearity-level calibration ---------------------------------------------------------

def measure_nl_level(cfg: WhSystemConfig, u, bla_order: int = 4, horizon: int | None = None) -> float:
    """Percent of output behaviour the estimated BLA misses, 100 * NRMS_BLA.

    The BLA is fitted on the normalized record and simulated from the true
    (zero) initial state; the first ``bla_order`` samples are not scored.
    """
    from .evaluation import nrms
    from .linear_id import n4sid_estimate, simulate_lss

    ds = simulate_wh(cfg, u)
    nz = fit_normalizer(ds)
    dn = nz.apply(ds)
    with warnings.catch_warnings():
        # strongly distorted records can give an unstable BLA; that just reads as a high level
        warnings.simplefilter("ignore", RuntimeWarning)
        ss = n4sid_estimate(dn, bla_order, horizon)
        y_hat = simulate_lss(ss, dn.u, np.zeros(ss.n_x))
    if not np.all(np.isfinite(y_hat)):
        return float("inf")
    return 100.0 * nrms(y_hat, dn.y, n=bla_order)


def calibrate_input_std(target_nl: float, cfg: WhSystemConfig, bla_order: int = 4, seed: int = 0,
                        n_samples: int = 20000, bracket=(1e-3, 5.0), tol: float = 0.1,
                        max_steps: int = 40, horizon: int | None = None) -> float:
    """Bisection (in log std) for the input std that gives ``target_nl`` percent nonlinearity.

    The calibration record is ``std * generate_white_gaussian(n_samples, 1, seed)``,
    i.e. exactly the first ``n_samples`` of a dataset generated with the same seed.
    """
    if not 0.5 <= target_nl <= 60:
        raise CalibrationError(f"target %nl {target_nl} outside [0.5, 60]")
    z = generate_white_gaussian(n_samples, 1.0, seed, n_u=cfg.B1.shape[1])

    def level(std):
        return measure_nl_level(cfg, std * z, bla_order, horizon)

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    f_lo, f_hi = level(np.exp(lo)), level(np.exp(hi))
    if not f_lo <= target_nl <= f_hi:
        achieved = f_lo if target_nl < f_lo else f_hi
        raise CalibrationError(f"target {target_nl} %nl outside bracket range [{f_lo:.3g}, {f_hi:.3g}]",
                               achieved=achieved)
    best_std, best_nl = None, None
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        f_mid = level(np.exp(mid))
        if best_nl is None or abs(f_mid - target_nl) < abs(best_nl - target_nl):
            best_std, best_nl = float(np.exp(mid)), f_mid
        if abs(f_mid - target_nl) <= tol:
            break
        if f_mid < target_nl:
            lo = mid
        else:
            hi = mid
    if abs(best_nl - target_nl) > 1.0:
        raise CalibrationError(f"calibration for {target_nl} %nl stalled at {best_nl:.3f} %nl",
                               achieved=best_nl)
    return best_std
