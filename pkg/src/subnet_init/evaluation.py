"""Simulation-error metrics and model evaluation on raw data."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Normalizer
from .errors import DegenerateChannelError


def nrms(y_hat, y, n: int = 0) -> float:
    """RMS simulation error over samples n.. divided by the population std of y there.

    For vector outputs the squared error is the Euclidean norm per sample and
    the denominator is the RMS deviation of y from its mean.
    """
    y_hat = np.asarray(y_hat, dtype=float).reshape(len(y_hat), -1)[n:]
    y = np.asarray(y, dtype=float).reshape(len(y), -1)[n:]
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    sigma = np.sqrt(np.mean(np.sum((y - y.mean(axis=0)) ** 2, axis=1)))
    if sigma <= 0:
        raise DegenerateChannelError("output has zero standard deviation over the scored range")
    return float(np.sqrt(np.mean(np.sum((y_hat - y) ** 2, axis=1))) / sigma)


def percent_nl(nrms_bla: float) -> float:
    """(1 - NRMS_BLA) * 100."""
    if nrms_bla > 1:
        warnings.warn(f"NRMS_BLA={nrms_bla:.3g} > 1 gives a negative value", RuntimeWarning, stacklevel=2)
    return (1.0 - nrms_bla) * 100.0


def nl_level(nrms_bla: float) -> float:
    """Share of the output the BLA misses, in percent: 100 * NRMS_BLA.

    This is the quantity the nonlinearity targets (1, 5, 10, 20, 40 %) are set on.
    """
    return 100.0 * nrms_bla


@dataclass
class EvalReport:
    nrms: float
    n: int
    errors: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    y_hat: np.ndarray = field(repr=False)
    percent_nl: float | None = None
    nl_level: float | None = None

    def to_dict(self) -> dict:
        d = {"nrms": self.nrms, "n": self.n, "n_scored": int(len(self.errors))}
        if self.percent_nl is not None:
            d["percent_nl"] = self.percent_nl
            d["nl_level"] = self.nl_level
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_errors(self, path):
        """CSV ``t,y,y_hat,err`` (first output channel; t is the sample index)."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y", "y_hat", "err"])
            for i in range(len(self.errors)):
                w.writerow([self.n + i, repr(float(self.y[i, 0])), repr(float(self.y_hat[i, 0])),
                            repr(float(self.errors[i, 0]))])


def simulate_model(model, ds: Dataset, normalizer: Normalizer) -> np.ndarray:
    """Raw-unit predictions for samples n..N-1 (N - n values).

    The encoder sees the first n samples once; the model then runs freely.
    """
    from .subnet import simulate_normalized

    dn = normalizer.apply(ds)
    return normalizer.y_to_raw(simulate_normalized(model, dn.u, dn.y))


def evaluate_model(model, ds: Dataset, normalizer: Normalizer) -> EvalReport:
    y_hat = simulate_model(model, ds, normalizer)
    y = ds.y[model.n:]
    return EvalReport(nrms(y_hat, y), model.n, y_hat - y, y, y_hat)


def bla_predict(ss, ds: Dataset, normalizer: Normalizer, n: int, maps=None) -> np.ndarray:
    """BLA predictions for samples n..N-1 in raw units.

    With ``maps`` the initial state is reconstructed from the first n measured
    samples; otherwise the BLA is simulated from a zero state at sample 0.
    """
    from .linear_id import reconstruct_state, simulate_lss

    dn = normalizer.apply(ds)
    if maps is None:
        y_hat = simulate_lss(ss, dn.u)[n:]
    else:
        x_n = reconstruct_state(maps, ss, dn.y[n - maps.n:n].reshape(-1), dn.u[n - maps.n:n].reshape(-1))
        y_hat = simulate_lss(ss, dn.u[n:], x_n)
    return normalizer.y_to_raw(y_hat)


def evaluate_bla(ss, ds: Dataset, normalizer: Normalizer, n: int, maps=None) -> EvalReport:
    y_hat = bla_predict(ss, ds, normalizer, n, maps)
    y = ds.y[n:]
    value = nrms(y_hat, y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pnl = percent_nl(value)
    return EvalReport(value, n, y_hat - y, y, y_hat, pnl, nl_level(value))
