"""Subspace-encoder state-space model, truncated-simulation loss and training.

Model (no feed-through)::

    x_{t+1} = A x_t + B u_t + f([x_t; u_t])
    y_t     = C x_t + h(x_t)
    x_{t|t} = W_u u_{t-n_b:t-1} + W_y y_{t-n_a:t-1} + psi([y_{t-n_a:t-1}; u_{t-n_b:t-1}])

Windows are stacked chronologically, oldest sample first. Data indices are
0-based: a section starting at ``s`` is encoded from samples ``s-n .. s-1``
and simulated over ``s .. s+T-1``, so the valid starts are ``n .. N-T``
(``N - T - n + 1`` sections).
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .data import Dataset, Normalizer
from .errors import (ConfigurationError, DimensionError, LagMismatchError, RolloutDivergence,
                     TrainingDivergence)
from .linear_id import LinearSS, ReconMaps

log = logging.getLogger(__name__)

SCHEMES = ("RanDY+RanENC", "LinDY+RanENC", "LinDY+LinENC")
DIVERGENCE_LIMIT = 1e12


@dataclass
class SubnetModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W_u: np.ndarray
    W_y: np.ndarray
    f_net: nnet.MLP
    h_net: nnet.MLP
    psi_net: nnet.MLP
    n_a: int
    n_b: int

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return max(self.n_a, self.n_b)

    def copy(self) -> "SubnetModel":
        return copy.deepcopy(self)

    def check(self):
        n_x, n_u, n_y = self.n_x, self.n_u, self.n_y
        shapes = {"A": (n_x, n_x), "B": (n_x, n_u), "C": (n_y, n_x),
                  "W_u": (n_x, self.n_b * n_u), "W_y": (n_x, self.n_a * n_y)}
        for k, s in shapes.items():
            if getattr(self, k).shape != s:
                raise DimensionError(f"{k} has shape {getattr(self, k).shape}, expected {s}")
        for name, net, i, o in (("f_net", self.f_net, n_x + n_u, n_x), ("h_net", self.h_net, n_x, n_y),
                                ("psi_net", self.psi_net, self.n_a * n_y + self.n_b * n_u, n_x)):
            if net.in_dim != i or net.out_dim != o:
                raise DimensionError(f"{name} maps {net.in_dim}->{net.out_dim}, expected {i}->{o}")

    # flattening order: A, B, C, W_u, W_y, f (hidden, last), h (...), psi (...), each row-major
    def arrays(self) -> list[np.ndarray]:
        return [self.A, self.B, self.C, self.W_u, self.W_y,
                *self.f_net.arrays(), *self.h_net.arrays(), *self.psi_net.arrays()]

    def to_dict(self) -> dict:
        return {"n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y, "n_a": self.n_a, "n_b": self.n_b,
                "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
                "W_u": self.W_u.tolist(), "W_y": self.W_y.tolist(),
                "f_net": self.f_net.to_dict(), "h_net": self.h_net.to_dict(), "psi_net": self.psi_net.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "SubnetModel":
        arr = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        m = cls(arr("A"), arr("B"), arr("C"), arr("W_u"), arr("W_y"),
                nnet.MLP.from_dict(d["f_net"]), nnet.MLP.from_dict(d["h_net"]), nnet.MLP.from_dict(d["psi_net"]),
                int(d["n_a"]), int(d["n_b"]))
        m.check()
        return m


def flatten(model: SubnetModel) -> np.ndarray:
    return np.concatenate([a.ravel() for a in model.arrays()])


def unflatten(template: SubnetModel, vec) -> SubnetModel:
    """Rebuild a model from a flat vector; float32 vectors give a float32 model."""
    vec = np.asarray(vec)
    if vec.dtype not in (np.float32, np.float64):
        vec = vec.astype(float)
    arrays = template.arrays()
    total = sum(a.size for a in arrays)
    if vec.size != total:
        raise DimensionError(f"expected {total} parameters, got {vec.size}")
    parts, i = [], 0
    for a in arrays:
        parts.append(vec[i:i + a.size].reshape(a.shape).copy())
        i += a.size
    it = iter(parts[5:])

    def take(net):
        hidden = [(next(it), next(it)) for _ in net.hidden]
        return nnet.MLP(hidden, next(it), next(it))

    f, h, psi = take(template.f_net), take(template.h_net), take(template.psi_net)
    return SubnetModel(*parts[:5], f, h, psi, template.n_a, template.n_b)


def subnet_new(n_x: int, n_u: int, n_y: int, n_a: int = 4, n_b: int = 4, hidden=(64, 64),
               seed: int = 0) -> SubnetModel:
    """Fully random model: every weight U(-1,1)/sqrt(n_in), every bias zero."""
    if min(n_x, n_u, n_y, n_a, n_b) < 1:
        raise ValueError("all dimensions and lags must be >= 1")
    rng = np.random.default_rng(seed)
    u = nnet.uniform_scaled
    A = u(rng, (n_x, n_x), n_x)
    B = u(rng, (n_x, n_u), n_u)
    C = u(rng, (n_y, n_x), n_x)
    W_u = u(rng, (n_x, n_b * n_u), n_b * n_u)
    W_y = u(rng, (n_x, n_a * n_y), n_a * n_y)
    f = nnet.mlp_init(n_x + n_u, hidden, n_x, rng)
    h = nnet.mlp_init(n_x, hidden, n_y, rng)
    psi = nnet.mlp_init(n_a * n_y + n_b * n_u, hidden, n_x, rng)
    return SubnetModel(A, B, C, W_u, W_y, f, h, psi, n_a, n_b)


def apply_init_scheme(model: SubnetModel, scheme: str, bla: LinearSS | None = None,
                      maps: ReconMaps | None = None) -> SubnetModel:
    """Return a copy of ``model`` initialized according to ``scheme``."""
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    out = model.copy()
    if scheme == "RanDY+RanENC":
        return out
    if bla is None:
        raise ConfigurationError(f"scheme {scheme} needs a BLA model")
    if bla.n_x != model.n_x or bla.n_u != model.n_u or bla.n_y != model.n_y:
        raise ConfigurationError(f"BLA dimensions (n_x={bla.n_x}, n_u={bla.n_u}, n_y={bla.n_y}) do not "
                                 f"match the model ({model.n_x}, {model.n_u}, {model.n_y})")
    out.A, out.B, out.C = bla.A.copy(), bla.B.copy(), bla.C.copy()
    for net in (out.f_net, out.h_net):
        net.last_weight[:] = 0.0
        net.last_bias[:] = 0.0
    if scheme == "LinDY+LinENC":
        if maps is None:
            raise ConfigurationError("LinDY+LinENC needs reconstructability maps")
        if not (model.n_a == model.n_b == maps.n):
            raise LagMismatchError(f"LinENC needs n_a == n_b == n (got n_a={model.n_a}, n_b={model.n_b}, "
                                   f"n={maps.n})")
        out.W_u, out.W_y = maps.encoder_weights()
        out.psi_net.last_weight[:] = 0.0
        out.psi_net.last_bias[:] = 0.0
    return out


# --- forward pieces ----------------------------------------------------------------------

def _as_window(v, length, width, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 2 and v.shape == (length, width):
        v = v.reshape(-1)
    if v.shape[-1] != length * width:
        raise DimensionError(f"{name} window has length {v.shape[-1]}, expected {length * width}")
    return v


def encode(model: SubnetModel, u_past, y_past) -> np.ndarray:
    """Initial state from the last n_b inputs and n_a outputs (flat or (lag, dim))."""
    u_past = _as_window(u_past, model.n_b, model.n_u, "u_past")
    y_past = _as_window(y_past, model.n_a, model.n_y, "y_past")
    z = np.concatenate([y_past, u_past], axis=-1)
    return u_past @ model.W_u.T + y_past @ model.W_y.T + nnet.mlp_forward(model.psi_net, z)


def rollout(model: SubnetModel, x0, u_seg) -> np.ndarray:
    """Simulate T steps from ``x0``; returns (T, n_y) outputs.

    ``x0`` may also be a batch (S, n_x) with ``u_seg`` of shape (S, T, n_u).
    """
    x = np.array(x0, dtype=float)
    u_seg = np.asarray(u_seg, dtype=float)
    batched = x.ndim == 2
    if not batched:
        x = x[None]
        u_seg = u_seg.reshape(u_seg.shape[0], -1)[None]
    if u_seg.shape[-1] != model.n_u:
        raise DimensionError(f"input width {u_seg.shape[-1]} != {model.n_u}")
    S, T = u_seg.shape[:2]
    out = np.empty((S, T, model.n_y))
    A_T, B_T, C_T = model.A.T, model.B.T, model.C.T
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_LIMIT:
                raise RolloutDivergence(f"state diverged at step {k}", step=k)
            out[:, k] = x @ C_T + nnet.mlp_forward(model.h_net, x)
            if k + 1 < T:
                x = x @ A_T + u_seg[:, k] @ B_T + nnet.mlp_forward(model.f_net, np.concatenate([x, u_seg[:, k]], 1))
    if not np.all(np.isfinite(out)):
        raise RolloutDivergence("output diverged", step=T - 1)
    return out if batched else out[0]


def valid_starts(N: int, n: int, T: int) -> np.ndarray:
    """All admissible 0-based section starts: n <= s <= N - T."""
    return np.arange(n, N - T + 1)


def _windows(model: SubnetModel, u, y, starts, T):
    starts = np.asarray(starts, dtype=int)
    N = u.shape[0]
    n = model.n
    if starts.size == 0:
        raise IndexError("empty batch of section starts")
    bad = (starts < n) | (starts + T > N)
    if np.any(bad):
        raise IndexError(f"section start {int(starts[bad][0])} invalid: need {n} <= s <= {N - T}")
    up = u[starts[:, None] + np.arange(-model.n_b, 0)].reshape(starts.size, -1)
    yp = y[starts[:, None] + np.arange(-model.n_a, 0)].reshape(starts.size, -1)
    idx = starts[:, None] + np.arange(T)
    return up, yp, u[idx], y[idx]


def batch_loss(model: SubnetModel, ds: Dataset, starts, T: int, grad: bool = False):
    """Mean squared T-step simulation error over the sections in ``starts``.

    Returns the loss, or ``(loss, gradient)`` with the gradient laid out like
    :func:`flatten`. With every valid start this is
    ``1/M * sum_s sum_k ||y_hat_{s+k|s} - y_{s+k}||^2`` with ``M = (N-T-n+1) T``.
    """
    return _loss(model, ds.u, ds.y, starts, T, grad)


def _loss(model, u, y, starts, T, grad):
    up, yp, useg, yseg = _windows(model, u, y, starts, T)
    S = up.shape[0]
    A, B, C = model.A, model.B, model.C

    z = np.concatenate([yp, up], axis=1)
    psi_out, psi_cache = nnet.mlp_forward_cached(model.psi_net, z)
    x = up @ model.W_u.T + yp @ model.W_y.T + psi_out

    xs, h_caches, f_caches, errs = [], [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            h_out, h_cache = nnet.mlp_forward_cached(model.h_net, x)
            errs.append(x @ C.T + h_out - yseg[:, k])
            xs.append(x)
            h_caches.append(h_cache)
            if k + 1 < T:
                fin = np.concatenate([x, useg[:, k]], axis=1)
                f_out, f_cache = nnet.mlp_forward_cached(model.f_net, fin)
                f_caches.append(f_cache)
                x = x @ A.T + useg[:, k] @ B.T + f_out
    E = np.stack(errs, axis=1)
    loss = float(np.sum(E * E) / (S * T))
    if not grad:
        return loss
    if not np.isfinite(loss):
        return loss, np.full(flatten(model).size, np.nan)

    gA, gB, gC = np.zeros_like(A), np.zeros_like(B), np.zeros_like(C)
    gf, gh, gpsi = model.f_net.zeros_like(), model.h_net.zeros_like(), model.psi_net.zeros_like()
    scale = 2.0 / (S * T)
    n_x = model.n_x
    dx_next = None  # d loss / d x_{k+1}
    for k in range(T - 1, -1, -1):
        dy = scale * errs[k]
        x_k = xs[k]
        gC += dy.T @ x_k
        dx = dy @ C + nnet.mlp_backward(model.h_net, h_caches[k], dy, gh)
        if dx_next is not None:
            gA += dx_next.T @ x_k
            gB += dx_next.T @ useg[:, k]
            dfin = nnet.mlp_backward(model.f_net, f_caches[k], dx_next, gf)
            dx += dx_next @ A + dfin[:, :n_x]
        dx_next = dx
    dx0 = dx_next
    gWu = dx0.T @ up
    gWy = dx0.T @ yp
    nnet.mlp_backward(model.psi_net, psi_cache, dx0, gpsi)
    g = np.concatenate([a.ravel() for a in (gA, gB, gC, gWu, gWy, *gf.arrays(), *gh.arrays(), *gpsi.arrays())])
    return loss, g


# --- free-run simulation used for validation -----------------------------------------------

def simulate_normalized(model: SubnetModel, u, y) -> np.ndarray:
    """Encode from the first n samples, then free-run; returns predictions for samples n..N-1."""
    n = model.n
    N = u.shape[0]
    if N <= n:
        raise ValueError(f"need more than n={n} samples, got {N}")
    x0 = encode(model, u[n - model.n_b:n].reshape(-1), y[n - model.n_a:n].reshape(-1))
    return rollout(model, x0, u[n:])


def _free_run_nrms(model, ds: Dataset) -> float:
    try:
        y_hat = simulate_normalized(model, ds.u, ds.y)
    except RolloutDivergence:
        return float("inf")
    y = ds.y[model.n:]
    err = np.sqrt(np.mean(np.sum((y_hat - y) ** 2, axis=1)))
    return float(err / np.sqrt(np.mean(np.sum((y - y.mean(axis=0)) ** 2, axis=1))))


# --- training --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    T: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    epochs: int = 100
    seed: int = 0
    scheme: str = "LinDY+LinENC"
    dtype: str = "float32"  # compute precision of the loss/gradient; parameters stay float64

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.T < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("T, batch_size and epochs must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_nrms: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_nrms", "is_best"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_nrms),
                            int(r.epoch == self.best_epoch)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        h = cls()
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                h.records.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]),
                                             float(row["val_loss"]), float(row["val_nrms"])))
                if row["is_best"] == "1":
                    h.best_epoch = int(row["epoch"])
        return h


def train(model: SubnetModel, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, progress=None):
    """Mini-batch Adam on the truncated simulation loss with best-validation selection.

    Epochs are numbered from 0; the validation metric is the free-run
    simulation NRMS of the normalized validation record and ``val_loss`` is its
    square. Returns ``(best_model, history)``.
    """
    model.check()
    starts = valid_starts(train_ds.N, model.n, cfg.T)
    if starts.size < 1:
        raise ConfigurationError(f"training record of {train_ds.N} samples too short for T={cfg.T}, "
                                 f"n={model.n}")
    if val_ds.N <= model.n + 1:
        raise ConfigurationError("validation record too short")
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    u_tr, y_tr = train_ds.u.astype(dtype), train_ds.y.astype(dtype)
    params = flatten(model)
    opt = nnet.AdamState.zeros(params.size, lr=cfg.lr)
    history = TrainHistory()
    best_params, best_val = params.copy(), None

    for epoch in range(cfg.epochs):
        order = rng.permutation(starts)
        total, count = 0.0, 0
        for b, i in enumerate(range(0, order.size, cfg.batch_size)):
            batch = order[i:i + cfg.batch_size]
            current = unflatten(model, params.astype(dtype))
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
                loss, g = _loss(current, u_tr, y_tr, batch, cfg.T, True)
            g = g.astype(float)
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT or not np.all(np.isfinite(g)):
                raise TrainingDivergence(f"loss diverged ({loss}) at epoch {epoch}, batch {b}",
                                         epoch=epoch, batch=b)
            params, opt = nnet.adam_step(params, g, opt)
            total += loss * batch.size
            count += batch.size
        current = unflatten(model, params)
        val_nrms = _free_run_nrms(current, val_ds)
        rec = EpochRecord(epoch, total / count, val_nrms ** 2, val_nrms)
        history.records.append(rec)
        if best_val is None or rec.val_loss < best_val:
            best_val = rec.val_loss
            best_params = params.copy()
            history.best_epoch = epoch
        if progress is not None:
            progress(rec)
        log.debug("epoch %d train %.4g val_nrms %.4g", epoch, rec.train_loss, val_nrms)
    return unflatten(model, best_params), history


# --- persistence ---------------------------------------------------------------------------

def save_model(model: SubnetModel, path, normalizer: Normalizer | None = None, extra: dict | None = None):
    doc = {"model": model.to_dict(), "normalizer": normalizer.to_dict() if normalizer else None}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_model(path):
    """Returns ``(model, normalizer_or_None)``."""
    doc = json.loads(Path(path).read_text())
    nz = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
    return SubnetModel.from_dict(doc["model"]), nz
