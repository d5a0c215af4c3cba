"""Echo State Network for free-running trajectory forecasting.

The reservoir follows ``x(k) = tanh(W_in u(k) + W_res x(k-1))`` with no
leak term, and the output is the linear readout ``y(k) = W_out x(k)``.
Only ``W_out`` is trained, by ridge regression over collected states.

Positions enter the network as (lat, lon) pairs mapped affinely onto
[-1, 1] over the training window (:class:`Normalizer`); forecasts are
mapped back before any geodesic use.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import (
    DegenerateReservoir,
    DimensionMismatch,
    EmptySeries,
    InsufficientData,
    NotTrained,
    SingularSystem,
)
from .geo import LocalFrame

log = logging.getLogger(__name__)

RESERVOIR_SIZES = (500, 1000, 2000, 3000, 5000)
_SEED_ATTEMPTS = 8
_DENSE_EIG_MAX = 1000
_ARPACK_K = 32
# largest representable value below one; keeps tanh output strictly inside (-1, 1)
_TANH_MAX = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class EsnParams:
    """Hyperparameters of one reservoir.

    Attributes:
        input_dim: length of each input (and output) vector.
        reservoir_size: number of reservoir neurons.
        spectral_radius: target spectral radius of ``W_res``; must be < 1.
        connectivity: probability that a reservoir weight is non-zero.
        input_scale: ``W_in`` entries are uniform in [-input_scale, input_scale].
        ridge_lambda: Tikhonov penalty for the readout fit.
        washout: leading states discarded before fitting.
        seed: RNG seed; the whole model is a pure function of it.
    """

    input_dim: int = 2
    reservoir_size: int = 500
    spectral_radius: float = 0.9
    connectivity: float = 0.02
    input_scale: float = 0.002
    ridge_lambda: float = 1e-8
    washout: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.reservoir_size < self.input_dim:
            raise ValueError("reservoir_size must be >= input_dim")
        if not 0 < self.spectral_radius < 1:
            raise ValueError("spectral_radius must lie in (0, 1)")
        if not 0 < self.connectivity <= 1:
            raise ValueError("connectivity must lie in (0, 1]")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")
        if self.washout < 0:
            raise ValueError("washout must be non-negative")

    def replace(self, **changes) -> "EsnParams":
        return EsnParams(**{**asdict(self), **changes})


def spectral_radius(w) -> float:
    """Largest eigenvalue modulus of a square (dense or sparse) matrix."""
    m = w.shape[0]
    if m <= _DENSE_EIG_MAX:
        dense = w.toarray() if sparse.issparse(w) else np.asarray(w)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))
    vals = splinalg.eigs(
        sparse.csr_matrix(w),
        k=min(_ARPACK_K, m - 2),
        which="LM",
        tol=0,
        v0=np.ones(m),
        return_eigenvectors=False,
    )
    return float(np.max(np.abs(vals)))


def _draw_reservoir(rng: np.random.Generator, m: int, p: float) -> sparse.csr_matrix:
    rows, cols = [], []
    chunk = max(1, 2_000_000 // m)
    for start in range(0, m, chunk):
        stop = min(m, start + chunk)
        r, c = np.nonzero(rng.random((stop - start, m)) < p)
        rows.append(r + start)
        cols.append(c)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    vals = rng.uniform(-1.0, 1.0, size=len(r))
    return sparse.csr_matrix((vals, (r, c)), shape=(m, m))


class Normalizer:
    """Per-coordinate affine map of a window onto [-1, 1].

    A coordinate whose span falls below ``min_span`` (e.g. a stationary
    user) is widened symmetrically so the map stays invertible.
    """

    def __init__(self, lo, hi, min_span: float = 1e-5):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        span = hi - lo
        pad = np.where(span < min_span, (min_span - span) / 2, 0.0)
        self.lo = lo - pad
        self.hi = hi + pad

    @classmethod
    def fit(cls, window, min_span: float = 1e-5) -> "Normalizer":
        window = np.asarray(window, dtype=float)
        return cls(window.min(axis=0), window.max(axis=0), min_span)

    def transform(self, v) -> np.ndarray:
        return 2.0 * (np.asarray(v, dtype=float) - self.lo) / (self.hi - self.lo) - 1.0

    def inverse(self, z) -> np.ndarray:
        return (np.asarray(z, dtype=float) + 1.0) / 2.0 * (self.hi - self.lo) + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        out = cls.__new__(cls)
        out.lo = np.array(d["lo"], dtype=float)
        out.hi = np.array(d["hi"], dtype=float)
        return out


class EsnModel:
    """Reservoir, readout and running state.

    ``step`` and ``forecast`` mutate ``state``; confine an instance to one
    thread at a time.
    """

    def __init__(
        self,
        W_in: np.ndarray,
        W_res,
        params: EsnParams,
        W_out: Optional[np.ndarray] = None,
        trained: bool = False,
    ):
        self.W_in = np.ascontiguousarray(W_in, dtype=float)
        self.W_res = sparse.csr_matrix(W_res, dtype=float)
        # canonical storage order so matvec rounding survives serialisation
        self.W_res.sum_duplicates()
        self.W_res.sort_indices()
        m, n = self.W_in.shape
        if self.W_res.shape != (m, m):
            raise DimensionMismatch(f"W_res shape {self.W_res.shape} does not match {m} neurons")
        self.params = params
        self.W_out = np.zeros((n, m)) if W_out is None else np.ascontiguousarray(W_out, dtype=float)
        self.state = np.zeros(m)
        self.trained = trained
        self.normalizer: Optional[Normalizer] = None

    @classmethod
    def create(cls, params: EsnParams) -> "EsnModel":
        """Draw random weights and rescale the reservoir to the target spectral radius.

        A reservoir with spectral radius zero is redrawn with the next seed,
        up to eight attempts in total.
        """
        m, n = params.reservoir_size, params.input_dim
        for attempt in range(_SEED_ATTEMPTS):
            rng = np.random.default_rng(params.seed + attempt)
            W_in = rng.uniform(-params.input_scale, params.input_scale, size=(m, n))
            W_res = _draw_reservoir(rng, m, params.connectivity)
            rho = spectral_radius(W_res) if W_res.nnz else 0.0
            if rho > 1e-12:
                return cls(W_in, W_res * (params.spectral_radius / rho), params)
            log.debug("degenerate reservoir for seed %d; redrawing", params.seed + attempt)
        raise DegenerateReservoir(f"no usable reservoir after {_SEED_ATTEMPTS} seeds from {params.seed}")

    @property
    def reservoir_size(self) -> int:
        return self.W_in.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_in.shape[1]

    def reset(self) -> None:
        self.state = np.zeros(self.reservoir_size)

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape[0] != self.input_dim:
            raise DimensionMismatch(f"input has length {u.shape[0]}, expected {self.input_dim}")
        x = np.tanh(self.W_in @ u + self.W_res @ self.state)
        self.state = np.clip(x, -_TANH_MAX, _TANH_MAX)
        return self.state

    def run(self, inputs) -> np.ndarray:
        """Drive the reservoir from zero state; returns the (T, m) state trajectory."""
        inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
        self.reset()
        states = np.empty((len(inputs), self.reservoir_size))
        for k, u in enumerate(inputs):
            states[k] = self.step(u)
        return states

    def train_readout(self, inputs, targets) -> "EsnModel":
        """Fit ``W_out`` by ridge regression on states collected from ``inputs``.

        Solves ``W_out = Y X^T (X X^T + lambda I)^-1``. When there are fewer
        retained samples than neurons and lambda > 0 the algebraically equal
        dual form ``Y (X^T X + lambda I)^-1 X^T`` is used instead.

        Raises:
            InsufficientData: fewer than two states survive the washout.
            SingularSystem: the unregularised normal equations are singular.
        """
        inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
        targets = np.asarray(targets, dtype=float).reshape(len(targets), -1)
        if len(inputs) != len(targets):
            raise DimensionMismatch(f"{len(inputs)} inputs vs {len(targets)} targets")
        if targets.shape[1] != self.W_out.shape[0]:
            raise DimensionMismatch(f"targets have width {targets.shape[1]}, expected {self.W_out.shape[0]}")
        washout = self.params.washout
        if len(inputs) - washout < 2:
            raise InsufficientData(f"{len(inputs)} samples leave {len(inputs) - washout} after washout")
        X = self.run(inputs)[washout:]  # (T, m), one state per row
        Y = targets[washout:]
        lam = self.params.ridge_lambda
        T, m = X.shape
        if lam > 0 and T < m:
            K = X @ X.T
            K[np.diag_indices_from(K)] += lam
            self.W_out = np.ascontiguousarray(np.linalg.solve(K, Y).T @ X)
        else:
            G = X.T @ X
            G[np.diag_indices_from(G)] += lam
            if lam == 0 and np.linalg.matrix_rank(G) < m:
                raise SingularSystem(f"state Gram matrix is rank deficient ({T} samples, {m} neurons)")
            try:
                self.W_out = np.ascontiguousarray(np.linalg.solve(G, X.T @ Y).T)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(str(exc)) from None
        self.trained = True
        return self

    def forecast(self, history, horizon: int) -> np.ndarray:
        """Teacher-force ``history`` from zero state, then free-run ``horizon`` steps.

        Each output is fed back as the next input. Returns ``(horizon, n)``.
        """
        if not self.trained:
            raise NotTrained("train_readout must run before forecast")
        history = np.asarray(history, dtype=float).reshape(len(history), -1)
        if len(history) == 0:
            raise InsufficientData("empty history")
        out = np.empty((horizon, self.input_dim))
        self.run(history)
        for h in range(horizon):
            y = self.W_out @ self.state
            out[h] = y
            if h + 1 < horizon:
                self.step(y)
        return out

    def to_json(self) -> str:
        coo = self.W_res.tocoo()
        doc = {
            "params": asdict(self.params),
            "seed": self.params.seed,
            "trained": self.trained,
            "W_in": self.W_in.tolist(),
            "W_out": self.W_out.tolist(),
            "W_res": {
                "shape": list(coo.shape),
                "rows": coo.row.tolist(),
                "cols": coo.col.tolist(),
                "vals": coo.data.tolist(),
            },
        }
        if self.normalizer is not None:
            doc["normalizer"] = self.normalizer.to_dict()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "EsnModel":
        doc = json.loads(text)
        params = EsnParams(**doc["params"])
        r = doc["W_res"]
        W_res = sparse.coo_matrix((r["vals"], (r["rows"], r["cols"])), shape=tuple(r["shape"]))
        model = cls(np.array(doc["W_in"]), W_res, params, np.array(doc["W_out"]), doc["trained"])
        if "normalizer" in doc:
            model.normalizer = Normalizer.from_dict(doc["normalizer"])
        return model


def one_step_pairs(window) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ``u(0..T-2)`` and next-step targets ``u(1..T-1)``."""
    window = np.asarray(window, dtype=float)
    return window[:-1], window[1:]


@dataclass
class ForecastResult:
    latlon: np.ndarray
    normalized: np.ndarray
    normalizer: Normalizer = field(repr=False)


def fit_and_forecast(model: EsnModel, history_latlon, horizon: int) -> ForecastResult:
    """Normalise a (lat, lon) history, train one-step-ahead, forecast ``horizon`` steps."""
    history_latlon = np.asarray(history_latlon, dtype=float)
    norm = Normalizer.fit(history_latlon)
    z = norm.transform(history_latlon)
    u, y = one_step_pairs(z)
    model.train_readout(u, y)
    model.normalizer = norm
    pred = model.forecast(z, horizon)
    return ForecastResult(norm.inverse(pred), pred, norm)


@dataclass
class WeightedSeries:
    targets: np.ndarray
    predictions: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.targets = np.asarray(self.targets, dtype=float)
        self.predictions = np.asarray(self.predictions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.targets) == 0:
            raise EmptySeries("no predictions to score")
        if not (len(self.targets) == len(self.predictions) == len(self.weights)):
            raise DimensionMismatch("targets, predictions and weights differ in length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")

    @classmethod
    def uniform(cls, targets, predictions) -> "WeightedSeries":
        M = len(targets)
        if M == 0:
            raise EmptySeries("no predictions to score")
        return cls(targets, predictions, np.full(M, 1.0 / M))


def weighted_rmse(series: WeightedSeries) -> float:
    """``sqrt(sum_i w_i * ||y_i - yhat_i||^2)``; vector errors use the squared Euclidean norm."""
    err = (series.predictions - series.targets).reshape(len(series.weights), -1)
    return math.sqrt(float(np.dot(series.weights, np.sum(err * err, axis=1))))


def turn_weights(
    latlon,
    base_weight: float = 1.0,
    turn_discount: float = 0.5,
    heading_threshold: float = 60.0,
) -> np.ndarray:
    """Per-point weights that discount sharp changes of direction.

    The heading change at an interior point is the angle between the
    incoming and outgoing displacement; each endpoint takes the value of its
    only interior neighbour. Points turning by more than
    ``heading_threshold`` degrees get ``base_weight * turn_discount``, the
    rest ``base_weight``; the result is normalised to sum to one.
    Zero-length steps carry no heading and never count as turns. Fewer than
    three points give uniform weights.
    """
    if not 0 < turn_discount < 1:
        raise ValueError("turn_discount must lie in (0, 1)")
    latlon = np.asarray(latlon.latlon() if hasattr(latlon, "latlon") else latlon, dtype=float)
    M = len(latlon)
    if M == 0:
        raise EmptySeries("no points")
    if M < 3:
        return np.full(M, 1.0 / M)
    xy = LocalFrame.about(latlon).forward(latlon)
    d = np.diff(xy, axis=0)
    d_in, d_out = d[:-1], d[1:]
    norm = np.linalg.norm(d_in, axis=1) * np.linalg.norm(d_out, axis=1)
    cos = np.divide(np.sum(d_in * d_out, axis=1), norm, out=np.ones(M - 2), where=norm > 0)
    change = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    change = np.concatenate([[change[0]], change, [change[-1]]])
    raw = np.where(change > heading_threshold, base_weight * turn_discount, base_weight)
    return raw / raw.sum()

