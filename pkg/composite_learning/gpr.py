"""Squared-exponential Gaussian-process policies mapping sensed state to control.

Typical usage::

    from composite_learning.gpr import TrainingSet, fit

    model = fit(TrainingSet(states, controls, weights))
    control = model.predict(sensed_state)

Controls are centered on their mean before fitting, so the zero-mean prior of
the regression is the demonstration mean. Per-point weights enter as
heteroscedastic jitter ``eps / w_i``: heavily weighted points are trusted more.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist
from tenacity import (
    RetryCallState,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_none,
)

from composite_learning.errors import CompositeLearningError


logger = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-8
FACTORIZATION_ATTEMPTS = 3
JITTER_ESCALATION = 100.0
AUTO = "auto"

GRID_EXPONENTS = np.arange(-4, 5)
REFINE_FACTORS = (2.0**-0.5, 2.0**-0.25, 2.0**0.25, 2.0**0.5)

SNAPSHOT_MAGIC = b"CLGP"
SNAPSHOT_VERSION = 1


class GprError(CompositeLearningError):
    """Raised for invalid regression inputs"""

    pass


class FactorizationError(GprError):
    """Raised when the regularized covariance cannot be factorized"""

    pass


class SnapshotError(GprError):
    """Raised when a model snapshot cannot be read"""

    pass


@dataclass(frozen=True)
class Hyperparams:
    sigma: float
    length: float

    def __post_init__(self) -> None:
        for name in ("sigma", "length"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0.0:
                raise GprError(f"{name} must be positive and finite, got {value!r}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Training pairs ``(x_i, u_i)`` with positive per-point weights.

    ``controls`` may be given as a flat vector for single-output policies; it
    is stored as an ``n x d_u`` matrix. ``point_weights`` defaults to ones.
    """

    states: np.ndarray
    controls: np.ndarray
    point_weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        controls = np.array(self.controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        if states.ndim != 2 or controls.ndim != 2:
            raise GprError("states and controls must be 2-D arrays")
        if states.shape[0] == 0:
            raise GprError("training set is empty")
        if controls.shape[0] != states.shape[0]:
            raise GprError(
                f"{states.shape[0]} states but {controls.shape[0]} controls"
            )
        if self.point_weights is None:
            weights = np.ones(states.shape[0])
        else:
            weights = np.array(self.point_weights, dtype=float).reshape(-1)
        if weights.shape != (states.shape[0],):
            raise GprError(f"{weights.shape[0]} weights for {states.shape[0]} points")
        if not (
            np.all(np.isfinite(states))
            and np.all(np.isfinite(controls))
            and np.all(np.isfinite(weights))
        ):
            raise GprError("training data must be finite")
        if np.any(weights <= 0.0):
            raise GprError("point weights must be strictly positive")
        for array in (states, controls, weights):
            array.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "point_weights", weights)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def control_dim(self) -> int:
        return self.controls.shape[1]

    def subset(self, indices) -> "TrainingSet":
        indices = np.asarray(indices, dtype=int)
        return TrainingSet(
            self.states[indices], self.controls[indices], self.point_weights[indices]
        )


class PredictionCounter:
    """Counts kernel evaluations performed by predictions."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.kernel_evaluations = 0
        self.queries = 0

    def record(self, evaluations: int) -> None:
        with self._lock:
            self.kernel_evaluations += evaluations
            self.queries += 1

    @property
    def per_query(self) -> float:
        return self.kernel_evaluations / self.queries if self.queries else 0.0


def kernel(xi, xj, theta: Hyperparams) -> float:
    """``sigma^2 exp(-|xi - xj|^2 / l^2)``."""

    xi = np.asarray(xi, dtype=float).reshape(-1)
    xj = np.asarray(xj, dtype=float).reshape(-1)
    if xi.shape != xj.shape:
        raise GprError(f"kernel arguments differ in dimension: {xi.shape} vs {xj.shape}")
    distance = float(np.sum((xi - xj) ** 2))
    return theta.sigma**2 * float(np.exp(-distance / theta.length**2))


def _kernel_block(a: np.ndarray, b: np.ndarray, theta: Hyperparams) -> np.ndarray:
    return theta.sigma**2 * np.exp(-cdist(a, b, "sqeuclidean") / theta.length**2)


def covariance_matrix(training: TrainingSet, theta: Hyperparams) -> np.ndarray:
    K = _kernel_block(training.states, training.states, theta)
    np.fill_diagonal(K, theta.sigma**2)
    return 0.5 * (K + K.T)


def cross_covariance(query, training: TrainingSet, theta: Hyperparams) -> np.ndarray:
    query = np.asarray(query, dtype=float).reshape(1, -1)
    if query.shape[1] != training.state_dim:
        raise GprError(
            f"query has dimension {query.shape[1]}, training states have {training.state_dim}"
        )
    return _kernel_block(query, training.states, theta)[0]


def _point_noise(training: TrainingSet, theta: Hyperparams, jitter: float) -> np.ndarray:
    weights = training.point_weights / training.point_weights.max()
    return jitter * theta.sigma**2 / weights


def _factorize(
    K: np.ndarray, noise: np.ndarray, floor: float, attempts: int = FACTORIZATION_ATTEMPTS
) -> Tuple[Tuple[np.ndarray, bool], np.ndarray]:
    """Cholesky-factorize ``K + diag(noise)``, escalating the jitter on failure."""

    state: Dict[str, np.ndarray] = {"noise": noise}

    def escalate(retry_state: RetryCallState) -> None:
        state["noise"] = np.maximum(state["noise"] * JITTER_ESCALATION, floor)
        logger.warning(
            "Covariance factorization failed (attempt %d); retrying with jitter %.3g",
            retry_state.attempt_number,
            float(state["noise"].max()),
        )

    retryer = Retrying(
        stop=stop_after_attempt(attempts),
        wait=wait_none(),
        retry=retry_if_exception_type(LinAlgError),
        before_sleep=escalate,
        reraise=True,
    )
    try:
        for attempt in retryer:
            with attempt:
                factor = cho_factor(
                    K + np.diag(state["noise"]), lower=True, check_finite=False
                )
                if not np.all(np.isfinite(factor[0])):
                    raise LinAlgError("non-finite Cholesky factor")
    except LinAlgError as exc:
        raise FactorizationError(
            f"covariance matrix is not positive definite after {attempts} attempts; "
            "condition the training set before fitting"
        ) from exc
    return factor, state["noise"]


def log_marginal_likelihood(
    training: TrainingSet, theta: Hyperparams, jitter: float = DEFAULT_JITTER
) -> float:
    """Log evidence of the centered controls, summed over output dimensions."""

    targets = training.controls - training.controls.mean(axis=0)
    K = covariance_matrix(training, theta)
    noise = _point_noise(training, theta, jitter)
    try:
        (L, lower), _ = _factorize(K, noise, floor=1e-12 * theta.sigma**2, attempts=1)
    except FactorizationError:
        return -np.inf
    alpha = cho_solve((L, lower), targets, check_finite=False)
    n, outputs = targets.shape
    data_fit = -0.5 * float(np.sum(targets * alpha))
    complexity = -outputs * float(np.sum(np.log(np.diag(L))))
    return data_fit + complexity - 0.5 * n * outputs * np.log(2.0 * np.pi)


def default_hyperparams(training: TrainingSet) -> Hyperparams:
    """Data-scaled starting point: control spread and median state distance."""

    spread = float(np.std(training.controls))
    distances = pdist(training.states) if training.n > 1 else np.zeros(0)
    positive = distances[distances > 0]
    length = float(np.median(positive)) if positive.size else 1.0
    return Hyperparams(sigma=spread if spread > 0 else 1.0, length=length)


def _search_hyperparams(training: TrainingSet, jitter: float) -> Hyperparams:
    base = default_hyperparams(training)
    best, best_score = base, -np.inf
    for a in GRID_EXPONENTS:
        for b in GRID_EXPONENTS:
            candidate = Hyperparams(base.sigma * 2.0**a, base.length * 2.0**b)
            score = log_marginal_likelihood(training, candidate, jitter)
            if score > best_score:
                best, best_score = candidate, score

    for name in ("sigma", "length"):
        current = best
        for factor in REFINE_FACTORS:
            values = {"sigma": current.sigma, "length": current.length}
            values[name] *= factor
            candidate = Hyperparams(**values)
            score = log_marginal_likelihood(training, candidate, jitter)
            if score > best_score:
                best, best_score = candidate, score
    if not np.isfinite(best_score):
        logger.warning("No hyperparameter candidate factorized; using data-scaled defaults")
        return base
    logger.debug(
        "Selected hyperparameters sigma=%.4g length=%.4g (log evidence %.4g)",
        best.sigma,
        best.length,
        best_score,
    )
    return best


@dataclass(frozen=True, eq=False)
class GprModel:
    """A fitted policy. Immutable; ``predict`` is safe across threads."""

    training: TrainingSet
    theta: Hyperparams
    jitter_base: float
    control_mean: np.ndarray
    factorized_K: Tuple[np.ndarray, bool]
    alpha: np.ndarray
    point_noise: np.ndarray

    @property
    def size(self) -> int:
        return self.training.n

    def predict(self, query, counter: Optional[PredictionCounter] = None) -> np.ndarray:
        return predict(self, query, counter)


def fit(
    training: TrainingSet,
    theta_init: Union[Hyperparams, str] = AUTO,
    jitter: float = DEFAULT_JITTER,
) -> GprModel:
    """Fit a policy on ``training``.

    Args:
        training: Weighted training pairs.
        theta_init: Fixed hyperparameters, or ``AUTO`` to maximize the log
            marginal likelihood over a log-spaced grid followed by one
            coordinate-descent refinement pass.
        jitter: Base ridge ``eps`` relative to ``sigma^2``.

    Returns:
        GprModel: the model with its cached factorization and ``alpha``.

    Raises:
        GprError: If Auto fitting is requested on fewer than three points.
        FactorizationError: If the covariance stays indefinite after retries.
    """

    if jitter < 0 or not np.isfinite(jitter):
        raise GprError(f"jitter must be non-negative and finite, got {jitter!r}")
    if isinstance(theta_init, str):
        if theta_init != AUTO:
            raise GprError(f"unknown hyperparameter mode {theta_init!r}")
        if training.n < 3:
            raise GprError("automatic hyperparameter training needs at least 3 points")
        theta = _search_hyperparams(training, jitter)
    else:
        theta = theta_init

    control_mean = training.controls.mean(axis=0)
    K = covariance_matrix(training, theta)
    factor, noise = _factorize(
        K, _point_noise(training, theta, jitter), floor=1e-12 * theta.sigma**2
    )
    alpha = cho_solve(factor, training.controls - control_mean, check_finite=False)
    for array in (control_mean, alpha, noise):
        array.flags.writeable = False
    logger.debug(
        "Fitted policy on %d points (d_x=%d, d_u=%d)",
        training.n,
        training.state_dim,
        training.control_dim,
    )
    return GprModel(
        training=training,
        theta=theta,
        jitter_base=jitter,
        control_mean=control_mean,
        factorized_K=factor,
        alpha=alpha,
        point_noise=noise,
    )


def predict(
    model: GprModel, query, counter: Optional[PredictionCounter] = None
) -> np.ndarray:
    """Conditional expectation ``mean + K* (K + diag(eps/w))^-1 U`` at ``query``."""

    row = cross_covariance(query, model.training, model.theta)
    if counter is not None:
        counter.record(row.shape[0])
    return model.control_mean + row @ model.alpha


# --------------------------------------------------------------------------
# Snapshots
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHIIIdddI")


def dump_model(
    model: GprModel, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None
) -> None:
    """Write a versioned little-endian snapshot; the model is refit on load."""

    blob = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    training = model.training
    header = _HEADER.pack(
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        training.n,
        training.state_dim,
        training.control_dim,
        model.theta.sigma,
        model.theta.length,
        model.jitter_base,
        len(blob),
    )
    body = b"".join(
        np.ascontiguousarray(array, dtype="<f8").tobytes()
        for array in (training.states, training.controls, training.point_weights)
    )
    Path(path).write_bytes(header + blob + body)
    logger.debug("Wrote policy snapshot %s (%d points)", path, training.n)


def load_model(path: Union[str, Path]) -> Tuple[GprModel, Dict[str, Any]]:
    """Read a snapshot written by ``dump_model``; returns the model and metadata."""

    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated snapshot header")
    magic, version, n, dx, du, sigma, length, jitter, blob_size = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not a policy snapshot")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {version}")
    offset = _HEADER.size
    try:
        metadata = json.loads(data[offset : offset + blob_size].decode("utf-8"))
    except ValueError as exc:
        raise SnapshotError(f"{path}: corrupt metadata") from exc
    offset += blob_size
    expected = 8 * (n * dx + n * du + n)
    if len(data) - offset != expected:
        raise SnapshotError(f"{path}: expected {expected} payload bytes, got {len(data) - offset}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    states = values[: n * dx].reshape(n, dx)
    controls = values[n * dx : n * dx + n * du].reshape(n, du)
    weights = values[n * dx + n * du :]
    model = fit(TrainingSet(states, controls, weights), Hyperparams(sigma, length), jitter)
    return model, metadata
