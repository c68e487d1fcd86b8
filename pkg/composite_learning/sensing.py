"""Dual-rate adaptive Kalman filtering of slow, delayed position measurements.

A signal ``s`` is modeled by its order-``r`` Taylor expansion over one control
tick ``T``::

    x(i+1) = Phi x(i) + Gamma u(i),    x = [s, s', ..., s^(r)]
    y(j)   = [1 0 ... 0] x(j - L) + v(j),    j = N, 2N, 3N, ...

The unknown ``(r+1)``-th derivative ``u`` is handled as equivalent process
noise whose variance ``Q`` adapts to the measurement innovations. Delayed
measurements are applied against the estimate stored for tick ``j - L`` and
then re-propagated to the current tick.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from math import factorial
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from composite_learning.errors import CompositeLearningError


logger = logging.getLogger(__name__)

DEFAULT_ORDER = 2
DEFAULT_FORGETTING = 0.98
DEFAULT_PROCESS_NOISE = 1e3
DEFAULT_NOISE_FLOOR = 1e-6
DEFAULT_INNOVATION_WINDOW = 10
DEFAULT_DERIVATIVE_VARIANCE = 1.0


class FilterError(CompositeLearningError):
    """Raised for invalid filter configuration or usage"""

    pass


class SparseTickError(FilterError):
    """Raised when a measurement arrives at a tick that is not a frame tick"""

    pass


class HistoryUnderrunError(FilterError):
    """Raised when a delayed measurement refers to a tick no longer stored"""

    pass


@dataclass(frozen=True, eq=False)
class TaylorModel:
    order: int
    tick: float
    phi: np.ndarray
    gamma: np.ndarray


def build_taylor_model(order: int, tick: float) -> TaylorModel:
    """``Phi[a][b] = T^(b-a)/(b-a)!`` for ``b >= a`` and ``Gamma[c] = T^(r+1-c)/(r+1-c)!``."""

    if order < 0:
        raise FilterError(f"expansion order must be >= 0, got {order}")
    if not tick > 0:
        raise FilterError(f"tick must be positive, got {tick!r}")
    size = order + 1
    phi = np.zeros((size, size))
    for a in range(size):
        for b in range(a, size):
            phi[a, b] = tick ** (b - a) / factorial(b - a)
    gamma = np.array([tick ** (size - c) / factorial(size - c) for c in range(size)])
    phi.flags.writeable = False
    gamma.flags.writeable = False
    return TaylorModel(order=order, tick=float(tick), phi=phi, gamma=gamma)


@dataclass(frozen=True)
class DelayedMeasurementChannel:
    """Frames every ``frame_period`` ticks reporting the state ``delay`` ticks earlier."""

    frame_period: int
    delay: int
    noise_variance: float = 0.0

    def __post_init__(self) -> None:
        if self.frame_period < 1:
            raise FilterError(f"frame period must be >= 1 tick, got {self.frame_period}")
        if self.delay < 0:
            raise FilterError(f"delay must be >= 0 ticks, got {self.delay}")
        if self.noise_variance < 0:
            raise FilterError("measurement noise variance must be >= 0")

    @classmethod
    def from_rates(
        cls, tick: float, frame_rate: float, frame_delay: int = 1, noise_std: float = 0.0
    ) -> "DelayedMeasurementChannel":
        """Channel for a camera at ``frame_rate`` Hz delayed by whole frames."""

        if not frame_rate > 0:
            raise FilterError(f"frame rate must be positive, got {frame_rate!r}")
        period = max(1, int(round(1.0 / (frame_rate * tick))))
        return cls(frame_period=period, delay=frame_delay * period, noise_variance=noise_std**2)


class DualRateFilter:
    """Kalman filter over a Taylor model with delayed, sparse measurements.

    Example:
        >>> model = build_taylor_model(2, 0.001)
        >>> channel = DelayedMeasurementChannel(frame_period=33, delay=33)
        >>> kf = DualRateFilter(model, channel)
        >>> kf.predict_tick().position
        0.0
    """

    def __init__(
        self,
        model: TaylorModel,
        channel: DelayedMeasurementChannel,
        initial_state: Optional[Sequence[float]] = None,
        initial_covariance: Optional[np.ndarray] = None,
        process_noise: float = DEFAULT_PROCESS_NOISE,
        forgetting: float = DEFAULT_FORGETTING,
        noise_floor: float = DEFAULT_NOISE_FLOOR,
        innovation_window: int = DEFAULT_INNOVATION_WINDOW,
    ) -> None:
        """Create a filter.

        Args:
            model: Taylor state-space model.
            channel: Frame period, delay and measurement noise variance.
            initial_state: Position and derivatives at tick 0 (zeros by default).
            initial_covariance: Initial ``P``; defaults to the measurement
                variance on the position and unit variance on derivatives.
            process_noise: Initial equivalent-noise variance ``Q``.
            forgetting: ``rho`` in ``(0, 1]``; 1 freezes ``Q``.
            noise_floor: Lower bound applied to ``Q`` by ``adapt_noise``.
            innovation_window: Number of recent innovations used to adapt ``Q``.
        """

        if not 0.0 < forgetting <= 1.0:
            raise FilterError(f"forgetting factor must lie in (0, 1], got {forgetting!r}")
        if process_noise < 0 or noise_floor < 0:
            raise FilterError("noise variances must be >= 0")
        size = model.order + 1
        self.model = model
        self.channel = channel
        self.forgetting = float(forgetting)
        self.noise_floor = float(noise_floor)
        self.Q = float(process_noise)

        x = np.zeros(size) if initial_state is None else np.array(initial_state, dtype=float)
        if x.shape != (size,):
            raise FilterError(f"initial state needs {size} entries, got {x.shape}")
        if initial_covariance is None:
            P = np.diag([max(channel.noise_variance, 1e-8)] + [DEFAULT_DERIVATIVE_VARIANCE] * model.order)
        else:
            P = np.array(initial_covariance, dtype=float)
        if P.shape != (size, size):
            raise FilterError(f"initial covariance must be {size}x{size}")

        self.x = x
        self.P = 0.5 * (P + P.T)
        self.tick_index = 0
        self._noise_shape = np.outer(model.gamma, model.gamma)
        self._history: Deque[Tuple[int, np.ndarray, np.ndarray]] = deque(
            maxlen=channel.delay + channel.frame_period + 1
        )
        self._history.append((0, self.x.copy(), self.P.copy()))
        self._innovations: Deque[float] = deque(maxlen=innovation_window)

        response = np.zeros(size)
        response[0] = 1.0
        gain = 0.0
        for _ in range(channel.frame_period):
            gain += float(response @ model.gamma) ** 2
            response = response @ model.phi
        self._frame_gain = gain

    @property
    def position(self) -> float:
        return float(self.x[0])

    @property
    def velocity(self) -> float:
        return float(self.x[1]) if self.x.shape[0] > 1 else 0.0

    @property
    def innovations(self) -> List[float]:
        return list(self._innovations)

    def _propagate(self, x: np.ndarray, P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        phi = self.model.phi
        x = phi @ x
        P = phi @ P @ phi.T + self.Q * self._noise_shape
        return x, 0.5 * (P + P.T)

    def predict_tick(self) -> "DualRateFilter":
        """Advance one control tick."""

        self.x, self.P = self._propagate(self.x, self.P)
        self.tick_index += 1
        self._history.append((self.tick_index, self.x.copy(), self.P.copy()))
        return self

    def measurement_update(self, y: float, j: int) -> "DualRateFilter":
        """Apply the frame received at tick ``j``, which reports tick ``j - L``.

        Raises:
            SparseTickError: If ``j`` is not a multiple of the frame period.
            HistoryUnderrunError: If tick ``j - L`` has left the history ring.
        """

        if j % self.channel.frame_period:
            raise SparseTickError(
                f"tick {j} is not a multiple of the frame period {self.channel.frame_period}"
            )
        anchor = j - self.channel.delay
        if anchor > self.tick_index:
            raise FilterError(f"measurement for tick {anchor} is ahead of tick {self.tick_index}")
        oldest = self._history[0][0]
        if anchor < oldest:
            raise HistoryUnderrunError(
                f"tick {anchor} is older than the stored history (oldest tick {oldest})"
            )
        position = anchor - oldest
        _, x, P = self._history[position]
        innovation = float(y) - float(x[0])
        variance = float(P[0, 0]) + self.channel.noise_variance
        self._innovations.append(innovation)
        if variance > np.finfo(float).tiny:
            gain = P[:, 0] / variance
            x = x + gain * innovation
            reduce = np.eye(x.shape[0])
            reduce[:, 0] -= gain
            P = reduce @ P @ reduce.T + self.channel.noise_variance * np.outer(gain, gain)
            P = 0.5 * (P + P.T)
        self._history[position] = (anchor, x, P)
        for index in range(position + 1, len(self._history)):
            x, P = self._propagate(x, P)
            self._history[index] = (self._history[index][0], x, P)
        self.x, self.P = x.copy(), P.copy()
        return self

    def adapt_noise(self) -> "DualRateFilter":
        """Blend ``Q`` toward the variance implied by recent innovations."""

        if not self._innovations:
            raise FilterError("no innovations recorded yet")
        mean_square = float(np.mean(np.square(self._innovations)))
        implied = max(mean_square - self.channel.noise_variance, 0.0) / self._frame_gain
        blended = self.forgetting * self.Q + (1.0 - self.forgetting) * implied
        self.Q = max(blended, self.noise_floor)
        return self


class StreamingCapture:
    """Feeds per-tick truth through delayed camera frames into one filter per channel.

    ``observe`` is called once per control tick with the true positions; it
    returns the current ``(position, velocity)`` estimate of every channel.
    """

    def __init__(
        self,
        initial_positions: Sequence[float],
        tick: float,
        channel: DelayedMeasurementChannel,
        rng: Optional[np.random.Generator] = None,
        order: int = DEFAULT_ORDER,
        process_noise: float = DEFAULT_PROCESS_NOISE,
        forgetting: float = DEFAULT_FORGETTING,
        adaptive: bool = True,
    ) -> None:
        model = build_taylor_model(order, tick)
        self.channel = channel
        self.adaptive = adaptive
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._filters = []
        for position in initial_positions:
            state = np.zeros(order + 1)
            state[0] = position
            self._filters.append(
                DualRateFilter(model, channel, state, process_noise=process_noise, forgetting=forgetting)
            )
        self._truth: Deque[np.ndarray] = deque(maxlen=channel.delay + 1)
        self._tick = 0

    def observe(self, truth: Sequence[float]) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        if self._tick > 0:
            for kf in self._filters:
                kf.predict_tick()
        self._truth.append(truth)
        k = self._tick
        if k % self.channel.frame_period == 0 and k >= self.channel.delay:
            delayed = self._truth[0] if self.channel.delay else truth
            noise = self._rng.normal(0.0, np.sqrt(self.channel.noise_variance), delayed.shape)
            for value, kf in zip(delayed + noise, self._filters):
                kf.measurement_update(value, k)
                if self.adaptive:
                    kf.adapt_noise()
        self._tick += 1
        return np.array([[kf.position, kf.velocity] for kf in self._filters])


def reconstruct(
    samples: Sequence[float],
    tick: float,
    channel: DelayedMeasurementChannel,
    rng: Optional[np.random.Generator] = None,
    order: int = DEFAULT_ORDER,
    process_noise: float = DEFAULT_PROCESS_NOISE,
    forgetting: float = DEFAULT_FORGETTING,
    adaptive: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Full-rate position and velocity reconstructed from a sampled truth signal."""

    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size == 0:
        raise FilterError("reconstruct expects a non-empty 1-D signal")
    capture = StreamingCapture(
        [samples[0]], tick, channel, rng, order, process_noise, forgetting, adaptive
    )
    estimates = np.array([capture.observe([value])[0] for value in samples])
    return estimates[:, 0], estimates[:, 1]


def delayed_hold_baseline(
    samples: Sequence[float],
    channel: DelayedMeasurementChannel,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Zero-order hold of the latest delayed frame (the first sample before any frame)."""

    samples = np.asarray(samples, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    held = np.empty_like(samples)
    current = samples[0]
    std = np.sqrt(channel.noise_variance)
    for k in range(samples.size):
        if k % channel.frame_period == 0 and k >= channel.delay:
            current = samples[k - channel.delay] + rng.normal(0.0, std)
        held[k] = current
    return held
