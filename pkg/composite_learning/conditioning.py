"""Rank-revealing QR selection of well-conditioned training subsets.

The stack ``S`` holds one column per training state. A column-pivoted QR
names a first guess of ``m`` independent columns; Gu-Eisenstat swaps then
exchange selected and unselected columns while doing so grows ``|det R11|`` by
more than ``f``. On exit

    sigma_m(R11) >= sigma_m(S) / sqrt(1 + f^2 m (n - m)).

Raw state stacks have rank at most ``d_x``. Policy conditioning therefore
works on the kernel stack, the states lifted into the kernel's feature space
(the symmetric square root of ``K``), whose columns can name up to ``n``
well-conditioned points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import eigh, qr, solve_triangular

from composite_learning.errors import CompositeLearningError
from composite_learning.gpr import Hyperparams, TrainingSet, default_hyperparams


logger = logging.getLogger(__name__)

DEFAULT_SWAP_TOLERANCE = 2.0
DEFAULT_COND_CEILING = 1e4
MAX_SWAPS_PER_COLUMN = 10


class ConditioningError(CompositeLearningError):
    """Raised for invalid conditioning requests"""

    pass


@dataclass(frozen=True, eq=False)
class StateStack:
    """A ``d x n`` stack, one column per state.

    ``state_dim`` is the dimension of the underlying states; for kernel stacks
    it differs from the number of rows.
    """

    matrix: np.ndarray
    state_dim: Optional[int] = None

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] == 0:
            raise ConditioningError("a state stack needs at least one column")
        if not np.all(np.isfinite(matrix)):
            raise ConditioningError("state stack entries must be finite")
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        if self.state_dim is None:
            object.__setattr__(self, "state_dim", matrix.shape[0])

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class RrqrResult:
    """``S[:, permutation] = q @ [[r11, r12], [0, r22]]``."""

    permutation: np.ndarray
    q: np.ndarray
    r11: np.ndarray
    r12: np.ndarray
    r22: np.ndarray
    f: float
    swaps: int

    @property
    def rank(self) -> int:
        return self.r11.shape[0]

    @property
    def r(self) -> np.ndarray:
        m = self.rank
        top = np.hstack([self.r11, self.r12])
        bottom = np.hstack([np.zeros((self.r22.shape[0], m)), self.r22])
        return np.vstack([top, bottom])

    @property
    def selected(self) -> np.ndarray:
        return self.permutation[: self.rank]


@dataclass(frozen=True)
class ConditioningStats:
    n: int
    m: int
    cond_full: float
    cond_selected: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "cond_full": self.cond_full,
            "cond_selected": self.cond_selected,
        }


def state_stack(training: TrainingSet) -> StateStack:
    return StateStack(training.states.T)


def kernel_stack(training: TrainingSet, theta: Optional[Hyperparams] = None) -> StateStack:
    """Symmetric square root of the kernel matrix, so that ``stack^T stack = K``."""

    if theta is None:
        theta = Hyperparams(1.0, default_hyperparams(training).length)
    distances = (
        np.sum(training.states**2, axis=1)[:, None]
        + np.sum(training.states**2, axis=1)[None, :]
        - 2.0 * training.states @ training.states.T
    )
    K = theta.sigma**2 * np.exp(-np.maximum(distances, 0.0) / theta.length**2)
    K = 0.5 * (K + K.T)
    values, vectors = eigh(K)
    root = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
    return StateStack(0.5 * (root + root.T), state_dim=training.state_dim)


def condition_number(matrix: np.ndarray) -> float:
    """Ratio of the largest to the smallest singular value (``inf`` if singular)."""

    singular = np.linalg.svd(np.atleast_2d(np.asarray(matrix, dtype=float)), compute_uv=False)
    if singular.size == 0 or singular[-1] <= singular[0] * np.finfo(float).eps:
        return float("inf")
    return float(singular[0] / singular[-1])


def _pivoted_order(matrix: np.ndarray, pivots: int) -> Tuple[List[int], np.ndarray]:
    """Householder QR with column pivoting for the first ``pivots`` steps.

    Returns the column order and the absolute diagonal of R. Pivot ties go to
    the lowest original column index.
    """

    work = np.array(matrix, dtype=float)
    rows, n = work.shape
    order = list(range(n))
    tolerance = np.finfo(float).eps * max(rows, n) * np.linalg.norm(work)
    diagonal = []
    for k in range(min(pivots, rows, n)):
        norms = np.linalg.norm(work[k:, k:], axis=0)
        best = norms.max()
        if best <= tolerance:
            break
        ties = np.flatnonzero(norms >= best * (1.0 - 1e-12))
        j = k + min(ties, key=lambda c: order[k + c])
        work[:, [k, j]] = work[:, [j, k]]
        order[k], order[j] = order[j], order[k]

        x = work[k:, k]
        norm_x = np.linalg.norm(x)
        sign = -np.sign(x[0]) if x[0] != 0 else -1.0
        u1 = x[0] - sign * norm_x
        w = x / u1
        w[0] = 1.0
        tau = -sign * u1 / norm_x
        work[k:, :] -= np.outer(tau * w, w @ work[k:, :])
        diagonal.append(abs(work[k, k]))
    return order, np.array(diagonal)


def _blocks(matrix: np.ndarray, order: List[int], m: int):
    q, r = qr(matrix[:, order], mode="full")
    return q, r[:m, :m], r[:m, m:], r[m:, m:]


def rrqr(stack: StateStack, m: int, f: float = DEFAULT_SWAP_TOLERANCE) -> RrqrResult:
    """Strong rank-revealing QR of ``stack`` with ``m`` leading columns.

    Args:
        stack: The state stack.
        m: Target rank, ``1 <= m <= min(rows, n)``.
        f: Swap tolerance (> 1).

    Returns:
        RrqrResult: permutation, orthogonal factor and triangular blocks.

    Raises:
        ConditioningError: If ``m`` is out of range or the stack is all zeros.
    """

    S = stack.matrix
    rows, n = S.shape
    if not 1 <= m <= min(rows, n):
        raise ConditioningError(f"target rank {m} outside [1, {min(rows, n)}]")
    if f <= 1.0:
        raise ConditioningError(f"swap tolerance must exceed 1, got {f!r}")
    if not np.any(S):
        raise ConditioningError("cannot factorize an all-zero stack")

    order, _ = _pivoted_order(S, m)
    q, r11, r12, r22 = _blocks(S, order, m)
    tolerance = np.finfo(float).eps * max(rows, n) * np.linalg.norm(S)
    swaps = 0
    limit = MAX_SWAPS_PER_COLUMN * n
    while m < n and swaps < limit:
        if np.min(np.abs(np.diag(r11))) <= tolerance:
            logger.debug("Leading block is rank deficient; skipping swap phase")
            break
        inverse = solve_triangular(r11, np.eye(m))
        W = inverse @ r12
        gamma = np.linalg.norm(r22, axis=0) if r22.size else np.zeros(n - m)
        row_norms = np.linalg.norm(inverse, axis=1)
        score = W**2 + np.outer(row_norms, gamma) ** 2
        i, j = np.unravel_index(np.argmax(score), score.shape)
        if score[i, j] <= f**2:
            break
        order[i], order[m + j] = order[m + j], order[i]
        swaps += 1
        q, r11, r12, r22 = _blocks(S, order, m)
    else:
        if swaps >= limit:
            logger.warning("Strong RRQR stopped after %d swaps", swaps)

    selected = [order[k] for k in _pivoted_order(S[:, order[:m]], m)[0]]
    rest = order[m:]
    if rest:
        q_sel, _ = qr(S[:, selected], mode="economic")
        residual = S[:, rest] - q_sel @ (q_sel.T @ S[:, rest])
        norms = np.linalg.norm(residual, axis=0)
        rest = [rest[k] for k in sorted(range(len(rest)), key=lambda k: (-norms[k], rest[k]))]
    order = selected + rest
    q, r11, r12, r22 = _blocks(S, order, m)
    logger.debug("RRQR selected %d of %d columns after %d swaps", m, n, swaps)
    return RrqrResult(
        permutation=np.array(order, dtype=int),
        q=q,
        r11=r11,
        r12=r12,
        r22=r22,
        f=f,
        swaps=swaps,
    )


def choose_subset_size(
    stack: StateStack, cond_ceiling: float = DEFAULT_COND_CEILING, limit: Optional[int] = None
) -> int:
    """Longest pivoted prefix whose ``|r_11| / |r_kk|`` estimate stays under the ceiling.

    The result is clamped to ``[min(state_dim, n), n]``. ``limit`` caps the
    number of pivots examined.
    """

    if cond_ceiling <= 1.0:
        raise ConditioningError(f"condition ceiling must exceed 1, got {cond_ceiling!r}")
    rows, n = stack.matrix.shape
    pivots = min(rows, n) if limit is None else min(rows, n, limit)
    _, diagonal = _pivoted_order(stack.matrix, pivots)
    size = 0
    for value in diagonal:
        if value <= 0 or diagonal[0] / value > cond_ceiling:
            break
        size += 1
    lower = min(stack.state_dim, n)
    return int(min(max(size, lower), n))


def select_subset(
    training: TrainingSet,
    m: int,
    theta: Optional[Hyperparams] = None,
    f: float = DEFAULT_SWAP_TOLERANCE,
) -> TrainingSet:
    """The ``m`` training points named by the leading RRQR columns of the kernel stack.

    Selected points keep their original relative order.
    """

    if not 1 <= m <= training.n:
        raise ConditioningError(f"subset size {m} outside [1, {training.n}]")
    if m == training.n:
        return training
    if theta is None:
        theta = Hyperparams(1.0, default_hyperparams(training).length)
    result = rrqr(kernel_stack(training, theta), m, f)
    return training.subset(np.sort(result.selected))


def condition_training_set(
    training: TrainingSet,
    cond_ceiling: float = DEFAULT_COND_CEILING,
    max_subset: Optional[int] = None,
    theta: Optional[Hyperparams] = None,
) -> Tuple[TrainingSet, ConditioningStats]:
    """Choose ``m`` by the condition ceiling, capped at ``max_subset``, and select."""

    if theta is None:
        theta = Hyperparams(1.0, default_hyperparams(training).length)
    stack = kernel_stack(training, theta)
    m = choose_subset_size(stack, cond_ceiling, limit=max_subset)
    if max_subset is not None:
        m = min(m, max_subset)
    selected = select_subset(training, m, theta)
    stats = ConditioningStats(
        n=training.n,
        m=selected.n,
        cond_full=condition_number(stack.matrix),
        cond_selected=condition_number(kernel_stack(selected, theta).matrix),
    )
    logger.info(
        "Conditioned %d points down to %d (cond %.3g -> %.3g)",
        stats.n,
        stats.m,
        stats.cond_full,
        stats.cond_selected,
    )
    return selected, stats
