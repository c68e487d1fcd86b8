"""Per-transition policies and robot trials.

Typical usage::

    policies, stats = fit_policies(net, corpus, task.physical_dim, task.control_dim, settings)
    trace = run_trial(net, policies, task, np.random.default_rng(3), time_budget=10.0)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from composite_learning.apn import AdaptivePetriNet
from composite_learning.conditioning import (
    DEFAULT_COND_CEILING,
    ConditioningStats,
    condition_number,
    condition_training_set,
    kernel_stack,
)
from composite_learning.gpr import (
    AUTO,
    DEFAULT_JITTER,
    GprModel,
    PredictionCounter,
    TrainingSet,
    default_hyperparams,
    fit,
)
from composite_learning.sim.base import SimulationError, Task
from composite_learning.sim.demonstration import IDLE, Demonstration
from composite_learning.sim.episode import policy_transitions, run_episode


logger = logging.getLogger(__name__)

RESAMPLE_POINTS = 50
TRIAL_STREAM = 1


class MissingPolicyError(SimulationError):
    """Raised when an active transition has no fitted policy"""

    pass


@dataclass(frozen=True)
class PolicySettings:
    sample_stride: int = 20
    max_candidates: int = 400
    max_subset: int = 50
    cond_ceiling: float = DEFAULT_COND_CEILING
    jitter: float = DEFAULT_JITTER


class PolicyController:
    """Feeds the active transition's policy with the physical sensed channels."""

    def __init__(
        self,
        policies: Mapping[str, GprModel],
        physical_dim: int,
        control_dim: int,
        counter: Optional[PredictionCounter] = None,
    ) -> None:
        self.policies = policies
        self.physical_dim = physical_dim
        self.control_dim = control_dim
        self.counter = counter

    def __call__(self, tick_index: int, state, sensed: np.ndarray, place: str, active: str) -> np.ndarray:
        if active == IDLE:
            return np.zeros(self.control_dim)
        model = self.policies.get(active)
        if model is None:
            raise MissingPolicyError(f"no policy for active transition {active!r}")
        return model.predict(sensed[: self.physical_dim], self.counter)


def _transition_samples(
    corpus: Sequence[Tuple[Demonstration, float]], tid: str, physical_dim: int, stride: int
) -> Optional[TrainingSet]:
    states, controls, weights = [], [], []
    for trace, weight in corpus:
        if weight <= 0.0:
            continue
        rows = trace.segment(tid)[::stride]
        if rows.size == 0:
            continue
        states.append(trace.states[rows, :physical_dim])
        controls.append(trace.controls[rows])
        weights.append(np.full(rows.size, weight))
    if not states:
        return None
    return TrainingSet(np.vstack(states), np.vstack(controls), np.concatenate(weights))


def _zero_policy(physical_dim: int, control_dim: int, jitter: float) -> GprModel:
    training = TrainingSet(np.zeros((1, physical_dim)), np.zeros((1, control_dim)))
    return fit(training, default_hyperparams(training), jitter)


def fit_policies(
    net: AdaptivePetriNet,
    corpus: Sequence[Tuple[Demonstration, float]],
    physical_dim: int,
    control_dim: int,
    settings: PolicySettings = PolicySettings(),
) -> Tuple[Dict[str, GprModel], Dict[str, ConditioningStats]]:
    """Fit one conditioned, weighted policy per non-stop transition.

    Records of each transition are subsampled every ``sample_stride`` ticks
    and thinned evenly to ``max_candidates``; sets larger than ``max_subset``
    are reduced by rank-revealing selection before fitting. A transition with
    no weighted data gets a zero policy.
    """

    policies: Dict[str, GprModel] = {}
    stats: Dict[str, ConditioningStats] = {}
    for tid in policy_transitions(net):
        training = _transition_samples(corpus, tid, physical_dim, settings.sample_stride)
        if training is None:
            logger.warning("No weighted data for %s; using a zero policy", tid)
            policies[tid] = _zero_policy(physical_dim, control_dim, settings.jitter)
            stats[tid] = ConditioningStats(n=0, m=1, cond_full=1.0, cond_selected=1.0)
            continue
        if training.n > settings.max_candidates:
            keep = np.unique(np.linspace(0, training.n - 1, settings.max_candidates).round().astype(int))
            training = training.subset(keep)
        if training.n > settings.max_subset:
            training, stats[tid] = condition_training_set(
                training, settings.cond_ceiling, settings.max_subset
            )
        else:
            cond = condition_number(kernel_stack(training).matrix)
            stats[tid] = ConditioningStats(n=training.n, m=training.n, cond_full=cond, cond_selected=cond)
        theta = AUTO if training.n >= 3 else default_hyperparams(training)
        policies[tid] = fit(training, theta, settings.jitter)
        logger.debug("Policy %s: %d of %d points", tid, stats[tid].m, stats[tid].n)
    return policies, stats


def run_trial(
    net: AdaptivePetriNet,
    policies: Mapping[str, GprModel],
    task: Task,
    rng: np.random.Generator,
    time_budget: float = 10.0,
    trial_id: str = "trial",
    counter: Optional[PredictionCounter] = None,
    metadata: Optional[Dict[str, str]] = None,
) -> Demonstration:
    """One robot trial: the net sequences transitions, active policies drive the task.

    Raises:
        MissingPolicyError: If a transition without a policy becomes active.
    """

    controller = PolicyController(policies, task.physical_dim, task.control_dim, counter)
    info = {"kind": "trial"}
    info.update(metadata or {})
    episode = run_episode(net, task, controller, rng, time_budget, demo_id=trial_id, metadata=info)
    return episode.trace


def trial_seeds(seed: int, count: int, stream: int = TRIAL_STREAM) -> List[np.random.SeedSequence]:
    """Per-trial seed streams, disjoint from the demonstration streams of the same seed."""

    return np.random.SeedSequence(seed, spawn_key=(stream,)).spawn(count)


def run_trials(
    net: AdaptivePetriNet,
    policies: Mapping[str, GprModel],
    task: Task,
    seeds: Sequence[np.random.SeedSequence],
    time_budget: float = 10.0,
    parallel: int = 1,
    prefix: str = "trial",
) -> List[Demonstration]:
    """Independent trials, one RNG stream each; results do not depend on ``parallel``."""

    def one(indexed: Tuple[int, np.random.SeedSequence]) -> Demonstration:
        index, seed = indexed
        return run_trial(
            net,
            policies,
            task,
            np.random.default_rng(seed),
            time_budget,
            trial_id=f"{prefix}-{index:03d}",
            metadata={"seed": str(seed.entropy), "spawn_key": ":".join(map(str, seed.spawn_key))},
        )

    jobs = list(enumerate(seeds))
    if parallel <= 1:
        return [one(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, jobs))


def _resample(trace: Demonstration, physical_dim: int, points: int) -> np.ndarray:
    states = trace.physical(physical_dim)
    if len(trace) == 0:
        return np.zeros((points, physical_dim))
    if len(trace) == 1:
        return np.repeat(states, points, axis=0)
    source = np.linspace(0.0, 1.0, len(trace))
    target = np.linspace(0.0, 1.0, points)
    return np.column_stack([np.interp(target, source, states[:, c]) for c in range(physical_dim)])


def trajectory_distance(
    a: Demonstration, b: Demonstration, physical_dim: int, points: int = RESAMPLE_POINTS
) -> float:
    """RMS distance between two runs after resampling both onto normalized time."""

    diff = _resample(a, physical_dim, points) - _resample(b, physical_dim, points)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
