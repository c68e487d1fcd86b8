"""The composite learning loop.

Criteria and policies are learned from the labeled demonstrations; the robot
then practices. Failed trials decay the firing probability of problematic
transitions and, once a probability drops below the net's floor, move that
transition's firing condition toward the states at which successful runs
fired it. Successful trials re-weight the demonstrations by how closely the
robot could follow them, join the policy corpus, and trigger a refit.

Typical usage::

    report = composite_learning_loop(config, demos, net, task)
    Path("report.json").write_text(report.to_json())
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from composite_learning.apn import (
    AdaptivePetriNet,
    decay_firing_probability,
    serialize_skill_definition,
    set_firing_probability,
    update_condition,
)
from composite_learning.conditioning import ConditioningStats
from composite_learning.config import LoopConfig
from composite_learning.evaluation import (
    LabeledDemonstration,
    TrialEvaluation,
    demo_weights,
    learn_criteria,
    score_trial,
)
from composite_learning.sim.base import Task
from composite_learning.sim.demonstration import Demonstration
from composite_learning.sim.trial import (
    PolicySettings,
    fit_policies,
    run_trial,
    trajectory_distance,
    trial_seeds,
)


logger = logging.getLogger(__name__)

LEARNED = "learned"
BUDGET_EXHAUSTED = "budget_exhausted"


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _rate(flags: Sequence[bool]) -> float:
    return float(np.mean(flags)) if flags else 0.0


@dataclass
class LearnReport:
    trials: int
    termination: str
    evaluations: List[Dict[str, Any]]
    success_rate_first_w: float
    success_rate_last_w: float
    true_success_rate_first_w: float
    true_success_rate_last_w: float
    initial_net: str
    final_net: str
    model_sizes: Dict[str, Dict[str, Any]]
    demo_weights: Dict[str, float]
    events: List[Dict[str, Any]] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "trials": self.trials,
            "termination": self.termination,
            "evaluations": self.evaluations,
            "success_rate_first_W": self.success_rate_first_w,
            "success_rate_last_W": self.success_rate_last_w,
            "true_success_rate_first_W": self.true_success_rate_first_w,
            "true_success_rate_last_W": self.true_success_rate_last_w,
            "initial_net": self.initial_net,
            "final_net": self.final_net,
            "model_sizes": self.model_sizes,
            "demo_weights": self.demo_weights,
            "events": self.events,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def policy_settings(config: LoopConfig) -> PolicySettings:
    return PolicySettings(
        sample_stride=config.sample_stride,
        max_candidates=config.max_candidates,
        max_subset=config.max_subset,
        cond_ceiling=config.cond_ceiling,
        jitter=config.policy_jitter,
    )


def apply_overrides(net: AdaptivePetriNet, config: LoopConfig) -> AdaptivePetriNet:
    changes = {}
    if config.kappa is not None:
        changes["kappa"] = config.kappa
    if config.lambda_floor is not None:
        changes["lambda_floor"] = config.lambda_floor
    return replace(net, **changes) if changes else net


def _stats_dict(stats: ConditioningStats) -> Dict[str, Any]:
    return {
        "n": stats.n,
        "m": stats.m,
        "cond_full": _finite_or_none(stats.cond_full),
        "cond_selected": _finite_or_none(stats.cond_selected),
    }


def _affinities(trial: Demonstration, demos: Sequence[LabeledDemonstration], physical_dim: int) -> np.ndarray:
    """Closeness of each demonstration to the trial, in (0, 1]."""

    distances = np.array([trajectory_distance(trial, d.trace, physical_dim) for d in demos])
    scale = float(np.median(distances))
    if scale <= 0.0:
        return np.ones(len(demos))
    return np.exp(-distances / scale)


def _normalized(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    return weights / total if total > 0 else weights


def _common_transitions(demos: Sequence[LabeledDemonstration]) -> List[str]:
    successful = [set(d.trace.fired_transitions()) for d in demos if d.success]
    return sorted(set.intersection(*successful)) if successful else []


def adapt_transition(
    net: AdaptivePetriNet,
    tid: str,
    runs: Sequence[Tuple[Demonstration, float]],
    trial: int,
    events: List[Dict[str, Any]],
) -> AdaptivePetriNet:
    """Decay one transition; below the floor, update its condition or reset it."""

    index = net.transition_index(tid)
    net, reset = decay_firing_probability(net, index)
    transition = net.transition(index)
    events.append(
        {"trial": trial, "transition": tid, "event": "decay", "lambda": transition.firing_probability}
    )
    if not reset:
        return net
    samples = [(trace.firing_state(tid), score) for trace, score in runs if score > 0]
    samples = [(state, score) for state, score in samples if state is not None]
    if transition.condition is None or not samples:
        logger.warning(
            "Cannot update the condition of %s (%s); resetting its firing probability",
            tid,
            "no condition" if transition.condition is None else "no recorded firing states",
        )
        net = set_firing_probability(net, index, transition.initial_probability)
        events.append(
            {"trial": trial, "transition": tid, "event": "reset", "lambda": transition.initial_probability}
        )
        return net
    net = update_condition(net, index, [s for _, s in samples], [x for x, _ in samples])
    updated = net.transition(index)
    events.append(
        {
            "trial": trial,
            "transition": tid,
            "event": "condition_update",
            "threshold": updated.condition.threshold,
            "lambda": updated.firing_probability,
        }
    )
    return net


def _evaluation_record(trial: int, trace: Demonstration, evaluation: TrialEvaluation) -> Dict[str, Any]:
    record = {"trial": trial, "trial_id": trace.demo_id}
    record.update(evaluation.as_dict())
    record["true_success"] = trace.success
    record["terminal"] = trace.terminal
    record["duration"] = len(trace) * trace.tick
    return record


def composite_learning_loop(
    config: LoopConfig,
    demos: Sequence[LabeledDemonstration],
    net: AdaptivePetriNet,
    task: Task,
) -> LearnReport:
    """Learn a skill from labeled demonstrations by practice.

    Stops as ``learned`` once the self-evaluated success rate over the last
    ``window`` trials reaches ``success_target``, otherwise after
    ``trial_budget`` trials as ``budget_exhausted``. The run is a pure
    function of its arguments.

    Raises:
        EvaluationError: If the demonstrations cannot train criteria or weights.
    """

    net = apply_overrides(net, config)
    initial_net = serialize_skill_definition(net)
    criteria = learn_criteria(demos, net, config.problem_threshold)
    weights = demo_weights(demos).astype(float)
    settings = policy_settings(config)
    admitted: List[Tuple[Demonstration, float]] = []
    runs: List[Tuple[Demonstration, float]] = [(d.trace, d.overall_score) for d in demos if d.success]
    expected = _common_transitions(demos)
    physical_dim = task.physical_dim

    def refit():
        corpus = [(d.trace, float(w)) for d, w in zip(demos, weights)] + admitted
        return fit_policies(net, corpus, physical_dim, task.control_dim, settings)

    policies, stats = refit()
    seeds = trial_seeds(config.seed, config.trial_budget)
    evaluations: List[Dict[str, Any]] = []
    verdicts: List[bool] = []
    truths: List[bool] = []
    events: List[Dict[str, Any]] = []
    termination = BUDGET_EXHAUSTED

    for j in range(config.trial_budget):
        trace = run_trial(
            net,
            policies,
            task,
            np.random.default_rng(seeds[j]),
            config.time_budget,
            trial_id=f"trial-{j:03d}",
        )
        evaluation = score_trial(criteria, trace, net)
        evaluations.append(_evaluation_record(j, trace, evaluation))
        verdicts.append(evaluation.success)
        truths.append(trace.success)
        affinity = _affinities(trace, demos, physical_dim)
        s = evaluation.overall
        if evaluation.success:
            weights = _normalized(weights * (1.0 + config.reweight_rate * s * affinity))
            if s > 0:
                admitted.append((trace, s * float(weights.max())))
                runs.append((trace, s))
            policies, stats = refit()
        else:
            fired = set(trace.fired_transitions())
            missing = {tid for tid in expected if tid not in fired}
            targets = [
                t.id for t in net.transitions if t.id in missing or t.id in evaluation.problematic
            ]
            for tid in targets:
                net = adapt_transition(net, tid, runs, j, events)
            weights = _normalized(weights * (1.0 - config.reweight_rate * affinity * (1.0 - s)))
        logger.info(
            "Trial %d: %s (score %.3f, ground truth %s)",
            j,
            evaluation.verdict,
            s,
            "success" if trace.success else "failure",
        )
        if len(verdicts) >= config.window and _rate(verdicts[-config.window :]) >= config.success_target:
            termination = LEARNED
            break

    window = config.window
    logger.info("Learning loop finished after %d trials: %s", len(verdicts), termination)
    return LearnReport(
        trials=len(verdicts),
        termination=termination,
        evaluations=evaluations,
        success_rate_first_w=_rate(verdicts[:window]),
        success_rate_last_w=_rate(verdicts[-window:]),
        true_success_rate_first_w=_rate(truths[:window]),
        true_success_rate_last_w=_rate(truths[-window:]),
        initial_net=initial_net,
        final_net=serialize_skill_definition(net),
        model_sizes={tid: _stats_dict(s) for tid, s in stats.items()},
        demo_weights={d.trace.demo_id: float(w) for d, w in zip(demos, weights)},
        events=events,
        config=config.as_dict(),
    )


def render_report(document: Dict[str, Any]) -> str:
    """Plain-text summary of a report's JSON document."""

    lines = [
        f"termination: {document.get('termination', '?')}",
        f"trials: {document.get('trials', 0)}",
        f"success rate (first W): {document.get('success_rate_first_W', 0.0):.2f}",
        f"success rate (last W): {document.get('success_rate_last_W', 0.0):.2f}",
    ]
    evaluations = document.get("evaluations", [])
    if evaluations:
        lines.append("trials:")
        for record in evaluations:
            lines.append(
                f"  {record.get('trial_id', record.get('trial'))}: {record.get('verdict')} "
                f"overall={record.get('overall', 0.0):.3f} "
                f"problematic={','.join(record.get('problematic', [])) or '-'}"
            )
    sizes = document.get("model_sizes", {})
    if sizes:
        lines.append("policies:")
        for tid in sorted(sizes):
            lines.append(f"  {tid}: n={sizes[tid].get('n')} m={sizes[tid].get('m')}")
    weights = document.get("demo_weights", {})
    if weights:
        lines.append("demonstration weights:")
        for demo_id in sorted(weights):
            lines.append(f"  {demo_id}: {weights[demo_id]:.4f}")
    return "\n".join(lines) + "\n"
