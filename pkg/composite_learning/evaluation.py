"""Learning from evaluation.

Scoring criteria are learned from labeled demonstrations and used by the
robot to grade its own trials, overall and per transition. Low-scoring
transitions are reported as problematic; demonstration labels also decide
how much each demonstration contributes to policy regression.

Typical usage::

    criteria = learn_criteria(labeled_demos, net)
    evaluation = score_trial(criteria, trial_trace, net)
    if not evaluation.success:
        spots = locate_problematic(evaluation)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from composite_learning.apn import AdaptivePetriNet
from composite_learning.errors import CompositeLearningError
from composite_learning.gpr import GprModel, Hyperparams, TrainingSet, default_hyperparams, fit
from composite_learning.sim.demonstration import Demonstration


logger = logging.getLogger(__name__)

FEATURE_COUNT = 5
DEFAULT_PROBLEM_THRESHOLD = 0.4
FALLBACK_THRESHOLD = 0.5
SCORING_JITTER = 1e-4
CRITERIA_VERSION = 1


class EvaluationError(CompositeLearningError):
    """Raised when criteria cannot be learned or applied"""

    pass


class LabelFileError(EvaluationError):
    """Raised for a malformed label file; carries the 1-based line number"""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class DemoLabel:
    success: bool
    overall_score: float
    per_transition_scores: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        scores = [self.overall_score, *self.per_transition_scores.values()]
        if not all(0.0 <= s <= 1.0 for s in scores):
            raise EvaluationError("scores must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class LabeledDemonstration:
    trace: Demonstration
    success: bool
    overall_score: float
    per_transition_scores: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        label = self.label
        unknown = set(label.per_transition_scores) - set(self.trace.fired_transitions())
        if unknown:
            raise EvaluationError(
                f"{self.trace.demo_id}: scores for transitions that never fired: {sorted(unknown)}"
            )

    @property
    def label(self) -> DemoLabel:
        return DemoLabel(self.success, self.overall_score, dict(self.per_transition_scores))

    @classmethod
    def attach(cls, trace: Demonstration, label: DemoLabel) -> "LabeledDemonstration":
        return cls(trace, label.success, label.overall_score, dict(label.per_transition_scores))


@dataclass(frozen=True)
class TrialEvaluation:
    overall: float
    per_transition: Dict[str, float]
    success: bool
    problematic: List[str]
    threshold: float
    problem_threshold: float = DEFAULT_PROBLEM_THRESHOLD

    @property
    def verdict(self) -> str:
        return "success" if self.success else "failure"

    def as_dict(self) -> Dict[str, Any]:
        return {
            "overall": self.overall,
            "per_transition": dict(self.per_transition),
            "verdict": self.verdict,
            "problematic": list(self.problematic),
        }


# --------------------------------------------------------------------------
# Features
# --------------------------------------------------------------------------


def _segment_features(trace: Demonstration, net: AdaptivePetriNet, tid: str) -> np.ndarray:
    rows = trace.segment(tid)
    end = trace.states[rows[-1]]
    magnitudes = np.linalg.norm(trace.controls[rows], axis=1)
    condition = net.transition(net.transition_index(tid)).condition
    if condition is None:
        reading, deviation = float(np.linalg.norm(end[:-1])), 0.0
    else:
        reading = condition.reading(end)
        deviation = abs(reading - condition.threshold)
    return np.array(
        [
            rows.size * trace.tick,
            reading,
            float(magnitudes.max()),
            float(magnitudes.sum() * trace.tick),
            deviation,
        ]
    )


def extract_features(trace: Demonstration, net: AdaptivePetriNet) -> Dict[str, np.ndarray]:
    """Five-entry feature vector per fired transition.

    Entries: time active, terminal reading of the transition's condition
    (state norm for unconditioned transitions), peak control magnitude,
    integrated control magnitude, distance of the terminal reading from the
    condition's threshold.

    Raises:
        EvaluationError: If no transition was ever active in ``trace``.
    """

    fired = trace.fired_transitions()
    if not fired:
        raise EvaluationError(f"{trace.demo_id}: no transition fired")
    return {tid: _segment_features(trace, net, tid) for tid in fired}


def overall_features(trace: Demonstration) -> np.ndarray:
    if len(trace) == 0:
        return np.zeros(FEATURE_COUNT)
    magnitudes = np.linalg.norm(trace.controls, axis=1)
    return np.array(
        [
            len(trace) * trace.tick,
            float(np.linalg.norm(trace.states[-1][:-1])),
            float(magnitudes.max()),
            float(magnitudes.sum() * trace.tick),
            float(len(trace.fired_transitions())),
        ]
    )


# --------------------------------------------------------------------------
# Criteria
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureRow:
    """Features and labels of one training demonstration."""

    overall_features: np.ndarray
    transition_features: Dict[str, np.ndarray]
    label: DemoLabel


@dataclass(frozen=True, eq=False)
class ScoreRegressor:
    model: GprModel
    center: np.ndarray
    scale: np.ndarray

    def predict(self, features: np.ndarray) -> float:
        raw = float(self.model.predict((np.asarray(features) - self.center) / self.scale)[0])
        return float(np.clip(raw, 0.0, 1.0))


def _fit_regressor(features: np.ndarray, scores: np.ndarray) -> ScoreRegressor:
    center = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale == 0.0] = 1.0
    standardized = (features - center) / scale
    training = TrainingSet(standardized, scores)
    theta = Hyperparams(1.0, default_hyperparams(training).length)
    return ScoreRegressor(fit(training, theta, jitter=SCORING_JITTER), center, scale)


@dataclass(frozen=True, eq=False)
class ScoringCriteria:
    transition_ids: List[str]
    state_dim: int
    threshold: float
    problem_threshold: float
    overall: ScoreRegressor
    per_transition: Dict[str, ScoreRegressor]
    rows: List[FeatureRow]


def _feature_row(demo: LabeledDemonstration, net: AdaptivePetriNet) -> FeatureRow:
    return FeatureRow(overall_features(demo.trace), extract_features(demo.trace, net), demo.label)


def _calibrate(predicted: np.ndarray, flags: np.ndarray) -> float:
    if flags.all() or not flags.any():
        logger.warning(
            "All labeled demonstrations share one outcome; success threshold falls back to %.2f",
            FALLBACK_THRESHOLD,
        )
        return FALLBACK_THRESHOLD
    lowest_success = predicted[flags].min()
    highest_failure = predicted[~flags].max()
    if lowest_success <= highest_failure:
        logger.warning(
            "Predicted scores of successes and failures overlap (%.3f <= %.3f)",
            lowest_success,
            highest_failure,
        )
    return float(np.clip(0.5 * (lowest_success + highest_failure), 1e-6, 1.0 - 1e-6))


def _fit_criteria(
    rows: List[FeatureRow],
    transition_ids: List[str],
    state_dim: int,
    problem_threshold: float,
) -> ScoringCriteria:
    if len(rows) < 2:
        raise EvaluationError(f"learning criteria needs at least 2 labeled demonstrations, got {len(rows)}")
    overall = _fit_regressor(
        np.array([row.overall_features for row in rows]),
        np.array([row.label.overall_score for row in rows]),
    )
    per_transition: Dict[str, ScoreRegressor] = {}
    for tid in transition_ids:
        scored = [
            (row.transition_features[tid], row.label.per_transition_scores[tid])
            for row in rows
            if tid in row.transition_features and tid in row.label.per_transition_scores
        ]
        if not scored:
            continue
        per_transition[tid] = _fit_regressor(
            np.array([f for f, _ in scored]), np.array([s for _, s in scored])
        )
    predicted = np.array([overall.predict(row.overall_features) for row in rows])
    threshold = _calibrate(predicted, np.array([row.label.success for row in rows]))
    logger.info(
        "Learned scoring criteria from %d demonstrations (%d transition regressors, threshold %.3f)",
        len(rows),
        len(per_transition),
        threshold,
    )
    return ScoringCriteria(
        transition_ids=list(transition_ids),
        state_dim=state_dim,
        threshold=threshold,
        problem_threshold=problem_threshold,
        overall=overall,
        per_transition=per_transition,
        rows=list(rows),
    )


def learn_criteria(
    demos: Sequence[LabeledDemonstration],
    net: AdaptivePetriNet,
    problem_threshold: float = DEFAULT_PROBLEM_THRESHOLD,
) -> ScoringCriteria:
    """Fit overall and per-transition score regressors on labeled demonstrations.

    Features are standardized and regressed with fixed unit-scale kernel
    hyperparameters. The success threshold sits midway between the lowest
    predicted successful score and the highest predicted failed score.

    Raises:
        EvaluationError: If fewer than two demonstrations are given or a
            demonstration has no fired transition.
    """

    if len(demos) < 2:
        raise EvaluationError(f"learning criteria needs at least 2 labeled demonstrations, got {len(demos)}")
    dims = {demo.trace.state_dim for demo in demos}
    if len(dims) != 1:
        raise EvaluationError(f"demonstrations disagree on state dimension: {sorted(dims)}")
    rows = [_feature_row(demo, net) for demo in demos]
    return _fit_criteria(rows, [t.id for t in net.transitions], dims.pop(), problem_threshold)


def refine_criteria(
    criteria: ScoringCriteria,
    extra: Sequence[LabeledDemonstration],
    net: AdaptivePetriNet,
) -> ScoringCriteria:
    """Refit with additional human-labeled demonstrations appended."""

    _check_compatible(criteria, net, None)
    rows = criteria.rows + [_feature_row(demo, net) for demo in extra]
    return _fit_criteria(rows, criteria.transition_ids, criteria.state_dim, criteria.problem_threshold)


def _check_compatible(criteria: ScoringCriteria, net: AdaptivePetriNet, trace: Optional[Demonstration]) -> None:
    ids = [t.id for t in net.transitions]
    if ids != criteria.transition_ids:
        raise EvaluationError(
            f"criteria were learned for transitions {criteria.transition_ids}, net has {ids}"
        )
    if trace is not None and len(trace) and trace.state_dim != criteria.state_dim:
        raise EvaluationError(
            f"trace has state dimension {trace.state_dim}, criteria expect {criteria.state_dim}"
        )


def locate_problematic(evaluation: TrialEvaluation, problem_threshold: Optional[float] = None) -> List[str]:
    """Transitions scored below the problem threshold, in net order."""

    limit = evaluation.problem_threshold if problem_threshold is None else problem_threshold
    return [tid for tid, score in evaluation.per_transition.items() if score < limit]


def score_trial(criteria: ScoringCriteria, trace: Demonstration, net: AdaptivePetriNet) -> TrialEvaluation:
    """Self-evaluate a trial with learned criteria.

    A trace in which nothing fired scores zero with no per-transition scores.

    Raises:
        EvaluationError: If criteria and net or trace disagree on dimensions.
    """

    _check_compatible(criteria, net, trace)
    fired = set(trace.fired_transitions())
    if not fired:
        return TrialEvaluation(0.0, {}, False, [], criteria.threshold, criteria.problem_threshold)
    features = extract_features(trace, net)
    overall = criteria.overall.predict(overall_features(trace))
    per_transition: Dict[str, float] = {}
    for tid in criteria.transition_ids:
        if tid not in fired:
            continue
        regressor = criteria.per_transition.get(tid)
        if regressor is None:
            logger.debug("No demonstration scored %s; using the overall score", tid)
            per_transition[tid] = overall
        else:
            per_transition[tid] = regressor.predict(features[tid])
    evaluation = TrialEvaluation(
        overall=overall,
        per_transition=per_transition,
        success=overall >= criteria.threshold,
        problematic=[],
        threshold=criteria.threshold,
        problem_threshold=criteria.problem_threshold,
    )
    return replace(evaluation, problematic=locate_problematic(evaluation))


def demo_weights(demos: Sequence[LabeledDemonstration]) -> np.ndarray:
    """Regression weights: zero for failures, proportional to score for successes.

    Raises:
        EvaluationError: If no demonstration succeeded with a positive score.
    """

    if not demos:
        raise EvaluationError("no demonstrations to weight")
    scores = np.array([d.overall_score if d.success else 0.0 for d in demos])
    total = scores.sum()
    if total <= 0.0:
        raise EvaluationError("no successful demonstration with a positive score")
    return scores / total


# --------------------------------------------------------------------------
# Label files and persistence
# --------------------------------------------------------------------------


def format_label(demo_id: str, label: DemoLabel) -> str:
    parts = [demo_id, "1" if label.success else "0", repr(float(label.overall_score))]
    parts += [f"{tid}:{float(score)!r}" for tid, score in label.per_transition_scores.items()]
    return " ".join(parts)


def write_labels(demos: Iterable[LabeledDemonstration], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(format_label(d.trace.demo_id, d.label) + "\n" for d in demos))
    return path


def parse_labels(text: str) -> Dict[str, DemoLabel]:
    labels: Dict[str, DemoLabel] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 3:
            raise LabelFileError("expected 'demo_id success overall_score [tid:score ...]'", number)
        demo_id, flag, overall = tokens[:3]
        if flag not in ("0", "1"):
            raise LabelFileError(f"success flag must be 0 or 1, got {flag!r}", number)
        if demo_id in labels:
            raise LabelFileError(f"duplicate label for {demo_id!r}", number)
        scores: Dict[str, float] = {}
        try:
            overall_score = float(overall)
            for token in tokens[3:]:
                tid, sep, value = token.partition(":")
                if not sep or not tid:
                    raise LabelFileError(f"expected tid:score, got {token!r}", number)
                scores[tid] = float(value)
            labels[demo_id] = DemoLabel(flag == "1", overall_score, scores)
        except ValueError:
            raise LabelFileError("non-numeric score", number) from None
        except EvaluationError as exc:
            if isinstance(exc, LabelFileError):
                raise
            raise LabelFileError(str(exc), number) from exc
    return labels


def read_labels(path: Union[str, Path]) -> Dict[str, DemoLabel]:
    return parse_labels(Path(path).read_text())


def attach_labels(traces: Sequence[Demonstration], labels: Dict[str, DemoLabel]) -> List[LabeledDemonstration]:
    missing = [t.demo_id for t in traces if t.demo_id not in labels]
    if missing:
        raise EvaluationError(f"no label for demonstrations {missing}")
    return [LabeledDemonstration.attach(t, labels[t.demo_id]) for t in traces]


def _row_to_json(row: FeatureRow) -> Dict[str, Any]:
    return {
        "overall_features": [float(v) for v in row.overall_features],
        "transition_features": {k: [float(v) for v in f] for k, f in row.transition_features.items()},
        "success": row.label.success,
        "overall_score": row.label.overall_score,
        "per_transition_scores": dict(row.label.per_transition_scores),
    }


def save_criteria(
    criteria: ScoringCriteria, path: Union[str, Path], config: Optional[Dict[str, Any]] = None
) -> Path:
    """Persist the training rows; ``load_criteria`` refits from them.

    ``config`` is the producing run configuration; it is stored as-is and
    ignored on load.
    """

    document = {
        "config": dict(config or {}),
        "version": CRITERIA_VERSION,
        "transition_ids": criteria.transition_ids,
        "state_dim": criteria.state_dim,
        "problem_threshold": criteria.problem_threshold,
        "threshold": criteria.threshold,
        "rows": [_row_to_json(row) for row in criteria.rows],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def load_criteria(path: Union[str, Path]) -> ScoringCriteria:
    try:
        document = json.loads(Path(path).read_text())
        if document.get("version") != CRITERIA_VERSION:
            raise EvaluationError(f"{path}: unsupported criteria version {document.get('version')!r}")
        rows = [
            FeatureRow(
                np.array(item["overall_features"], dtype=float),
                {k: np.array(v, dtype=float) for k, v in item["transition_features"].items()},
                DemoLabel(bool(item["success"]), float(item["overall_score"]), dict(item["per_transition_scores"])),
            )
            for item in document["rows"]
        ]
        return _fit_criteria(
            rows,
            list(document["transition_ids"]),
            int(document["state_dim"]),
            float(document["problem_threshold"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise EvaluationError(f"{path}: malformed criteria file ({exc})") from exc
