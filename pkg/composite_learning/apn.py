"""Adaptive Petri nets used as skill definitions.

A skill is defined as the 6-tuple ``(P, T, A, M0, Lambda, C)``: places,
transitions, incidence, initial marking, per-transition firing probabilities
and per-transition firing conditions. The learner executes the net
stochastically, decays the probability of transitions that keep causing
failures and rewrites their conditions from recorded firing states.

Typical usage::

    from composite_learning.apn import load_skill, enabled_decisions

    net = load_skill("skills/nunchaku.apn")
    marking = net.initial_marking
    decisions = enabled_decisions(net, marking, sensed_state)

Skill definitions are line-oriented UTF-8 text::

    kappa 0.9
    lambda_floor 0.05
    place P0
    transition t0 lambda=1.0
    arc P0 -> t0
    condition t1 proj=0.0,1.0 op=le thresh=2.5
    marking P0 1
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from composite_learning.errors import CompositeLearningError


logger = logging.getLogger(__name__)

DEFAULT_KAPPA = 0.9
DEFAULT_LAMBDA_FLOOR = 0.05
SKILLS_DIR = Path(__file__).resolve().parent.parent / "skills"


class SkillDefinitionError(CompositeLearningError):
    """Raised when a skill-definition document cannot be parsed"""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NetStructureError(CompositeLearningError):
    """Raised when a net, marking or edit violates the net's invariants"""

    pass


class UnknownTransitionError(NetStructureError):
    """Raised when a transition id or index does not exist in the net"""

    pass


class DimensionMismatchError(CompositeLearningError):
    """Raised when a sensed state does not match the conditions' dimension"""

    pass


class Comparator(str, Enum):
    GE = "ge"
    LE = "le"


@dataclass(frozen=True)
class Place:
    id: str
    index: int


@dataclass(frozen=True)
class FiringCondition:
    """Threshold test ``projection . x (>=|<=) threshold`` over a sensed state."""

    projection: Tuple[float, ...]
    comparator: Comparator
    threshold: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "projection", tuple(float(v) for v in self.projection)
        )
        object.__setattr__(self, "comparator", Comparator(self.comparator))
        object.__setattr__(self, "threshold", float(self.threshold))
        if not self.projection:
            raise NetStructureError("condition projection cannot be empty")
        if not all(np.isfinite(self.projection)) or not np.isfinite(self.threshold):
            raise NetStructureError("condition coefficients must be finite")

    @property
    def dimension(self) -> int:
        return len(self.projection)

    def reading(self, sensed_state: Sequence[float]) -> float:
        return float(np.dot(self.projection, sensed_state))

    def holds(self, sensed_state: Sequence[float]) -> bool:
        value = self.reading(sensed_state)
        if self.comparator is Comparator.GE:
            return value >= self.threshold
        return value <= self.threshold


@dataclass(frozen=True)
class Transition:
    """A transition; ``condition=None`` means the transition is always allowed."""

    id: str
    index: int
    firing_probability: float
    initial_probability: float
    condition: Optional[FiringCondition] = None

    def __post_init__(self) -> None:
        for name in ("firing_probability", "initial_probability"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise NetStructureError(
                    f"{name} of {self.id} must lie in [0, 1], got {value!r}"
                )
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class Marking:
    tokens: Tuple[int, ...]

    def __post_init__(self) -> None:
        tokens = tuple(int(v) for v in self.tokens)
        if any(v < 0 for v in tokens):
            raise NetStructureError(f"marking entries must be >= 0, got {tokens}")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def array(self) -> np.ndarray:
        return np.array(self.tokens, dtype=np.int64)

    def total(self) -> int:
        return sum(self.tokens)


@dataclass(frozen=True)
class FiringVector:
    mu: Tuple[bool, ...]
    decisions: Tuple[bool, ...]
    samples: Tuple[bool, ...]


@dataclass(frozen=True)
class StepResult:
    """Outcome of one application of the state equation."""

    marking: Marking
    applied: Tuple[bool, ...]
    suppressed: Tuple[int, ...]

    @property
    def fired_indices(self) -> List[int]:
        return [i for i, fired in enumerate(self.applied) if fired]


@dataclass(frozen=True, eq=False)
class AdaptivePetriNet:
    """The adaptive net. ``pre``/``post`` hold input/output arcs (|P| x |T|)."""

    places: Tuple[Place, ...]
    transitions: Tuple[Transition, ...]
    pre: np.ndarray
    post: np.ndarray
    initial_marking: Marking
    kappa: float = DEFAULT_KAPPA
    lambda_floor: float = DEFAULT_LAMBDA_FLOOR

    def __post_init__(self) -> None:
        places = tuple(self.places)
        transitions = tuple(self.transitions)
        pre = np.array(self.pre, dtype=np.int64).reshape(len(places), len(transitions))
        post = np.array(self.post, dtype=np.int64).reshape(
            len(places), len(transitions)
        )
        pre.flags.writeable = False
        post.flags.writeable = False
        object.__setattr__(self, "places", places)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "lambda_floor", float(self.lambda_floor))
        self._validate()

    def _validate(self) -> None:
        if not 0.0 < self.kappa < 1.0:
            raise NetStructureError(f"kappa must lie in (0, 1), got {self.kappa!r}")
        if not 0.0 < self.lambda_floor < 1.0:
            raise NetStructureError(
                f"lambda_floor must lie in (0, 1), got {self.lambda_floor!r}"
            )
        ids = [p.id for p in self.places] + [t.id for t in self.transitions]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise NetStructureError(f"duplicate ids: {', '.join(duplicates)}")
        for position, place in enumerate(self.places):
            if place.index != position:
                raise NetStructureError(f"place {place.id} has index {place.index}")
        for position, transition in enumerate(self.transitions):
            if transition.index != position:
                raise NetStructureError(
                    f"transition {transition.id} has index {transition.index}"
                )
        if np.any(self.pre < 0) or np.any(self.post < 0):
            raise NetStructureError("arc weights must be non-negative")
        arcless = [
            t.id for t in self.transitions if not np.any(self.pre[:, t.index] + self.post[:, t.index])
        ]
        if arcless:
            raise NetStructureError(f"transitions without arcs: {', '.join(arcless)}")
        if len(self.initial_marking) != len(self.places):
            raise NetStructureError(
                f"initial marking has {len(self.initial_marking)} entries for "
                f"{len(self.places)} places"
            )
        dims = {t.condition.dimension for t in self.transitions if t.condition}
        if len(dims) > 1:
            raise NetStructureError(f"conditions disagree on dimension: {sorted(dims)}")

    @property
    def incidence(self) -> np.ndarray:
        return self.post - self.pre

    @property
    def sensed_dim(self) -> Optional[int]:
        for transition in self.transitions:
            if transition.condition is not None:
                return transition.condition.dimension
        return None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([t.firing_probability for t in self.transitions])

    def place_index(self, place_id: str) -> int:
        for place in self.places:
            if place.id == place_id:
                return place.index
        raise NetStructureError(f"unknown place {place_id!r}")

    def transition_index(self, transition_id: str) -> int:
        for transition in self.transitions:
            if transition.id == transition_id:
                return transition.index
        raise UnknownTransitionError(f"unknown transition {transition_id!r}")

    def transition(self, index: int) -> Transition:
        if not 0 <= index < len(self.transitions):
            raise UnknownTransitionError(f"no transition with index {index}")
        return self.transitions[index]

    def input_places(self, index: int) -> List[int]:
        return [int(p) for p in np.flatnonzero(self.pre[:, index])]

    def output_places(self, index: int) -> List[int]:
        return [int(p) for p in np.flatnonzero(self.post[:, index])]

    def with_transition(self, transition: Transition) -> "AdaptivePetriNet":
        transitions = list(self.transitions)
        transitions[transition.index] = transition
        return replace(self, transitions=tuple(transitions))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdaptivePetriNet):
            return NotImplemented
        return (
            self.places == other.places
            and self.transitions == other.transitions
            and np.array_equal(self.pre, other.pre)
            and np.array_equal(self.post, other.post)
            and self.initial_marking == other.initial_marking
            and self.kappa == other.kappa
            and self.lambda_floor == other.lambda_floor
        )

    __hash__ = None


# --------------------------------------------------------------------------
# Skill-definition documents
# --------------------------------------------------------------------------


def _parse_float(token: str, what: str, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise SkillDefinitionError(f"invalid {what} {token!r}", line) from None


def _parse_options(tokens: Iterable[str], line: int) -> Dict[str, str]:
    options: Dict[str, str] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise SkillDefinitionError(f"expected key=value, got {token!r}", line)
        options[key] = value
    return options


def parse_skill_definition(text: str) -> AdaptivePetriNet:
    """Parse a skill-definition document into a validated net."""

    place_ids: List[str] = []
    transition_specs: List[Tuple[str, float, float, int]] = []
    arcs: List[Tuple[str, str, int]] = []
    conditions: Dict[str, Tuple[FiringCondition, int]] = {}
    markings: List[Tuple[str, int, int]] = []
    declared: Dict[str, int] = {}
    kappa, kappa_line = DEFAULT_KAPPA, None
    floor, floor_line = DEFAULT_LAMBDA_FLOOR, None

    def declare(identifier: str, line: int) -> None:
        if identifier in declared:
            raise SkillDefinitionError(
                f"duplicate id {identifier!r} (first declared on line {declared[identifier]})",
                line,
            )
        declared[identifier] = line

    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        keyword, *rest = content.split()

        if keyword == "place":
            if len(rest) != 1:
                raise SkillDefinitionError("expected 'place <id>'", number)
            declare(rest[0], number)
            place_ids.append(rest[0])
        elif keyword == "transition":
            if not rest:
                raise SkillDefinitionError("expected 'transition <id> lambda=<float>'", number)
            options = _parse_options(rest[1:], number)
            unknown = set(options) - {"lambda", "initial"}
            if unknown or "lambda" not in options:
                raise SkillDefinitionError(
                    "expected 'transition <id> lambda=<float>'", number
                )
            probability = _parse_float(options["lambda"], "lambda", number)
            initial = _parse_float(options.get("initial", options["lambda"]), "initial", number)
            for value in (probability, initial):
                if not 0.0 <= value <= 1.0:
                    raise SkillDefinitionError(
                        f"lambda {value!r} of {rest[0]!r} outside [0, 1]", number
                    )
            declare(rest[0], number)
            transition_specs.append((rest[0], probability, initial, number))
        elif keyword == "arc":
            if len(rest) != 3 or rest[1] != "->":
                raise SkillDefinitionError("expected 'arc <from> -> <to>'", number)
            arcs.append((rest[0], rest[2], number))
        elif keyword == "condition":
            if not rest:
                raise SkillDefinitionError("expected 'condition <transition> ...'", number)
            options = _parse_options(rest[1:], number)
            if set(options) != {"proj", "op", "thresh"}:
                raise SkillDefinitionError(
                    "condition needs exactly proj=, op= and thresh=", number
                )
            if options["op"] not in ("ge", "le"):
                raise SkillDefinitionError(f"unknown comparator {options['op']!r}", number)
            projection = [
                _parse_float(v, "projection coefficient", number)
                for v in options["proj"].split(",")
            ]
            if rest[0] in conditions:
                raise SkillDefinitionError(f"second condition for {rest[0]!r}", number)
            conditions[rest[0]] = (
                FiringCondition(
                    projection,
                    Comparator(options["op"]),
                    _parse_float(options["thresh"], "threshold", number),
                ),
                number,
            )
        elif keyword == "marking":
            if len(rest) != 2:
                raise SkillDefinitionError("expected 'marking <place> <int>'", number)
            try:
                count = int(rest[1])
            except ValueError:
                raise SkillDefinitionError(f"invalid token count {rest[1]!r}", number) from None
            if count < 0:
                raise SkillDefinitionError("token count must be >= 0", number)
            markings.append((rest[0], count, number))
        elif keyword == "kappa":
            if len(rest) != 1:
                raise SkillDefinitionError("expected 'kappa <float>'", number)
            kappa, kappa_line = _parse_float(rest[0], "kappa", number), number
        elif keyword == "lambda_floor":
            if len(rest) != 1:
                raise SkillDefinitionError("expected 'lambda_floor <float>'", number)
            floor, floor_line = _parse_float(rest[0], "lambda_floor", number), number
        else:
            raise SkillDefinitionError(f"unknown keyword {keyword!r}", number)

    if not markings:
        raise SkillDefinitionError("missing marking line")
    if not 0.0 < kappa < 1.0:
        raise SkillDefinitionError(f"kappa must lie in (0, 1), got {kappa!r}", kappa_line)
    if not 0.0 < floor < 1.0:
        raise SkillDefinitionError(
            f"lambda_floor must lie in (0, 1), got {floor!r}", floor_line
        )

    place_of = {pid: i for i, pid in enumerate(place_ids)}
    transition_of = {spec[0]: i for i, spec in enumerate(transition_specs)}
    pre = np.zeros((len(place_ids), len(transition_specs)), dtype=np.int64)
    post = np.zeros_like(pre)

    for source, target, number in arcs:
        if source in place_of and target in transition_of:
            matrix, row, column = pre, place_of[source], transition_of[target]
        elif source in transition_of and target in place_of:
            matrix, row, column = post, place_of[target], transition_of[source]
        else:
            for name in (source, target):
                if name not in declared:
                    raise SkillDefinitionError(
                        f"arc references undeclared place or transition {name!r}", number
                    )
            raise SkillDefinitionError(
                f"arc must join a place and a transition: {source} -> {target}", number
            )
        if matrix[row, column]:
            raise SkillDefinitionError(f"duplicate arc {source} -> {target}", number)
        matrix[row, column] = 1

    tokens = [0] * len(place_ids)
    for place_id, count, number in markings:
        if place_id not in place_of:
            raise SkillDefinitionError(f"marking of undeclared place {place_id!r}", number)
        tokens[place_of[place_id]] = count

    for transition_id, (_, number) in conditions.items():
        if transition_id not in transition_of:
            raise SkillDefinitionError(
                f"condition for undeclared transition {transition_id!r}", number
            )

    transitions = tuple(
        Transition(
            id=tid,
            index=i,
            firing_probability=probability,
            initial_probability=initial,
            condition=conditions[tid][0] if tid in conditions else None,
        )
        for i, (tid, probability, initial, _) in enumerate(transition_specs)
    )
    try:
        return AdaptivePetriNet(
            places=tuple(Place(pid, i) for i, pid in enumerate(place_ids)),
            transitions=transitions,
            pre=pre,
            post=post,
            initial_marking=Marking(tuple(tokens)),
            kappa=kappa,
            lambda_floor=floor,
        )
    except NetStructureError as exc:
        raise SkillDefinitionError(str(exc)) from exc


def serialize_skill_definition(net: AdaptivePetriNet) -> str:
    """Render ``net`` in the canonical skill-definition form."""

    lines = [f"kappa {net.kappa!r}", f"lambda_floor {net.lambda_floor!r}"]
    lines.extend(f"place {p.id}" for p in net.places)
    for t in net.transitions:
        line = f"transition {t.id} lambda={t.firing_probability!r}"
        if t.initial_probability != t.firing_probability:
            line += f" initial={t.initial_probability!r}"
        lines.append(line)
    for t in net.transitions:
        lines.extend(f"arc {net.places[p].id} -> {t.id}" for p in net.input_places(t.index))
        lines.extend(f"arc {t.id} -> {net.places[p].id}" for p in net.output_places(t.index))
    for t in net.transitions:
        if t.condition is not None:
            c = t.condition
            projection = ",".join(repr(v) for v in c.projection)
            lines.append(
                f"condition {t.id} proj={projection} op={c.comparator.value} "
                f"thresh={c.threshold!r}"
            )
    marked = [(p, n) for p, n in zip(net.places, net.initial_marking.tokens) if n]
    if not marked:
        marked = [(net.places[0], 0)]
    lines.extend(f"marking {p.id} {n}" for p, n in marked)
    return "\n".join(lines) + "\n"


def load_skill(path: Union[str, Path]) -> AdaptivePetriNet:
    path = Path(path)
    logger.debug("Loading skill definition from %s", path)
    return parse_skill_definition(path.read_text(encoding="utf-8"))


def shipped_skill_path(task: str) -> Path:
    return SKILLS_DIR / f"{task}.apn"


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------


def structurally_enabled(net: AdaptivePetriNet, marking: Marking) -> np.ndarray:
    tokens = marking.array()
    if tokens.shape[0] != len(net.places):
        raise NetStructureError(
            f"marking has {tokens.shape[0]} entries for {len(net.places)} places"
        )
    return np.all(tokens[:, None] >= net.pre, axis=0)


def enabled_decisions(
    net: AdaptivePetriNet, marking: Marking, sensed_state: Sequence[float]
) -> List[bool]:
    """Decision values d_i: structurally enabled and condition satisfied."""

    sensed = np.asarray(sensed_state, dtype=float)
    dim = net.sensed_dim
    if dim is not None and sensed.shape != (dim,):
        raise DimensionMismatchError(
            f"sensed state has shape {sensed.shape}, conditions expect ({dim},)"
        )
    enabled = structurally_enabled(net, marking)
    return [
        bool(enabled[t.index]) and (t.condition is None or t.condition.holds(sensed))
        for t in net.transitions
    ]


def sample_firing_vector(
    decisions: Sequence[bool],
    lambdas: Sequence[float],
    rng: np.random.Generator,
) -> FiringVector:
    """Draw p_i ~ Bernoulli(lambda_i) and combine with d_i into mu."""

    if len(decisions) != len(lambdas):
        raise NetStructureError(
            f"{len(decisions)} decisions for {len(lambdas)} firing probabilities"
        )
    probabilities = np.asarray(lambdas, dtype=float)
    if np.any((probabilities < 0.0) | (probabilities > 1.0)):
        raise NetStructureError("firing probabilities must lie in [0, 1]")
    samples = tuple(bool(s) for s in rng.random(len(probabilities)) < probabilities)
    decided = tuple(bool(d) for d in decisions)
    mu = tuple(d and s for d, s in zip(decided, samples))
    return FiringVector(mu=mu, decisions=decided, samples=samples)


def step_marking(
    marking: Marking, net: AdaptivePetriNet, firing: FiringVector
) -> StepResult:
    """Apply ``M' = M + A mu`` with conflicting firings suppressed.

    Sampled firings are applied in ascending transition index; a firing whose
    input places no longer hold the tokens it consumes is suppressed.
    """

    if len(firing.mu) != len(net.transitions):
        raise NetStructureError(
            f"firing vector has {len(firing.mu)} entries for {len(net.transitions)} transitions"
        )
    tokens = marking.array()
    if tokens.shape[0] != len(net.places):
        raise NetStructureError("marking does not match the net's places")
    incidence = net.incidence
    applied = [False] * len(net.transitions)
    suppressed: List[int] = []
    for index, fire in enumerate(firing.mu):
        if not fire:
            continue
        if np.all(tokens >= net.pre[:, index]):
            tokens = tokens + incidence[:, index]
            applied[index] = True
        else:
            suppressed.append(index)
    if suppressed:
        logger.debug(
            "Suppressed conflicting firings: %s",
            ", ".join(net.transitions[i].id for i in suppressed),
        )
    return StepResult(Marking(tuple(tokens)), tuple(applied), tuple(suppressed))


def fire_transition(
    net: AdaptivePetriNet, marking: Marking, transition_id: str
) -> Marking:
    """Fire a single transition deterministically."""

    index = net.transition_index(transition_id)
    if not structurally_enabled(net, marking)[index]:
        raise NetStructureError(f"transition {transition_id!r} is not enabled")
    return Marking(tuple(marking.array() + net.incidence[:, index]))


# --------------------------------------------------------------------------
# Adaptation
# --------------------------------------------------------------------------


def set_firing_probability(
    net: AdaptivePetriNet, transition_index: int, probability: float
) -> AdaptivePetriNet:
    transition = net.transition(transition_index)
    return net.with_transition(replace(transition, firing_probability=probability))


def decay_firing_probability(
    net: AdaptivePetriNet, transition_index: int
) -> Tuple[AdaptivePetriNet, bool]:
    """Scale lambda_i by kappa; report whether it dropped below the floor."""

    transition = net.transition(transition_index)
    decayed = net.kappa * transition.firing_probability
    reset_requested = decayed < net.lambda_floor
    logger.debug(
        "Decayed %s firing probability %.4f -> %.4f%s",
        transition.id,
        transition.firing_probability,
        decayed,
        " (below floor)" if reset_requested else "",
    )
    return (
        net.with_transition(replace(transition, firing_probability=decayed)),
        reset_requested,
    )


def update_condition(
    net: AdaptivePetriNet,
    transition_index: int,
    weights: Sequence[float],
    recorded_states: Sequence[Sequence[float]],
) -> AdaptivePetriNet:
    """Move a threshold to the weighted reference of recorded firing states.

    Weights are normalized to sum to one; the reference state is their convex
    combination and the new threshold is the projection of that reference.
    The firing probability is reset to its initial value.
    """

    transition = net.transition(transition_index)
    if transition.condition is None:
        raise NetStructureError(f"transition {transition.id} has no threshold condition")
    states = np.asarray(recorded_states, dtype=float)
    w = np.asarray(weights, dtype=float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise NetStructureError("update_condition needs at least one recorded state")
    if w.shape != (states.shape[0],):
        raise NetStructureError(
            f"{w.shape[0] if w.ndim else 0} weights for {states.shape[0]} recorded states"
        )
    if np.any(w < 0) or not np.any(w > 0):
        raise NetStructureError("weights must be non-negative and not all zero")
    if states.shape[1] != transition.condition.dimension:
        raise DimensionMismatchError(
            f"recorded states have dimension {states.shape[1]}, condition expects "
            f"{transition.condition.dimension}"
        )
    reference = (w / w.sum()) @ states
    threshold = transition.condition.reading(reference)
    logger.info(
        "Updated condition of %s: threshold %.6g -> %.6g",
        transition.id,
        transition.condition.threshold,
        threshold,
    )
    return net.with_transition(
        replace(
            transition,
            condition=replace(transition.condition, threshold=threshold),
            firing_probability=transition.initial_probability,
        )
    )


# --------------------------------------------------------------------------
# Structural edits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AddPlace:
    id: str
    tokens: int = 0


@dataclass(frozen=True)
class DropPlace:
    id: str


@dataclass(frozen=True)
class AddTransition:
    id: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    probability: float = 1.0
    condition: Optional[FiringCondition] = None


@dataclass(frozen=True)
class DropTransition:
    id: str


StructureEdit = Union[AddPlace, DropPlace, AddTransition, DropTransition]


def terminal_places(net: AdaptivePetriNet) -> List[int]:
    """Places with incoming arcs and no outgoing arcs."""

    return [
        p.index
        for p in net.places
        if not np.any(net.pre[p.index]) and np.any(net.post[p.index])
    ]


def _rebuild(
    net: AdaptivePetriNet,
    place_ids: List[str],
    transitions: List[Transition],
    pre: np.ndarray,
    post: np.ndarray,
    tokens: List[int],
) -> AdaptivePetriNet:
    return AdaptivePetriNet(
        places=tuple(Place(pid, i) for i, pid in enumerate(place_ids)),
        transitions=tuple(replace(t, index=i) for i, t in enumerate(transitions)),
        pre=pre,
        post=post,
        initial_marking=Marking(tuple(tokens)),
        kappa=net.kappa,
        lambda_floor=net.lambda_floor,
    )


def mutate_structure(
    net: AdaptivePetriNet, edit: StructureEdit, marking: Optional[Marking] = None
) -> AdaptivePetriNet:
    """Add or drop a place or transition, resizing P, T, A, Lambda and C.

    ``marking`` is the current marking (defaults to the initial one); dropping
    a place that holds tokens in it is refused, as is any edit that leaves a
    terminal place without incoming arcs.
    """

    current = marking if marking is not None else net.initial_marking
    place_ids = [p.id for p in net.places]
    transitions = list(net.transitions)
    pre, post = net.pre.copy(), net.post.copy()
    tokens = list(net.initial_marking.tokens)
    guarded = [net.places[i].id for i in terminal_places(net)]

    if isinstance(edit, AddPlace):
        if edit.id in place_ids or any(t.id == edit.id for t in transitions):
            raise NetStructureError(f"duplicate id {edit.id!r}")
        place_ids.append(edit.id)
        pre = np.vstack([pre, np.zeros((1, pre.shape[1]), dtype=np.int64)])
        post = np.vstack([post, np.zeros((1, post.shape[1]), dtype=np.int64)])
        tokens.append(edit.tokens)
    elif isinstance(edit, DropPlace):
        index = net.place_index(edit.id)
        if current.tokens[index] > 0:
            raise NetStructureError(f"place {edit.id!r} holds tokens in the current marking")
        if edit.id in guarded:
            raise NetStructureError(f"cannot drop terminal place {edit.id!r}")
        del place_ids[index]
        pre = np.delete(pre, index, axis=0)
        post = np.delete(post, index, axis=0)
        del tokens[index]
    elif isinstance(edit, AddTransition):
        if edit.id in place_ids or any(t.id == edit.id for t in transitions):
            raise NetStructureError(f"duplicate id {edit.id!r}")
        column_pre = np.zeros((pre.shape[0], 1), dtype=np.int64)
        column_post = np.zeros_like(column_pre)
        for names, column in ((edit.inputs, column_pre), (edit.outputs, column_post)):
            for name in names:
                if name not in place_ids:
                    raise NetStructureError(f"arc references unknown place {name!r}")
                column[place_ids.index(name), 0] = 1
        pre = np.hstack([pre, column_pre])
        post = np.hstack([post, column_post])
        transitions.append(
            Transition(
                id=edit.id,
                index=len(transitions),
                firing_probability=edit.probability,
                initial_probability=edit.probability,
                condition=edit.condition,
            )
        )
    elif isinstance(edit, DropTransition):
        index = net.transition_index(edit.id)
        del transitions[index]
        pre = np.delete(pre, index, axis=1)
        post = np.delete(post, index, axis=1)
    else:
        raise NetStructureError(f"unsupported structure edit {edit!r}")

    mutated = _rebuild(net, place_ids, transitions, pre, post, tokens)
    for place_id in guarded:
        if place_id in place_ids and not np.any(mutated.post[place_ids.index(place_id)]):
            raise NetStructureError(f"edit would orphan terminal place {place_id!r}")
    logger.info("Applied structure edit %s", edit)
    return mutated


# --------------------------------------------------------------------------
# Reachability
# --------------------------------------------------------------------------


def reachable_markings(
    net: AdaptivePetriNet, marking: Optional[Marking] = None, limit: int = 100_000
) -> Set[Marking]:
    """Exhaustive marking-graph search, ignoring conditions and probabilities."""

    start = marking if marking is not None else net.initial_marking
    incidence = net.incidence
    seen = {start}
    frontier = deque([start])
    while frontier:
        current = frontier.popleft()
        enabled = structurally_enabled(net, current)
        for index in np.flatnonzero(enabled):
            successor = Marking(tuple(current.array() + incidence[:, index]))
            if successor not in seen:
                if len(seen) >= limit:
                    raise NetStructureError(f"marking graph exceeds {limit} markings")
                seen.add(successor)
                frontier.append(successor)
    return seen


def can_reach(
    net: AdaptivePetriNet, place_id: str, marking: Optional[Marking] = None
) -> bool:
    index = net.place_index(place_id)
    return any(m.tokens[index] > 0 for m in reachable_markings(net, marking))
