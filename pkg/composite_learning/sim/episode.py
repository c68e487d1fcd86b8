"""The 1 kHz tick loop shared by demonstrations and robot trials."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from composite_learning.apn import (
    AdaptivePetriNet,
    enabled_decisions,
    sample_firing_vector,
    step_marking,
    terminal_places,
)
from composite_learning.sensing import StreamingCapture
from composite_learning.sim.base import Task
from composite_learning.sim.demonstration import IDLE, Demonstration, encode_firings


logger = logging.getLogger(__name__)

# (tick index, true state, sensed vector, place holding the token, active transition) -> control
Controller = Callable[[int, Any, np.ndarray, str, str], np.ndarray]


def stop_transitions(net: AdaptivePetriNet) -> List[str]:
    """Transitions that deposit a token in a terminal place."""

    terminals = set(terminal_places(net))
    return [
        t.id for t in net.transitions if terminals.intersection(net.output_places(t.index))
    ]


def policy_transitions(net: AdaptivePetriNet) -> List[str]:
    stops = set(stop_transitions(net))
    return [t.id for t in net.transitions if t.id not in stops]


def _holding_place(net: AdaptivePetriNet, tokens: np.ndarray) -> str:
    marked = np.flatnonzero(tokens > 0)
    return net.places[int(marked[-1])].id if marked.size else ""


@dataclass
class Episode:
    trace: Demonstration
    final_state: Any
    terminal: str


def run_episode(
    net: AdaptivePetriNet,
    task: Task,
    controller: Controller,
    rng: np.random.Generator,
    time_budget: float,
    demo_id: str = "episode",
    capture: Optional[StreamingCapture] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Episode:
    """Drive ``task`` under ``controller`` while the net sequences transitions.

    Each tick: sense, evaluate decisions, sample and apply firings, run firing
    hooks, stop if a terminal place is marked, otherwise record and step.
    Sensed states come from ``capture`` when given, else from the task's own
    sensors. The run ends without a terminal place when the budget runs out.
    """

    tick = task.tick
    budget_ticks = int(round(time_budget / tick))
    terminals = terminal_places(net)
    policies = set(policy_transitions(net))
    state = task.initial_state(rng)
    marking = net.initial_marking
    active = IDLE
    last_fired: Dict[str, int] = {}
    times: List[float] = []
    sensed_log: List[np.ndarray] = []
    controls: List[np.ndarray] = []
    annotations: List[str] = []
    terminal = ""

    for k in range(budget_ticks):
        elapsed = k * tick
        if capture is not None:
            estimates = capture.observe(task.captured_positions(state))
            sensed = task.sense_captured(state, estimates, elapsed)
        else:
            sensed = task.sense(state, elapsed)

        firing = sample_firing_vector(enabled_decisions(net, marking, sensed), net.lambdas, rng)
        result = step_marking(marking, net, firing)
        marking = result.marking
        for index in result.fired_indices:
            tid = net.transitions[index].id
            last_fired[tid] = k
            state = task.on_fired(state, tid)
            if tid in policies:
                active = tid

        tokens = marking.array()
        reached = [net.places[p].id for p in terminals if tokens[p] > 0]
        if reached:
            terminal = reached[0]
            break

        control = np.asarray(
            controller(k, state, sensed, _holding_place(net, tokens), active), dtype=float
        ).reshape(-1)
        times.append(elapsed)
        sensed_log.append(np.asarray(sensed, dtype=float))
        controls.append(control)
        annotations.append(active)
        state = task.step(state, control)

    elapsed = len(times) * tick
    outcome = task.ground_truth(state, terminal, elapsed, time_budget)
    info = {str(k): str(v) for k, v in (metadata or {}).items()}
    info.update(
        {
            "terminal": terminal,
            "success": "true" if outcome["success"] else "false",
            "score": repr(float(outcome["score"])),
            "last_fired": encode_firings(last_fired),
            "time_budget": repr(float(time_budget)),
        }
    )
    info.update(task.describe())
    logger.debug(
        "Episode %s ended after %d ticks at %s", demo_id, len(times), terminal or "budget"
    )
    return Episode(
        trace=Demonstration(
            demo_id=demo_id,
            tick=tick,
            times=np.array(times),
            states=np.array(sensed_log).reshape(len(times), task.sensed_dim),
            controls=np.array(controls).reshape(len(times), task.control_dim),
            transitions=annotations,
            metadata=info,
        ),
        final_state=state,
        terminal=terminal,
    )
