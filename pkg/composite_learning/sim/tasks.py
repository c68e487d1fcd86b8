"""Task registry keyed by the names used in configs and on the command line."""

from __future__ import annotations

from typing import Callable, Dict

from composite_learning.sim.base import SimulationError, Task
from composite_learning.sim.nunchaku import NunchakuTask
from composite_learning.sim.pendulum import PendulumTask


TASKS: Dict[str, Callable[[], Task]] = {
    PendulumTask.name: PendulumTask,
    NunchakuTask.name: NunchakuTask,
}


def make_task(name: str) -> Task:
    try:
        factory = TASKS[name]
    except KeyError:
        raise SimulationError(f"unknown task {name!r}; expected one of {sorted(TASKS)}") from None
    return factory()
