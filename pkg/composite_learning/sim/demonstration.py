"""Recorded traces and their CSV log format.

A log starts with ``# key=value`` metadata lines, followed by the header
``t,x0..x{d-1},u0..u{c-1},transition`` and one row per control tick. Floats
are written with ``repr`` so a read-back trace is bit-identical.

Typical usage::

    write_demonstration(trace, "demos/demo-000.csv")
    trace = read_demonstration("demos/demo-000.csv")
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from composite_learning.sim.base import SimulationError


logger = logging.getLogger(__name__)

IDLE = "-"


class DemonstrationLogError(SimulationError):
    """Raised when a demonstration log is malformed or inconsistent"""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def encode_firings(last_fired: Dict[str, int]) -> str:
    return ";".join(f"{tid}:{tick}" for tid, tick in sorted(last_fired.items(), key=lambda kv: kv[1]))


def decode_firings(text: str) -> Dict[str, int]:
    fired: Dict[str, int] = {}
    for item in filter(None, text.split(";")):
        tid, _, tick = item.partition(":")
        try:
            fired[tid] = int(tick)
        except ValueError:
            raise DemonstrationLogError(f"bad firing record {item!r}") from None
    return fired


@dataclass(frozen=True, eq=False)
class Demonstration:
    """One recorded run: a demonstration or a robot trial.

    ``states`` holds the full sensed vectors (time channel last) and
    ``transitions`` the active transition id of every record. ``metadata``
    carries the reproducibility header plus ``terminal``, ``success``,
    ``score`` and ``last_fired``.
    """

    demo_id: str
    tick: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    transitions: List[str]
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        n = times.shape[0]
        if states.ndim != 2 or controls.ndim != 2:
            raise DemonstrationLogError("states and controls must be 2-D")
        if states.shape[0] != n or controls.shape[0] != n or len(self.transitions) != n:
            raise DemonstrationLogError(
                f"record count mismatch: {n} times, {states.shape[0]} states, "
                f"{controls.shape[0]} controls, {len(self.transitions)} transitions"
            )
        if not self.tick > 0:
            raise DemonstrationLogError(f"tick must be positive, got {self.tick!r}")
        if n > 1 and not np.allclose(np.diff(times), self.tick, rtol=0.0, atol=1e-9):
            raise DemonstrationLogError("times must advance by exactly one tick per record")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "transitions", list(self.transitions))
        object.__setattr__(self, "metadata", {k: str(v) for k, v in self.metadata.items()})

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def control_dim(self) -> int:
        return self.controls.shape[1]

    @property
    def success(self) -> bool:
        return self.metadata.get("success", "false") == "true"

    @property
    def score(self) -> float:
        return float(self.metadata.get("score", "0.0"))

    @property
    def terminal(self) -> str:
        return self.metadata.get("terminal", "")

    @property
    def last_fired(self) -> Dict[str, int]:
        return decode_firings(self.metadata.get("last_fired", ""))

    def fired_transitions(self) -> List[str]:
        """Transitions that were active for at least one record, in first-active order."""

        seen: List[str] = []
        for tid in self.transitions:
            if tid != IDLE and tid not in seen:
                seen.append(tid)
        return seen

    def segment(self, transition_id: str) -> np.ndarray:
        """Record indices during which ``transition_id`` was active."""

        return np.flatnonzero(np.array(self.transitions, dtype=object) == transition_id)

    def firing_state(self, transition_id: str) -> Optional[np.ndarray]:
        """Sensed state at the last recorded tick ``transition_id`` fired."""

        tick = self.last_fired.get(transition_id)
        if tick is None or tick >= len(self):
            return None
        return self.states[tick]

    def physical(self, physical_dim: int) -> np.ndarray:
        return self.states[:, :physical_dim]


def _rows(trace: Demonstration) -> List[List[str]]:
    return [
        [repr(float(t)), *(repr(float(v)) for v in x), *(repr(float(v)) for v in u), tid]
        for t, x, u, tid in zip(trace.times, trace.states, trace.controls, trace.transitions)
    ]


def format_demonstration(trace: Demonstration) -> str:
    buffer = io.StringIO()
    buffer.write(f"# demo_id={trace.demo_id}\n")
    buffer.write(f"# tick={trace.tick!r}\n")
    for key in sorted(trace.metadata):
        buffer.write(f"# {key}={trace.metadata[key]}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    header = (
        ["t"]
        + [f"x{i}" for i in range(trace.state_dim)]
        + [f"u{i}" for i in range(trace.control_dim)]
        + ["transition"]
    )
    writer.writerow(header)
    writer.writerows(_rows(trace))
    return buffer.getvalue()


def write_demonstration(trace: Demonstration, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_demonstration(trace))
    logger.debug("Wrote %s (%d records)", path, len(trace))
    return path


def _dimensions(header: Sequence[str], line: int) -> tuple:
    if not header or header[0] != "t" or header[-1] != "transition":
        raise DemonstrationLogError("header must start with 't' and end with 'transition'", line)
    xs = [name for name in header[1:-1] if name.startswith("x")]
    us = [name for name in header[1:-1] if name.startswith("u")]
    if header[1:-1] != xs + us or xs != [f"x{i}" for i in range(len(xs))] or us != [
        f"u{i}" for i in range(len(us))
    ]:
        raise DemonstrationLogError("header columns must be x0..x{d-1} then u0..u{c-1}", line)
    return len(xs), len(us)


def parse_demonstration(text: str) -> Demonstration:
    metadata: Dict[str, str] = {}
    lines = text.splitlines()
    body_start = 0
    for number, raw in enumerate(lines, start=1):
        if not raw.startswith("#"):
            body_start = number - 1
            break
        key, sep, value = raw[1:].strip().partition("=")
        if not sep:
            raise DemonstrationLogError(f"metadata line without '=': {raw!r}", number)
        metadata[key.strip()] = value.strip()
    else:
        raise DemonstrationLogError("log has no header row")

    demo_id = metadata.pop("demo_id", "")
    try:
        tick = float(metadata.pop("tick"))
    except (KeyError, ValueError):
        raise DemonstrationLogError("missing or invalid tick metadata") from None

    reader = csv.reader(lines[body_start:])
    header_line = body_start + 1
    d, c = _dimensions(next(reader, []), header_line)
    times: List[float] = []
    states: List[List[float]] = []
    controls: List[List[float]] = []
    transitions: List[str] = []
    for offset, row in enumerate(reader, start=1):
        line = header_line + offset
        if len(row) != d + c + 2:
            raise DemonstrationLogError(f"expected {d + c + 2} fields, got {len(row)}", line)
        try:
            values = [float(v) for v in row[:-1]]
        except ValueError:
            raise DemonstrationLogError("non-numeric field", line) from None
        times.append(values[0])
        states.append(values[1 : 1 + d])
        controls.append(values[1 + d :])
        transitions.append(row[-1])
    return Demonstration(
        demo_id=demo_id,
        tick=tick,
        times=np.array(times),
        states=np.array(states).reshape(len(times), d),
        controls=np.array(controls).reshape(len(times), c),
        transitions=transitions,
        metadata=metadata,
    )


def read_demonstration(path: Union[str, Path]) -> Demonstration:
    return parse_demonstration(Path(path).read_text())
