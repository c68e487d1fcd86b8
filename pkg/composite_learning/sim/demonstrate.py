"""Scripted demonstrations recorded through the motion-capture stand-in."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np

from composite_learning.apn import AdaptivePetriNet
from composite_learning.evaluation import LabeledDemonstration
from composite_learning.sensing import DelayedMeasurementChannel, StreamingCapture
from composite_learning.sim.base import SimulationError, Task
from composite_learning.sim.demonstration import Demonstration
from composite_learning.sim.episode import run_episode
from composite_learning.sim.oracles import BACK_AND_FORTH, CORPORA, JERK_UP, MIXED, make_oracle


logger = logging.getLogger(__name__)

FAILED_TRANSITION_SCORE = 0.0
UNBLAMED_TRANSITION_SCORE = 0.5


@dataclass(frozen=True)
class CaptureConfig:
    frame_rate: float = 30.0
    frame_delay: int = 1
    measurement_noise: float = 0.002

    def channel(self, tick: float) -> DelayedMeasurementChannel:
        return DelayedMeasurementChannel.from_rates(
            tick, self.frame_rate, self.frame_delay, self.measurement_noise
        )


def label_trace(trace: Demonstration) -> LabeledDemonstration:
    """Mentor labels from the ground-truth outcome.

    A successful run scores every fired transition 1. In a failed run the
    transition active at the end is blamed with 0 and the others get 0.5.
    """

    fired = trace.fired_transitions()
    if trace.success:
        scores = {tid: 1.0 for tid in fired}
    else:
        blamed = trace.transitions[-1] if len(trace) else None
        scores = {
            tid: FAILED_TRANSITION_SCORE if tid == blamed else UNBLAMED_TRANSITION_SCORE
            for tid in fired
        }
    return LabeledDemonstration(trace, trace.success, trace.score, scores)


def _seed_sequence(seed: Union[int, np.random.SeedSequence]) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def demonstrate(
    task: Task,
    net: AdaptivePetriNet,
    seed: Union[int, np.random.SeedSequence],
    variant: str = BACK_AND_FORTH,
    noise: float = 0.0,
    capture: Optional[CaptureConfig] = None,
    time_budget: float = 10.0,
    demo_id: str = "demo",
    metadata: Optional[Dict[str, str]] = None,
) -> LabeledDemonstration:
    """Run one scripted demonstration and label it from the ground truth.

    Args:
        task: The robot's task; the oracle may act in a stronger mentor copy.
        net: Skill net sequencing the demonstration.
        seed: Seed or seed sequence; net sampling, capture noise and oracle
            noise draw from independent child streams.
        variant: Oracle variant (``back-and-forth`` or ``jerk-up``).
        noise: Standard deviation of the oracle's held control noise.
        capture: Camera settings; states are reconstructed by the dual-rate filter.
        time_budget: Episode length limit in seconds.
        demo_id: Identifier written to the log and label file.
        metadata: Extra reproducibility entries for the log header.

    Raises:
        OracleDivergence: If the simulated state stops being finite.
    """

    capture = capture or CaptureConfig()
    sequence = _seed_sequence(seed)
    net_stream, capture_stream, oracle_stream = (np.random.default_rng(s) for s in sequence.spawn(3))
    oracle, mentor = make_oracle(task, variant, noise, oracle_stream)
    channel = capture.channel(mentor.tick)
    streaming = StreamingCapture(
        mentor.captured_positions(mentor.initial_state(net_stream)),
        mentor.tick,
        channel,
        capture_stream,
    )
    info = {
        "kind": "demonstration",
        "variant": variant,
        "noise": repr(float(noise)),
        "seed": str(sequence.entropy),
        "spawn_key": ":".join(str(k) for k in sequence.spawn_key),
        "frame_rate": repr(float(capture.frame_rate)),
        "frame_delay": str(capture.frame_delay),
        "measurement_noise": repr(float(capture.measurement_noise)),
    }
    info.update(metadata or {})
    episode = run_episode(
        net, mentor, oracle, net_stream, time_budget, demo_id=demo_id, capture=streaming, metadata=info
    )
    labeled = label_trace(episode.trace)
    logger.info(
        "Demonstration %s (%s, noise %.3g): %s, score %.3f",
        demo_id,
        variant,
        noise,
        "success" if labeled.success else "failure",
        labeled.overall_score,
    )
    return labeled


def corpus_variants(corpus: str, count: int) -> List[str]:
    if corpus not in CORPORA:
        raise SimulationError(f"unknown corpus {corpus!r}; expected one of {CORPORA}")
    if corpus == MIXED:
        return [BACK_AND_FORTH if i % 2 == 0 else JERK_UP for i in range(count)]
    return [corpus] * count


def ramped_noise(noise: float, index: int, count: int, ramp: bool = True) -> float:
    """Noise of demonstration ``index``: rises linearly from 0 to ``noise`` when ramped."""

    if not ramp or count < 2:
        return noise
    return noise * index / (count - 1)


def generate_corpus(
    task: Task,
    net: AdaptivePetriNet,
    count: int,
    seed: int,
    corpus: str = BACK_AND_FORTH,
    noise: float = 0.0,
    noise_ramp: bool = True,
    capture: Optional[CaptureConfig] = None,
    time_budget: float = 10.0,
) -> List[LabeledDemonstration]:
    """A seeded batch of demonstrations, one child seed stream per demonstration."""

    if count < 1:
        raise SimulationError(f"demonstration count must be positive, got {count}")
    variants = corpus_variants(corpus, count)
    streams = np.random.SeedSequence(seed).spawn(count)
    demos = [
        demonstrate(
            task,
            net,
            streams[i],
            variant=variants[i],
            noise=ramped_noise(noise, i, count, noise_ramp),
            capture=capture,
            time_budget=time_budget,
            demo_id=f"demo-{i:03d}",
        )
        for i in range(count)
    ]
    successes = sum(d.success for d in demos)
    logger.info("Generated %d demonstrations (%d successful)", count, successes)
    return demos
