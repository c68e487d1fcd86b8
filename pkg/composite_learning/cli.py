"""Command-line entry point.

Subcommands::

    composite-learning demo --task pendulum --count 10 --noise 0 --seed 7 --out demos
    composite-learning learn-criteria --demos demos --out criteria.json
    composite-learning fit --demos demos --out policies
    composite-learning trial --policies policies --criteria criteria.json --count 5 --out trials
    composite-learning learn --task pendulum --seed 7 --out report.json
    composite-learning report report.json

Exit status is 0 on success, 1 with a one-line diagnostic on stderr for
domain errors and missing files, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from composite_learning import __version__
from composite_learning.apn import AdaptivePetriNet, load_skill, shipped_skill_path
from composite_learning.config import LoopConfig, format_config, load_config
from composite_learning.errors import CompositeLearningError
from composite_learning.evaluation import (
    LabeledDemonstration,
    attach_labels,
    demo_weights,
    learn_criteria,
    load_criteria,
    read_labels,
    refine_criteria,
    save_criteria,
    score_trial,
    write_labels,
)
from composite_learning.gpr import dump_model, load_model
from composite_learning.sim.demonstrate import CaptureConfig, generate_corpus
from composite_learning.sim.demonstration import read_demonstration, write_demonstration
from composite_learning.sim.loop import composite_learning_loop, policy_settings, render_report
from composite_learning.sim.tasks import make_task
from composite_learning.sim.trial import fit_policies, run_trials, trial_seeds


logger = logging.getLogger(__name__)

LABELS_FILE = "labels.txt"
POLICY_PATTERN = "policy-*.clgp"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    parser.add_argument("--task", help="task name (pendulum or nunchaku)")
    parser.add_argument("--skill", help="skill definition file (default: shipped net for the task)")
    parser.add_argument("--seed", type=int, help="master seed")


def _add_capture(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--noise", type=float, help="oracle control noise")
    parser.add_argument("--no-noise-ramp", dest="noise_ramp", action="store_const", const=False)
    parser.add_argument("--corpus", help="back-and-forth, jerk-up or mixed")
    parser.add_argument("--frame-rate", dest="frame_rate", type=float)
    parser.add_argument("--frame-delay", dest="frame_delay", type=int)
    parser.add_argument("--measurement-noise", dest="measurement_noise", type=float)
    parser.add_argument("--time-budget", dest="time_budget", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="composite-learning", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    demo = commands.add_parser("demo", help="generate labeled demonstrations")
    _add_common(demo)
    _add_capture(demo)
    demo.add_argument("--count", dest="demo_count", type=int)
    demo.add_argument("--out", type=Path, default=Path("demos"))

    criteria = commands.add_parser("learn-criteria", help="learn scoring criteria from labeled demos")
    _add_common(criteria)
    criteria.add_argument("--demos", type=Path, required=True)
    criteria.add_argument("--labels", type=Path, help=f"label file (default: <demos>/{LABELS_FILE})")
    criteria.add_argument(
        "--extra-demos", dest="extra_demos", type=Path, help="further labeled demos to refine with"
    )
    criteria.add_argument("--problem-threshold", dest="problem_threshold", type=float)
    criteria.add_argument("--out", type=Path, default=Path("criteria.json"))

    fit = commands.add_parser("fit", help="fit per-transition policies")
    _add_common(fit)
    fit.add_argument("--demos", type=Path, required=True)
    fit.add_argument("--labels", type=Path)
    fit.add_argument("--max-subset", dest="max_subset", type=int)
    fit.add_argument("--out", type=Path, default=Path("policies"))

    trial = commands.add_parser("trial", help="run robot trials with fitted policies")
    _add_common(trial)
    trial.add_argument("--policies", type=Path, required=True)
    trial.add_argument("--criteria", type=Path)
    trial.add_argument("--count", type=int, default=1)
    trial.add_argument("--parallel-trials", dest="parallel_trials", type=int, default=1)
    trial.add_argument("--time-budget", dest="time_budget", type=float)
    trial.add_argument("--out", type=Path, default=Path("trials"))

    learn = commands.add_parser("learn", help="run the composite learning loop")
    _add_common(learn)
    _add_capture(learn)
    learn.add_argument("--demos", type=Path, help="use recorded demos instead of generating them")
    learn.add_argument("--labels", type=Path)
    learn.add_argument("--count", dest="demo_count", type=int)
    learn.add_argument("--trial-budget", dest="trial_budget", type=int)
    learn.add_argument("--window", type=int)
    learn.add_argument("--success-target", dest="success_target", type=float)
    learn.add_argument("--out", type=Path, default=Path("learn-report.json"))

    report = commands.add_parser("report", help="render a JSON report as text")
    report.add_argument("report", type=Path)
    return parser


_OVERRIDE_KEYS = (
    "task",
    "skill",
    "seed",
    "noise",
    "noise_ramp",
    "corpus",
    "demo_count",
    "frame_rate",
    "frame_delay",
    "measurement_noise",
    "time_budget",
    "trial_budget",
    "window",
    "success_target",
    "problem_threshold",
    "max_subset",
)


def resolve_config(args: argparse.Namespace) -> LoopConfig:
    config = load_config(args.config) if getattr(args, "config", None) else LoopConfig()
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    return config.with_overrides(overrides)


def resolve_net(config: LoopConfig) -> AdaptivePetriNet:
    return load_skill(config.skill or shipped_skill_path(config.task))


def capture_config(config: LoopConfig) -> CaptureConfig:
    return CaptureConfig(config.frame_rate, config.frame_delay, config.measurement_noise)


def read_corpus(demos_dir: Path, labels: Optional[Path]) -> List[LabeledDemonstration]:
    if not demos_dir.is_dir():
        raise FileNotFoundError(str(demos_dir))
    traces = [read_demonstration(path) for path in sorted(demos_dir.glob("*.csv"))]
    if not traces:
        raise CompositeLearningError(f"no demonstration logs in {demos_dir}")
    return attach_labels(traces, read_labels(labels or demos_dir / LABELS_FILE))


def _reproducibility(config: LoopConfig) -> str:
    return "".join(f"# {line}\n" for line in format_config(config).splitlines())


def cmd_demo(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    task = make_task(config.task)
    net = resolve_net(config)
    demos = generate_corpus(
        task,
        net,
        config.demo_count,
        config.seed,
        corpus=config.corpus,
        noise=config.noise,
        noise_ramp=config.noise_ramp,
        capture=capture_config(config),
        time_budget=config.time_budget,
    )
    for demo in demos:
        write_demonstration(demo.trace, args.out / f"{demo.trace.demo_id}.csv")
    labels = write_labels(demos, args.out / LABELS_FILE)
    labels.write_text(_reproducibility(config) + labels.read_text())
    successes = sum(d.success for d in demos)
    print(f"wrote {len(demos)} demonstrations ({successes} successful) to {args.out}")
    return 0


def cmd_learn_criteria(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    net = resolve_net(config)
    demos = read_corpus(args.demos, args.labels)
    criteria = learn_criteria(demos, net, config.problem_threshold)
    if args.extra_demos:
        extra = read_corpus(args.extra_demos, None)
        criteria = refine_criteria(criteria, extra, net)
    save_criteria(criteria, args.out, config.as_dict())
    print(f"criteria: threshold {criteria.threshold:.3f}, {len(criteria.rows)} labeled demos -> {args.out}")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    task = make_task(config.task)
    net = resolve_net(config)
    demos = read_corpus(args.demos, args.labels)
    weights = demo_weights(demos)
    corpus = [(d.trace, float(w)) for d, w in zip(demos, weights)]
    policies, stats = fit_policies(net, corpus, task.physical_dim, task.control_dim, policy_settings(config))
    args.out.mkdir(parents=True, exist_ok=True)
    for tid, model in policies.items():
        metadata: Dict[str, Any] = {"transition": tid, "config": config.as_dict()}
        metadata.update(stats[tid].as_dict())
        dump_model(model, args.out / f"policy-{tid}.clgp", metadata)
        print(f"{tid}: {stats[tid].m} of {stats[tid].n} points")
    return 0


def cmd_trial(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    task = make_task(config.task)
    net = resolve_net(config)
    if not args.policies.is_dir():
        raise FileNotFoundError(str(args.policies))
    policies = {}
    for path in sorted(args.policies.glob(POLICY_PATTERN)):
        model, metadata = load_model(path)
        policies[metadata.get("transition", path.stem[len("policy-"):])] = model
    criteria = load_criteria(args.criteria) if args.criteria else None
    traces = run_trials(
        net,
        policies,
        task,
        trial_seeds(config.seed, args.count),
        config.time_budget,
        parallel=args.parallel_trials,
    )
    evaluations = []
    for trace in traces:
        write_demonstration(trace, args.out / f"{trace.demo_id}.csv")
        record: Dict[str, Any] = {"trial_id": trace.demo_id, "true_success": trace.success}
        if criteria is not None:
            record.update(score_trial(criteria, trace, net).as_dict())
        evaluations.append(record)
        print(f"{trace.demo_id}: {record.get('verdict', 'unscored')} (ground truth {trace.success})")
    document = {"config": config.as_dict(), "evaluations": evaluations}
    (args.out / "evaluations.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_learn(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    task = make_task(config.task)
    net = resolve_net(config)
    if args.demos:
        demos = read_corpus(args.demos, args.labels)
    else:
        demos = generate_corpus(
            task,
            net,
            config.demo_count,
            config.seed,
            corpus=config.corpus,
            noise=config.noise,
            noise_ramp=config.noise_ramp,
            capture=capture_config(config),
            time_budget=config.time_budget,
        )
    report = composite_learning_loop(config, demos, net, task)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(report.to_json())
    sys.stdout.write(render_report(report.as_dict()))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    try:
        document = json.loads(args.report.read_text())
    except ValueError as exc:
        raise CompositeLearningError(f"{args.report}: not a JSON report ({exc})") from exc
    sys.stdout.write(render_report(document))
    return 0


COMMANDS = {
    "demo": cmd_demo,
    "learn-criteria": cmd_learn_criteria,
    "fit": cmd_fit,
    "trial": cmd_trial,
    "learn": cmd_learn,
    "report": cmd_report,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        path = exc.filename or str(exc)
        logger.error("File not found: %s", path)
        print(f"error: file not found: {path}", file=sys.stderr)
        return 1
    except CompositeLearningError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
