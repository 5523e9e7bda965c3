"""Command-line interface: synth, train, eval, stream, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import datasets as D
from . import decoders, runtime, synth
from .errors import ConfigurationError, ExosenseError
from .signals import load_session, save_session

log = logging.getLogger("exosense")


def _load_config(task: str, variant: str, path: str | None, benchmark: bool) -> dict:
    overrides = json.loads(Path(path).read_text()) if path else None
    return decoders.make_config(task, variant, overrides, benchmark)


def _load_sessions(directory) -> list:
    root = Path(directory)
    dirs = sorted(p.parent for p in root.glob("*/manifest.json"))
    if (root / "manifest.json").exists():
        dirs = [root]
    if not dirs:
        raise ConfigurationError(f"no session bundles found under {root}")
    return [load_session(d) for d in dirs]


def cmd_synth(args) -> int:
    scenario = synth.load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in synth.generate_cohort(scenario, args.subjects, args.seed):
        save_session(s, out / s.subject_id)
        print(f"{s.subject_id}: {s.extent()[1]:.1f} s -> {out / s.subject_id}")
    (out / "scenario.json").write_text(json.dumps(scenario.to_dict(), indent=1) + "\n")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.task, args.variant, args.config, args.benchmark)
    sessions = _load_sessions(args.data)
    per_subject = _per_subject(args.task, sessions, cfg)
    train_ds = D.concat(list(per_subject.values()))
    model = decoders.fit_model(train_ds, cfg, decoders.fold_seed(cfg["seed"], 0))
    path = model.save(Path(args.out) / args.task)
    print(f"trained {args.task}/{args.variant} on {len(train_ds)} windows -> {path}")
    return 0


def _per_subject(task, sessions, cfg):
    from .eval import per_subject_datasets

    return per_subject_datasets(task, sessions, cfg.get("sides", ["right"]))


def cmd_eval(args) -> int:
    from .eval import run_loso

    cfg = _load_config(args.task, args.variant, args.config, args.benchmark)
    sessions = _load_sessions(args.data)
    mode = "within" if args.within else "loso"
    report = run_loso(
        args.task, _per_subject(args.task, sessions, cfg), cfg, args.report, mode=mode,
        plots=not args.no_plots, save_models=args.save_models,
    )
    for key, agg in report.aggregate.items():
        print(f"{key}: {agg['mean']:.4f} +- {agg['std']:.4f}")
    if args.report:
        print(f"report written to {args.report}")
    return 0


def _load_models(directory: str | None) -> dict:
    models = {}
    for task in decoders.TASKS:
        if directory is not None:
            path = Path(directory) / task
            if not (path / "model.json").exists():
                raise ConfigurationError(f"missing model for {task!r} under {directory}")
            models[task] = decoders.DecoderModel.load(path)
        else:
            models[task] = decoders.DecoderModel.build(task, seed=0)
    if directory is None:
        log.warning("no --models given; streaming with untrained models")
    return models


def cmd_stream(args) -> int:
    if args.session:
        session = load_session(args.session)
    else:
        scenario = synth.load_scenario(args.scenario)
        session = synth.generate_session(synth.make_profile(0, args.seed), scenario, args.seed)
    models = _load_models(args.models)
    emitter = runtime.UdpEmitter(args.udp, queue_size=args.queue) if args.udp else None
    out = open(args.out, "w") if args.out else None

    def sink(p):
        if emitter is not None:
            emitter.emit(p)
        if out is not None:
            out.write(runtime.encode_packet(p).decode() + "\n")

    cfg = runtime.PipelineConfig(clock=args.clock)
    pipeline = runtime.Pipeline(models, cfg, sink=sink)
    try:
        packets = runtime.stream_session(pipeline, session, args.duration, realtime=args.clock == "wall")
    finally:
        if emitter is not None:
            emitter.close()
        if out is not None:
            out.close()
    dropped = emitter.dropped if emitter else 0
    print(f"{len(packets)} packets, {dropped} dropped")
    return 0


def cmd_bench(args) -> int:
    model = decoders.DecoderModel.load(args.model) if args.model else decoders.DecoderModel.build(args.task)
    stats = runtime.bench_latency(model, runtime.representative_window(model.task), args.iters)
    print(json.dumps({"task": model.task, **{k: round(v, 4) for k, v in stats.items()}}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exosense", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--scenario", default="phase1", help="preset name (phase1|phase2|phase3) or JSON file")
    p.add_argument("--subjects", type=int, default=synth.BENCHMARK_SUBJECTS)
    p.add_argument("--seed", type=int, default=synth.BENCHMARK_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def task_args(p):
        p.add_argument("--task", required=True, choices=decoders.TASKS)
        p.add_argument("--data", required=True, help="directory of session bundles")
        p.add_argument("--config", help="JSON file of overrides for the decoder ledger")
        p.add_argument("--variant", default="imu_emg", choices=decoders.VARIANTS)
        p.add_argument("--benchmark", action="store_true", help="apply the desk-scale benchmark overrides")

    p = sub.add_parser("train", help="train one model on every subject in --data")
    task_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-validated evaluation with report files")
    task_args(p)
    p.add_argument("--loso", action="store_true", help="leave-one-subject-out (default)")
    p.add_argument("--within", action="store_true", help="within-subject 80/20 chronological split")
    p.add_argument("--report", help="directory for report.json, report.csv and SVG plots")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--save-models", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="run the real-time pipeline over a session")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--session", help="session bundle directory")
    src.add_argument("--live-synth", action="store_true", help="generate a session on the fly")
    p.add_argument("--scenario", default="phase3")
    p.add_argument("--seed", type=int, default=synth.BENCHMARK_SEED)
    p.add_argument("--udp", help="HOST:PORT to send status packets to")
    p.add_argument("--queue", type=int, default=0, help="bounded send queue size (0 = send inline)")
    p.add_argument("--clock", choices=("simulated", "wall"), default="simulated")
    p.add_argument("--models", help="directory with moment/, metabolic/ and risk/ model artifacts")
    p.add_argument("--duration", type=float)
    p.add_argument("--out", help="write packets as JSON lines")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="single-window inference latency")
    p.add_argument("--task", choices=decoders.TASKS, default="risk")
    p.add_argument("--model", help="model artifact directory (default: untrained model)")
    p.add_argument("--iters", type=int, default=200)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ExosenseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
