import argparse
import json
import logging
import sys
from pathlib import Path

from config import PipelineConfig, load_config
from cotgen import CotMode
import demo
import stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emocot",
        description="Corpus preparation, curriculum planning, loss checks and scoring for CoT speech emotion recognition.",
    )
    parser.add_argument("--config", type=Path, default=None, help="Flat TOML file with pipeline settings.")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("--verbose", action="store_true", help="Debug logging.")
    noise.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("extract-features", help="Measure pitch, loudness and speaking rate per utterance.")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold-db", type=float, default=None, help="Silence gate in dBFS (default -40).")
    p.add_argument("--jobs", type=int, default=None, help="Worker processes (default 1).")
    p.add_argument(
        "--max-duration", type=float, default=None, help="Drop utterances longer than this many seconds first."
    )

    p = sub.add_parser("build-stats", help="Corpus count, mean and M2 per attribute.")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("discretize", help="Attach Low/Medium/High levels.")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--stats", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sample-sigma", action="store_true", default=None)

    p = sub.add_parser("gen-cot", help="Write explicit or implicit CoT samples.")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--mode", choices=[m.value for m in CotMode], required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--llm-url", default=None, help="Chat-completion URL for paraphrasing explicit targets.")
    p.add_argument("--llm-model", default=None)
    p.add_argument("--max-in-flight", type=int, default=None)

    p = sub.add_parser("fuse-labels", help="Keep utterances whose two annotations agree.")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--map", type=Path, required=True, help="Harmonization TOML.")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rejects", type=Path, required=True)

    p = sub.add_parser("schedule", help="Plan the explicit-to-implicit batch stream.")
    p.add_argument("--explicit", type=Path, required=True)
    p.add_argument("--implicit", type=Path, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("loss-check", help="Loss components, weighted total and gradient checks for one batch.")
    p.add_argument("--batch", type=Path, required=True)
    p.add_argument("--frames", type=Path, default=None, help="Student/teacher frame and utterance tensors.")
    p.add_argument("--tau", type=float, default=None, help="Contrastive temperature (default 0.07).")

    p = sub.add_parser("evaluate", help="WA, UA and macro F1 of free-form predictions.")
    p.add_argument("--refs", type=Path, required=True)
    p.add_argument("--hyps", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--extractor", choices=("rules", "remote"), default="rules")
    p.add_argument("--llm-url", default=None)

    p = sub.add_parser("report", help="Emotion and language distributions, optionally as pie charts.")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--chart-dir", type=Path, default=None)

    p = sub.add_parser("demo", help="Synthesize a small corpus and run every stage on it.")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--llm-url", default=None)

    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def effective_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        "threshold_db": getattr(args, "threshold_db", None),
        "jobs": getattr(args, "jobs", None),
        "max_duration_s": getattr(args, "max_duration", None),
        "sample_sigma": getattr(args, "sample_sigma", None),
        "llm_url": getattr(args, "llm_url", None),
        "llm_model": getattr(args, "llm_model", None),
        "max_in_flight": getattr(args, "max_in_flight", None),
        "batch_size": getattr(args, "batch_size", None),
        "temperature": getattr(args, "tau", None),
    }
    return load_config(args.config, **overrides)


def _prepare(*paths: Path) -> None:
    for path in paths:
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)


def dispatch(args: argparse.Namespace, config: PipelineConfig) -> None:
    progress = not args.quiet
    command = args.command

    if command == "extract-features":
        _prepare(args.out)
        source = args.manifest
        if args.max_duration is not None:
            source = args.out.with_name(args.out.stem + ".filtered.jsonl")
            stages.filter_stage(args.manifest, source, config.max_duration_s)
        stages.extract_stage(
            source, args.out, config.extraction(), config.jobs, progress, base_dir=args.manifest.parent
        )
    elif command == "build-stats":
        _prepare(args.out)
        stages.build_stats_stage(args.manifest, args.out)
    elif command == "discretize":
        _prepare(args.out)
        stages.discretize_stage(args.manifest, args.stats, args.out, config.sample_sigma)
    elif command == "gen-cot":
        _prepare(args.out)
        stages.gen_cot_stage(
            args.manifest, CotMode(args.mode), args.out, stages.endpoint_from(config), config.max_in_flight
        )
    elif command == "fuse-labels":
        _prepare(args.out, args.rejects)
        stages.fuse_stage(args.manifest, args.map, args.out, args.rejects)
    elif command == "schedule":
        _prepare(args.out)
        stages.schedule_stage(args.explicit, args.implicit, args.steps, args.seed, args.out, config.batch_size)
    elif command == "loss-check":
        summary = stages.loss_check_stage(args.batch, args.frames, config.loss_weights(), config.grad_eps)
        print(json.dumps(summary, indent=2, sort_keys=True))
    elif command == "evaluate":
        _prepare(args.out)
        endpoint = None
        if args.extractor == "remote":
            endpoint = stages.endpoint_from(config)
            if endpoint is None:
                raise ValueError("--extractor remote needs --llm-url or llm_url in the config file")
        stages.evaluate_stage(args.refs, args.hyps, args.out, endpoint)
    elif command == "report":
        _prepare(args.out)
        stages.report_stage(args.manifest, args.out, args.chart_dir)
    elif command == "demo":
        demo.run_demo(args.out, args.seed, config, progress)


def run(argv: list[str] | None = None) -> int:
    """Parse arguments, run one subcommand and return the exit status."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config = effective_config(args)
        # provenance line, kept under --quiet
        print(f"⚙️ {args.command} config {config.model_dump_json()}", file=sys.stderr)
        dispatch(args, config)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
