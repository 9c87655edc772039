"""Command-line entry point: ``ambidebate {generate,run,report,probe}``.

Data goes to files, tables go to stdout, progress goes to stderr. Every
failure exits nonzero after one ``error[CODE]: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path
from typing import Sequence

from .config import RunConfig, load_run_config
from .dataset import CATEGORIES, Vocabulary, generate_dataset, read_dataset, write_dataset
from .engine import JsonlSink, read_baselines, read_transcripts, run_experiment
from .errors import AmbidebateError, ConfigError
from .evaluation import compute_report, emit_reports, format_tables

log = logging.getLogger("ambidebate")

EXIT_ERROR = 2
EXIT_INTERRUPTED = 130


class CliError(AmbidebateError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ambidebate", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate an ambiguity dataset")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--per-type", type=int, default=None, help="entries per category (numerical, attribute, spatial)")
    for cat in CATEGORIES:
        gen.add_argument(f"--{cat}", type=int, default=None, help=f"{cat} entries (overrides --per-type)")
    gen.add_argument("--vocab", type=Path, default=None, help="vocabulary JSON file (default: bundled)")
    gen.add_argument("--out", type=Path, required=True)

    run = sub.add_parser("run", help="run baselines and debates over a dataset")
    run.add_argument("--config", type=Path, required=True)
    run.add_argument("--dataset", default=None)
    run.add_argument("--out", dest="out_dir", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--max-rounds", type=int, default=None)
    run.add_argument("--parallelism", type=int, default=None)
    run.add_argument("--skip-probe", action="store_true")

    rep = sub.add_parser("report", help="compute metrics from a run directory")
    rep.add_argument("--run-dir", type=Path, required=True)
    rep.add_argument("--dataset", type=Path, default=None, help="default: dataset recorded in run.json")
    rep.add_argument("--mode", choices=("strict", "lenient"), default=None)
    rep.add_argument("--out", type=Path, default=None, help="default: <run-dir>/report")
    rep.add_argument(
        "--judge-nonconsensus",
        action="store_true",
        help="judge the last leader proposal of non-consensus debates instead of counting them as failures",
    )

    prb = sub.add_parser("probe", help="check that every configured backend is reachable")
    prb.add_argument("--config", type=Path, required=True)
    return parser


def cmd_generate(args: argparse.Namespace) -> int:
    base = args.per_type if args.per_type is not None else 0
    counts = {cat: getattr(args, cat) if getattr(args, cat) is not None else base for cat in CATEGORIES}
    if any(n < 0 for n in counts.values()):
        raise CliError("E_USAGE", "counts must be non-negative")
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    entries = generate_dataset(args.seed, counts, vocab)
    write_dataset(entries, args.out)
    if not entries:
        log.warning("all counts are zero; wrote an empty dataset")
    summary = ", ".join(f"{cat}={counts[cat]}" for cat in CATEGORIES)
    print(f"wrote {len(entries)} entries to {args.out} ({summary})")
    return 0


def _probe_all(cfg: RunConfig, backends) -> list[str]:
    failed = []
    for name, backend in backends.items():
        status = backend.probe()
        log.info("probe %s: %s", name, "ok" if status.healthy else status.detail)
        if not status.healthy:
            failed.append(f"{name} ({status.detail})")
    return failed


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config).with_overrides(
        dataset=args.dataset,
        out_dir=args.out_dir,
        seed=args.seed,
        max_rounds=args.max_rounds,
        parallelism=args.parallelism,
    )
    cfg.validate()
    if not cfg.dataset:
        raise ConfigError("no dataset given (config key `dataset` or --dataset)")
    if not cfg.out_dir:
        raise ConfigError("no output directory given (config key `out_dir` or --out)")
    dataset = read_dataset(cfg.dataset)
    if not dataset:
        raise CliError("E_EMPTY_DATASET", f"{cfg.dataset} holds no entries")
    debate_cfg = cfg.debate_config()
    backends = cfg.build_backends()
    if not args.skip_probe:
        failed = _probe_all(cfg, backends)
        if failed:
            raise CliError("E_PROBE", "unreachable backend: " + "; ".join(failed))

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "dataset": str(Path(cfg.dataset).resolve()),
        "roster": list(cfg.model_names),
        "max_rounds": cfg.max_rounds,
        "mode": cfg.mode,
        "seed": cfg.seed,
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    def progress(done: int, total: int) -> None:
        log.info("entry %d/%d done", done, total)

    with JsonlSink(out) as sink:
        summary = run_experiment(dataset, debate_cfg, backends, sink, progress=progress)
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8")
    counts = summary.to_dict()["outcomes"]
    print(
        f"{summary.transcripts} debates ({counts['consensus']} consensus, {counts['non_consensus']} non-consensus, "
        f"{counts['error']} error), {summary.baselines} baselines ({summary.baseline_errors} error) -> {out}"
    )
    if summary.all_debates_failed:
        raise CliError("E_ALL_FAILED", "every debate ended in an error")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = args.run_dir
    if not run_dir.is_dir():
        raise CliError("E_IO", f"run directory {run_dir} does not exist")
    meta_path = run_dir / "run.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    dataset_path = args.dataset or meta.get("dataset")
    if not dataset_path:
        raise ConfigError("no dataset: pass --dataset or keep run.json in the run directory")
    dataset = read_dataset(dataset_path)
    baselines = read_baselines(run_dir / "baselines.jsonl")
    transcripts = read_transcripts(run_dir / "transcripts.jsonl")
    mode = args.mode or meta.get("mode", "strict")
    report = compute_report(
        baselines,
        transcripts,
        dataset,
        mode,
        roster=meta.get("roster"),
        max_rounds=meta.get("max_rounds"),
        nonconsensus_as_failure=not args.judge_nonconsensus,
    )
    out = args.out or run_dir / "report"
    emit_reports(report, out)
    for c in report.configurations:
        print(f"{c.name}: {c.successes}/{c.entries} successful ({c.success_pct:.1f}%)")
    print()
    print(format_tables(report))
    log.info("reports written to %s", out)
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    failed = _probe_all(cfg, cfg.build_backends())
    for name in cfg.model_names:
        print(f"{name}: {'unhealthy' if any(f.startswith(name + ' ') for f in failed) else 'healthy'}")
    if failed:
        raise CliError("E_PROBE", "unreachable backend: " + "; ".join(failed))
    return 0


_COMMANDS = {"generate": cmd_generate, "run": cmd_run, "report": cmd_report, "probe": cmd_probe}


def _configure_logging(level: int) -> None:
    # one handler bound to the current stderr, replaced on every call
    for handler in list(log.handlers):
        log.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


def _on_sigterm(signum, frame):
    raise KeyboardInterrupt


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    _configure_logging(logging.WARNING if args.quiet else logging.INFO)
    try:
        signal.signal(signal.SIGTERM, _on_sigterm)
    except ValueError:
        pass  # not in the main thread
    try:
        return _COMMANDS[args.command](args)
    except AmbidebateError as exc:
        print(f"error[{exc.code}]: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error[E_IO]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("error[E_INTERRUPTED]: interrupted; records written so far are kept", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
