"""Command-line surface.

Subcommands: ``extract`` (run the reconstruction pipeline on one input),
``check`` (symbolic validation report for a table against a source),
``eval`` (gold-referenced metrics for a prediction), and ``bench`` (the
dataset harness). Exit codes: 0 success, 1 task-level failure, 2 usage
error. Configuration precedence: flags > environment > config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import bench as benchmod
from .checker import (
    ConvergenceThresholds,
    load_entity_patterns,
    run_sanity_check,
)
from .errors import TablexError
from .gateway import Backend, BackendConfig, PromptKind, build_backend
from .metrics import evaluate
from .model import SourceText, Table, normalize_rectangular, parse_csv_table, parse_html_table, serialize_csv, serialize_html
from .pipeline import PipelineConfig, run_ten

_PROMPT_ALIASES = {
    "sd": PromptKind.STRUCTURAL_DECOMPOSITION,
    "base": PromptKind.BASELINE,
    "cot": PromptKind.CHAIN_OF_THOUGHT,
}

CACHE_DIR_ENV = "TEN_CACHE_DIR"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _backend_config(section: dict, args: argparse.Namespace) -> BackendConfig:
    merged = dict(section)
    if getattr(args, "model", None):
        merged["model_id"] = args.model
    if getattr(args, "endpoint", None):
        merged["endpoint"] = args.endpoint
    return BackendConfig(**merged)


def _cache_dir(args: argparse.Namespace, config: dict) -> str | None:
    return args.cache_dir or os.environ.get(CACHE_DIR_ENV) or config.get("cache_dir")


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    config = _load_config(getattr(args, "config", None))
    mode = "replay" if args.replay else "record" if args.record else "live"
    cache_dir = _cache_dir(args, config)
    generator_cfg = _backend_config(config.get("generator", {}), args)
    # the critic follows the generator (flag overrides included) unless the
    # config file names its own backend
    critic_cfg = BackendConfig(**config["critic"]) if "critic" in config else generator_cfg
    generator: Backend = build_backend(generator_cfg, mode, cache_dir)
    critic: Backend = build_backend(critic_cfg, mode, cache_dir)
    pipeline_section = dict(config.get("pipeline", {}))
    prompt_alias = getattr(args, "prompt", None) or pipeline_section.pop("generation_prompt", "sd")
    if getattr(args, "last_iteration", False):
        pipeline_section["keep_last_iteration"] = True
    thresholds = ConvergenceThresholds(**config.get("thresholds", {}))
    return PipelineConfig(
        generator=generator,
        critic=critic,
        thresholds=thresholds,
        generation_prompt=_PROMPT_ALIASES[prompt_alias],
        **pipeline_section,
    )


def _read_file(path: str) -> str:
    # keep CRLF intact: newline translation would corrupt sources and caches
    return Path(path).read_bytes().decode("utf-8")


def _load_table(path: str) -> Table:
    text = _read_file(path)
    if Path(path).suffix.lower() == ".csv":
        return normalize_rectangular(parse_csv_table(text))
    return normalize_rectangular(parse_html_table(text))


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8", newline="")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_extract(args: argparse.Namespace) -> int:
    source = SourceText(_read_file(args.input))
    cfg = _pipeline_config(args)
    result = run_ten(source, cfg)
    if args.out == "html":
        _emit(serialize_html(result.final), args.output)
    elif args.out == "csv":
        _emit(serialize_csv(result.final), args.output)
    else:
        _emit(result.to_json(), args.output)
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    table = _load_table(args.table)
    source = SourceText(_read_file(args.source))
    patterns = load_entity_patterns(args.patterns) if args.patterns else None
    report = run_sanity_check(source, table, patterns=patterns)
    print(report.to_json())
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = _load_table(args.pred)
    gold = _load_table(args.gold)
    source = SourceText(_read_file(args.source)) if args.source else None
    report = evaluate(pred, gold, source)
    print(report.to_json())
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    tasks = benchmod.ingest_dataset(args.dir, args.format)
    cfg = _pipeline_config(args)
    timeout = args.timeout if args.timeout else (None if args.replay else 120.0)
    report = benchmod.run_bench(tasks, cfg, parallelism=args.parallel, per_task_timeout=timeout)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    if args.outputs:
        benchmod.write_task_outputs(report.per_task, args.outputs)
    errored = report.aggregates["errored"]
    if errored:
        print(f"bench: {errored} task(s) failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (backends, thresholds, pipeline)")
    parser.add_argument("--model", help="override the generator model id")
    parser.add_argument("--endpoint", help="override the generator endpoint URL")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--replay", action="store_true", help="serve responses from the cache only")
    mode.add_argument("--record", action="store_true", help="call the live backend and cache responses")
    parser.add_argument("--cache-dir", help=f"transcript cache directory (or ${CACHE_DIR_ENV})")
    parser.add_argument(
        "--last-iteration",
        action="store_true",
        help="on exhaustion return the last candidate instead of the best-scoring one",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tablex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="reconstruct a table from a text file")
    p_extract.add_argument("input", help="input text file")
    p_extract.add_argument("--prompt", choices=sorted(_PROMPT_ALIASES), default=None)
    p_extract.add_argument("--out", choices=("html", "csv", "json"), default="html")
    p_extract.add_argument("--output", help="write result here instead of stdout")
    _add_backend_flags(p_extract)
    p_extract.set_defaults(func=_cmd_extract)

    p_check = sub.add_parser("check", help="validate a table against its source text")
    p_check.add_argument("table", help="table file (.html or .csv)")
    p_check.add_argument("--source", required=True, help="source text file")
    p_check.add_argument("--patterns", help="entity pattern JSON file")
    p_check.set_defaults(func=_cmd_check)

    p_eval = sub.add_parser("eval", help="score a prediction against a gold table")
    p_eval.add_argument("pred", help="predicted table file (.html or .csv)")
    p_eval.add_argument("gold", help="gold table file (.html or .csv)")
    p_eval.add_argument("--source", help="source text file for coverage/hallucination")
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", help="run the benchmark harness on a dataset directory")
    p_bench.add_argument("dir", help="dataset directory")
    p_bench.add_argument("--format", choices=benchmod.DATASET_FORMATS, required=True)
    p_bench.add_argument("--report", required=True, help="write the report JSON here")
    p_bench.add_argument("--parallel", type=int, default=1)
    p_bench.add_argument("--timeout", type=float, default=None, help="per-task timeout in seconds")
    p_bench.add_argument("--outputs", help="directory for per-task traces and tables")
    p_bench.add_argument("--prompt", choices=sorted(_PROMPT_ALIASES), default=None)
    _add_backend_flags(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TablexError as exc:
        print(f"tablex: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"tablex: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
