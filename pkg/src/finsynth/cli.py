"""Batch command line tying the pipeline together.

Subcommands:

    compile    compile a seed formula file and print the dependency graph
    extend     add a temporal dimension and run composition to a fixed point
    generate   synthesize a QA dataset with the mock or live backend
    split      shuffle a dataset into train/dev/test files
    convert    turn a TAT-QA style export into dataset records
    stats      print summary statistics for a dataset file
    eval       score a prediction file against a gold dataset

Settings come from defaults, then an optional key=value config file
(--config), then explicit flags, later sources winning. Exit codes: 0 on
success, 2 for input or configuration problems, 3 for backend or network
problems, 4 for validation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from json import JSONDecodeError

import importlib.resources as res

from .backend import (
    BackendConfig,
    BackendError,
    AuthError,
    LiveBackend,
    MockBackend,
    load_exemplars,
)
from .datasetio import (
    SchemaError,
    TooFewExamplesError,
    dataset_stats,
    read_dataset,
    read_tatqa,
    split_dataset,
    to_record,
    write_dataset,
)
from .dsl import DslError
from .genpipe import (
    GenConfig,
    PipelineError,
    TemplateError,
    generate_dataset,
    load_question_templates,
    verify_example,
)
from .graph import (
    GraphError,
    add_temporal,
    build_graph,
    dump_graph,
    extend_to_fixed_point,
    load_seed_formulas,
)
from .metrics import MetricsError, evaluate, read_predictions
from .numbers import NumberFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_VALIDATION = 4

_DATA = res.files("finsynth").joinpath("data")
DEFAULT_SEED_PATH = str(_DATA.joinpath("seed_formulas.txt"))
DEFAULT_EXEMPLARS_PATH = str(_DATA.joinpath("exemplars.json"))

_DEFAULT_BACKEND = BackendConfig()


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Merged settings for graph building and generation."""

    formulas: str = DEFAULT_SEED_PATH
    templates: str | None = None
    exemplars: str | None = None
    slices: int = 0
    max_steps: int | None = None
    max_vars: int | None = None
    iterations: int = 6
    examples_per_node: int = 2
    seed: int = 0
    backend: str = "mock"
    shot_mode: str = "zero"
    max_concurrency: int = 4
    content_retries: int = 3
    endpoint: str = _DEFAULT_BACKEND.endpoint
    model: str = _DEFAULT_BACKEND.model
    api_key_env: str = _DEFAULT_BACKEND.api_key_env
    max_retries: int = _DEFAULT_BACKEND.max_retries
    timeout_s: float = _DEFAULT_BACKEND.timeout_s
    temperature: float = _DEFAULT_BACKEND.temperature

    def validate(self) -> "RunConfig":
        if self.backend not in ("mock", "live"):
            raise ConfigError(f"backend must be mock or live, not {self.backend!r}")
        if self.shot_mode not in ("zero", "one", "few"):
            raise ConfigError(f"shot_mode must be zero, one or few, not {self.shot_mode!r}")
        if self.slices == 1 or self.slices < 0:
            raise ConfigError("slices must be 0 (no time axis) or at least 2")
        for key in ("iterations",):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must not be negative")
        for key in ("examples_per_node", "max_concurrency", "content_retries"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        for key in ("max_steps", "max_vars"):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ConfigError(f"{key} must be at least 1 when set")
        return self


_INT_KEYS = {
    "slices",
    "iterations",
    "examples_per_node",
    "seed",
    "max_concurrency",
    "content_retries",
    "max_retries",
}
_OPTIONAL_INT_KEYS = {"max_steps", "max_vars"}
_FLOAT_KEYS = {"timeout_s", "temperature"}
_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    try:
        if key in _OPTIONAL_INT_KEYS:
            return None if raw.lower() in ("", "none") else int(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def read_config(path: str) -> dict:
    """Parse a key=value settings file; # starts a comment."""
    settings: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, eq, value = text.partition("=")
            key = key.strip()
            if not eq or not key:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line.strip()!r}")
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
            settings[key] = _coerce(key, value.strip())
    return settings


def merge_config(args: argparse.Namespace) -> RunConfig:
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return RunConfig(**settings).validate()


# ---------------------------------------------------------------------------
# Graph plumbing


def _slice_labels(n: int) -> list[str]:
    return [f"t{i + 1}" for i in range(n)]


def _build_extended(config: RunConfig):
    """Seed file -> graph -> optional time axis -> composition fixed point."""
    nodes, ranges = load_seed_formulas(config.formulas)
    graph = build_graph(nodes)
    history = [len(graph.nodes)]
    if config.slices:
        graph = add_temporal(graph, _slice_labels(config.slices))
        history.append(len(graph.nodes))
    counts: list[int] = []
    if config.iterations:
        graph, counts = extend_to_fixed_point(
            graph,
            max_steps=config.max_steps,
            max_vars=config.max_vars,
            max_rounds=config.iterations,
        )
        base = history[-1]
        history.extend(base + sum(counts[: i + 1]) for i in range(len(counts)))
    return nodes, ranges, graph, counts, history


def _print_rounds(counts: list[int], history: list[int], temporal: bool) -> None:
    print(f"{'round':<10}{'added':>8}{'nodes':>8}")
    labels = ["seed"] + (["temporal"] if temporal else [])
    for label, total in zip(labels, history):
        print(f"{label:<10}{'-':>8}{total:>8}")
    start = len(labels)
    for i, added in enumerate(counts):
        print(f"{i + 1:<10}{added:>8}{history[start + i]:>8}")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_compile(args: argparse.Namespace) -> int:
    config = merge_config(args)
    nodes, _ = load_seed_formulas(config.formulas)
    graph = build_graph(nodes)
    print(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges")
    print(dump_graph(graph))
    return EXIT_OK


def cmd_extend(args: argparse.Namespace) -> int:
    config = merge_config(args)
    _, _, graph, counts, history = _build_extended(config)
    _print_rounds(counts, history, temporal=bool(config.slices))
    print(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges")
    dump = dump_graph(graph)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dump + "\n")
        print(f"graph written to {args.out}")
    else:
        print(dump)
    return EXIT_OK


def _make_backend(config: RunConfig, seed_nodes, ranges):
    if config.backend == "live":
        if not os.environ.get(config.api_key_env):
            raise AuthError(
                f"live backend needs an API key in ${config.api_key_env}, which is not set"
            )
        return LiveBackend(
            BackendConfig(
                endpoint=config.endpoint,
                model=config.model,
                api_key_env=config.api_key_env,
                max_retries=config.max_retries,
                timeout_s=config.timeout_s,
                max_concurrency=config.max_concurrency,
                temperature=config.temperature,
            )
        )
    return MockBackend(
        formulas={n.target: n.program for n in seed_nodes},
        ranges=ranges,
        seed=config.seed,
    )


def cmd_generate(args: argparse.Namespace) -> int:
    config = merge_config(args)
    seed_nodes, ranges, graph, _, _ = _build_extended(config)
    backend = _make_backend(config, seed_nodes, ranges)
    templates = load_question_templates(config.templates) if config.templates else None
    exemplars = None
    if config.shot_mode != "zero":
        exemplars = load_exemplars(config.exemplars or DEFAULT_EXEMPLARS_PATH)
    gen_config = GenConfig(
        examples_per_node=config.examples_per_node,
        global_seed=config.seed,
        max_concurrency=config.max_concurrency,
        content_retries=config.content_retries,
        shot_mode=config.shot_mode,
    )
    examples, summary = generate_dataset(graph, gen_config, backend, templates, exemplars)
    failures = []
    for example in examples:
        ok, problems = verify_example(example)
        if not ok:
            failures.append({"id": example.id, "problems": problems})
    written = write_dataset(args.out, [to_record(e) for e in examples])
    log = {
        "nodes": summary["nodes"],
        "generated": summary["generated"],
        "skipped": summary["skipped"],
        "variants": summary["variants"],
        "examples_written": written,
        "verify_failures": failures,
    }
    log_path = args.log or args.out + ".log.json"
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2)
        fh.write("\n")
    skipped = sum(summary["skipped"].values())
    print(
        f"generated {summary['generated']} examples from {summary['nodes']} nodes "
        f"({skipped} skipped, {len(failures)} failed audit)"
    )
    print(f"dataset written to {args.out}, log to {log_path}")
    if failures:
        return EXIT_VALIDATION
    if not examples:
        return EXIT_BACKEND
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    records = read_dataset(args.in_path)
    train, dev, test = split_dataset(records, seed=args.seed if args.seed is not None else 0)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, block in (("train", train), ("dev", dev), ("test", test)):
        path = os.path.join(args.out_dir, f"{name}.json")
        write_dataset(path, block)
        print(f"{name}: {len(block)} records -> {path}")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    records, skipped = read_tatqa(args.in_path)
    write_dataset(args.out, records)
    print(f"converted {len(records)} questions, skipped {sum(skipped.values())}")
    for reason in sorted(skipped):
        print(f"  {reason}: {skipped[reason]}")
    print(f"dataset written to {args.out}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    records = read_dataset(args.in_path)
    print(json.dumps(dataset_stats(records), indent=2))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    records = read_dataset(args.gold)
    predictions = read_predictions(args.predictions)
    result = evaluate(predictions, records, tol=args.tol)
    print(json.dumps(result.summary(), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing

_FLAG_DEFS = {
    "formulas": (["--formulas"], {"metavar": "PATH", "help": "seed formula file"}),
    "templates": (["--templates"], {"metavar": "PATH", "help": "question template file"}),
    "exemplars": (["--exemplars"], {"metavar": "PATH", "help": "exemplar JSON for shot modes"}),
    "slices": (["--slices"], {"type": int, "help": "time slices to add (0 or >= 2)"}),
    "max_steps": (["--max-steps"], {"type": int, "help": "max program steps per composed node"}),
    "max_vars": (["--max-vars"], {"type": int, "help": "max variables per composed node"}),
    "iterations": (["--iterations"], {"type": int, "help": "max composition rounds"}),
    "examples_per_node": (["--examples-per-node"], {"type": int, "help": "examples per node"}),
    "seed": (["--seed"], {"type": int, "help": "global random seed"}),
    "backend": (["--backend"], {"choices": ["mock", "live"], "help": "text backend"}),
    "shot_mode": (["--shot-mode"], {"choices": ["zero", "one", "few"], "help": "prompt shots"}),
    "max_concurrency": (["--max-concurrency"], {"type": int, "help": "parallel requests"}),
    "content_retries": (["--content-retries"], {"type": int, "help": "attempts per example"}),
    "endpoint": (["--endpoint"], {"metavar": "URL", "help": "live backend endpoint"}),
    "model": (["--model"], {"help": "live backend model name"}),
    "api_key_env": (["--api-key-env"], {"metavar": "VAR", "help": "env var holding the key"}),
    "max_retries": (["--max-retries"], {"type": int, "help": "live request retries"}),
    "timeout_s": (["--timeout"], {"type": float, "help": "live request timeout seconds"}),
    "temperature": (["--temperature"], {"type": float, "help": "live sampling temperature"}),
}


def _add_flags(parser: argparse.ArgumentParser, keys) -> None:
    parser.add_argument("--config", metavar="PATH", help="key=value settings file")
    for key in keys:
        flags, kwargs = _FLAG_DEFS[key]
        parser.add_argument(*flags, dest=key, default=None, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finsynth",
        description="Synthesize and score financial numerical reasoning datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile seed formulas and print the graph")
    _add_flags(p, ["formulas"])
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("extend", help="extend the graph to a composition fixed point")
    _add_flags(p, ["formulas", "slices", "max_steps", "max_vars", "iterations"])
    p.add_argument("--out", metavar="PATH", help="write the graph dump here instead of stdout")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("generate", help="generate a QA dataset")
    _add_flags(p, list(_FLAG_DEFS))
    p.add_argument("--out", metavar="PATH", default="dataset.json", help="dataset output path")
    p.add_argument("--log", metavar="PATH", help="generation log path (default OUT.log.json)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="split a dataset into train/dev/test")
    p.add_argument("--in", dest="in_path", metavar="PATH", required=True, help="dataset file")
    p.add_argument("--out-dir", required=True, metavar="DIR", help="directory for the splits")
    p.add_argument("--seed", type=int, default=None, help="shuffle seed")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("convert", help="convert a TAT-QA style export")
    p.add_argument("--in", dest="in_path", metavar="PATH", required=True, help="raw TAT-QA JSON")
    p.add_argument("--out", metavar="PATH", required=True, help="dataset output path")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("--in", dest="in_path", metavar="PATH", required=True, help="dataset file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score predictions against gold records")
    p.add_argument("--gold", metavar="PATH", required=True, help="gold dataset file")
    p.add_argument("--predictions", metavar="PATH", required=True, help="prediction file")
    p.add_argument("--tol", type=float, default=1e-5, help="numeric answer tolerance")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TemplateError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, PipelineError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_BACKEND
    except (SchemaError, MetricsError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (
        ConfigError,
        GraphError,
        DslError,
        TooFewExamplesError,
        NumberFormatError,
        JSONDecodeError,
        OSError,
    ) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
