"""Command-line entry point: corpus generation, single extraction, sweeps, reports.

Exit codes: 0 success, 2 usage/config error, 3 backend transport error,
4 incomplete data. An invalid extraction is data, not a failure (exit 0).
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from . import corpus as corpus_mod
from . import sweep as sweep_mod
from .corpus import CorpusError, CorpusSpec, Task, default_corpus_spec, load_corpus, load_schema, make_report
from .lm_client import LmClientError, ProtocolError, RequestTimeout, TransportError, resolve_endpoint
from .sweep import (
    MissingRecordsError,
    PipelineBackends,
    PipelineConfig,
    ResultStore,
    StoreCorruptError,
    SweepError,
    SweepGrid,
    enumerate_configs,
    extract_one,
    run_sweep,
    sample_reports,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_INCOMPLETE = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_generate_corpus(args) -> int:
    try:
        spec_obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        task = Task(spec_obj["task"])
        defaults = default_corpus_spec(task, spec_obj.get("n_reports", 1000),
                                       spec_obj.get("seed", 0))
        spec = CorpusSpec(
            task=task,
            n_reports=spec_obj.get("n_reports", defaults.n_reports),
            class_distribution=spec_obj.get("class_distribution", defaults.class_distribution),
            length_mean_words=spec_obj.get("length_mean_words", defaults.length_mean_words),
            length_sd_words=spec_obj.get("length_sd_words", defaults.length_sd_words),
            distractor_rate=spec_obj.get("distractor_rate", defaults.distractor_rate),
            seed=args.seed if args.seed is not None else spec_obj.get("seed", defaults.seed),
        )
        reports, annotations = corpus_mod.generate_synthetic_corpus(spec)
        corpus_mod.save_corpus(args.out, reports, annotations)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        return _fail(EXIT_CONFIG, f"invalid corpus spec: {e}")
    counts = Counter(a.label for a in annotations)
    print(f"wrote {len(reports)} reports to {args.out}")
    for label in sorted(counts):
        print(f"  {label}: {counts[label]} ({counts[label] / len(reports):.2%})")
    return EXIT_OK


def _read_report(path_or_dash: str, schema) -> corpus_mod.Report:
    text = sys.stdin.read() if path_or_dash == "-" else Path(path_or_dash).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and "text" in obj:
        return make_report(obj.get("id", "stdin"), Task(obj.get("task", schema.task.value)), obj["text"])
    return make_report("stdin", schema.task, text)


def cmd_extract(args) -> int:
    try:
        schema = load_schema(args.schema)
        config = PipelineConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        report = _read_report(args.report, schema)
        endpoint = resolve_endpoint(args.endpoint)
    except (OSError, json.JSONDecodeError, CorpusError, SweepError, LmClientError) as e:
        return _fail(EXIT_CONFIG, str(e))
    backends = PipelineBackends.remote(endpoint, embed_model=config.retrieval.embed_model)
    try:
        record = extract_one(report, schema, config, backends, capture_errors=False,
                             no_timestamps=args.no_timestamps)
    except (TransportError, RequestTimeout) as e:
        return _fail(EXIT_BACKEND, f"backend unreachable: {e}")
    except ProtocolError as e:
        return _fail(EXIT_BACKEND, f"backend protocol error: {e}")
    out = {
        "report_id": record.report_id,
        "label": record.parsed.label if record.parsed.is_valid else "INVALID",
        "rag_used": record.rag_used,
    }
    if not record.parsed.is_valid:
        out["invalid_reason"] = record.parsed.reason.value
    if args.show_raw:
        out["raw_output"] = record.raw_output
    print(json.dumps(out, ensure_ascii=False))
    return EXIT_OK


def _load_inputs(args, need_grid: bool = True):
    schema = load_schema(args.schema)
    reports, annotations = load_corpus(args.corpus)
    grid = SweepGrid.from_file(args.grid) if need_grid else None
    return schema, reports, annotations, grid


def cmd_sweep(args) -> int:
    try:
        schema, reports, _, grid = _load_inputs(args)
        configs = enumerate_configs(grid)
        if grid.sample_n is not None:
            seed = args.seed if args.seed is not None else grid.sample_seed
            reports = sample_reports(reports, grid.sample_n, seed)
        endpoint = resolve_endpoint(args.endpoint)
    except (OSError, CorpusError, SweepError, LmClientError) as e:
        return _fail(EXIT_CONFIG, str(e))
    total = len(reports) * len(configs)
    print(f"sweeping {len(configs)} configs over {len(reports)} reports "
          f"({total} pairs) -> {args.store}")

    def progress(done: int, pending: int) -> None:
        if done % 50 == 0 or done == pending:
            print(f"  {done}/{pending} new records", file=sys.stderr)

    try:
        store = run_sweep(reports, configs, endpoint, args.store, schema,
                          parallelism=args.parallelism, no_timestamps=args.no_timestamps,
                          progress=progress)
    except StoreCorruptError as e:
        return _fail(EXIT_CONFIG, str(e))
    print(f"store complete: {len(store)} records")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        schema, reports, annotations, grid = _load_inputs(args)
        configs = enumerate_configs(grid)
        store = ResultStore.open(args.store)
        gold = {a.report_id: a.label for a in annotations}
    except (OSError, CorpusError, SweepError, StoreCorruptError) as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        result = sweep_mod.aggregate(store, gold, schema, configs,
                                     compare_axes=tuple(args.compare or ()))
    except MissingRecordsError as e:
        return _fail(EXIT_INCOMPLETE, str(e))
    except SweepError as e:
        return _fail(EXIT_CONFIG, str(e))

    csv_text = result.to_csv()
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
        print(f"wrote {args.csv}")
    else:
        print(csv_text, end="")

    comparisons = json.dumps(result.comparisons_json(), indent=2)
    if args.json:
        Path(args.json).write_text(comparisons + "\n", encoding="utf-8")
        print(f"wrote {args.json}")
    else:
        print(comparisons)

    print(f"\ntop {min(args.top, len(result.rows))} configurations by accuracy, then macro F1:")
    header = f"{'config':18s} {'model':22s} {'accuracy':>9s} {'macro_f1':>9s}"
    print(header)
    for config, report in result.rows[: args.top]:
        print(f"{config.config_hash:18s} {config.model_name:22s} "
              f"{report.accuracy:9.4f} {report.macro_f1:9.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reportex",
        description="Extract categorical datapoints from diagnostic reports with a "
                    "local model server; benchmark configurations against gold labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-corpus", help="write a synthetic labeled corpus")
    p.add_argument("--spec", required=True, help="corpus spec JSON file")
    p.add_argument("--out", required=True, help="output corpus JSONL path")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_generate_corpus)

    p = sub.add_parser("extract", help="run one report through the pipeline")
    p.add_argument("report", help="report file (JSON or raw text), or - for stdin")
    p.add_argument("--config", required=True, help="pipeline config JSON file")
    p.add_argument("--schema", required=True, help="label schema JSON file")
    p.add_argument("--endpoint", default=None, help="model server endpoint")
    p.add_argument("--show-raw", action="store_true", help="include raw model output")
    p.add_argument("--no-timestamps", action="store_true", help="zero volatile fields")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("sweep", help="run or resume a configuration sweep")
    p.add_argument("--grid", required=True, help="sweep grid JSON file")
    p.add_argument("--corpus", required=True, help="corpus JSONL file")
    p.add_argument("--schema", required=True, help="label schema JSON file")
    p.add_argument("--store", required=True, help="result store JSONL path")
    p.add_argument("--endpoint", default=None, help="model server endpoint")
    p.add_argument("--parallelism", type=int, default=4, help="max in-flight generations")
    p.add_argument("--seed", type=int, default=None, help="override the grid sample seed")
    p.add_argument("--no-timestamps", action="store_true", help="zero volatile fields")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate a sweep store into tables and comparisons")
    p.add_argument("--store", required=True, help="result store JSONL path")
    p.add_argument("--corpus", required=True, help="corpus JSONL file with gold labels")
    p.add_argument("--schema", required=True, help="label schema JSON file")
    p.add_argument("--grid", required=True, help="sweep grid JSON file (names the configs)")
    p.add_argument("--csv", default=None, help="write the metric table CSV here")
    p.add_argument("--json", default=None, help="write the comparisons JSON here")
    p.add_argument("--top", type=int, default=10, help="rows in the plain-text table")
    p.add_argument("--compare", action="append", default=None,
                   help="binary config axis to compare (repeatable), e.g. retrieval.mode")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
