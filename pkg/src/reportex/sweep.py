"""Configuration grids, the end-to-end extraction runner with a durable
append-only result store, and metric/statistics aggregation over stores."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .corpus import LabelSchema, Report
from .lm_client import GenerationRequest, GenerationResponse, LmClientError, generate
from .metrics import (
    MetricsError,
    MetricsReport,
    StatTestResult,
    TABLE_COLUMNS,
    compute_metrics,
    confusion,
    paired_t,
    spearman,
)
from .postprocess import InvalidReason, ParsedLabel, parse_label
from .prompting import PromptStrategy, build_prompt, default_exemplars, FewShot
from .retrieval import (
    Embedder,
    RemoteEmbedder,
    RerankScorer,
    RetrievalSettings,
    TokenOverlapReranker,
    select_context,
)


class SweepError(ValueError):
    pass


class StoreCorruptError(RuntimeError):
    pass


class MissingRecordsError(RuntimeError):
    def __init__(self, missing: list[tuple[str, str]]):
        shown = ", ".join(f"({r}, {c})" for r, c in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        super().__init__(f"store is missing {len(missing)} (report, config) pairs: {shown}{more}")
        self.missing = missing


@dataclass(frozen=True)
class PipelineConfig:
    """One point in the configuration space swept by the benchmark."""

    model_name: str
    param_count_b: float = 7.0
    quant_bits: int = 4
    prompt: PromptStrategy = PromptStrategy()
    temperature: float = 0.0
    top_k: int = 40
    top_p: float = 0.9
    json_mode: bool = True
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    seed: int = 0

    def __post_init__(self):
        if not self.model_name:
            raise SweepError("model_name must be nonempty")
        if self.param_count_b <= 0:
            raise SweepError("param_count_b must be positive")
        if not 3 <= self.quant_bits <= 16:
            raise SweepError("quant_bits must be in 3..16")
        if self.temperature < 0:
            raise SweepError("temperature must be >= 0")
        if self.top_k < 1:
            raise SweepError("top_k must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise SweepError("top_p must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "param_count_b": self.param_count_b,
            "quant_bits": self.quant_bits,
            "prompt": self.prompt.to_dict(),
            "temperature": self.temperature,
            "top_k": self.top_k,
            "top_p": self.top_p,
            "json_mode": self.json_mode,
            "retrieval": self.retrieval.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        try:
            d["prompt"] = PromptStrategy.from_dict(d.get("prompt", {}))
            d["retrieval"] = RetrievalSettings.from_dict(d.get("retrieval", {}))
            return cls(**d)
        except (TypeError, ValueError) as e:
            raise SweepError(f"invalid pipeline config: {e}") from e

    @property
    def config_hash(self) -> str:
        """Stable content hash over all fields."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ExtractionRecord:
    report_id: str
    config_hash: str
    raw_output: str
    parsed: ParsedLabel
    rag_used: bool
    rerank_score: float | None
    latency_ms: float
    timestamp: float
    error: str | None = None

    def to_dict(self) -> dict:
        d = {
            "report_id": self.report_id,
            "config_hash": self.config_hash,
            "raw_output": self.raw_output,
            "parsed": self.parsed.to_dict(),
            "rag_used": self.rag_used,
            "rerank_score": self.rerank_score,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionRecord":
        return cls(
            report_id=d["report_id"],
            config_hash=d["config_hash"],
            raw_output=d["raw_output"],
            parsed=ParsedLabel.from_dict(d["parsed"]),
            rag_used=d["rag_used"],
            rerank_score=d.get("rerank_score"),
            latency_ms=d.get("latency_ms", 0.0),
            timestamp=d.get("timestamp", 0.0),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class SweepGrid:
    base: PipelineConfig
    axes: dict[str, list]
    sample_n: int | None = None
    sample_seed: int = 0

    @classmethod
    def from_file(cls, path) -> "SweepGrid":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
            sample = obj.get("sample", {})
            return cls(
                base=PipelineConfig.from_dict(obj["base"]),
                axes=dict(obj.get("axes", {})),
                sample_n=sample.get("n"),
                sample_seed=sample.get("seed", 0),
            )
        except (json.JSONDecodeError, KeyError) as e:
            raise SweepError(f"{path}: invalid grid file ({e})") from e


def _set_path(d: dict, path: str, value) -> None:
    parts = path.split(".")
    node = d
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise SweepError(f"unknown axis {path!r}")
        node = node[part]
    if parts[-1] not in node:
        raise SweepError(f"unknown axis {path!r}")
    node[parts[-1]] = value


def enumerate_configs(grid: SweepGrid) -> list[PipelineConfig]:
    """Cartesian product of the grid axes applied to the base config.

    Axes are sorted by name; values keep their given order. Axis names are
    PipelineConfig fields, with dotted paths for nested fields such as
    retrieval.mode or prompt.style.
    """
    names = sorted(grid.axes)
    value_lists = []
    for name in names:
        values = grid.axes[name]
        if not isinstance(values, list) or not values:
            raise SweepError(f"axis {name!r} must map to a nonempty value list")
        value_lists.append(values)
    configs: list[PipelineConfig] = []
    for combo in itertools.product(*value_lists):
        d = grid.base.to_dict()
        for name, value in zip(names, combo):
            _set_path(d, name, value)
        configs.append(PipelineConfig.from_dict(d))
    hashes = {c.config_hash for c in configs}
    if len(hashes) != len(configs):
        raise SweepError("grid produces duplicate configurations")
    return configs


def sample_reports(reports: list[Report], n: int, seed: int) -> list[Report]:
    """Uniform sample without replacement; deterministic and stably ordered."""
    if n > len(reports):
        raise SweepError(f"cannot sample {n} from a corpus of {len(reports)}")
    return random.Random(seed).sample(list(reports), n)


def record_seed(config_seed: int, report_id: str) -> int:
    """Per-record generation seed, independent of execution order."""
    digest = hashlib.blake2b(f"{config_seed}:{report_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class PipelineBackends:
    """Pluggable model access for the pipeline: generation, embedding, reranking."""

    generate: Callable[[GenerationRequest], GenerationResponse]
    embedder: Embedder
    reranker: RerankScorer

    @classmethod
    def remote(cls, endpoint: str, embed_model: str = "gte-large",
               timeout: float = 120.0) -> "PipelineBackends":
        return cls(
            generate=lambda req: generate(endpoint, req, timeout=timeout),
            embedder=RemoteEmbedder(endpoint, embed_model, timeout=timeout),
            reranker=TokenOverlapReranker(),
        )


def extract_one(report: Report, schema: LabelSchema, config: PipelineConfig,
                backends: PipelineBackends, capture_errors: bool = True,
                no_timestamps: bool = False,
                context_cache: dict | None = None) -> ExtractionRecord:
    """Run one report through select-context -> prompt -> generate -> parse."""
    try:
        cache_key = (report.id, config.retrieval)
        context = context_cache.get(cache_key) if context_cache is not None else None
        if context is None:
            context = select_context(report, schema, config.retrieval,
                                     backends.embedder, backends.reranker)
            if context_cache is not None:
                context_cache[cache_key] = context
        exemplars = default_exemplars(schema) if config.prompt.few_shot is not FewShot.NONE else ()
        prompt = build_prompt(context, schema, config.prompt, exemplars)
        request = GenerationRequest(
            model=config.model_name,
            prompt=prompt,
            json_mode=config.json_mode,
            temperature=config.temperature,
            top_k=config.top_k,
            top_p=config.top_p,
            seed=record_seed(config.seed, report.id),
        )
        response = backends.generate(request)
        parsed = parse_label(response.raw_text, schema)
        return ExtractionRecord(
            report_id=report.id,
            config_hash=config.config_hash,
            raw_output=response.raw_text,
            parsed=parsed,
            rag_used=context.rag_used,
            rerank_score=context.rerank_score,
            latency_ms=0.0 if no_timestamps else response.latency_ms,
            timestamp=0.0 if no_timestamps else time.time(),
        )
    except LmClientError as e:
        if not capture_errors:
            raise
        return ExtractionRecord(
            report_id=report.id,
            config_hash=config.config_hash,
            raw_output="",
            parsed=ParsedLabel.invalid(InvalidReason.EMPTY),
            rag_used=False,
            rerank_score=None,
            latency_ms=0.0,
            timestamp=0.0 if no_timestamps else time.time(),
            error=str(e),
        )


class ResultStore:
    """Append-only JSONL result store with crash recovery.

    A process killed mid-append leaves a truncated final line; open() trims it
    so the pair is recomputed on resume. Any other malformed line means real
    corruption and aborts with a diagnostic.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.records: list[ExtractionRecord] = []
        self._pairs: set[tuple[str, str]] = set()

    @classmethod
    def open(cls, path) -> "ResultStore":
        store = cls(path)
        p = store.path
        if not p.exists():
            return store
        raw = p.read_bytes()
        if raw and not raw.endswith(b"\n"):
            raw = raw[: raw.rfind(b"\n") + 1] if b"\n" in raw else b""
            with open(p, "r+b") as fh:
                fh.truncate(len(raw))
        for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = ExtractionRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError) as e:
                raise StoreCorruptError(f"{p}: line {lineno}: unreadable record ({e})") from e
            pair = (record.report_id, record.config_hash)
            if pair in store._pairs:
                raise StoreCorruptError(f"{p}: line {lineno}: duplicate pair {pair}")
            store._pairs.add(pair)
            store.records.append(record)
        return store

    @property
    def pairs(self) -> set[tuple[str, str]]:
        return set(self._pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self._pairs

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: ExtractionRecord) -> None:
        """Durably append one record; duplicates are an error."""
        pair = (record.report_id, record.config_hash)
        if pair in self._pairs:
            raise StoreCorruptError(f"duplicate append for pair {pair}")
        line = json.dumps(record.to_dict(), ensure_ascii=False)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._pairs.add(pair)
        self.records.append(record)


def run_sweep(reports: list[Report], configs: list[PipelineConfig], endpoint: str | None,
              store_path, schema: LabelSchema, parallelism: int = 4,
              backends: PipelineBackends | None = None, no_timestamps: bool = False,
              progress: Callable[[int, int], None] | None = None) -> ResultStore:
    """Run every (report, config) pair not already in the store.

    Workers run extractions concurrently (bounded pool); only this thread
    appends to the store, one durable record per completed pair. Backend
    failures become invalid records rather than aborting, and interrupted
    sweeps resume by skipping completed pairs.
    """
    if parallelism < 1:
        raise SweepError("parallelism must be >= 1")
    store = ResultStore.open(store_path)
    if backends is None:
        embed_models = {c.retrieval.embed_model for c in configs}
        if len(embed_models) > 1:
            raise SweepError("a single sweep cannot mix embed_model values without injected backends")
        backends = PipelineBackends.remote(endpoint, embed_model=embed_models.pop())
    pending = [
        (report, config)
        for config in configs
        for report in reports
        if (report.id, config.config_hash) not in store
    ]
    context_cache: dict = {}
    done = 0
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [
            pool.submit(extract_one, report, schema, config, backends,
                        True, no_timestamps, context_cache)
            for report, config in pending
        ]
        # Consume in submission order: the store stays deterministic under a
        # deterministic backend, and a crash only loses work that resume recomputes.
        for future in futures:
            store.append(future.result())
            done += 1
            if progress is not None:
                progress(done, len(pending))
    return store


# ----------------------------------------------------------------------------
# Aggregation
# ----------------------------------------------------------------------------

_FALSY_AXIS_VALUES = {"off", "none", "simple", "false", False, 0}


@dataclass(frozen=True)
class AxisComparison:
    axis: str
    value_on: object
    value_off: object
    per_model: dict[str, tuple[float, float, float]]  # model -> (acc_on, acc_off, delta)
    mean_delta: float
    sd_delta: float
    outcome: str  # "tested" | "no_difference" | "uniform_delta" | "insufficient_models"
    paired: StatTestResult | None

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "value_on": self.value_on,
            "value_off": self.value_off,
            "per_model": {
                m: {"acc_on": a, "acc_off": b, "delta": d}
                for m, (a, b, d) in self.per_model.items()
            },
            "mean_delta": self.mean_delta,
            "sd_delta": self.sd_delta,
            "outcome": self.outcome,
            "paired_t": self.paired.to_dict() if self.paired else None,
        }


@dataclass
class AggregateResult:
    rows: list[tuple[PipelineConfig, MetricsReport]]  # sorted by accuracy, then macro F1
    comparisons: list[AxisComparison]
    correlations: dict[str, dict | str]

    CONFIG_COLUMNS = (
        "config_hash", "model_name", "param_count_b", "quant_bits", "prompt_style",
        "few_shot", "json_instruction", "json_mode", "temperature", "top_k", "top_p",
        "retrieval_mode", "seed",
    )

    def csv_lines(self) -> list[str]:
        header = ",".join(self.CONFIG_COLUMNS + TABLE_COLUMNS)
        lines = [header]
        for config, report in self.rows:
            cells = [
                config.config_hash, config.model_name, config.param_count_b,
                config.quant_bits, config.prompt.style.value, config.prompt.few_shot.value,
                config.prompt.json_instruction, config.json_mode, config.temperature,
                config.top_k, config.top_p, config.retrieval.mode, config.seed,
            ]
            cells += [f"{v:.6f}" for v in report.csv_row()]
            lines.append(",".join(str(c) for c in cells))
        return lines

    def to_csv(self) -> str:
        return "\n".join(self.csv_lines()) + "\n"

    def comparisons_json(self) -> dict:
        return {
            "comparisons": [c.to_dict() for c in self.comparisons],
            "correlations": {
                k: (v if isinstance(v, str) else v) for k, v in self.correlations.items()
            },
        }


def _axis_value(config: PipelineConfig, axis: str):
    node = config.to_dict()
    for part in axis.split("."):
        if not isinstance(node, dict) or part not in node:
            raise SweepError(f"unknown axis {axis!r}")
        node = node[part]
    return node


def _compare_axis(axis: str, rows: list[tuple[PipelineConfig, MetricsReport]]) -> AxisComparison:
    values = sorted({repr(_axis_value(c, axis)) for c, _ in rows})
    distinct = {repr(_axis_value(c, axis)): _axis_value(c, axis) for c, _ in rows}
    if len(values) != 2:
        raise SweepError(f"axis {axis!r} must take exactly 2 values in the store, got {len(values)}")
    a, b = distinct[values[0]], distinct[values[1]]
    if a in _FALSY_AXIS_VALUES:
        value_off, value_on = a, b
    elif b in _FALSY_AXIS_VALUES:
        value_off, value_on = b, a
    else:
        value_off, value_on = a, b

    per_model: dict[str, tuple[float, float, float]] = {}
    models = sorted({c.model_name for c, _ in rows})
    on_acc, off_acc = [], []
    for model in models:
        accs_on = [r.accuracy for c, r in rows
                   if c.model_name == model and _axis_value(c, axis) == value_on]
        accs_off = [r.accuracy for c, r in rows
                    if c.model_name == model and _axis_value(c, axis) == value_off]
        if not accs_on or not accs_off:
            continue
        mean_on = sum(accs_on) / len(accs_on)
        mean_off = sum(accs_off) / len(accs_off)
        per_model[model] = (mean_on, mean_off, mean_on - mean_off)
        on_acc.append(mean_on)
        off_acc.append(mean_off)

    deltas = [d for _, _, d in per_model.values()]
    if len(deltas) < 2:
        mean_delta = deltas[0] if deltas else 0.0
        outcome = "no_difference" if mean_delta == 0.0 else "insufficient_models"
        return AxisComparison(axis, value_on, value_off, per_model, mean_delta, 0.0,
                              outcome, None)
    mean_delta = sum(deltas) / len(deltas)
    sd_delta = math.sqrt(sum((d - mean_delta) ** 2 for d in deltas) / (len(deltas) - 1))
    try:
        paired = paired_t(on_acc, off_acc)
        outcome = "no_difference" if sd_delta == 0.0 and mean_delta == 0.0 else "tested"
    except MetricsError:
        paired = None
        outcome = "no_difference" if mean_delta == 0.0 else "uniform_delta"
    return AxisComparison(axis, value_on, value_off, per_model, mean_delta, sd_delta,
                          outcome, paired)


def _correlation(xs: list[float], ys: list[float]) -> dict | str:
    try:
        result = spearman(xs, ys)
    except MetricsError as e:
        return f"not computed: {e}"
    return result.to_dict()


def aggregate(store: ResultStore, gold: dict[str, str], schema: LabelSchema,
              configs: list[PipelineConfig], compare_axes: tuple[str, ...] = (),
              expected_report_ids: list[str] | None = None) -> AggregateResult:
    """Per-config metrics plus axis comparisons and size/quantization correlations.

    Raises MissingRecordsError when the store lacks any (report, config) pair
    for the requested configs.
    """
    by_config: dict[str, dict[str, ExtractionRecord]] = {}
    for record in store.records:
        by_config.setdefault(record.config_hash, {})[record.report_id] = record

    config_by_hash = {c.config_hash: c for c in configs}
    if expected_report_ids is None:
        seen: set[str] = set()
        for h in config_by_hash:
            seen.update(by_config.get(h, {}))
        expected_report_ids = sorted(seen)
    missing = [
        (rid, h)
        for h in config_by_hash
        for rid in expected_report_ids
        if rid not in by_config.get(h, {})
    ]
    if missing:
        raise MissingRecordsError(missing)
    absent_gold = [rid for rid in expected_report_ids if rid not in gold]
    if absent_gold:
        raise SweepError(f"no gold label for report ids: {absent_gold[:5]}")

    rows: list[tuple[PipelineConfig, MetricsReport]] = []
    for h, config in config_by_hash.items():
        records = by_config[h]
        preds = [records[rid].parsed for rid in expected_report_ids]
        golds = [gold[rid] for rid in expected_report_ids]
        rows.append((config, compute_metrics(confusion(preds, golds, schema))))
    rows.sort(key=lambda cr: (-cr[1].accuracy, -cr[1].macro_f1, cr[0].config_hash))

    comparisons = [_compare_axis(axis, rows) for axis in compare_axes]

    accs = [r.accuracy for _, r in rows]
    f1s = [r.macro_f1 for _, r in rows]
    log_params = [math.log(c.param_count_b) for c, _ in rows]
    quant = [float(c.quant_bits) for c, _ in rows]
    correlations = {
        "accuracy_vs_log_param_count": _correlation(accs, log_params),
        "macro_f1_vs_log_param_count": _correlation(f1s, log_params),
        "accuracy_vs_quant_bits": _correlation(accs, quant),
        "macro_f1_vs_quant_bits": _correlation(f1s, quant),
    }
    return AggregateResult(rows=rows, comparisons=comparisons, correlations=correlations)
