"""Benchmark a small configuration grid and aggregate the results.

Reproduces the study design in miniature: three mock "models" whose error rate
grows with context length are swept over RAG on/off on long pathology reports.
Retrieval shortens the context, so enabling it should lift accuracy for every
model; the aggregate reports per-model deltas, a paired t-test, and rank
correlations against model size.
"""

import tempfile
from pathlib import Path

from reportex.corpus import (
    CorpusSpec,
    PATHOLOGY_DISTRIBUTION,
    PATHOLOGY_SCHEMA,
    Task,
    generate_synthetic_corpus,
)
from reportex.lm_client import GenerationResponse
from reportex.metrics import TABLE_COLUMNS
from reportex.mock_server import MockMode, MockModel
from reportex.retrieval import MockHashEmbedder, TokenOverlapReranker
from reportex.sweep import (
    PipelineBackends,
    PipelineConfig,
    SweepGrid,
    aggregate,
    enumerate_configs,
    run_sweep,
)

spec = CorpusSpec(Task.PATHOLOGY, 100, dict(PATHOLOGY_DISTRIBUTION),
                  length_mean_words=900, length_sd_words=250, distractor_rate=0.5, seed=303)
reports, annotations = generate_synthetic_corpus(spec)
gold = {a.report_id: a.label for a in annotations}

mock = MockModel(MockMode.LENGTH_NOISY, gold, PATHOLOGY_SCHEMA, reports,
                 seed=7, noise_base=0.02, noise_per_kchar=0.12, noise_cap=0.9)
backends = PipelineBackends(
    generate=lambda req: GenerationResponse(mock.complete(req.to_payload())["response"], 0.0, req.model),
    embedder=MockHashEmbedder(),
    reranker=TokenOverlapReranker(),
)

grid = SweepGrid(
    base=PipelineConfig(model_name="base", param_count_b=8, seed=7),
    axes={"model_name": ["small-4b", "mid-8b", "big-70b"],
          "retrieval.mode": ["off", "dense"]},
)
configs = enumerate_configs(grid)
print(f"sweeping {len(configs)} configurations over {len(reports)} long pathology reports")

with tempfile.TemporaryDirectory() as tmp:
    store = run_sweep(reports, configs, None, Path(tmp) / "store.jsonl",
                      PATHOLOGY_SCHEMA, backends=backends, no_timestamps=True)
    result = aggregate(store, gold, PATHOLOGY_SCHEMA, configs,
                       compare_axes=("retrieval.mode",))

print(f"\nper-config metrics ({', '.join(TABLE_COLUMNS[:3])}, ...):")
print(f"{'model':>10s} {'rag':>6s} {'accuracy':>9s} {'macro_f1':>9s}")
for config, metrics in result.rows:
    print(f"{config.model_name:>10s} {config.retrieval.mode:>6s} "
          f"{metrics.accuracy:9.3f} {metrics.macro_f1:9.3f}")

cmp = result.comparisons[0]
print(f"\nRAG comparison ({cmp.value_off} -> {cmp.value_on}):")
for model_name, (on, off, delta) in sorted(cmp.per_model.items()):
    print(f"  {model_name:>10s}: {off:.3f} -> {on:.3f}  (delta {delta:+.3f})")
print(f"mean delta {cmp.mean_delta:+.3f} +- {cmp.sd_delta:.3f}, "
      f"paired t = {cmp.paired.statistic:.2f}, p = {cmp.paired.p_value:.4f}")
