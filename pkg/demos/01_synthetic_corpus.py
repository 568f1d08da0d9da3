"""Generate synthetic report corpora and inspect their label distributions.

The generator reproduces the two reference extraction tasks: BT-RADS follow-up
scores in radiology reports (short, one mention) and IDH mutation status in
pathology reports (long, with distracting non-answer mentions).
"""

from collections import Counter

from reportex.corpus import Task, default_corpus_spec, generate_synthetic_corpus

for task, n in ((Task.RADIOLOGY, 2000), (Task.PATHOLOGY, 300)):
    spec = default_corpus_spec(task, n, seed=42)
    reports, annotations = generate_synthetic_corpus(spec)
    gold = {a.report_id: a.label for a in annotations}

    print(f"=== {task.value}: {n} reports ===")
    mean_words = sum(r.word_count for r in reports) / len(reports)
    print(f"mean length: {mean_words:.0f} words (target {spec.length_mean_words:.0f})")

    counts = Counter(a.label for a in annotations)
    target = spec.normalized_distribution()
    print(f"{'label':>10s} {'expected':>9s} {'observed':>9s}")
    for label in sorted(target):
        print(f"{label:>10s} {target[label]:9.4f} {counts.get(label, 0) / n:9.4f}")

    labeled = next(r for r in reports if gold[r.id] != "NR")
    print("\nsample report with an embedded answer:")
    print(f"  id={labeled.id} gold={gold[labeled.id]}")
    print(f"  {labeled.text[:240]}...")
    print()
