"""Report data model, text normalization, synthetic corpus generation, persistence."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class CorpusError(ValueError):
    """Invalid corpus spec, schema, or corpus file."""


class Task(str, Enum):
    RADIOLOGY = "radiology"
    PATHOLOGY = "pathology"


def normalize_text(raw: str) -> str:
    """Collapse all whitespace runs (including newlines) to single spaces and strip.

    Idempotent; preserves every non-whitespace character in order. Newlines after
    a sentence-ending period and mid-sentence newlines both become one space, so
    the result is a single newline-free paragraph.
    """
    return " ".join(raw.split())


@dataclass(frozen=True)
class Report:
    id: str
    task: Task
    text: str
    word_count: int

    def __post_init__(self):
        if not self.id:
            raise CorpusError("report id must be nonempty")
        if "\n" in self.text or "\r" in self.text:
            raise CorpusError(f"report {self.id}: text contains newline characters")
        n = len(self.text.split())
        if self.word_count != n:
            raise CorpusError(
                f"report {self.id}: word_count {self.word_count} != token count {n}"
            )


def make_report(report_id: str, task: Task, raw_text: str) -> Report:
    """Build a Report from raw text, normalizing and computing the word count."""
    text = normalize_text(raw_text)
    return Report(id=report_id, task=Task(task), text=text, word_count=len(text.split()))


@dataclass(frozen=True)
class GoldAnnotation:
    report_id: str
    label: str


@dataclass(frozen=True)
class LabelSchema:
    task: Task
    valid_labels: tuple[str, ...]
    nr_label: str
    answer_key: str
    retrieval_keywords: str

    def __post_init__(self):
        if not self.answer_key:
            raise CorpusError("answer_key must be nonempty")
        folded = [l.strip().casefold() for l in self.valid_labels]
        if len(set(folded)) != len(folded):
            raise CorpusError("valid_labels must be unique after case-folding/trimming")
        if self.nr_label not in self.valid_labels:
            raise CorpusError(f"nr_label {self.nr_label!r} not in valid_labels")

    def folded_lookup(self) -> dict[str, str]:
        """Map case-folded label text to the canonical label spelling."""
        return {l.strip().casefold(): l for l in self.valid_labels}


RADIOLOGY_SCHEMA = LabelSchema(
    task=Task.RADIOLOGY,
    valid_labels=("0", "1", "1a", "1b", "2", "2a", "2b", "3", "3a", "3b", "3c", "4", "NR"),
    nr_label="NR",
    answer_key="score",
    retrieval_keywords="follow-up score",
)

PATHOLOGY_SCHEMA = LabelSchema(
    task=Task.PATHOLOGY,
    valid_labels=("positive", "negative", "NR"),
    nr_label="NR",
    answer_key="idh_status",
    retrieval_keywords="IDH IDH1 IDH2 IDH1/IDH2 detected positive negative",
)

BUILTIN_SCHEMAS = {Task.RADIOLOGY: RADIOLOGY_SCHEMA, Task.PATHOLOGY: PATHOLOGY_SCHEMA}

# Reference class distributions for the two tasks. The radiology percentages are
# published rounded and sum to 1.0001; CorpusSpec renormalizes internally.
RADIOLOGY_DISTRIBUTION = {
    "1": 0.0007, "1a": 0.0280, "1b": 0.0170, "2": 0.1174, "2a": 0.0154,
    "2b": 0.0014, "3": 0.0121, "3a": 0.0064, "3b": 0.0400, "3c": 0.0529,
    "4": 0.0511, "NR": 0.6577,
}
PATHOLOGY_DISTRIBUTION = {"positive": 0.0715, "negative": 0.7238, "NR": 0.2047}

_DISTRIBUTION_SUM_TOL = 5e-3


@dataclass(frozen=True)
class CorpusSpec:
    task: Task
    n_reports: int
    class_distribution: dict[str, float]
    length_mean_words: float
    length_sd_words: float
    distractor_rate: float
    seed: int

    def __post_init__(self):
        if self.n_reports < 1:
            raise CorpusError("n_reports must be >= 1")
        if self.length_mean_words <= 0 or self.length_sd_words <= 0:
            raise CorpusError("length parameters must be positive")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise CorpusError("distractor_rate must be in [0, 1]")
        if any(p < 0 for p in self.class_distribution.values()):
            raise CorpusError("class probabilities must be nonnegative")
        total = sum(self.class_distribution.values())
        if abs(total - 1.0) > _DISTRIBUTION_SUM_TOL:
            raise CorpusError(f"class distribution sums to {total}, expected 1")

    def normalized_distribution(self) -> dict[str, float]:
        total = sum(self.class_distribution.values())
        return {k: v / total for k, v in self.class_distribution.items()}


def default_corpus_spec(task: Task, n_reports: int, seed: int) -> CorpusSpec:
    """Spec parameterized from the reference datasets for the given task."""
    task = Task(task)
    if task is Task.RADIOLOGY:
        return CorpusSpec(task, n_reports, dict(RADIOLOGY_DISTRIBUTION), 265.0, 66.0, 0.1, seed)
    return CorpusSpec(task, n_reports, dict(PATHOLOGY_DISTRIBUTION), 2504.0, 2563.0, 0.5, seed)


# Filler vocabularies deliberately exclude the retrieval keywords and the words
# used by the answer/distractor sentence templates, so keyword retrieval and the
# mock backend's text matching stay unambiguous on synthetic corpora.
_RADIOLOGY_VOCAB = (
    "signal", "lesion", "margin", "stable", "examination", "contrast", "axial",
    "sequence", "imaging", "region", "frontal", "parietal", "temporal", "occipital",
    "white", "matter", "ventricle", "midline", "cavity", "resection", "gliosis",
    "edema", "restricted", "diffusion", "flair", "hyperintensity", "postsurgical",
    "unchanged", "craniotomy", "enhancement", "periventricular", "subcortical",
    "foci", "chronic", "blood", "products", "susceptibility", "artifact",
    "interval", "comparison", "prior", "study", "demonstrates", "without",
    "residual", "mass", "effect", "sulci", "cisterns", "patent", "sinuses",
    "clear", "orbits", "unremarkable", "brainstem", "cerebellum", "hemisphere",
    "cortex", "volume", "loss", "encephalomalacia", "treated", "radiation",
    "changes", "dural", "thickening", "overlying", "scalp", "soft", "tissue",
)
_PATHOLOGY_VOCAB = (
    "specimen", "received", "formalin", "labeled", "fragments", "tumor", "cells",
    "atypical", "nuclei", "mitotic", "figures", "necrosis", "vascular",
    "proliferation", "infiltrating", "glioma", "astrocytic", "morphology",
    "immunostains", "performed", "index", "elevated", "gfap", "reactive",
    "chromatin", "cytoplasm", "eosinophilic", "sections", "show", "hypercellular",
    "pleomorphic", "hyperchromatic", "microvascular", "palisading", "consistent",
    "grade", "diagnosis", "comment", "molecular", "testing", "pending",
    "additional", "material", "submitted", "block", "frozen", "section",
    "intraoperative", "consultation", "permanent", "evaluation", "microscopic",
    "description", "gross", "tan-white", "soft", "measuring", "aggregate",
    "cassette", "entirely", "portions", "cerebral", "white-matter", "infiltrate",
)

_MAX_SENTENCE_CHARS = 66  # keeps every generated sentence inside one retrieval chunk


def answer_sentence(task: Task, label: str) -> str:
    """The templated sentence that embeds a gold label in a synthetic report."""
    task = Task(task)
    if task is Task.RADIOLOGY:
        return f"BT-RADS follow-up score: {label}."
    qualifier = "mutant" if label == "positive" else "wildtype"
    return f"IDH1/IDH2 mutation status: {label} ({qualifier} detected)."


def distractor_sentence(task: Task) -> str:
    """A mention of the target concept that does not carry the answer."""
    if Task(task) is Task.RADIOLOGY:
        return "The prior BT-RADS category was reviewed with the team."
    return "Immunohistochemistry for IDH was requested during review."


def _filler_sentence(rng: random.Random, vocab: tuple[str, ...]) -> str:
    words = [rng.choice(vocab) for _ in range(rng.randint(4, 7))]
    while len(" ".join(words)) + 1 > _MAX_SENTENCE_CHARS and len(words) > 2:
        words.pop()
    return words[0].capitalize() + " " + " ".join(words[1:]) + "."


def generate_synthetic_corpus(
    spec: CorpusSpec, schema: LabelSchema | None = None
) -> tuple[list[Report], list[GoldAnnotation]]:
    """Generate a labeled synthetic corpus, deterministic given spec.seed.

    Each report is a single paragraph of filler sentences. Non-NR reports embed
    the task's answer sentence at a random position; with probability
    distractor_rate a non-answer mention of the target concept is inserted.
    """
    schema = schema or BUILTIN_SCHEMAS[spec.task]
    unknown = set(spec.class_distribution) - set(schema.valid_labels)
    if unknown:
        raise CorpusError(f"distribution references labels outside the schema: {sorted(unknown)}")

    dist = spec.normalized_distribution()
    labels = sorted(dist)
    weights = [dist[l] for l in labels]
    vocab = _RADIOLOGY_VOCAB if spec.task is Task.RADIOLOGY else _PATHOLOGY_VOCAB
    prefix = "rad" if spec.task is Task.RADIOLOGY else "path"

    rng = random.Random(spec.seed)
    reports: list[Report] = []
    annotations: list[GoldAnnotation] = []
    for i in range(spec.n_reports):
        label = rng.choices(labels, weights)[0]
        target_words = max(30, round(rng.gauss(spec.length_mean_words, spec.length_sd_words)))
        sentences: list[str] = []
        count = 0
        while count < target_words:
            s = _filler_sentence(rng, vocab)
            sentences.append(s)
            count += len(s.split())
        if label != schema.nr_label:
            sentences.insert(rng.randrange(len(sentences) + 1), answer_sentence(spec.task, label))
        if rng.random() < spec.distractor_rate:
            sentences.insert(rng.randrange(len(sentences) + 1), distractor_sentence(spec.task))
        report = make_report(f"{prefix}-{i:06d}", spec.task, " ".join(sentences))
        reports.append(report)
        annotations.append(GoldAnnotation(report.id, label))
    return reports, annotations


def save_corpus(path, reports: list[Report], annotations: list[GoldAnnotation]) -> None:
    """Write a corpus as JSON lines: {"id", "task", "text", "label"?}."""
    labels = {a.report_id: a.label for a in annotations}
    seen: set[str] = set()
    lines = []
    for r in reports:
        if r.id in seen:
            raise CorpusError(f"duplicate report id {r.id!r}")
        seen.add(r.id)
        obj: dict = {"id": r.id, "task": r.task.value, "text": r.text}
        if r.id in labels:
            obj["label"] = labels[r.id]
        lines.append(json.dumps(obj, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_corpus(path) -> tuple[list[Report], list[GoldAnnotation]]:
    """Load a JSONL corpus; errors cite the offending 1-based line number."""
    reports: list[Report] = []
    annotations: list[GoldAnnotation] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({e.msg})") from e
            try:
                report = Report(
                    id=obj["id"],
                    task=Task(obj["task"]),
                    text=obj["text"],
                    word_count=len(obj["text"].split()),
                )
            except (KeyError, ValueError) as e:
                raise CorpusError(f"{path}: line {lineno}: invalid report ({e})") from e
            if report.id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate report id {report.id!r}")
            seen.add(report.id)
            reports.append(report)
            if "label" in obj:
                annotations.append(GoldAnnotation(report.id, obj["label"]))
    return reports, annotations


def save_schema(path, schema: LabelSchema) -> None:
    obj = {
        "task": schema.task.value,
        "valid_labels": list(schema.valid_labels),
        "nr_label": schema.nr_label,
        "answer_key": schema.answer_key,
        "retrieval_keywords": schema.retrieval_keywords,
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_schema(path) -> LabelSchema:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return LabelSchema(
            task=Task(obj["task"]),
            valid_labels=tuple(obj["valid_labels"]),
            nr_label=obj["nr_label"],
            answer_key=obj["answer_key"],
            retrieval_keywords=obj["retrieval_keywords"],
        )
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise CorpusError(f"{path}: invalid schema file ({e})") from e
