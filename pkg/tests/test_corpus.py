import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reportex.corpus import (
    CorpusError,
    CorpusSpec,
    PATHOLOGY_DISTRIBUTION,
    RADIOLOGY_DISTRIBUTION,
    Task,
    default_corpus_spec,
    generate_synthetic_corpus,
    load_corpus,
    load_schema,
    make_report,
    normalize_text,
    save_corpus,
    save_schema,
)


class TestNormalizeText:
    def test_newline_after_period(self):
        assert normalize_text("stable.\nNo new lesion.") == "stable. No new lesion."

    def test_identity_on_clean_text(self):
        assert normalize_text("already normalized text.") == "already normalized text."

    def test_mid_sentence_newline(self):
        assert normalize_text("partial line\ncontinues here") == "partial line continues here"

    def test_empty(self):
        assert normalize_text("") == ""

    def test_collapses_space_runs_and_strips(self):
        assert normalize_text("  a   b \t c \r\n d  ") == "a b c d"

    @given(st.text(max_size=300))
    def test_idempotent(self, s):
        once = normalize_text(s)
        assert normalize_text(once) == once

    @given(st.text(max_size=300))
    def test_preserves_non_whitespace_in_order(self, s):
        squeeze = lambda t: "".join(t.split())
        assert squeeze(normalize_text(s)) == squeeze(s)

    @given(st.text(max_size=300))
    def test_no_newlines_in_output(self, s):
        assert "\n" not in normalize_text(s)


class TestReport:
    def test_word_count_enforced(self):
        with pytest.raises(CorpusError):
            from reportex.corpus import Report
            Report(id="x", task=Task.RADIOLOGY, text="two words", word_count=5)

    def test_newline_rejected(self):
        with pytest.raises(CorpusError):
            from reportex.corpus import Report
            Report(id="x", task=Task.RADIOLOGY, text="a\nb", word_count=2)

    def test_make_report_normalizes(self):
        r = make_report("r1", Task.RADIOLOGY, "line one.\nline two")
        assert r.text == "line one. line two"
        assert r.word_count == 4


class TestSchema:
    def test_builtin_radiology_labels(self, radiology_schema):
        assert len(radiology_schema.valid_labels) == 13
        assert "3c" in radiology_schema.valid_labels
        assert radiology_schema.nr_label == "NR"

    def test_schema_roundtrip(self, tmp_path, pathology_schema):
        path = tmp_path / "schema.json"
        save_schema(path, pathology_schema)
        assert load_schema(path) == pathology_schema

    def test_duplicate_after_folding_rejected(self):
        from reportex.corpus import LabelSchema
        with pytest.raises(CorpusError):
            LabelSchema(Task.RADIOLOGY, ("A", "a"), "A", "score", "kw")

    def test_shipped_schema_files_match_builtins(self, radiology_schema, pathology_schema):
        from importlib import resources
        data = resources.files("reportex.data")
        assert load_schema(data / "radiology_schema.json") == radiology_schema
        assert load_schema(data / "pathology_schema.json") == pathology_schema


class TestCorpusSpec:
    def test_rejects_bad_distribution_sum(self):
        with pytest.raises(CorpusError):
            CorpusSpec(Task.PATHOLOGY, 10, {"positive": 0.5, "NR": 0.2}, 100, 10, 0.1, 1)

    def test_accepts_rounded_published_distribution(self):
        # The published radiology percentages sum to 1.0001; the spec
        # renormalizes internally rather than rejecting them.
        spec = default_corpus_spec(Task.RADIOLOGY, 10, 1)
        assert abs(sum(spec.normalized_distribution().values()) - 1.0) < 1e-12

    def test_rejects_unknown_labels(self):
        spec = CorpusSpec(Task.PATHOLOGY, 10, {"positive": 0.5, "bogus": 0.5}, 100, 10, 0.1, 1)
        with pytest.raises(CorpusError):
            generate_synthetic_corpus(spec)


class TestSyntheticCorpus:
    def test_deterministic(self):
        spec = default_corpus_spec(Task.RADIOLOGY, 50, seed=7)
        a = generate_synthetic_corpus(spec)
        b = generate_synthetic_corpus(spec)
        assert a == b

    def test_count_and_ids_unique(self, small_radiology_corpus):
        reports, annotations = small_radiology_corpus
        assert len(reports) == 200
        assert len({r.id for r in reports}) == 200
        assert len(annotations) == 200

    def test_labels_embedded_in_text(self, small_radiology_corpus, radiology_schema):
        reports, annotations = small_radiology_corpus
        gold = {a.report_id: a.label for a in annotations}
        for r in reports:
            label = gold[r.id]
            if label == radiology_schema.nr_label:
                assert "follow-up score" not in r.text
            else:
                assert f"BT-RADS follow-up score: {label}." in r.text

    def test_pathology_answer_sentences(self):
        spec = CorpusSpec(Task.PATHOLOGY, 60, dict(PATHOLOGY_DISTRIBUTION), 120, 30, 0.5, 3)
        reports, annotations = generate_synthetic_corpus(spec)
        gold = {a.report_id: a.label for a in annotations}
        for r in reports:
            if gold[r.id] != "NR":
                assert f"IDH1/IDH2 mutation status: {gold[r.id]}" in r.text

    def test_length_floor(self):
        spec = CorpusSpec(Task.RADIOLOGY, 40, dict(RADIOLOGY_DISTRIBUTION), 35, 60, 0.0, 5)
        reports, _ = generate_synthetic_corpus(spec)
        assert all(r.word_count >= 30 for r in reports)

    def test_distribution_within_three_binomial_se(self):
        n = 2000
        spec = default_corpus_spec(Task.RADIOLOGY, n, seed=23)
        _, annotations = generate_synthetic_corpus(spec)
        dist = spec.normalized_distribution()
        counts = {}
        for a in annotations:
            counts[a.label] = counts.get(a.label, 0) + 1
        for label, p in dist.items():
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts.get(label, 0) / n - p) <= 3 * se + 1e-12, label


class TestPersistence:
    def test_roundtrip(self, tmp_path, small_radiology_corpus):
        reports, annotations = small_radiology_corpus
        path = tmp_path / "corpus.jsonl"
        save_corpus(path, reports, annotations)
        loaded_reports, loaded_annotations = load_corpus(path)
        assert loaded_reports == reports
        assert loaded_annotations == annotations

    def test_label_omitted_for_unannotated(self, tmp_path, small_radiology_corpus):
        reports, _ = small_radiology_corpus
        path = tmp_path / "corpus.jsonl"
        save_corpus(path, reports[:3], [])
        lines = path.read_text().splitlines()
        assert all("label" not in json.loads(line) for line in lines)

    def test_duplicate_id_rejected(self, tmp_path, small_radiology_corpus):
        reports, _ = small_radiology_corpus
        path = tmp_path / "corpus.jsonl"
        save_corpus(path, reports[:2], [])
        line = path.read_text().splitlines()[0]
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(path)

    def test_truncated_final_line_cites_line_number(self, tmp_path, small_radiology_corpus):
        reports, annotations = small_radiology_corpus
        path = tmp_path / "corpus.jsonl"
        save_corpus(path, reports[:3], annotations[:3])
        content = path.read_text()
        path.write_text(content[: len(content) - 40])
        with pytest.raises(CorpusError, match="line 3"):
            load_corpus(path)

    def test_save_rejects_duplicate_ids(self, tmp_path, small_radiology_corpus):
        reports, _ = small_radiology_corpus
        with pytest.raises(CorpusError):
            save_corpus(tmp_path / "x.jsonl", [reports[0], reports[0]], [])
