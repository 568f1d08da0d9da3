import json

import pytest

from reportex.cli import main
from reportex.corpus import (
    RADIOLOGY_SCHEMA,
    Task,
    default_corpus_spec,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
    save_schema,
)
from reportex.mock_server import MockLmServer, MockMode, MockModel
from reportex.sweep import PipelineConfig


@pytest.fixture(scope="module")
def corpus_files(tmp_path_factory):
    """Corpus, schema, config, and grid files plus a live oracle server."""
    root = tmp_path_factory.mktemp("cli")
    reports, annotations = generate_synthetic_corpus(
        default_corpus_spec(Task.RADIOLOGY, 30, seed=80))
    gold = {a.report_id: a.label for a in annotations}

    corpus_path = root / "corpus.jsonl"
    save_corpus(corpus_path, reports, annotations)
    schema_path = root / "schema.json"
    save_schema(schema_path, RADIOLOGY_SCHEMA)

    config = PipelineConfig(model_name="mock-7b")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config.to_dict()))

    grid_path = root / "grid.json"
    grid_path.write_text(json.dumps({
        "base": config.to_dict(),
        "axes": {"top_k": [2, 40]},
        "sample": {"n": 20, "seed": 5},
    }))

    server = MockLmServer(MockModel(MockMode.ORACLE, gold, RADIOLOGY_SCHEMA, reports)).start()
    yield {
        "root": root, "reports": reports, "gold": gold, "corpus": str(corpus_path),
        "schema": str(schema_path), "config": str(config_path), "grid": str(grid_path),
        "endpoint": server.endpoint,
    }
    server.stop()


class TestGenerateCorpus:
    def _spec_file(self, tmp_path, **overrides):
        spec = {"task": "radiology", "n_reports": 25, "seed": 3}
        spec.update(overrides)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        return path

    def test_valid_spec(self, tmp_path, capsys):
        spec = self._spec_file(tmp_path)
        out = tmp_path / "corpus.jsonl"
        assert main(["generate-corpus", "--spec", str(spec), "--out", str(out)]) == 0
        reports, annotations = load_corpus(out)
        assert len(reports) == 25
        assert len(annotations) == 25
        assert "NR" in capsys.readouterr().out

    def test_bad_distribution_exit_2(self, tmp_path):
        spec = self._spec_file(tmp_path, class_distribution={"2": 0.4, "NR": 0.4})
        assert main(["generate-corpus", "--spec", str(spec), "--out",
                     str(tmp_path / "x.jsonl")]) == 2

    def test_seed_repetition_identical_files(self, tmp_path):
        spec = self._spec_file(tmp_path)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["generate-corpus", "--spec", str(spec), "--out", str(a)]) == 0
        assert main(["generate-corpus", "--spec", str(spec), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestExtract:
    def _report_file(self, corpus_files, label):
        reports, gold = corpus_files["reports"], corpus_files["gold"]
        report = next(r for r in reports if gold[r.id] == label)
        path = corpus_files["root"] / f"report_{label}.json"
        path.write_text(json.dumps({"id": report.id, "task": "radiology", "text": report.text}))
        return path, report

    def test_oracle_extract(self, corpus_files, capsys):
        path, report = self._report_file(corpus_files, "4")
        code = main(["extract", str(path), "--config", corpus_files["config"],
                     "--schema", corpus_files["schema"], "--endpoint", corpus_files["endpoint"]])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"report_id": report.id, "label": "4", "rag_used": False}

    def test_show_raw(self, corpus_files, capsys):
        path, _ = self._report_file(corpus_files, "2")
        code = main(["extract", str(path), "--config", corpus_files["config"],
                     "--schema", corpus_files["schema"], "--endpoint", corpus_files["endpoint"],
                     "--show-raw"])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["raw_output"] == '{"score": "2"}'

    def test_garbage_backend_is_data_not_failure(self, corpus_files, capsys):
        with MockLmServer(MockModel(MockMode.GARBAGE, corpus_files["gold"], RADIOLOGY_SCHEMA,
                                    corpus_files["reports"])) as garbage:
            path, _ = self._report_file(corpus_files, "2")
            code = main(["extract", str(path), "--config", corpus_files["config"],
                         "--schema", corpus_files["schema"], "--endpoint", garbage.endpoint])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["label"] == "INVALID"
        assert out["invalid_reason"] == "no_json"

    def test_missing_schema_exit_2(self, corpus_files):
        path, _ = self._report_file(corpus_files, "2")
        assert main(["extract", str(path), "--config", corpus_files["config"],
                     "--schema", "/nonexistent/schema.json",
                     "--endpoint", corpus_files["endpoint"]]) == 2

    def test_backend_unreachable_exit_3(self, corpus_files, monkeypatch):
        monkeypatch.setattr("reportex.lm_client.DEFAULT_RETRY_BASE", 0.001)
        path, _ = self._report_file(corpus_files, "2")
        assert main(["extract", str(path), "--config", corpus_files["config"],
                     "--schema", corpus_files["schema"],
                     "--endpoint", "http://127.0.0.1:9"]) == 3


class TestSweepAndReport:
    def test_sweep_then_report(self, corpus_files, tmp_path, capsys):
        store = tmp_path / "store.jsonl"
        code = main(["sweep", "--grid", corpus_files["grid"], "--corpus", corpus_files["corpus"],
                     "--schema", corpus_files["schema"], "--store", str(store),
                     "--endpoint", corpus_files["endpoint"], "--parallelism", "4",
                     "--no-timestamps"])
        assert code == 0
        assert len(store.read_text().splitlines()) == 40  # 20 reports x 2 configs
        capsys.readouterr()

        csv_path = tmp_path / "table.csv"
        code = main(["report", "--store", str(store), "--corpus", corpus_files["corpus"],
                     "--schema", corpus_files["schema"], "--grid", corpus_files["grid"],
                     "--csv", str(csv_path), "--compare", "top_k"])
        assert code == 0
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 3
        for line in lines[1:]:
            cells = line.split(",")
            assert float(cells[-7]) == 1.0  # accuracy column
        out = capsys.readouterr().out
        comparisons = json.loads(out[out.index("{"): out.rindex("}") + 1])
        assert comparisons["comparisons"][0]["outcome"] == "no_difference"

    def test_sweep_byte_deterministic_across_runs(self, corpus_files, tmp_path, capsys):
        stores = []
        for name in ("d1.jsonl", "d2.jsonl"):
            store = tmp_path / name
            assert main(["sweep", "--grid", corpus_files["grid"],
                         "--corpus", corpus_files["corpus"],
                         "--schema", corpus_files["schema"], "--store", str(store),
                         "--endpoint", corpus_files["endpoint"], "--parallelism", "4",
                         "--no-timestamps"]) == 0
            stores.append(store.read_bytes())
        assert stores[0] == stores[1]

    def test_rerun_sweep_adds_nothing(self, corpus_files, tmp_path, capsys):
        store = tmp_path / "store2.jsonl"
        args = ["sweep", "--grid", corpus_files["grid"], "--corpus", corpus_files["corpus"],
                "--schema", corpus_files["schema"], "--store", str(store),
                "--endpoint", corpus_files["endpoint"], "--no-timestamps"]
        assert main(args) == 0
        before = store.read_text()
        assert main(args) == 0
        assert store.read_text() == before

    def test_incomplete_store_exit_4(self, corpus_files, tmp_path, capsys):
        store = tmp_path / "partial.jsonl"
        # run only half the grid by sweeping with a single-config grid
        single = tmp_path / "single_grid.json"
        grid_obj = json.loads(open(corpus_files["grid"]).read())
        grid_obj["axes"] = {}
        single.write_text(json.dumps(grid_obj))
        assert main(["sweep", "--grid", str(single), "--corpus", corpus_files["corpus"],
                     "--schema", corpus_files["schema"], "--store", str(store),
                     "--endpoint", corpus_files["endpoint"], "--no-timestamps"]) == 0
        capsys.readouterr()
        code = main(["report", "--store", str(store), "--corpus", corpus_files["corpus"],
                     "--schema", corpus_files["schema"], "--grid", corpus_files["grid"]])
        assert code == 4

    def test_report_sort_order(self, corpus_files, tmp_path, capsys):
        # a noisy backend gives each model a different accuracy (per-model rng
        # stream); the plain-text table must come out sorted by accuracy
        reports, gold = corpus_files["reports"], corpus_files["gold"]
        grid = tmp_path / "model_grid.json"
        grid_obj = json.loads(open(corpus_files["grid"]).read())
        grid_obj["axes"] = {"model_name": ["m-a", "m-b", "m-c"]}
        grid.write_text(json.dumps(grid_obj))
        store = tmp_path / "sorted.jsonl"
        with MockLmServer(MockModel(MockMode.NOISY_ORACLE, gold, RADIOLOGY_SCHEMA,
                                    reports, seed=9, noise_rate=0.4)) as noisy:
            assert main(["sweep", "--grid", str(grid), "--corpus", corpus_files["corpus"],
                         "--schema", corpus_files["schema"], "--store", str(store),
                         "--endpoint", noisy.endpoint, "--no-timestamps"]) == 0
        capsys.readouterr()
        csv_path = tmp_path / "sorted.csv"
        assert main(["report", "--store", str(store), "--corpus", corpus_files["corpus"],
                     "--schema", corpus_files["schema"], "--grid", str(grid),
                     "--csv", str(csv_path)]) == 0
        rows = csv_path.read_text().splitlines()[1:]
        accuracies = [float(r.split(",")[-7]) for r in rows]
        assert accuracies == sorted(accuracies, reverse=True)
