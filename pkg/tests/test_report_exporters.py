# tests/test_report_exporters.py

import json

import numpy as np
import pandas as pd
import pytest

from conftest import random_sequences
from motion_metric.evaluator import AttentionExport, EvalReport, Neighbor, QueryResult
from motion_metric.report_exporters import (
    build_results_table,
    export_reports_to_excel,
    export_table_to_csv,
    generate_table_markdown,
    read_embeddings,
    save_attention_traces,
    save_reports_to_json,
    save_table_to_markdown,
    write_embeddings,
)


def _report(name, fpr, nmi=0.5, f1=0.25):
    neighbors = [Neighbor(1, 2, "b-0", "b", 0.125)]
    return EvalReport(name, fpr, nmi, f1, retrieval=[QueryResult(0, "a-0", "a", neighbors)], split_hash="cafe")


@pytest.fixture
def reports():
    return [_report("learned", {0.9: 0.1, 0.7: 0.05}), _report("dtw/euclidean", {0.9: 0.4, 0.7: 0.2}, nmi=0.3)]


def test_results_table(reports):
    table = build_results_table(reports, [0.7, 0.9])
    assert list(table.columns) == ["method", "FPR-90", "FPR-70", "NMI", "F1"]
    assert table.loc[0, "FPR-90"] == 10.0
    assert table.loc[1, "method"] == "dtw/euclidean"


def test_results_table_with_names(reports):
    table = build_results_table(reports, [0.9], names=["full", "reduced"])
    assert list(table["method"]) == ["full", "reduced"]


def test_markdown_rendering(reports):
    text = generate_table_markdown(build_results_table(reports, [0.9]), "Verification", "cafe")
    lines = text.splitlines()
    assert lines[0] == "# Verification"
    assert "Data split hash: `cafe`" in text
    assert "| method | FPR-90 | NMI | F1 |" in lines
    assert generate_table_markdown(pd.DataFrame()).strip() == "No results to report."


def test_artifacts_are_written(app_config, reports, tmp_path):
    table = build_results_table(reports, [0.9, 0.7])
    json_path = save_reports_to_json(reports, tmp_path, "eval")
    csv_path = export_table_to_csv(table, tmp_path, "eval")
    xlsx_path = export_reports_to_excel(reports, table, tmp_path, "eval")
    md_path = save_table_to_markdown(table, tmp_path, "eval", "Verification")

    records = json.loads(json_path.read_text(encoding="utf-8"))
    assert [r["metric_name"] for r in records] == ["learned", "dtw/euclidean"]
    assert records[0]["retrieval"][0]["neighbors"][0]["distance"] == 0.125
    assert pd.read_csv(csv_path)["FPR-70"].tolist() == [5.0, 20.0]
    assert xlsx_path.is_file() and md_path.is_file()


def test_disabled_outputs_are_skipped(app_config, reports, tmp_path):
    app_config.output_elements.save_csv_table = False
    app_config.output_elements.save_json_report = False
    table = build_results_table(reports, [0.9])
    assert export_table_to_csv(table, tmp_path, "eval") is None
    assert save_reports_to_json(reports, tmp_path, "eval") is None
    assert not (tmp_path / "eval_table.csv").exists()


def test_attention_traces(app_config, tmp_path):
    assert save_attention_traces([], tmp_path, "eval") is None
    trace = AttentionExport("a-0", np.array([0.2, 0.8]), 1, [0, 1], [0])
    path = save_attention_traces([trace], tmp_path, "eval")
    assert json.loads(path.read_text(encoding="utf-8"))[0]["peak_index"] == 1


def test_embeddings_round_trip(rng, tmp_path):
    sequences = random_sequences(rng, ["a", "b"], per_label=2)
    embeddings = rng.normal(size=(4, 3))
    path = write_embeddings(sequences, embeddings, tmp_path / "out" / "embeddings.jsonl")
    records = read_embeddings(path)
    assert [r["source_id"] for r in records] == [s.source_id for s in sequences]
    np.testing.assert_array_equal([r["embedding"] for r in records], embeddings)


def test_embedding_count_must_match(rng, tmp_path):
    with pytest.raises(ValueError):
        write_embeddings(random_sequences(rng, ["a"], per_label=2), np.zeros((3, 2)), tmp_path / "e.jsonl")
