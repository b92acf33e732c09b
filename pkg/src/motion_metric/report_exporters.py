# src/motion_metric/report_exporters.py

"""Handles the generation and saving of evaluation artifacts (JSON, CSV, Excel, Markdown, embeddings)."""

import json
import re
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from .config_manager import OutputElements, get_config
from .evaluator import AttentionExport, EvalReport
from .logger_setup import get_logger
from .motion import MotionSequence

logger = get_logger(__name__)


def _output_elements(elements: OutputElements | None) -> OutputElements:
    return elements if elements is not None else get_config().output_elements


def fpr_column(level: float) -> str:
    return f"FPR-{int(round(level * 100))}"


def build_results_table(rows: Sequence[EvalReport], tpr_levels: Sequence[float], names: Sequence[str] | None = None) -> pd.DataFrame:
    """One row per report: method name, FPR at each level (percent), NMI and F1."""
    records: List[Dict[str, Any]] = []
    for i, report in enumerate(rows):
        record: Dict[str, Any] = {"method": names[i] if names else report.metric_name}
        for level in sorted(tpr_levels, reverse=True):
            record[fpr_column(level)] = round(100.0 * report.fpr_at_tpr[float(level)], 2)
        record["NMI"] = round(report.nmi, 4)
        record["F1"] = round(report.f1, 4)
        records.append(record)
    return pd.DataFrame.from_records(records)


def format_table_rows(table: pd.DataFrame) -> str:
    """Plain-text rendering for the console."""
    return table.to_string(index=False)


def generate_table_markdown(table: pd.DataFrame, title: str | None = None, split_hash: str | None = None) -> str:
    """Renders a results table as a Markdown table."""
    md_parts: List[str] = []
    if title:
        md_parts.extend([f"# {title}", ""])
    if split_hash:
        md_parts.extend([f"Data split hash: `{split_hash}`", ""])
    if table.empty:
        md_parts.append("No results to report.")
        return "\n".join(md_parts) + "\n"
    columns = list(table.columns)
    md_parts.append("| " + " | ".join(columns) + " |")
    md_parts.append("|" + "---|" * len(columns))
    for _, row in table.iterrows():
        md_parts.append("| " + " | ".join(str(row[c]) for c in columns) + " |")
    return "\n".join(md_parts) + "\n"


def save_reports_to_json(reports: Sequence[EvalReport], output_dir: Path, run_name: str,
                         elements: OutputElements | None = None) -> Path | None:
    """Saves every EvalReport to one JSON file (stable field order)."""
    if not _output_elements(elements).save_json_report:
        logger.info("JSON report export is disabled in configuration.")
        return None

    json_file_path = output_dir / f"{run_name}_report.json"
    logger.info(f"Saving evaluation report to JSON: {json_file_path}...")
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        with open(json_file_path, "w", encoding="utf-8") as f:
            json.dump([r.to_dict() for r in reports], f, indent=2, ensure_ascii=False)
        logger.info("JSON report saved successfully.")
        return json_file_path
    except Exception as e:
        logger.error(f"Failed to save JSON report: {e}")
        return None


def export_table_to_csv(table: pd.DataFrame, output_dir: Path, run_name: str,
                        elements: OutputElements | None = None) -> Path | None:
    if not _output_elements(elements).save_csv_table:
        logger.info("CSV export is disabled in configuration.")
        return None

    csv_file_path = output_dir / f"{run_name}_table.csv"
    logger.info(f"Exporting results table to CSV: {csv_file_path}...")
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(csv_file_path, index=False, encoding="utf-8")
        logger.info("CSV table exported successfully.")
        return csv_file_path
    except Exception as e:
        logger.error(f"Failed to export results table to CSV: {e}")
        return None


def export_reports_to_excel(reports: Sequence[EvalReport], table: pd.DataFrame, output_dir: Path, run_name: str,
                           elements: OutputElements | None = None) -> Path | None:
    """Exports a summary sheet plus one retrieval sheet per metric."""
    if not _output_elements(elements).save_excel_report:
        logger.info("Excel export is disabled in configuration.")
        return None

    excel_file_path = output_dir / f"{run_name}_report.xlsx"
    logger.info(f"Exporting evaluation report to Excel file: {excel_file_path}...")
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        with pd.ExcelWriter(excel_file_path, engine="xlsxwriter") as writer:
            table.to_excel(writer, sheet_name="Summary", index=False)
            for report in reports:
                rows = [
                    {"query": q.source_id, "query_label": q.label, "rank": n.rank,
                     "neighbor": n.source_id, "neighbor_label": n.label, "distance": n.distance}
                    for q in report.retrieval for n in q.neighbors
                ]
                if not rows:
                    logger.info(f"No retrieval data for metric '{report.metric_name}' to write to Excel.")
                    continue
                # Excel limit: max 31 chars, no []:*?/\ in sheet names
                safe_sheet_name = re.sub(r"[\[\]:*?/\\]", "_", f"retrieval_{report.metric_name}")[:31]
                pd.DataFrame.from_records(rows).to_excel(writer, sheet_name=safe_sheet_name, index=False)
        logger.info(f"Excel file exported successfully to {excel_file_path}")
        return excel_file_path
    except Exception as e:
        logger.error(f"Failed to export evaluation report to Excel: {e}")
        return None


def save_table_to_markdown(table: pd.DataFrame, output_dir: Path, run_name: str, title: str, split_hash: str | None = None,
                           elements: OutputElements | None = None) -> Path | None:
    if not _output_elements(elements).save_markdown_table:
        logger.info("Markdown table export is disabled in configuration.")
        return None

    md_file_path = output_dir / f"{run_name}_table.md"
    logger.info(f"Saving results table to Markdown: {md_file_path}...")
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        md_file_path.write_text(generate_table_markdown(table, title, split_hash), encoding="utf-8")
        logger.info("Markdown table saved successfully.")
        return md_file_path
    except Exception as e:
        logger.error(f"Failed to save Markdown table: {e}")
        return None


def save_attention_traces(traces: Sequence[AttentionExport] | None, output_dir: Path, run_name: str,
                          elements: OutputElements | None = None) -> Path | None:
    if not _output_elements(elements).save_attention:
        logger.info("Attention export is disabled in configuration.")
        return None
    if not traces:
        logger.warning("No attention traces provided. Skipping attention export.")
        return None

    json_file_path = output_dir / f"{run_name}_attention.json"
    logger.info(f"Saving {len(traces)} attention traces to {json_file_path}...")
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        with open(json_file_path, "w", encoding="utf-8") as f:
            json.dump([t.to_dict() for t in traces], f, indent=2)
        return json_file_path
    except Exception as e:
        logger.error(f"Failed to save attention traces: {e}")
        return None


def write_embeddings(sequences: Sequence[MotionSequence], embeddings: np.ndarray, path: Path) -> Path:
    """One JSON line per sequence: source_id, labels and the embedding floats."""
    if len(sequences) != embeddings.shape[0]:
        raise ValueError(f"{len(sequences)} sequences but {embeddings.shape[0]} embeddings")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for seq, row in zip(sequences, embeddings):
            record = {
                "source_id": seq.source_id,
                "category_label": seq.category_label,
                "subject_label": seq.subject_label,
                "embedding": [float(v) for v in row],
            }
            f.write(json.dumps(record) + "\n")
    logger.info(f"Wrote {len(sequences)} embeddings to {path}")
    return path


def read_embeddings(path: Path) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
