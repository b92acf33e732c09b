# src/motion_metric/commands.py

"""Command implementations: train, eval, embed, retrieve, ablate."""

import copy
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence

import pandas as pd

from .baselines import LOCAL_COSTS
from .checkpoint import load_checkpoint, save_checkpoint
from .config_manager import RunConfig, write_resolved_config
from .encoder import embed_many
from .errors import ConfigError, EpisodeError, EvaluationError
from .evaluator import EvalReport, Neighbor, evaluate_metric, retrieve
from .logger_setup import get_logger
from .motion import (
    MotionSequence,
    drop_static_joints,
    filter_min_sequences,
    group_by_label,
    load_manifest,
    split_by_label,
    split_hash,
    window_dataset,
)
from .report_exporters import (
    build_results_table,
    export_reports_to_excel,
    export_table_to_csv,
    format_table_rows,
    save_attention_traces,
    save_reports_to_json,
    save_table_to_markdown,
    write_embeddings,
)
from .synthetic import generate_benchmark, load_synthetic_specs
from .trainer import TrainState, new_train_state, train

logger = get_logger(__name__)

ABLATION_VARIANTS: List[tuple] = [
    ("MMD-NCA", {}),
    ("without Attention", {"encoder": {"attention_enabled": False}}),
    ("without LN", {"encoder": {"layer_norm_enabled": False}}),
    ("Linear Kernel", {"loss": {"kernel": {"family": "linear"}}}),
    ("Polynomial Kernel", {"loss": {"kernel": {"family": "polynomial"}}}),
]


@dataclass
class DataSplit:
    train: List[MotionSequence]        # training windows of seen labels
    test: List[MotionSequence]         # test-mode pieces of unseen labels
    everything: List[MotionSequence]   # test-mode pieces of the whole dataset
    split_hash: str
    input_dim: int
    kept_joints: List[int] | None = None


def load_sequences(config: RunConfig) -> List[MotionSequence]:
    data = config.data
    if data.manifest:
        return load_manifest(Path(data.manifest), data.preprocess)
    if data.synthetic_specs:
        specs, samples_per_class = load_synthetic_specs(Path(data.synthetic_specs))
        return generate_benchmark(specs, samples_per_class, config.seed, probe_count=data.probe_count)
    raise ConfigError("data", "set data.manifest or data.synthetic_specs")


def prepare_data(config: RunConfig) -> DataSplit:
    """Loads, filters, splits by unseen labels and windows the dataset."""
    data = config.data
    sequences = filter_min_sequences(load_sequences(config), data.label_key, data.min_sequences_per_label)
    if not sequences:
        raise EvaluationError("No sequences left after filtering")
    train_raw, test_raw = split_by_label(sequences, data.label_key, data.train_fraction, config.seed, data.train_labels)

    window_args = {"window_len": data.window_len, "gap": data.window_gap}
    test_args = {**window_args, "min_split_seconds": data.min_split_seconds, "test_gap_seconds": data.test_gap_seconds}
    train_windows = window_dataset(train_raw, "train", stride_mode=data.window_stride_mode, **window_args)
    test_pieces = window_dataset(test_raw, "test", **test_args)
    everything = window_dataset(sequences, "test", **test_args)
    if train_raw and not train_windows:
        logger.warning(f"No training windows: every training sequence is shorter than {data.window_len} frames")

    kept = None
    if data.drop_static_joints and train_windows and train_windows[0].dim % 3 == 0:
        train_windows, kept = drop_static_joints(train_windows)
        columns = [3 * j + c for j in kept for c in range(3)]
        test_pieces = [s.with_frames(s.frames[:, columns]) for s in test_pieces]
        everything = [s.with_frames(s.frames[:, columns]) for s in everything]

    digest = split_hash(train_windows, test_pieces)
    logger.info(f"Data split: {len(train_windows)} training windows, {len(test_pieces)} test sequences, hash {digest[:12]}")
    return DataSplit(train_windows, test_pieces, everything, digest, everything[0].dim, kept)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def train_model(config: RunConfig, split: DataSplit, out_dir: Path, resume: Path | None = None) -> TrainState:
    groups = group_by_label(split.train, config.data.label_key)
    if len(groups) < config.train.negative_classes + 1:
        raise EpisodeError(
            f"Training split has {len(groups)} labels; episodes need {config.train.negative_classes + 1}"
        )
    if resume is not None:
        state = load_checkpoint(resume, config.encoder)
    else:
        (out_dir / "training_log.jsonl").unlink(missing_ok=True)
        state = new_train_state(config.encoder, config.seed)
    return train(state, groups, config.loss, config.train, out_dir)


def _sync_input_dim(config: RunConfig, split: DataSplit, out_dir: Path) -> None:
    """Adopts the data dimension and rewrites the resolved config when it changes."""
    if config.encoder.input_dim != split.input_dim:
        logger.info(f"Setting encoder input_dim to the data dimension {split.input_dim}")
        config.encoder.input_dim = split.input_dim
        write_resolved_config(config, out_dir)


def cmd_train(config: RunConfig, resume: Path | None = None) -> Path:
    """Trains an encoder; writes the resolved config, training log and final checkpoint."""
    out_dir = Path(config.out_dir)
    write_resolved_config(config, out_dir)
    split = prepare_data(config)
    _sync_input_dim(config, split, out_dir)
    state = train_model(config, split, out_dir, resume)
    final_path = save_checkpoint(state, out_dir / "checkpoint_final.npz")
    logger.info(f"Final checkpoint sha256: {_sha256(final_path)}")
    print(f"checkpoint: {final_path}")
    print(f"split hash: {split.split_hash}")
    return final_path


def _load_for_eval(checkpoint: Path | None, split: DataSplit) -> TrainState | None:
    if checkpoint is None:
        return None
    state = load_checkpoint(checkpoint)
    if state.encoder_config.input_dim != split.input_dim:
        raise EvaluationError(
            f"Checkpoint expects {state.encoder_config.input_dim}-dimensional frames, data has {split.input_dim}"
        )
    return state


def cmd_eval(
    config: RunConfig,
    checkpoint: Path | None,
    metrics: Sequence[str] | None = None,
    tpr_levels: Sequence[float] | None = None,
) -> List[EvalReport]:
    """Evaluates each metric on the unseen-label test split and writes the report artifacts."""
    metrics = list(metrics or config.evaluation.metrics)
    levels = list(tpr_levels or config.evaluation.tpr_levels)
    out_dir = Path(config.out_dir)
    if "learned" in metrics and checkpoint is None:
        raise ConfigError("checkpoint", "the learned metric needs --checkpoint")
    if config.evaluation.dtw_local_cost not in LOCAL_COSTS:
        raise ConfigError("evaluation.dtw_local_cost", f"expected one of {sorted(LOCAL_COSTS)}")
    write_resolved_config(config, out_dir)
    split = prepare_data(config)
    state = _load_for_eval(checkpoint, split)
    elements = config.output_elements

    reports: List[EvalReport] = []
    for metric in metrics:
        reports.append(evaluate_metric(
            split.test,
            metric,
            label_key=config.data.label_key,
            tpr_levels=levels,
            params=state.params if metric == "learned" else None,
            encoder_config=state.encoder_config if metric == "learned" else None,
            k_neighbors=config.evaluation.k_neighbors,
            seed=config.evaluation.cluster_seed,
            local_cost=config.evaluation.dtw_local_cost,
            split_hash=split.split_hash,
            with_attention=config.output_elements.save_attention,
            attention_subsample=config.evaluation.attention_subsample,
        ))

    table = build_results_table(reports, levels)
    print(f"split hash: {split.split_hash}")
    print(format_table_rows(table))
    for report in reports:
        for note in report.notes:
            print(f"note ({report.metric_name}): {note}")

    save_reports_to_json(reports, out_dir, "eval", elements)
    export_table_to_csv(table, out_dir, "eval", elements)
    export_reports_to_excel(reports, table, out_dir, "eval", elements)
    save_table_to_markdown(table, out_dir, "eval", "Verification and clustering", split.split_hash, elements)
    for report in reports:
        if report.attention_traces:
            save_attention_traces(report.attention_traces, out_dir, "eval", elements)
    if elements.save_embeddings and state is not None:
        embeddings, _ = embed_many(split.test, state.params, state.encoder_config)
        write_embeddings(split.test, embeddings, out_dir / "eval_embeddings.jsonl")
    return reports


def cmd_embed(config: RunConfig, checkpoint: Path, output: Path | None = None) -> Path:
    """Writes one embedding record per test-windowed sequence of the whole dataset."""
    split = prepare_data(config)
    state = _load_for_eval(checkpoint, split)
    embeddings, _ = embed_many(split.everything, state.params, state.encoder_config)
    path = output or Path(config.out_dir) / "embeddings.jsonl"
    write_embeddings(split.everything, embeddings, path)
    print(f"embeddings: {path} ({len(split.everything)} sequences)")
    return path


def cmd_retrieve(config: RunConfig, checkpoint: Path, query_id: str, k: int | None = None) -> Dict[str, List[Neighbor]]:
    """Prints the k nearest neighbors of a query under the learned and DTW metrics side by side."""
    k = k or config.evaluation.k_neighbors
    split = prepare_data(config)
    state = _load_for_eval(checkpoint, split)
    by_id = {s.source_id: s for s in split.everything}
    if query_id not in by_id:
        raise EvaluationError(f"Unknown query id '{query_id}'")
    query = by_id[query_id]

    label_key = config.data.label_key
    results = {
        "learned": retrieve(query, split.everything, "learned", k, state.params, state.encoder_config, label_key=label_key),
        "dtw": retrieve(query, split.everything, "dtw", k, local_cost=config.evaluation.dtw_local_cost, label_key=label_key),
    }
    rows: List[Dict[str, Any]] = []
    for learned, dtw in zip(results["learned"], results["dtw"]):
        rows.append({
            "rank": learned.rank,
            "learned": learned.source_id, "learned_label": learned.label, "learned_distance": round(learned.distance, 6),
            "dtw": dtw.source_id, "dtw_label": dtw.label, "dtw_distance": round(dtw.distance, 6),
        })
    print(f"query: {query_id} ({query.label(label_key)})")
    print(format_table_rows(pd.DataFrame.from_records(rows)))
    return results


def _variant_config(config: RunConfig, changes: Dict[str, Any]) -> RunConfig:
    variant = copy.deepcopy(config)
    for section, values in changes.items():
        target = getattr(variant, section)
        for key, value in values.items():
            if isinstance(value, dict):
                target = getattr(target, key)
                for inner_key, inner_value in value.items():
                    setattr(target, inner_key, inner_value)
            else:
                setattr(target, key, value)
    variant.validate()
    return variant


def cmd_ablate(config: RunConfig) -> pd.DataFrame:
    """Trains and evaluates the full model and four reduced variants on one split and seed."""
    out_dir = Path(config.out_dir)
    write_resolved_config(config, out_dir)
    split = prepare_data(config)
    _sync_input_dim(config, split, out_dir)
    levels = list(config.evaluation.tpr_levels)

    reports: List[EvalReport] = []
    for name, changes in ABLATION_VARIANTS:
        variant = _variant_config(config, changes)
        slug = name.lower().replace(" ", "_").replace("-", "_")
        logger.info(f"Ablation variant '{name}'")
        state = train_model(variant, split, out_dir / "ablation" / slug)
        save_checkpoint(state, out_dir / "ablation" / slug / "checkpoint_final.npz")
        reports.append(evaluate_metric(
            split.test, "learned",
            label_key=config.data.label_key,
            tpr_levels=levels,
            params=state.params,
            encoder_config=state.encoder_config,
            k_neighbors=config.evaluation.k_neighbors,
            seed=config.evaluation.cluster_seed,
            split_hash=split.split_hash,
        ))

    table = build_results_table(reports, levels, names=[name for name, _ in ABLATION_VARIANTS])
    print(f"split hash: {split.split_hash}")
    print(format_table_rows(table))
    save_reports_to_json(reports, out_dir, "ablation", config.output_elements)
    export_table_to_csv(table, out_dir, "ablation", config.output_elements)
    save_table_to_markdown(table, out_dir, "ablation", "Ablation", split.split_hash, config.output_elements)
    return table
