# src/motion_metric/evaluator.py

"""Evaluation protocol: verification FPR at fixed TPR, clustering scores, retrieval, attention export."""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import AgglomerativeClustering, KMeans
from sklearn.metrics import f1_score, normalized_mutual_info_score

from .baselines import dtw_distance, l2_sequence_distance
from .encoder import EncoderConfig, EncoderParams, embed_many, encode_batch
from .errors import EvaluationError
from .logger_setup import get_logger
from .motion import MotionSequence

logger = get_logger(__name__)

METRICS = ("learned", "l2", "dtw")
DEFAULT_TPR_LEVELS = (0.95, 0.90, 0.85, 0.80, 0.75, 0.70)


@dataclass
class DistanceMatrix:
    """Symmetric, non-negative pairwise distances with a zero diagonal."""

    values: np.ndarray
    metric_name: str
    source_ids: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise EvaluationError(f"Distance matrix must be square, got {values.shape}")
        if not np.allclose(values, values.T, rtol=0.0, atol=1e-9):
            raise EvaluationError(f"Distance matrix '{self.metric_name}' is not symmetric")
        if np.any(np.diag(values) != 0):
            raise EvaluationError(f"Distance matrix '{self.metric_name}' has a non-zero diagonal")
        self.values = values

    def __len__(self) -> int:
        return self.values.shape[0]


def _require_encoder(params: EncoderParams | None, encoder_config: EncoderConfig | None) -> None:
    if params is None or encoder_config is None:
        raise EvaluationError("The learned metric needs encoder params and config")


def pairwise_distances(
    sequences: Sequence[MotionSequence],
    metric: str,
    params: EncoderParams | None = None,
    encoder_config: EncoderConfig | None = None,
    local_cost: str = "euclidean",
    embeddings: np.ndarray | None = None,
) -> DistanceMatrix:
    """All-pairs distances under the learned metric (squared embedding distance), L2 or DTW.

    L2 truncates each pair to the shorter length; the matrix notes record it.
    """
    if metric not in METRICS:
        raise EvaluationError(f"Unknown metric '{metric}'; expected one of {METRICS}")
    n = len(sequences)
    ids = [s.source_id for s in sequences]
    notes: List[str] = []

    if metric == "learned":
        if embeddings is None:
            _require_encoder(params, encoder_config)
            embeddings, _ = embed_many(sequences, params, encoder_config)
        values = cdist(embeddings, embeddings, metric="sqeuclidean")
        np.fill_diagonal(values, 0.0)
        return DistanceMatrix(values, metric, ids, notes)
    if params is not None:
        raise EvaluationError(f"Metric '{metric}' takes no encoder params")

    values = np.zeros((n, n))
    truncated = 0
    for i, j in combinations(range(n), 2):
        x, y = sequences[i], sequences[j]
        if metric == "l2":
            length = min(x.n_frames, y.n_frames)
            truncated += int(x.n_frames != y.n_frames)
            d = l2_sequence_distance(x.frames[:length], y.frames[:length])
        else:
            d, _ = dtw_distance(x, y, local_cost)
        values[i, j] = values[j, i] = d
    if truncated:
        notes.append(f"l2: {truncated} pairs of unequal length truncated to the shorter sequence")
        logger.warning(notes[-1])
    logger.info(f"Computed {n * (n - 1) // 2} pairwise '{metric}' distances")
    return DistanceMatrix(values, metric, ids, notes)


def _pair_arrays(dist: DistanceMatrix | np.ndarray, labels: Sequence[Any]) -> Tuple[np.ndarray, np.ndarray]:
    values = dist.values if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=np.float64)
    if len(labels) != values.shape[0]:
        raise EvaluationError(f"{len(labels)} labels for a {values.shape[0]}-point distance matrix")
    rows, cols = np.triu_indices(values.shape[0], k=1)
    labels = np.asarray(labels)
    return values[rows, cols], labels[rows] == labels[cols]


def fpr_at_tpr(
    dist: DistanceMatrix | np.ndarray,
    labels: Sequence[Any],
    tpr_levels: Sequence[float] = DEFAULT_TPR_LEVELS,
) -> Dict[float, float]:
    """False-positive rate of same-label verification at each target true-positive rate.

    For level t the threshold is the smallest observed distance at which the
    fraction of same-label pairs with distance <= threshold reaches t; the FPR
    is the fraction of different-label pairs at or below that threshold.

    Raises:
        EvaluationError: If no same-label pair exists.
    """
    distances, same = _pair_arrays(dist, labels)
    values, counts = np.unique(np.asarray(labels), return_counts=True)
    singletons = [str(v) for v, c in zip(values, counts) if c == 1]
    if singletons:
        logger.warning(f"Label classes with a single sequence contribute no positive pairs: {singletons}")
    positives = np.sort(distances[same])
    negatives = distances[~same]
    if positives.size == 0:
        raise EvaluationError("No same-label pairs: FPR at fixed TPR is undefined")
    if negatives.size == 0:
        logger.warning("No different-label pairs; FPR reported as 0")

    reached = np.arange(1, positives.size + 1) / positives.size
    result: Dict[float, float] = {}
    for level in tpr_levels:
        if not 0.0 < level <= 1.0:
            raise EvaluationError(f"TPR level must be in (0, 1], got {level}")
        threshold = positives[int(np.argmax(reached >= level))]
        result[float(level)] = float(np.mean(negatives <= threshold)) if negatives.size else 0.0
    return result


def pairwise_f1(labels: Sequence[Any], clusters: Sequence[Any]) -> float:
    """F1 of same-cluster pair predictions against same-label pairs."""
    rows, cols = np.triu_indices(len(labels), k=1)
    labels, clusters = np.asarray(labels), np.asarray(clusters)
    same_label = labels[rows] == labels[cols]
    same_cluster = clusters[rows] == clusters[cols]
    return float(f1_score(same_label, same_cluster, zero_division=0.0))


def _check_k(k: int, n: int) -> None:
    if k < 1 or k > n:
        raise EvaluationError(f"Cannot form {k} clusters from {n} samples")


def cluster_and_score(
    embeddings: np.ndarray,
    labels: Sequence[Any],
    k: int | None = None,
    seed: int = 0,
) -> Tuple[float, float]:
    """k-means (10 restarts, best inertia) scored by NMI and pairwise F1; k defaults to the label count."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if not np.all(np.isfinite(embeddings)):
        raise EvaluationError("Embeddings contain non-finite values")
    k = k if k is not None else len(set(labels))
    _check_k(k, embeddings.shape[0])
    clusters = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(embeddings)
    nmi = normalized_mutual_info_score(labels, clusters, average_method="arithmetic")
    return float(nmi), pairwise_f1(labels, clusters)


def cluster_distances_and_score(dist: DistanceMatrix, labels: Sequence[Any], k: int | None = None) -> Tuple[float, float]:
    """Average-linkage clustering on a precomputed matrix, for metrics without embeddings."""
    k = k if k is not None else len(set(labels))
    _check_k(k, len(dist))
    if k == 1 or len(dist) < 2:
        clusters = np.zeros(len(dist), dtype=int)
    else:
        clusters = AgglomerativeClustering(n_clusters=k, metric="precomputed", linkage="average").fit_predict(dist.values)
    nmi = normalized_mutual_info_score(labels, clusters, average_method="arithmetic")
    return float(nmi), pairwise_f1(labels, clusters)


@dataclass
class Neighbor:
    rank: int
    gallery_index: int
    source_id: str
    label: str | None
    distance: float


def rank_by_distance(distances: np.ndarray, k: int, exclude: int | None = None) -> List[int]:
    """Indices of the k smallest distances, ties broken by index."""
    order = [int(i) for i in np.argsort(distances, kind="stable") if i != exclude]
    if k > len(order):
        logger.warning(f"Requested {k} neighbors but the gallery holds {len(order)}; returning the full ranking")
    return order[:k]


def retrieve(
    query: MotionSequence,
    gallery: Sequence[MotionSequence],
    metric: str,
    k: int = 4,
    params: EncoderParams | None = None,
    encoder_config: EncoderConfig | None = None,
    local_cost: str = "euclidean",
    label_key: str = "category",
) -> List[Neighbor]:
    """The k nearest gallery sequences in ascending distance."""
    if not gallery:
        raise EvaluationError("Retrieval gallery is empty")
    if metric == "learned":
        _require_encoder(params, encoder_config)
        gallery_emb, _ = embed_many(gallery, params, encoder_config)
        query_emb, _ = embed_many([query], params, encoder_config)
        distances = cdist(query_emb, gallery_emb, metric="sqeuclidean")[0]
    elif metric == "dtw":
        distances = np.array([dtw_distance(query, g, local_cost)[0] for g in gallery])
    elif metric == "l2":
        distances = np.array([
            l2_sequence_distance(query.frames[:min(query.n_frames, g.n_frames)], g.frames[:min(query.n_frames, g.n_frames)])
            for g in gallery
        ])
    else:
        raise EvaluationError(f"Unknown metric '{metric}'; expected one of {METRICS}")
    return [
        Neighbor(rank, int(i), gallery[i].source_id, gallery[i].label(label_key), float(distances[i]))
        for rank, i in enumerate(rank_by_distance(distances, k), start=1)
    ]


@dataclass
class AttentionExport:
    source_id: str
    scores: np.ndarray
    peak_index: int
    highlighted_frames: List[int]
    subsampled_frames: List[int]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source_id": self.source_id,
            "peak_index": self.peak_index,
            "highlighted_frames": self.highlighted_frames,
            "subsampled_frames": self.subsampled_frames,
            "scores": [float(v) for v in self.scores],
        }


def export_attention(
    seq: MotionSequence,
    params: EncoderParams,
    config: EncoderConfig,
    subsample: int = 4,
    context: int = 2,
    scores: np.ndarray | None = None,
) -> AttentionExport:
    """Per-frame attention scores, the peak frame (first on ties) and its +/- `context` neighbors."""
    if subsample < 1:
        raise ValueError(f"subsample must be >= 1, got {subsample}")
    if scores is None:
        scores = encode_batch([seq], params, config, mode="eval").attention[0]
    peak = int(np.argmax(scores))
    highlighted = list(range(max(0, peak - context), min(len(scores), peak + context + 1)))
    return AttentionExport(seq.source_id, np.asarray(scores), peak, highlighted, list(range(0, len(scores), subsample)))


def attention_mass(scores: np.ndarray, start_fraction: float, end_fraction: float) -> float:
    """Share of attention falling on frames [floor(start*n), ceil(end*n))."""
    n = len(scores)
    lo, hi = int(np.floor(start_fraction * n)), int(np.ceil(end_fraction * n))
    total = float(np.sum(scores))
    return float(np.sum(scores[lo:hi]) / total) if total > 0 else 0.0


@dataclass
class QueryResult:
    query_index: int
    source_id: str
    label: str | None
    neighbors: List[Neighbor]


@dataclass
class EvalReport:
    metric_name: str
    fpr_at_tpr: Dict[float, float]
    nmi: float
    f1: float
    retrieval: List[QueryResult] = field(default_factory=list)
    attention_traces: List[AttentionExport] | None = None
    n_sequences: int = 0
    n_labels: int = 0
    label_key: str = "category"
    split_hash: str = ""
    notes: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        rates = list(self.fpr_at_tpr.values()) + [self.nmi, self.f1]
        if any(not 0.0 <= r <= 1.0 + 1e-12 for r in rates):
            raise EvaluationError(f"Report '{self.metric_name}' holds a rate outside [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        """Stable field order for structured export."""
        return {
            "metric_name": self.metric_name,
            "label_key": self.label_key,
            "split_hash": self.split_hash,
            "n_sequences": self.n_sequences,
            "n_labels": self.n_labels,
            "fpr_at_tpr": {f"{level:.2f}": value for level, value in sorted(self.fpr_at_tpr.items(), reverse=True)},
            "nmi": self.nmi,
            "f1": self.f1,
            "notes": list(self.notes),
            "retrieval": [
                {
                    "query_index": q.query_index,
                    "source_id": q.source_id,
                    "label": q.label,
                    "neighbors": [
                        {"rank": n.rank, "gallery_index": n.gallery_index, "source_id": n.source_id,
                         "label": n.label, "distance": n.distance}
                        for n in q.neighbors
                    ],
                }
                for q in self.retrieval
            ],
        }


def evaluate_metric(
    sequences: Sequence[MotionSequence],
    metric: str,
    label_key: str = "category",
    tpr_levels: Sequence[float] = DEFAULT_TPR_LEVELS,
    params: EncoderParams | None = None,
    encoder_config: EncoderConfig | None = None,
    k_neighbors: int = 4,
    seed: int = 0,
    local_cost: str = "euclidean",
    split_hash: str = "",
    with_attention: bool = False,
    attention_subsample: int = 4,
) -> EvalReport:
    """Runs verification, clustering and leave-one-out retrieval for one metric."""
    labels = [s.label(label_key) for s in sequences]
    logger.info(f"Evaluating metric '{metric}' on {len(sequences)} sequences ({len(set(labels))} labels)")

    embeddings = None
    attention: List[np.ndarray] = []
    if metric == "learned":
        _require_encoder(params, encoder_config)
        embeddings, attention = embed_many(sequences, params, encoder_config)
        dist = pairwise_distances(sequences, metric, embeddings=embeddings)
        nmi, f1 = cluster_and_score(embeddings, labels, seed=seed)
    else:
        dist = pairwise_distances(sequences, metric, local_cost=local_cost)
        nmi, f1 = cluster_distances_and_score(dist, labels)

    rates = fpr_at_tpr(dist, labels, tpr_levels)
    retrieval = [
        QueryResult(i, sequences[i].source_id, labels[i], [
            Neighbor(rank, j, sequences[j].source_id, labels[j], float(dist.values[i, j]))
            for rank, j in enumerate(rank_by_distance(dist.values[i], k_neighbors, exclude=i), start=1)
        ])
        for i in range(len(sequences))
    ]
    traces = None
    if with_attention and metric == "learned":
        traces = [
            export_attention(seq, params, encoder_config, subsample=attention_subsample, scores=scores)
            for seq, scores in zip(sequences, attention)
        ]
    return EvalReport(
        metric_name=metric,
        fpr_at_tpr=rates,
        nmi=nmi,
        f1=f1,
        retrieval=retrieval,
        attention_traces=traces,
        n_sequences=len(sequences),
        n_labels=len(set(labels)),
        label_key=label_key,
        split_hash=split_hash,
        notes=list(dist.notes),
    )
