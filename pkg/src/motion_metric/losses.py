# src/motion_metric/losses.py

"""Kernels, the MMD estimator, the MMD-NCA objective and the baseline metric losses.

Every loss takes DenseArrays of embedding rows and returns a differentiable
scalar DenseArray. Set arguments are (k, e) matrices; single embeddings are
(e,) vectors.
"""

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .episodes import EpisodeLayout
from .errors import ConfigError, ShapeError
from .tensor import (
    ArrayLike,
    DenseArray,
    as_dense,
    clamp_min,
    concat,
    exp,
    logsumexp,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    sq_norm,
    sqrt,
    stack,
    take_slice,
    transpose,
)

KERNEL_FAMILIES = ("rbf", "linear", "polynomial")
LOSS_KINDS = ("mmd_nca", "triplet", "triplet_gor", "contrastive", "nca", "n_pair")
MARGIN_LOSSES = ("triplet", "triplet_gor", "contrastive")


@dataclass
class KernelSpec:
    family: str = "rbf"
    bandwidths: Tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0)
    degree: int = 2
    offset: float = 1.0
    unbiased: bool = False

    def validate(self) -> None:
        if self.family not in KERNEL_FAMILIES:
            raise ConfigError("loss.kernel.family", f"expected one of {KERNEL_FAMILIES}, got '{self.family}'")
        if self.family == "rbf":
            if len(self.bandwidths) < 1:
                raise ConfigError("loss.kernel.bandwidths", "needs at least one bandwidth")
            if any(s <= 0 for s in self.bandwidths):
                raise ConfigError("loss.kernel.bandwidths", "all bandwidths must be positive")
        if self.family == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ConfigError("loss.kernel.degree", "must be a positive integer")


@dataclass
class LossConfig:
    loss_kind: str = "mmd_nca"
    margin: float | None = None
    negative_classes: int = 5
    kernel: KernelSpec = field(default_factory=KernelSpec)
    use_squared_mmd: bool = False
    include_positive_in_denominator: bool = False
    gor_weight: float = 1.0

    def validate(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError("loss.loss_kind", f"expected one of {LOSS_KINDS}, got '{self.loss_kind}'")
        needs_margin = self.loss_kind in MARGIN_LOSSES
        if needs_margin and self.margin is None:
            raise ConfigError("loss.margin", f"'{self.loss_kind}' needs a margin")
        if not needs_margin and self.margin is not None:
            raise ConfigError("loss.margin", f"'{self.loss_kind}' takes no margin")
        if self.margin is not None and self.margin < 0:
            raise ConfigError("loss.margin", "must be non-negative")
        if self.negative_classes < 1:
            raise ConfigError("loss.negative_classes", "must be >= 1")
        self.kernel.validate()


# ----------------------------------------------------------------------
# Kernels and MMD
# ----------------------------------------------------------------------

def _rows(x: ArrayLike, op_kind: str) -> DenseArray:
    x = as_dense(x)
    if x.ndim == 1:
        return reshape(x, (1, x.size))
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(op_kind, [x.shape], "expected a non-empty set of embedding rows")
    return x


def pairwise_sq_distances(X: ArrayLike, Y: ArrayLike) -> DenseArray:
    """(m, n) matrix of squared Euclidean distances; exact zeros for identical rows."""
    X, Y = _rows(X, "pairwise_sq_distances"), _rows(Y, "pairwise_sq_distances")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError("pairwise_sq_distances", [X.shape, Y.shape], "embedding dimensions differ")
    diff = reshape(X, (X.shape[0], 1, X.shape[1])) - reshape(Y, (1, Y.shape[0], Y.shape[1]))
    return sq_norm(diff, axis=2)


def kernel_matrix(X: ArrayLike, Y: ArrayLike, spec: KernelSpec) -> DenseArray:
    X, Y = _rows(X, "kernel"), _rows(Y, "kernel")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError("kernel", [X.shape, Y.shape], "embedding dimensions differ")
    if spec.family == "rbf":
        distances = pairwise_sq_distances(X, Y)
        terms = [exp(scale(distances, -1.0 / (2.0 * sigma * sigma))) for sigma in spec.bandwidths]
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        return total
    inner = matmul(X, transpose(Y))
    if spec.family == "linear":
        return inner
    base = inner + spec.offset
    result = base
    for _ in range(int(spec.degree) - 1):
        result = result * base
    return result


def kernel_eval(x: ArrayLike, y: ArrayLike, spec: KernelSpec) -> DenseArray:
    """k(x, y) for two single embeddings; the rbf family sums one Gaussian per bandwidth."""
    x, y = as_dense(x), as_dense(y)
    if x.shape != y.shape:
        raise ShapeError("kernel", [x.shape, y.shape], "embedding dimensions differ")
    return reshape(kernel_matrix(x, y, spec), ())


def _off_diagonal_mean(K: DenseArray) -> DenseArray:
    m = K.shape[0]
    mask = 1.0 - np.eye(m)
    return scale(reduce_sum(K * mask), 1.0 / (m * (m - 1)))


def mmd_squared(X: ArrayLike, Y: ArrayLike, spec: KernelSpec) -> DenseArray:
    """Squared MMD between two embedding sets.

    The default biased estimator keeps the diagonal terms of both within-set
    double sums; `spec.unbiased` drops them (needs at least two rows per set).
    """
    X, Y = _rows(X, "mmd_squared"), _rows(Y, "mmd_squared")
    k_xx = kernel_matrix(X, X, spec)
    k_yy = kernel_matrix(Y, Y, spec)
    k_xy = kernel_matrix(X, Y, spec)
    if spec.unbiased:
        if X.shape[0] < 2 or Y.shape[0] < 2:
            raise ShapeError("mmd_squared", [X.shape, Y.shape], "the unbiased estimator needs two rows per set")
        within = _off_diagonal_mean(k_xx) + _off_diagonal_mean(k_yy)
    else:
        within = reduce_mean(k_xx) + reduce_mean(k_yy)
    return within - scale(reduce_mean(k_xy), 2.0)


def mmd(X: ArrayLike, Y: ArrayLike, spec: KernelSpec, squared: bool = False) -> DenseArray:
    value = clamp_min(mmd_squared(X, Y, spec), 0.0)
    return value if squared else sqrt(value)


def mmd_nca_loss(
    anchor_emb: ArrayLike,
    positive_emb: ArrayLike,
    negative_embs: Sequence[ArrayLike],
    spec: KernelSpec,
    use_squared_mmd: bool = False,
    include_positive_in_denominator: bool = False,
) -> DenseArray:
    """-log( exp(-MMD(A, P)) / sum_j exp(-MMD(A, N_j)) ).

    The denominator holds only the negative terms unless
    `include_positive_in_denominator` is set, so the loss can be negative.
    """
    if len(negative_embs) == 0:
        raise ValueError("mmd_nca_loss needs at least one negative set")
    positive = mmd(anchor_emb, positive_emb, spec, squared=use_squared_mmd)
    distances = [mmd(anchor_emb, n, spec, squared=use_squared_mmd) for n in negative_embs]
    if include_positive_in_denominator:
        distances = [positive] + distances
    return positive + logsumexp(-stack(distances))


# ----------------------------------------------------------------------
# Baseline losses
# ----------------------------------------------------------------------

def triplet_loss(a: ArrayLike, p: ArrayLike, n: ArrayLike, margin: float) -> DenseArray:
    """max(0, |a-p|^2 - |a-n|^2 + margin), averaged when given rows of triplets."""
    a, p, n = as_dense(a), as_dense(p), as_dense(n)
    if not a.shape == p.shape == n.shape:
        raise ShapeError("triplet_loss", [a.shape, p.shape, n.shape], "embedding shapes differ")
    hinge = relu(sq_norm(a - p, axis=-1) - sq_norm(a - n, axis=-1) + margin)
    return reduce_mean(hinge)


def contrastive_loss(x: ArrayLike, y: ArrayLike, same: bool, margin: float) -> DenseArray:
    """d/2 for a matching pair, max(0, margin - d)^2 / 2 otherwise, with d the squared distance."""
    x, y = as_dense(x), as_dense(y)
    if x.shape != y.shape:
        raise ShapeError("contrastive_loss", [x.shape, y.shape], "embedding shapes differ")
    d = sq_norm(x - y, axis=-1)
    if same:
        return reduce_mean(scale(d, 0.5))
    gap = relu(margin - d)
    return reduce_mean(scale(gap * gap, 0.5))


def nca_loss(anchor: ArrayLike, positive: ArrayLike, negatives: ArrayLike) -> DenseArray:
    """-log( exp(-|a-p|^2) / sum_n exp(-|a-n|^2) )."""
    anchor, positive = as_dense(anchor), as_dense(positive)
    if anchor.shape != positive.shape:
        raise ShapeError("nca_loss", [anchor.shape, positive.shape], "embedding shapes differ")
    negatives = _rows(negatives, "nca_loss")
    d_pos = sq_norm(anchor - positive)
    d_neg = reshape(pairwise_sq_distances(anchor, negatives), (negatives.shape[0],))
    return d_pos + logsumexp(-d_neg)


def n_pair_loss(anchors: ArrayLike, positives: ArrayLike) -> DenseArray:
    """Mean softmax cross-entropy over inner products; other pairs' positives act as negatives."""
    anchors, positives = as_dense(anchors), as_dense(positives)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise ShapeError("n_pair_loss", [anchors.shape, positives.shape], "need paired (N, e) matrices")
    n = anchors.shape[0]
    if n < 2:
        raise ValueError(f"n_pair_loss needs at least 2 pairs, got {n}")
    logits = matmul(anchors, transpose(positives))
    own = take_slice(logits, (np.arange(n), np.arange(n)))
    return reduce_mean(logsumexp(logits, axis=1) - own)


def gor_regularizer(anchors: ArrayLike, negatives: ArrayLike, dim: int | None = None) -> DenseArray:
    """Global orthogonal regularization: M1^2 + max(0, M2 - 1/d) over anchor-negative inner products."""
    anchors, negatives = _rows(anchors, "gor_regularizer"), _rows(negatives, "gor_regularizer")
    d = dim if dim is not None else anchors.shape[1]
    inner = matmul(anchors, transpose(negatives))
    first = reduce_mean(inner)
    second = reduce_mean(inner * inner)
    return first * first + relu(second - 1.0 / d)


def episode_loss(config: LossConfig, embeddings: DenseArray, layout: EpisodeLayout) -> DenseArray:
    """Evaluates `config.loss_kind` on the stacked embeddings of one episode.

    Pair-based losses average over every anchor-positive pair, with the
    negative sets pooled.
    """
    if embeddings.shape[0] != layout.total:
        raise ShapeError("episode_loss", [embeddings.shape], f"layout expects {layout.total} rows")
    anchors = take_slice(embeddings, layout.anchor_rows)
    positives = take_slice(embeddings, layout.positive_rows)
    negative_sets = [take_slice(embeddings, layout.negative_rows(j)) for j in range(len(layout.negative_sizes))]

    kind = config.loss_kind
    if kind == "mmd_nca":
        return mmd_nca_loss(
            anchors, positives, negative_sets, config.kernel,
            use_squared_mmd=config.use_squared_mmd,
            include_positive_in_denominator=config.include_positive_in_denominator,
        )
    if kind == "n_pair":
        return n_pair_loss(anchors, positives)

    negatives = concat(negative_sets, axis=0) if len(negative_sets) > 1 else negative_sets[0]
    d_ap = pairwise_sq_distances(anchors, positives)
    d_an = pairwise_sq_distances(anchors, negatives)
    P, Q = d_ap.shape[1], d_an.shape[1]

    if kind in ("triplet", "triplet_gor"):
        gaps = reshape(d_ap, (d_ap.shape[0], P, 1)) - reshape(d_an, (d_an.shape[0], 1, Q)) + config.margin
        loss = reduce_mean(relu(gaps))
        if kind == "triplet_gor":
            loss = loss + scale(gor_regularizer(anchors, negatives), config.gor_weight)
        return loss
    if kind == "contrastive":
        gap = relu(config.margin - d_an)
        total = reduce_sum(scale(d_ap, 0.5)) + reduce_sum(scale(gap * gap, 0.5))
        return scale(total, 1.0 / (d_ap.size + d_an.size))
    if kind == "nca":
        return reduce_mean(d_ap) + reduce_mean(logsumexp(-d_an, axis=1))
    raise ConfigError("loss.loss_kind", f"unsupported loss kind '{kind}'")
