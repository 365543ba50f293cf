"""Batch similarity machinery: soft labels, threshold filters, margin weights
and the statistics used to pick a threshold."""

from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np

from .exceptions import (
    BatchLengthMismatch,
    DimensionMismatch,
    ThresholdOutOfRange,
    UnknownGoldIndex,
    ValidationError,
)
from .models import (
    FilterMask,
    FilterOrientation,
    HistogramBin,
    MarginWeights,
    Modality,
    SimilarityMatrix,
    SoftLabels,
)
from .numerics import unit_rows


def pairwise_cosine(
    rows: np.ndarray,
    cols: np.ndarray,
    row_modality: Modality = Modality.TEXT,
    col_modality: Modality = Modality.TEXT,
) -> SimilarityMatrix:
    """Cosine similarity of every row against every column vector"""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    cols = np.atleast_2d(np.asarray(cols, dtype=np.float64))
    if rows.shape[1] != cols.shape[1]:
        raise DimensionMismatch(
            f"row dim {rows.shape[1]} does not match col dim {cols.shape[1]}"
        )
    _, row_units = unit_rows(rows, side="rows")
    _, col_units = unit_rows(cols, side="cols")
    entries = np.clip(row_units @ col_units.T, -1.0, 1.0)
    return SimilarityMatrix(entries, row_modality, col_modality)


def soft_labels(teacher_text: np.ndarray, teacher_visual: np.ndarray) -> SoftLabels:
    """Text-text and text-visual soft labels from raw teacher features"""
    teacher_text = np.atleast_2d(np.asarray(teacher_text, dtype=np.float64))
    teacher_visual = np.atleast_2d(np.asarray(teacher_visual, dtype=np.float64))
    if len(teacher_text) != len(teacher_visual):
        raise BatchLengthMismatch(
            f"{len(teacher_text)} text features but {len(teacher_visual)} visual features"
        )
    return SoftLabels(
        tt=pairwise_cosine(teacher_text, teacher_text, Modality.TEXT, Modality.TEXT),
        tv=pairwise_cosine(teacher_text, teacher_visual, Modality.TEXT, Modality.VISUAL),
    )


def soft_labels_full(teacher_text: np.ndarray, teacher_visual: np.ndarray) -> SoftLabels:
    """All four modality pairings; vv and vt are informational only"""
    labels = soft_labels(teacher_text, teacher_visual)
    return SoftLabels(
        tt=labels.tt,
        tv=labels.tv,
        vv=pairwise_cosine(teacher_visual, teacher_visual, Modality.VISUAL, Modality.VISUAL),
        vt=pairwise_cosine(teacher_visual, teacher_text, Modality.VISUAL, Modality.TEXT),
    )


def filter_mask(
    sim: SimilarityMatrix,
    threshold: float,
    orientation: FilterOrientation = FilterOrientation.EXCLUDE_SIMILAR,
) -> FilterMask:
    """Zero out the negatives the teacher considers too close to the anchor.

    With the default orientation an off-diagonal entry is dropped when its
    similarity is >= threshold. ``paper_literal`` drops entries below the
    threshold instead. The diagonal is always kept.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ThresholdOutOfRange(f"threshold {threshold} outside [-1, 1]")
    orientation = FilterOrientation(orientation)
    entries = sim.entries
    if orientation is FilterOrientation.EXCLUDE_SIMILAR:
        keep = entries < threshold
    else:
        keep = entries >= threshold
    mask = keep.astype(np.float64)
    n = min(mask.shape)
    mask[np.arange(n), np.arange(n)] = 1.0
    return FilterMask(mask, float(threshold))


def all_pass_mask(size: int) -> FilterMask:
    """Mask that keeps every term; used when filtering is switched off"""
    return FilterMask(np.ones((size, size)), threshold=float("nan"))


def margin_weights(sim: SimilarityMatrix) -> MarginWeights:
    """Cosine distance |1 - alpha| for every pair"""
    return MarginWeights(np.abs(1.0 - sim.entries))


def off_diagonal(sim: SimilarityMatrix, exclude_diagonal: Optional[bool] = None) -> np.ndarray:
    """Flattened entries, without the diagonal for square matrices"""
    if exclude_diagonal is None:
        exclude_diagonal = sim.is_square
    entries = sim.entries
    if not exclude_diagonal:
        return entries.ravel()
    keep = ~np.eye(*entries.shape, dtype=bool)
    return entries[keep]


def similarity_histogram(
    sim: SimilarityMatrix, bins: int, exclude_diagonal: Optional[bool] = None
) -> List[HistogramBin]:
    """Equal-width histogram over [-1, 1] of the off-diagonal similarities"""
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(
        off_diagonal(sim, exclude_diagonal), bins=bins, range=(-1.0, 1.0)
    )
    return [
        HistogramBin(float(edges[k]), float(edges[k + 1]), int(counts[k]))
        for k in range(bins)
    ]


def true_caption_rank(
    tv: SimilarityMatrix, gold: Mapping[int, Iterable[int]]
) -> Dict[int, int]:
    """Worst 1-based rank of an image's gold captions.

    ``tv`` has captions as rows and images as columns. For each image in
    ``gold`` the captions are sorted by descending similarity, ties going to
    the lower caption index, and the largest rank among the gold captions
    is reported.
    """
    n_captions, n_images = tv.entries.shape
    ranks: Dict[int, int] = {}
    for image, captions in gold.items():
        if not 0 <= image < n_images:
            raise UnknownGoldIndex(f"image column {image} not in similarity matrix", image)
        captions = list(captions)
        if not captions:
            continue
        column = tv.entries[:, image]
        order = np.lexsort((np.arange(n_captions), -column))
        position = np.empty(n_captions, dtype=np.int64)
        position[order] = np.arange(1, n_captions + 1)
        worst = 0
        for caption in captions:
            if not 0 <= caption < n_captions:
                raise UnknownGoldIndex(f"caption row {caption} not in similarity matrix", caption)
            worst = max(worst, int(position[caption]))
        ranks[image] = worst
    return ranks
