"""STS-style Spearman evaluation and hypersphere alignment/uniformity"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from .encoder import StudentEncoder
from .exceptions import EmptyInput, FewerThanTwoPoints, MalformedFile, ValidationError
from .models import StsPair
from .numerics import spearman, unit_rows

GOLD_RANGE = (0.0, 5.0)


def load_sts_pairs(path: Union[str, Path]) -> List[StsPair]:
    """Read ``id_a<TAB>id_b<TAB>score`` lines"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise MalformedFile(f"cannot read {path}: {e}", str(path)) from e
    pairs = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedFile(f"{path}:{number}: expected 3 tab-separated fields", str(path))
        try:
            score = float(fields[2])
        except ValueError:
            raise MalformedFile(f"{path}:{number}: bad score {fields[2]!r}", str(path)) from None
        pairs.append(make_pair(fields[0], fields[1], score))
    return pairs


def make_pair(sentence_a_id: str, sentence_b_id: str, gold_score: float) -> StsPair:
    lo, hi = GOLD_RANGE
    if not lo <= gold_score <= hi:
        raise ValidationError(f"gold score {gold_score} outside [{lo}, {hi}]")
    return StsPair(sentence_a_id, sentence_b_id, float(gold_score))


def predicted_scores(student: StudentEncoder, pairs: Sequence[StsPair]) -> np.ndarray:
    """Cosine of the dropout-free hidden vectors of each pair"""
    _, a = unit_rows(student.embed([p.sentence_a_id for p in pairs]), side="sentence_a")
    _, b = unit_rows(student.embed([p.sentence_b_id for p in pairs]), side="sentence_b")
    return np.clip(np.sum(a * b, axis=1), -1.0, 1.0)


def sts_eval(student: StudentEncoder, pairs: Sequence[StsPair]) -> float:
    """Spearman correlation between predicted cosines and gold scores"""
    if len(pairs) < 2:
        raise EmptyInput("sts_eval needs at least two pairs")
    gold = [pair.gold_score for pair in pairs]
    return spearman(predicted_scores(student, pairs), gold)


def alignment(positive_pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean squared distance between normalised positive pairs"""
    if len(positive_pairs) == 0:
        raise EmptyInput("alignment needs at least one pair")
    _, left = unit_rows(np.array([x for x, _ in positive_pairs], dtype=np.float64), side="left")
    _, right = unit_rows(np.array([y for _, y in positive_pairs], dtype=np.float64), side="right")
    return float(np.mean(np.sum((left - right) ** 2, axis=1)))


def uniformity(points: np.ndarray) -> float:
    """log of the mean Gaussian potential exp(-2 d^2) over distinct pairs"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(points) < 2:
        raise FewerThanTwoPoints("uniformity needs at least two points")
    _, units = unit_rows(points, side="points")
    squared = pdist(units, metric="sqeuclidean")
    return float(logsumexp(-2.0 * squared) - np.log(len(squared)))


def evaluate(
    student: StudentEncoder, pairs: Sequence[StsPair], alignment_min_score: float = 4.0
) -> Tuple[float, float, float]:
    """Spearman, alignment and uniformity of a student on a dev pair set.

    Alignment uses the pairs whose gold score reaches ``alignment_min_score``
    and is NaN when none does; uniformity uses every distinct sentence.
    """
    rho = sts_eval(student, pairs)
    positives = [p for p in pairs if p.gold_score >= alignment_min_score]
    if positives:
        a = student.embed([p.sentence_a_id for p in positives])
        b = student.embed([p.sentence_b_id for p in positives])
        align = alignment(list(zip(a, b)))
    else:
        align = float("nan")
    sentences = list(dict.fromkeys(s for p in pairs for s in (p.sentence_a_id, p.sentence_b_id)))
    uniform = uniformity(student.embed(sentences)) if len(sentences) >= 2 else float("nan")
    return rho, align, uniform
