from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np


class Modality(str, Enum):
    TEXT = "text"
    VISUAL = "visual"


class FilterOrientation(str, Enum):
    """Which side of the threshold a negative is dropped on"""

    EXCLUDE_SIMILAR = "exclude_similar"
    PAPER_LITERAL = "paper_literal"


class Objective(str, Enum):
    SIMCSE = "simcse"
    MCSE = "mcse"
    KDMCSE = "kdmcse"
    KDMCSE_NO_MARGIN = "kdmcse_no_margin"
    KDMCSE_NO_FILTER = "kdmcse_no_filter"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class StepKind(str, Enum):
    TEXT_ONLY = "text_only"
    MULTIMODAL = "multimodal"


class Head(str, Enum):
    SIMCSE = "simcse"
    GROUNDED = "grounded"
    TEACHER_TEXT = "teacher_text"
    TEACHER_VISUAL = "teacher_visual"


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities between two batches"""

    entries: np.ndarray
    row_modality: Modality = Modality.TEXT
    col_modality: Modality = Modality.TEXT

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape

    @property
    def is_square(self) -> bool:
        return self.entries.shape[0] == self.entries.shape[1]


@dataclass(frozen=True)
class FilterMask:
    """0/1 weights applied to the denominator terms of a filtered loss"""

    entries: np.ndarray
    threshold: float


@dataclass(frozen=True)
class MarginWeights:
    """Per-pair margin scale, the cosine distance |1 - alpha|"""

    entries: np.ndarray


@dataclass(frozen=True)
class SoftLabels:
    """Teacher soft labels for one batch.

    ``vv`` and ``vt`` are only filled by ``soft_labels_full``; no objective
    reads them.
    """

    tt: SimilarityMatrix
    tv: SimilarityMatrix
    vv: Optional[SimilarityMatrix] = None
    vt: Optional[SimilarityMatrix] = None


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    count: int


@dataclass
class LossResult:
    """Per-anchor losses, their mean and the gradient of the mean.

    ``grads`` maps the name of every input batch to an array with the same
    shape, row ``i`` being the gradient with respect to row ``i`` of that
    batch. Batches listed in ``frozen`` are teacher outputs; their gradients
    are reported as exact zeros.
    """

    per_anchor: np.ndarray
    mean: float
    grads: Dict[str, np.ndarray]
    frozen: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class StsPair:
    sentence_a_id: str
    sentence_b_id: str
    gold_score: float


@dataclass
class DatasetManifest:
    """Text-only sentences D and sentence/image pairs D^M"""

    text_only_ids: List[str] = field(default_factory=list)
    multimodal_pairs: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def size_text_only(self) -> int:
        return len(self.text_only_ids)

    @property
    def size_multimodal(self) -> int:
        return len(self.multimodal_pairs)

    def sentence_ids(self) -> List[str]:
        """All sentence ids in first-seen order, text-only first"""
        seen = dict.fromkeys(self.text_only_ids)
        seen.update(dict.fromkeys(sid for sid, _ in self.multimodal_pairs))
        return list(seen)

    def image_ids(self) -> List[str]:
        return list(dict.fromkeys(iid for _, iid in self.multimodal_pairs))


@dataclass(frozen=True)
class StepRecord:
    step: int
    branch: StepKind
    loss: float


@dataclass(frozen=True)
class EvalRecord:
    step: int
    spearman: float
    alignment: float
    uniformity: float


@dataclass
class TrainHistory:
    steps: List[StepRecord] = field(default_factory=list)
    evals: List[EvalRecord] = field(default_factory=list)
    best_step: Optional[int] = None
    best_spearman: Optional[float] = None
    best_params: Optional[Dict[str, np.ndarray]] = None

    def multimodal_steps(self) -> int:
        return sum(1 for record in self.steps if record.branch is StepKind.MULTIMODAL)
