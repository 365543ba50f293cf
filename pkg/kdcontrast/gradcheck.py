"""Central finite-difference verification of the analytic gradients.

``grad_check`` perturbs every coordinate of every non-frozen slot a loss
reports a gradient for and compares ``(f(x + eps) - f(x - eps)) / (2 eps)``
with the analytic value. The error of a slot is the largest absolute
difference divided by the largest magnitude on either side (floored at
1e-8), so coordinates with a tiny gradient are judged on the scale of the
slot they belong to. Frozen slots are not differentiated; they pass when
their analytic gradient is exactly zero.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import ObjectiveConfig
from .encoder import StudentEncoder
from .exceptions import NonFiniteLoss, ValidationError
from .models import Head, LossResult
from .objectives import (
    DEFAULT_CONFIG,
    adapacse_filtered_loss,
    adapacse_loss,
    arccse_loss,
    branch_inputs,
    filtered_infonce,
    kdmcse_loss,
    mcse_loss,
    simcse_loss,
)
from .similarity import margin_weights, soft_labels

logger = logging.getLogger(__name__)

EPSILON_RANGE = (1e-6, 1e-3)
_FLOOR = 1e-8
TEACHER_HEADS = (Head.TEACHER_TEXT, Head.TEACHER_VISUAL)


@dataclass(frozen=True)
class SlotCheck:
    slot: str
    max_rel_err: float
    frozen: bool = False

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


@dataclass
class GradCheckReport:
    """Per-slot errors of one or more checks of a single objective"""

    objective: str
    tolerance: float
    slots: Dict[str, SlotCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed(self.tolerance) for check in self.slots.values())

    @property
    def max_rel_err(self) -> float:
        return max((check.max_rel_err for check in self.slots.values()), default=0.0)

    def merge(self, other: "GradCheckReport") -> "GradCheckReport":
        """Keep the worst error seen for every slot"""
        for name, check in other.slots.items():
            current = self.slots.get(name)
            if current is None or check.max_rel_err > current.max_rel_err:
                self.slots[name] = check
        return self


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), _FLOOR)
    return float(np.max(np.abs(analytic - numeric))) / scale


def finite_difference(fn: Callable[[], float], array: np.ndarray, epsilon: float) -> np.ndarray:
    """Central differences of ``fn`` with respect to ``array``, perturbed in place"""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + epsilon
        up = fn()
        flat[k] = original - epsilon
        down = fn()
        flat[k] = original
        out[k] = (up - down) / (2.0 * epsilon)
    return grad


def _check_epsilon(epsilon: float) -> None:
    lo, hi = EPSILON_RANGE
    if not lo <= epsilon <= hi:
        raise ValidationError(f"epsilon {epsilon} outside [{lo}, {hi}]")


def _finite_mean(result: LossResult) -> float:
    if not math.isfinite(result.mean):
        raise NonFiniteLoss("loss is not finite at the evaluation point")
    return result.mean


def grad_check(
    loss_op: Callable[..., LossResult],
    inputs: Mapping[str, Any],
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
    epsilon: float = 1e-4,
    tolerance: float = 1e-4,
    name: Optional[str] = None,
) -> GradCheckReport:
    """Compare the analytic gradient of ``loss_op(**inputs, cfg=cfg)`` with
    finite differences.

    Only inputs the loss reports a gradient for are perturbed; masks, margin
    weights and soft labels pass through untouched.
    """
    _check_epsilon(epsilon)
    point = {
        key: np.array(value, dtype=np.float64) if isinstance(value, np.ndarray) else value
        for key, value in inputs.items()
    }
    result = loss_op(**point, cfg=cfg)
    _finite_mean(result)

    def evaluate() -> float:
        return loss_op(**point, cfg=cfg).mean

    report = GradCheckReport(name or getattr(loss_op, "__name__", "loss"), tolerance)
    for slot, analytic in result.grads.items():
        if slot in result.frozen:
            error = 0.0 if not np.any(analytic) else math.inf
            report.slots[slot] = SlotCheck(slot, error, frozen=True)
            continue
        numeric = finite_difference(evaluate, point[slot], epsilon)
        report.slots[slot] = SlotCheck(slot, relative_error(analytic, numeric))
    logger.debug("grad_check | objective=%s | max_rel_err=%.3e", report.objective, report.max_rel_err)
    return report


def _near(rng: np.random.Generator, x: np.ndarray, noise: float = 0.8) -> np.ndarray:
    return x + noise * rng.normal(size=x.shape)


def random_case(
    name: str, rng: np.random.Generator, n: int = 3, dim: int = 4, cfg: ObjectiveConfig = DEFAULT_CONFIG
) -> Dict[str, Any]:
    """Random inputs for one registered objective.

    Positives and teacher rows are noisy copies of the anchors; masks and
    margin weights come from an independent random raw teacher batch.
    """
    if name not in OBJECTIVES:
        raise ValidationError(f"unknown objective {name!r}")
    anchor = rng.normal(size=(n, dim))
    raw_text = rng.normal(size=(n, dim))
    raw_visual = _near(rng, raw_text, 0.5)
    soft = soft_labels(raw_text, raw_visual)
    mask, delta = branch_inputs(soft.tv, n, cfg)

    if name in ("simcse", "arccse"):
        return {"h_z": anchor, "h_z_prime": _near(rng, anchor)}
    if name == "mcse":
        return {"s_z": anchor, "s_z_prime": _near(rng, anchor), "v": _near(rng, anchor)}
    if name == "filtered_infonce":
        return {"s_z": anchor, "s_z_prime": _near(rng, anchor), "m": _near(rng, anchor), "mask": mask}
    if name == "adapacse":
        return {"anchor": anchor, "positive": _near(rng, anchor), "delta": margin_weights(soft.tt)}
    if name == "adapacse_filtered":
        return {
            "s_z": anchor,
            "s_z_prime": _near(rng, anchor),
            "m": _near(rng, anchor),
            "mask": mask,
            "delta": delta,
        }
    return {
        "s_z": anchor,
        "s_z_prime": _near(rng, anchor),
        "v": _near(rng, anchor),
        "t": _near(rng, anchor),
        "soft": soft,
    }


OBJECTIVES: Dict[str, Callable[..., LossResult]] = {
    "simcse": simcse_loss,
    "mcse": mcse_loss,
    "filtered_infonce": filtered_infonce,
    "arccse": arccse_loss,
    "adapacse": adapacse_loss,
    "adapacse_filtered": adapacse_filtered_loss,
    "kdmcse": kdmcse_loss,
}


def encoder_grad_check(
    student: StudentEncoder,
    sentence_ids: Sequence[str],
    seeds: np.ndarray,
    text_raw: np.ndarray,
    visual_raw: np.ndarray,
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
    epsilon: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Check kdmcse_loss through the grounded head, dropout and base table.

    ``seeds`` has shape (2, N): one dropout seed per sentence and view. The
    teacher heads receive no gradient and are reported as frozen slots.
    """
    _check_epsilon(epsilon)
    soft = soft_labels(text_raw, visual_raw)

    def loss_and_grads(with_grads: bool):
        view_z = student.forward(sentence_ids, seeds[0], Head.GROUNDED)
        view_zp = student.forward(sentence_ids, seeds[1], Head.GROUNDED)
        v = student.project(visual_raw, Head.TEACHER_VISUAL)
        t = student.project(text_raw, Head.TEACHER_TEXT)
        result = kdmcse_loss(view_z.output, view_zp.output, v, t, soft, cfg)
        if not with_grads:
            return result, None
        grads = student.backward(view_z, result.grads["s_z"])
        student.backward(view_zp, result.grads["s_z_prime"], grads)
        return result, grads

    result, grads = loss_and_grads(True)
    _finite_mean(result)
    frozen_prefixes = tuple(f"{head.value}." for head in TEACHER_HEADS)

    report = GradCheckReport("encoder", tolerance)
    for slot, analytic in grads.items():
        if slot.startswith(frozen_prefixes):
            error = 0.0 if not np.any(analytic) else math.inf
            report.slots[slot] = SlotCheck(slot, error, frozen=True)
            continue
        numeric = finite_difference(lambda: loss_and_grads(False)[0].mean, student.params[slot], epsilon)
        report.slots[slot] = SlotCheck(slot, relative_error(analytic, numeric))
    return report


def run_suite(
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
    cases: int = 20,
    seed: int = 0,
    epsilon: float = 1e-4,
    tolerance: float = 1e-4,
    sizes: Iterable[int] = (2, 3, 4),
    dims: Iterable[int] = (4, 8),
    objectives: Optional[Iterable[str]] = None,
    include_encoder: bool = True,
) -> List[GradCheckReport]:
    """Worst-case reports over ``cases`` random batches per objective"""
    rng = np.random.default_rng(seed)
    sizes, dims = list(sizes), list(dims)
    reports = []
    for name in objectives or OBJECTIVES:
        merged = GradCheckReport(name, tolerance)
        for case in range(cases):
            n = sizes[case % len(sizes)]
            dim = dims[(case // len(sizes)) % len(dims)]
            inputs = random_case(name, rng, n, dim, cfg)
            merged.merge(grad_check(OBJECTIVES[name], inputs, cfg, epsilon, tolerance, name))
        logger.info("grad_check | objective=%s | cases=%d | max_rel_err=%.3e", name, cases, merged.max_rel_err)
        reports.append(merged)
    if include_encoder:
        reports.append(_encoder_case(rng, cfg, epsilon, tolerance))
    return reports


def _encoder_case(
    rng: np.random.Generator, cfg: ObjectiveConfig, epsilon: float, tolerance: float
) -> GradCheckReport:
    ids = ["a", "b", "c"]
    student = StudentEncoder.initialize(
        ids, hidden_dim=6, grounded_dim=4, text_dim=4, visual_dim=4,
        dropout_rate=0.1, init_scale=0.5, seed=int(rng.integers(0, 2 ** 31)),
    )
    text_raw = rng.normal(size=(3, 4))
    seeds = rng.integers(0, 2 ** 31, size=(2, 3))
    report = encoder_grad_check(student, ids, seeds, text_raw, _near(rng, text_raw, 0.5), cfg, epsilon, tolerance)
    logger.info("grad_check | objective=encoder | max_rel_err=%.3e", report.max_rel_err)
    return report


def summary_rows(reports: Iterable[GradCheckReport]) -> List[Tuple[str, str, float, bool]]:
    """(objective, slot, max_rel_err, pass) rows in report order"""
    rows = []
    for report in reports:
        for slot, check in report.slots.items():
            rows.append((report.objective, slot, check.max_rel_err, check.passed(report.tolerance)))
    return rows
