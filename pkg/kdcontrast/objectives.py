"""Contrastive objectives with analytic gradients.

Every loss here is a softmax cross-entropy over cosine (or shifted-angle)
logits between a batch of anchors and a batch of candidates, where the
candidate in the anchor's own row is its positive. The shared engine
``_angular_infonce`` returns per-anchor losses together with the gradient of
their sum with respect to both batches; the public functions assemble those
pieces into a ``LossResult`` holding the gradient of the batch mean.

Masks and margin weights are constants for differentiation: they come from
the frozen teacher.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .config import ObjectiveConfig
from .exceptions import (
    DegenerateDenominator,
    DimensionMismatch,
    EmptyBatch,
    MarginOutOfRange,
    MaskShapeMismatch,
    ShapeMismatch,
)
from .models import FilterMask, LossResult, MarginWeights, SoftLabels
from .numerics import unit_rows
from .similarity import all_pass_mask, filter_mask, margin_weights

DEFAULT_CONFIG = ObjectiveConfig()

# floor for sin(theta) when differentiating a shifted angle of a parallel pair
_MIN_SINE = 1e-12


@dataclass
class _Contrast:
    per_anchor: np.ndarray
    grad_anchor: np.ndarray
    grad_candidate: np.ndarray


def _angular_infonce(
    anchors: np.ndarray,
    candidates: np.ndarray,
    tau: float,
    weights: Optional[np.ndarray] = None,
    positive_margin: float = 0.0,
    negative_shift: Optional[np.ndarray] = None,
) -> _Contrast:
    """InfoNCE between anchors[i] and candidates[j] with optional angle shifts.

    The logit of pair (i, j) is cos(theta_ij + shift_ij) / tau where the shift
    is ``positive_margin`` on the diagonal and ``-negative_shift[i, j]`` off
    it. Pairs with no shift use the cosine itself, so a zero margin reduces
    to plain InfoNCE exactly. ``weights`` multiplies each denominator term.
    """
    a_norm, a_unit = unit_rows(anchors, side="anchors")
    b_norm, b_unit = unit_rows(candidates, side="candidates")
    n = len(a_unit)
    cos = np.clip(a_unit @ b_unit.T, -1.0, 1.0)
    eye = np.eye(n, dtype=bool)

    phi = cos.copy()
    dphi = np.ones_like(cos)
    shift = np.zeros_like(cos)
    if positive_margin:
        shift[eye] = positive_margin
    if negative_shift is not None:
        shift[~eye] = -negative_shift[~eye]
    shifted = shift != 0.0
    if shifted.any():
        theta = np.arccos(cos)
        if np.any(theta[eye] + shift[eye] > math.pi):
            raise MarginOutOfRange(
                f"positive angle plus margin {positive_margin} exceeds pi"
            )
        moved = theta + shift
        sine = np.maximum(np.sin(theta), _MIN_SINE)
        phi[shifted] = np.cos(moved[shifted])
        dphi[shifted] = (np.sin(moved) / sine)[shifted]

    if weights is None:
        weights = np.ones_like(cos)
    if np.any(weights[eye] == 0.0):
        raise DegenerateDenominator("mask removes the positive term of an anchor")

    logits = phi / tau
    relative = logits - np.diag(logits)[:, None]
    per_anchor = logsumexp(relative, axis=1, b=weights)
    probs = weights * np.exp(relative - per_anchor[:, None])

    # d(sum_i loss_i) / d cos_ij
    g = (probs - eye) * dphi / tau
    row_pull = (g * cos).sum(axis=1)
    col_pull = (g * cos).sum(axis=0)
    grad_anchor = (g @ b_unit - row_pull[:, None] * a_unit) / a_norm[:, None]
    grad_candidate = (g.T @ a_unit - col_pull[:, None] * b_unit) / b_norm[:, None]
    return _Contrast(np.maximum(per_anchor, 0.0), grad_anchor, grad_candidate)


def _as_batches(**batches: np.ndarray) -> Dict[str, np.ndarray]:
    """Coerce named batches to float64 2-D arrays of one common length"""
    arrays = {name: np.atleast_2d(np.asarray(b, dtype=np.float64)) for name, b in batches.items()}
    lengths = {name: len(a) for name, a in arrays.items()}
    if any(a.size == 0 for a in arrays.values()) or 0 in lengths.values():
        raise EmptyBatch("objectives need at least one row per batch")
    if len(set(lengths.values())) != 1:
        raise ShapeMismatch(f"batch lengths differ: {lengths}")
    dims = {name: a.shape[1] for name, a in arrays.items()}
    if len(set(dims.values())) != 1:
        raise DimensionMismatch(f"batch dimensions differ: {dims}")
    return arrays


def _check_square(entries: np.ndarray, n: int, what: str, error=ShapeMismatch) -> None:
    if entries.shape != (n, n):
        raise error(f"{what} has shape {entries.shape}, expected {(n, n)}")


def _check_adaptive_margin(margin: float, delta: MarginWeights) -> None:
    if margin < 0.0:
        raise MarginOutOfRange(f"margin must be non-negative, got {margin}")
    if margin * float(np.max(delta.entries, initial=0.0)) >= math.pi:
        raise MarginOutOfRange(f"margin {margin} times max delta reaches pi")


def _result(per_anchor: np.ndarray, grads: Dict[str, np.ndarray], frozen: Sequence[str] = ()) -> LossResult:
    n = len(per_anchor)
    return LossResult(
        per_anchor=per_anchor,
        mean=float(np.mean(per_anchor)),
        grads={name: g / n for name, g in grads.items()},
        frozen=frozenset(frozen),
    )


def simcse_loss(h_z: np.ndarray, h_z_prime: np.ndarray, cfg: ObjectiveConfig = DEFAULT_CONFIG) -> LossResult:
    """Unsupervised dropout-positive InfoNCE at temperature ``cfg.tau``"""
    batch = _as_batches(h_z=h_z, h_z_prime=h_z_prime)
    part = _angular_infonce(batch["h_z"], batch["h_z_prime"], cfg.tau)
    return _result(part.per_anchor, {"h_z": part.grad_anchor, "h_z_prime": part.grad_candidate})


def _multimodal(
    s_z: np.ndarray,
    s_z_prime: np.ndarray,
    teacher: np.ndarray,
    cfg: ObjectiveConfig,
    weights: Optional[np.ndarray] = None,
    negative_shift: Optional[np.ndarray] = None,
    both_views: bool = True,
):
    views = [s_z, s_z_prime] if both_views else [s_z]
    parts = [
        _angular_infonce(view, teacher, cfg.tau_prime, weights=weights, negative_shift=negative_shift)
        for view in views
    ]
    per_anchor = sum(part.per_anchor for part in parts)
    grad_z = parts[0].grad_anchor
    grad_z_prime = parts[1].grad_anchor if both_views else np.zeros_like(s_z_prime)
    return per_anchor, grad_z, grad_z_prime


def mcse_loss(
    s_z: np.ndarray, s_z_prime: np.ndarray, v: np.ndarray, cfg: ObjectiveConfig = DEFAULT_CONFIG
) -> LossResult:
    """Sentence-to-teacher InfoNCE summed over both dropout views"""
    batch = _as_batches(s_z=s_z, s_z_prime=s_z_prime, v=v)
    per_anchor, g_z, g_zp = _multimodal(batch["s_z"], batch["s_z_prime"], batch["v"], cfg)
    return _result(
        per_anchor,
        {"s_z": g_z, "s_z_prime": g_zp, "v": np.zeros_like(batch["v"])},
        frozen=("v",),
    )


def filtered_infonce(
    s_z: np.ndarray,
    s_z_prime: np.ndarray,
    m: np.ndarray,
    mask: FilterMask,
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
) -> LossResult:
    """``mcse_loss`` whose denominators only sum over unmasked negatives"""
    batch = _as_batches(s_z=s_z, s_z_prime=s_z_prime, m=m)
    n = len(batch["m"])
    _check_square(mask.entries, n, "mask", MaskShapeMismatch)
    per_anchor, g_z, g_zp = _multimodal(
        batch["s_z"], batch["s_z_prime"], batch["m"], cfg, weights=mask.entries
    )
    return _result(
        per_anchor,
        {"s_z": g_z, "s_z_prime": g_zp, "m": np.zeros_like(batch["m"])},
        frozen=("m",),
    )


def arccse_loss(h_z: np.ndarray, h_z_prime: np.ndarray, cfg: ObjectiveConfig = DEFAULT_CONFIG) -> LossResult:
    """InfoNCE with an additive angular margin on the positive pair"""
    if cfg.margin < 0.0:
        raise MarginOutOfRange(f"margin must be non-negative, got {cfg.margin}")
    batch = _as_batches(h_z=h_z, h_z_prime=h_z_prime)
    part = _angular_infonce(batch["h_z"], batch["h_z_prime"], cfg.tau, positive_margin=cfg.margin)
    return _result(part.per_anchor, {"h_z": part.grad_anchor, "h_z_prime": part.grad_candidate})


def adapacse_loss(
    anchor: np.ndarray,
    positive: np.ndarray,
    delta: MarginWeights,
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
) -> LossResult:
    """Adaptive angular margin loss.

    Negative j of anchor i has its angle reduced by ``margin * delta[i, j]``
    before the cosine, so teacher-dissimilar negatives are pushed harder.
    Row i of ``positive`` is the positive of anchor i; the other rows are
    its negatives.
    """
    batch = _as_batches(anchor=anchor, positive=positive)
    n = len(batch["anchor"])
    _check_square(delta.entries, n, "delta")
    _check_adaptive_margin(cfg.margin, delta)
    part = _angular_infonce(
        batch["anchor"], batch["positive"], cfg.tau, negative_shift=cfg.margin * delta.entries
    )
    return _result(part.per_anchor, {"anchor": part.grad_anchor, "positive": part.grad_candidate})


def adapacse_filtered_loss(
    s_z: np.ndarray,
    s_z_prime: np.ndarray,
    m: np.ndarray,
    mask: FilterMask,
    delta: MarginWeights,
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
) -> LossResult:
    """Adaptive margin loss against teacher batch ``m`` with filtered negatives.

    Summed over both dropout views unless
    ``cfg.sum_over_both_dropout_views`` is off, in which case only ``s_z``
    contributes and ``s_z_prime`` gets a zero gradient.
    """
    batch = _as_batches(s_z=s_z, s_z_prime=s_z_prime, m=m)
    n = len(batch["m"])
    _check_square(mask.entries, n, "mask", MaskShapeMismatch)
    _check_square(delta.entries, n, "delta")
    _check_adaptive_margin(cfg.margin, delta)
    per_anchor, g_z, g_zp = _multimodal(
        batch["s_z"],
        batch["s_z_prime"],
        batch["m"],
        cfg,
        weights=mask.entries,
        negative_shift=cfg.margin * delta.entries,
        both_views=cfg.sum_over_both_dropout_views,
    )
    return _result(
        per_anchor,
        {"s_z": g_z, "s_z_prime": g_zp, "m": np.zeros_like(batch["m"])},
        frozen=("m",),
    )


def branch_inputs(sim, n: int, cfg: ObjectiveConfig):
    """Mask and margin weights derived from one soft-label matrix"""
    if cfg.use_threshold_filter:
        mask = filter_mask(sim, cfg.threshold, cfg.filter_orientation)
    else:
        mask = all_pass_mask(n)
    return mask, margin_weights(sim)


def kdmcse_loss(
    s_z: np.ndarray,
    s_z_prime: np.ndarray,
    v: np.ndarray,
    t: np.ndarray,
    soft: SoftLabels,
    cfg: ObjectiveConfig = DEFAULT_CONFIG,
) -> LossResult:
    """Mean of the visual and text filtered adaptive-margin branches.

    The visual branch contrasts against ``v`` with mask and margins from
    ``soft.tv``; the text branch against ``t`` with ``soft.tt``.
    """
    n = len(np.atleast_2d(s_z))
    mask_v, delta_v = branch_inputs(soft.tv, n, cfg)
    mask_t, delta_t = branch_inputs(soft.tt, n, cfg)
    visual = adapacse_filtered_loss(s_z, s_z_prime, v, mask_v, delta_v, cfg)
    text = adapacse_filtered_loss(s_z, s_z_prime, t, mask_t, delta_t, cfg)
    per_anchor = (visual.per_anchor + text.per_anchor) / 2.0
    return LossResult(
        per_anchor=per_anchor,
        mean=float(np.mean(per_anchor)),
        grads={
            "s_z": (visual.grads["s_z"] + text.grads["s_z"]) / 2.0,
            "s_z_prime": (visual.grads["s_z_prime"] + text.grads["s_z_prime"]) / 2.0,
            "v": np.zeros_like(visual.grads["m"]),
            "t": np.zeros_like(text.grads["m"]),
        },
        frozen=frozenset({"v", "t"}),
    )
