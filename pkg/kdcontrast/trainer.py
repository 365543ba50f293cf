"""Interleaved training over a text-only dataset D and a multimodal dataset D^M.

Every p-th step (p = ceil(|D| / |D^M|)) draws a sentence/image batch from
D^M and applies the configured multimodal objective; all other steps draw a
sentence batch from D and apply the dropout-positive loss. Batches are drawn
without replacement within an epoch and each branch reshuffles at the end of
its own epoch. A run is fully determined by ``TrainConfig.seed``.
"""

import json
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .config import ObjectiveConfig, TrainConfig
from .encoder import StudentEncoder
from .evaluation import evaluate
from .exceptions import InconsistentManifest, MalformedFile, NonFiniteLoss, ValidationError
from .models import (
    DatasetManifest,
    EvalRecord,
    Head,
    LossResult,
    Objective,
    StepKind,
    StepRecord,
    StsPair,
    TrainHistory,
)
from .objectives import kdmcse_loss, mcse_loss, simcse_loss
from .optim import make_optimizer
from .similarity import soft_labels
from .teacher_store import FeatureTable, gather

logger = logging.getLogger(__name__)

DEFAULT_MARGINS = tuple(round(0.025 * k, 3) for k in range(1, 10))
_SEED_BOUND = 2 ** 63 - 1


def paired_step(size_d: int, size_dm: int) -> int:
    """p = ceil(|D| / |D^M|)"""
    if size_d < 1 or size_dm < 1:
        raise ValidationError(f"dataset sizes must be >= 1, got {size_d} and {size_dm}")
    return -(-size_d // size_dm)


def step_kind(t: int, p: int) -> StepKind:
    """Multimodal exactly when p divides t"""
    if p < 1:
        raise ValidationError(f"paired step must be >= 1, got {p}")
    return StepKind.MULTIMODAL if t % p == 0 else StepKind.TEXT_ONLY


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read ``{"text_only": [...], "multimodal": [[sentence, image], ...]}``"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return DatasetManifest(
            text_only_ids=[str(sid) for sid in data.get("text_only", [])],
            multimodal_pairs=[(str(sid), str(iid)) for sid, iid in data.get("multimodal", [])],
        )
    except OSError as e:
        raise MalformedFile(f"cannot read {path}: {e}", str(path)) from e
    except (ValueError, TypeError, AttributeError) as e:
        raise MalformedFile(f"{path}: bad manifest: {e}", str(path)) from e


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    data = {
        "text_only": manifest.text_only_ids,
        "multimodal": [list(pair) for pair in manifest.multimodal_pairs],
    }
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
    return path


def validate_manifest(
    manifest: DatasetManifest,
    objective: Objective,
    text_table: Optional[FeatureTable],
    visual_table: Optional[FeatureTable],
) -> None:
    """Check the manifest against the teacher tables and the objective"""
    if manifest.size_text_only == 0 and manifest.size_multimodal == 0:
        raise InconsistentManifest("manifest has no data")
    if objective is not Objective.SIMCSE and manifest.size_multimodal == 0:
        raise InconsistentManifest(f"objective {objective.value} needs multimodal pairs")
    for sentence_id, image_id in manifest.multimodal_pairs:
        if text_table is not None and sentence_id not in text_table:
            raise InconsistentManifest(f"no teacher text feature for sentence {sentence_id!r}")
        if visual_table is not None and image_id not in visual_table:
            raise InconsistentManifest(f"no teacher visual feature for image {image_id!r}")
    if objective is not Objective.SIMCSE and manifest.size_multimodal:
        if text_table is None or visual_table is None:
            raise InconsistentManifest(f"objective {objective.value} needs both teacher tables")


def resolve_objective(objective: Objective, cfg: ObjectiveConfig) -> ObjectiveConfig:
    """Objective config with the ablation switches applied"""
    if objective is Objective.KDMCSE_NO_MARGIN:
        return replace(cfg, margin=0.0)
    if objective is Objective.KDMCSE_NO_FILTER:
        return replace(cfg, use_threshold_filter=False)
    return cfg


def build_student(
    config: TrainConfig,
    manifest: DatasetManifest,
    text_table: Optional[FeatureTable],
    visual_table: Optional[FeatureTable],
    dev_pairs: Sequence[StsPair] = (),
) -> StudentEncoder:
    """Fresh student covering every manifest and dev sentence"""
    sentence_ids = manifest.sentence_ids()
    known = set(sentence_ids)
    for pair in dev_pairs:
        for sid in (pair.sentence_a_id, pair.sentence_b_id):
            if sid not in known:
                known.add(sid)
                sentence_ids.append(sid)
    return StudentEncoder.initialize(
        sentence_ids,
        hidden_dim=config.hidden_dim,
        grounded_dim=config.grounded_dim,
        text_dim=text_table.dim if text_table is not None else config.grounded_dim,
        visual_dim=visual_table.dim if visual_table is not None else config.grounded_dim,
        dropout_rate=config.dropout_rate,
        init_scale=config.init_scale,
        seed=config.seed,
    )


class EpochSampler:
    """Batches without replacement, reshuffled at every epoch boundary.

    A dataset smaller than the batch size yields the whole dataset, in a
    fresh order, on every call. A tail shorter than the batch size is
    dropped in favour of a new epoch.
    """

    def __init__(self, items: Sequence, batch_size: int, rng: np.random.Generator):
        self.items = list(items)
        self.batch_size = min(batch_size, len(self.items))
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0
        self.epoch = 0

    def next_batch(self) -> List:
        if self._cursor + self.batch_size > len(self._order):
            self._order = self.rng.permutation(len(self.items))
            self._cursor = 0
            self.epoch += 1
        picked = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return [self.items[k] for k in picked]


class Trainer:
    """Runs the interleaved schedule for one student"""

    def __init__(
        self,
        config: TrainConfig,
        manifest: DatasetManifest,
        text_table: Optional[FeatureTable],
        visual_table: Optional[FeatureTable],
        student: StudentEncoder,
        dev_pairs: Sequence[StsPair] = (),
    ):
        validate_manifest(manifest, config.objective, text_table, visual_table)
        self.config = config
        self.manifest = manifest
        self.text_table = text_table
        self.visual_table = visual_table
        self.student = student
        self.dev_pairs = list(dev_pairs)
        self.objective_config = resolve_objective(config.objective, config.objective_config)

        text_seq, multi_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(3)
        self.text_sampler = (
            EpochSampler(manifest.text_only_ids, config.batch_size, np.random.default_rng(text_seq))
            if manifest.size_text_only
            else None
        )
        self.multimodal_sampler = (
            EpochSampler(manifest.multimodal_pairs, config.batch_size, np.random.default_rng(multi_seq))
            if manifest.size_multimodal
            else None
        )
        self.dropout_rng = np.random.default_rng(dropout_seq)
        self.optimizer = make_optimizer(config)

        if self.text_sampler is None:
            self.period = 1
        elif self.multimodal_sampler is None:
            self.period = None
        else:
            self.period = paired_step(manifest.size_text_only, manifest.size_multimodal)

    def schedule(self, t: int) -> StepKind:
        if self.period is None:
            return StepKind.TEXT_ONLY
        return step_kind(t, self.period)

    def _dropout_seeds(self, n: int) -> np.ndarray:
        return self.dropout_rng.integers(0, _SEED_BOUND, size=(2, n))

    def _text_loss(self, sentence_ids: List[str]) -> Tuple[LossResult, Dict[str, np.ndarray]]:
        seeds = self._dropout_seeds(len(sentence_ids))
        view_z = self.student.forward(sentence_ids, seeds[0], Head.SIMCSE)
        view_zp = self.student.forward(sentence_ids, seeds[1], Head.SIMCSE)
        result = simcse_loss(view_z.output, view_zp.output, self.objective_config)
        grads = self.student.backward(view_z, result.grads["h_z"])
        self.student.backward(view_zp, result.grads["h_z_prime"], grads)
        return result, grads

    def _multimodal_loss(self, pairs: List[Tuple[str, str]]) -> Tuple[LossResult, Dict[str, np.ndarray]]:
        sentence_ids = [sid for sid, _ in pairs]
        objective = self.config.objective
        if objective is Objective.SIMCSE:
            return self._text_loss(sentence_ids)

        seeds = self._dropout_seeds(len(pairs))
        view_z = self.student.forward(sentence_ids, seeds[0], Head.GROUNDED)
        view_zp = self.student.forward(sentence_ids, seeds[1], Head.GROUNDED)
        visual_raw = gather(self.visual_table, [iid for _, iid in pairs])
        v = self.student.project(visual_raw, Head.TEACHER_VISUAL)
        if objective is Objective.MCSE:
            result = mcse_loss(view_z.output, view_zp.output, v, self.objective_config)
        else:
            text_raw = gather(self.text_table, sentence_ids)
            t = self.student.project(text_raw, Head.TEACHER_TEXT)
            soft = soft_labels(text_raw, visual_raw)
            result = kdmcse_loss(view_z.output, view_zp.output, v, t, soft, self.objective_config)
        grads = self.student.backward(view_z, result.grads["s_z"])
        self.student.backward(view_zp, result.grads["s_z_prime"], grads)
        return result, grads

    def _evaluate(self, step: int, history: TrainHistory) -> None:
        rho, align, uniform = evaluate(self.student, self.dev_pairs, self.config.alignment_min_score)
        history.evals.append(EvalRecord(step, rho, align, uniform))
        logger.info(
            "eval | step=%d | spearman=%.4f | alignment=%.4f | uniformity=%.4f",
            step, rho, align, uniform,
        )
        if history.best_spearman is None or rho > history.best_spearman:
            history.best_step = step
            history.best_spearman = rho
            history.best_params = self.student.copy_params()
            logger.info("best_checkpoint | step=%d | spearman=%.4f", step, rho)

    def run(self, progress: bool = False) -> TrainHistory:
        """Execute ``config.steps`` iterations and return the history"""
        history = TrainHistory()
        steps = self.config.steps
        can_eval = len(self.dev_pairs) >= 2
        logger.info(
            "train_start | objective=%s | steps=%d | paired_step=%s",
            self.config.objective.value, steps, self.period,
        )
        bar = tqdm(range(1, steps + 1), desc="train", disable=not progress, leave=False)
        for t in bar:
            kind = self.schedule(t)
            if kind is StepKind.TEXT_ONLY:
                result, grads = self._text_loss(self.text_sampler.next_batch())
            else:
                result, grads = self._multimodal_loss(self.multimodal_sampler.next_batch())
            if not math.isfinite(result.mean):
                raise NonFiniteLoss(f"non-finite loss at step {t}", step=t)
            self.optimizer.step(self.student.params, grads)
            history.steps.append(StepRecord(t, kind, result.mean))
            logger.debug("step | step=%d | branch=%s | loss=%.6f", t, kind.value, result.mean)
            if progress:
                bar.set_postfix(loss=f"{result.mean:.4f}", branch=kind.value)
            if can_eval and (t % self.config.eval_every == 0 or t == steps):
                self._evaluate(t, history)
        return history


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    text_table: Optional[FeatureTable],
    visual_table: Optional[FeatureTable],
    student: StudentEncoder,
    dev_pairs: Sequence[StsPair] = (),
    progress: bool = False,
) -> TrainHistory:
    """Train ``student`` in place; see ``Trainer``"""
    trainer = Trainer(config, manifest, text_table, visual_table, student, dev_pairs)
    return trainer.run(progress=progress)


def margin_sweep(
    config: TrainConfig,
    manifest: DatasetManifest,
    text_table: FeatureTable,
    visual_table: FeatureTable,
    dev_pairs: Sequence[StsPair],
    margins: Iterable[float] = DEFAULT_MARGINS,
    progress: bool = False,
) -> List[Tuple[float, Optional[float]]]:
    """Best dev Spearman of one fresh run per angular margin"""
    results = []
    for margin in margins:
        run_config = replace(config, objective_config=replace(config.objective_config, margin=margin))
        student = build_student(run_config, manifest, text_table, visual_table, dev_pairs)
        history = train(run_config, manifest, text_table, visual_table, student, dev_pairs, progress)
        logger.info("sweep | margin=%.3f | best_spearman=%s", margin, history.best_spearman)
        results.append((margin, history.best_spearman))
    return results
