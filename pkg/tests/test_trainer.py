import math
from dataclasses import replace

import numpy as np
import pytest

from kdcontrast.config import ObjectiveConfig, TrainConfig
from kdcontrast.encoder import load_checkpoint, save_checkpoint
from kdcontrast.evaluation import sts_eval
from kdcontrast.exceptions import InconsistentManifest, MalformedFile, NonFiniteLoss, ValidationError
from kdcontrast.models import DatasetManifest, LossResult, Objective, StepKind
from kdcontrast.trainer import (
    EpochSampler,
    Trainer,
    build_student,
    load_manifest,
    margin_sweep,
    paired_step,
    resolve_objective,
    step_kind,
    train,
    write_manifest,
)


def _config(**overrides):
    values = dict(
        batch_size=4, steps=20, eval_every=5, hidden_dim=8, grounded_dim=4,
        learning_rate=1e-2, seed=3,
    )
    values.update(overrides)
    return TrainConfig(**values)


def _run(config, manifest, tables, dev):
    text_table, visual_table = tables
    student = build_student(config, manifest, text_table, visual_table, dev)
    history = train(config, manifest, text_table, visual_table, student, dev)
    return student, history


def test_paired_step():
    assert paired_step(1000, 250) == 4
    assert paired_step(1000, 300) == 4
    assert paired_step(5, 5) == 1
    assert paired_step(1, 7) == 1
    with pytest.raises(ValidationError):
        paired_step(0, 3)


@pytest.mark.parametrize("size_d, size_dm", [(1000, 250), (1000, 300), (5, 5)])
def test_multimodal_step_count(size_d, size_dm):
    p = paired_step(size_d, size_dm)
    count = sum(step_kind(t, p) is StepKind.MULTIMODAL for t in range(1, 101))
    assert count == 100 // p


def test_step_kind():
    assert step_kind(4, 4) is StepKind.MULTIMODAL
    assert step_kind(5, 4) is StepKind.TEXT_ONLY
    assert step_kind(3, 1) is StepKind.MULTIMODAL


def test_epoch_sampler_covers_dataset(rng):
    sampler = EpochSampler(list(range(10)), 3, rng)
    first_epoch = [item for _ in range(3) for item in sampler.next_batch()]
    assert len(set(first_epoch)) == 9
    assert sampler.epoch == 1
    sampler.next_batch()
    assert sampler.epoch == 2


def test_epoch_sampler_small_dataset(rng):
    sampler = EpochSampler(["a", "b", "c"], 5, rng)
    for _ in range(4):
        assert sorted(sampler.next_batch()) == ["a", "b", "c"]


def test_zero_steps_keeps_params(tiny_tables, tiny_manifest, tiny_dev):
    config = _config(steps=0)
    text_table, visual_table = tiny_tables
    student = build_student(config, tiny_manifest, text_table, visual_table, tiny_dev)
    before = student.copy_params()
    history = train(config, tiny_manifest, text_table, visual_table, student, tiny_dev)
    assert history.steps == [] and history.evals == []
    assert history.best_params is None
    for name, value in before.items():
        assert np.array_equal(student.params[name], value)


def test_schedule_interleaves(tiny_tables, tiny_manifest, tiny_dev):
    _, history = _run(_config(steps=25), tiny_manifest, tiny_tables, tiny_dev)
    assert paired_step(tiny_manifest.size_text_only, tiny_manifest.size_multimodal) == 2
    assert history.multimodal_steps() == 25 // 2
    kinds = [record.branch for record in history.steps]
    assert kinds[:4] == [StepKind.TEXT_ONLY, StepKind.MULTIMODAL] * 2


def test_schedule_edge_cases(tiny_tables, tiny_manifest):
    text_table, visual_table = tiny_tables
    config = _config()
    no_text = DatasetManifest(multimodal_pairs=tiny_manifest.multimodal_pairs)
    trainer = Trainer(config, no_text, text_table, visual_table,
                      build_student(config, no_text, text_table, visual_table))
    assert all(trainer.schedule(t) is StepKind.MULTIMODAL for t in range(1, 10))

    simcse = _config(objective=Objective.SIMCSE)
    no_pairs = DatasetManifest(text_only_ids=tiny_manifest.text_only_ids)
    trainer = Trainer(simcse, no_pairs, None, None, build_student(simcse, no_pairs, None, None))
    assert all(trainer.schedule(t) is StepKind.TEXT_ONLY for t in range(1, 10))


def test_runs_are_deterministic(tiny_tables, tiny_manifest, tiny_dev):
    student_a, history_a = _run(_config(), tiny_manifest, tiny_tables, tiny_dev)
    student_b, history_b = _run(_config(), tiny_manifest, tiny_tables, tiny_dev)
    assert [r.loss for r in history_a.steps] == [r.loss for r in history_b.steps]
    for name in student_a.params:
        assert np.array_equal(student_a.params[name], student_b.params[name])
    _, other = _run(_config(seed=4), tiny_manifest, tiny_tables, tiny_dev)
    assert [r.loss for r in other.steps] != [r.loss for r in history_a.steps]


def test_teacher_side_is_frozen(tiny_tables, tiny_manifest, tiny_dev):
    text_table, visual_table = tiny_tables
    text_before = text_table.matrix.copy()
    config = _config()
    student = build_student(config, tiny_manifest, text_table, visual_table, tiny_dev)
    heads_before = {k: v.copy() for k, v in student.params.items() if k.startswith("teacher_")}
    initial_base = student.params["base"].copy()
    train(config, tiny_manifest, text_table, visual_table, student, tiny_dev)
    assert np.array_equal(text_table.matrix, text_before)
    for name, value in heads_before.items():
        assert np.array_equal(student.params[name], value)
    assert not np.array_equal(student.params["base"], initial_base)


def test_resolve_objective():
    cfg = ObjectiveConfig(margin=0.2)
    assert resolve_objective(Objective.KDMCSE_NO_MARGIN, cfg).margin == 0.0
    assert resolve_objective(Objective.KDMCSE_NO_FILTER, cfg).use_threshold_filter is False
    assert resolve_objective(Objective.KDMCSE, cfg) is cfg


def test_ablations_match_explicit_settings(tiny_tables, tiny_manifest, tiny_dev):
    base = _config(steps=50)
    _, no_margin = _run(replace(base, objective=Objective.KDMCSE_NO_MARGIN), tiny_manifest, tiny_tables, tiny_dev)
    _, zero_margin = _run(
        replace(base, objective_config=ObjectiveConfig(margin=0.0)), tiny_manifest, tiny_tables, tiny_dev
    )
    assert [r.loss for r in no_margin.steps] == [r.loss for r in zero_margin.steps]

    _, no_filter = _run(replace(base, objective=Objective.KDMCSE_NO_FILTER), tiny_manifest, tiny_tables, tiny_dev)
    _, open_filter = _run(
        replace(base, objective_config=ObjectiveConfig(threshold=1.0)), tiny_manifest, tiny_tables, tiny_dev
    )
    assert [r.loss for r in no_filter.steps] == [r.loss for r in open_filter.steps]


def test_best_checkpoint_reproduces_spearman(tiny_tables, tiny_manifest, tiny_dev):
    student, history = _run(_config(steps=30), tiny_manifest, tiny_tables, tiny_dev)
    assert [e.step for e in history.evals] == [5, 10, 15, 20, 25, 30]
    assert history.best_spearman == max(e.spearman for e in history.evals)
    restored = student.with_params(history.best_params)
    assert sts_eval(restored, tiny_dev) == pytest.approx(history.best_spearman, abs=1e-9)


def test_stored_checkpoint_reproduces_spearman(tmp_path, tiny_tables, tiny_manifest, tiny_dev):
    student, history = _run(_config(steps=30), tiny_manifest, tiny_tables, tiny_dev)
    path = save_checkpoint(student, tmp_path / "best.bin", history.best_params)
    assert sts_eval(load_checkpoint(path), tiny_dev) == pytest.approx(history.best_spearman, abs=1e-9)


def test_final_step_is_evaluated(tiny_tables, tiny_manifest, tiny_dev):
    _, history = _run(_config(steps=7), tiny_manifest, tiny_tables, tiny_dev)
    assert [e.step for e in history.evals] == [5, 7]


def test_mcse_objective_trains(tiny_tables, tiny_manifest, tiny_dev):
    _, history = _run(_config(objective=Objective.MCSE), tiny_manifest, tiny_tables, tiny_dev)
    assert all(math.isfinite(r.loss) for r in history.steps)


def test_simcse_loss_decreases():
    manifest = DatasetManifest(text_only_ids=[f"x{k}" for k in range(16)])
    config = _config(objective=Objective.SIMCSE, steps=300, batch_size=16)
    _, history = _run(config, manifest, (None, None), [])
    losses = [r.loss for r in history.steps]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert history.evals == []


def test_non_finite_loss_names_step(monkeypatch, tiny_manifest):
    def broken(h_z, h_z_prime, cfg):
        zeros = np.zeros_like(h_z)
        return LossResult(np.full(len(h_z), np.nan), float("nan"), {"h_z": zeros, "h_z_prime": zeros})

    monkeypatch.setattr("kdcontrast.trainer.simcse_loss", broken)
    manifest = DatasetManifest(text_only_ids=tiny_manifest.text_only_ids)
    config = _config(objective=Objective.SIMCSE)
    with pytest.raises(NonFiniteLoss) as info:
        _run(config, manifest, (None, None), [])
    assert info.value.step == 1


def test_inconsistent_manifests(tiny_tables, tiny_manifest):
    text_table, visual_table = tiny_tables
    config = _config()

    def make(manifest, cfg=config, tables=tiny_tables):
        return Trainer(cfg, manifest, *tables, build_student(cfg, manifest, *tables))

    with pytest.raises(InconsistentManifest):
        make(DatasetManifest())
    with pytest.raises(InconsistentManifest):
        make(DatasetManifest(text_only_ids=["w0"]))
    with pytest.raises(InconsistentManifest):
        make(DatasetManifest(multimodal_pairs=[("s0", "missing")]))
    with pytest.raises(InconsistentManifest):
        make(tiny_manifest, tables=(text_table, None))


def test_margin_sweep(tiny_tables, tiny_manifest, tiny_dev):
    text_table, visual_table = tiny_tables
    results = margin_sweep(_config(steps=6), tiny_manifest, text_table, visual_table, tiny_dev, margins=(0.0, 0.1))
    assert [margin for margin, _ in results] == [0.0, 0.1]
    assert all(-1.0 <= rho <= 1.0 for _, rho in results)


def test_manifest_round_trip(tmp_path, tiny_manifest):
    path = write_manifest(tiny_manifest, tmp_path / "m.json")
    assert load_manifest(path) == tiny_manifest
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(MalformedFile):
        load_manifest(path)


@pytest.mark.slow
def test_grounded_training_beats_text_only(grounded_fixture):
    fx = grounded_fixture
    config = TrainConfig(
        objective=Objective.KDMCSE, batch_size=16, steps=2000, eval_every=250,
        learning_rate=5e-3, hidden_dim=32, grounded_dim=16, init_scale=0.05, seed=0,
    )
    student = build_student(config, fx.manifest, fx.text_table, fx.visual_table, fx.dev_pairs)
    untrained = sts_eval(student, fx.dev_pairs)
    history = train(config, fx.manifest, fx.text_table, fx.visual_table, student, fx.dev_pairs)
    assert history.multimodal_steps() == 2000 // 2
    assert history.best_spearman > untrained + 0.1
    assert history.best_spearman >= 0.8

    text_only = replace(config, objective=Objective.SIMCSE)
    baseline = build_student(text_only, fx.manifest, fx.text_table, fx.visual_table, fx.dev_pairs)
    baseline_history = train(text_only, fx.manifest, fx.text_table, fx.visual_table, baseline, fx.dev_pairs)
    assert history.best_spearman > baseline_history.best_spearman
