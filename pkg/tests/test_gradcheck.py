import math

import numpy as np
import pytest

from kdcontrast.config import ObjectiveConfig
from kdcontrast.encoder import StudentEncoder
from kdcontrast.exceptions import NonFiniteLoss, ValidationError
from kdcontrast.gradcheck import (
    OBJECTIVES,
    encoder_grad_check,
    finite_difference,
    grad_check,
    random_case,
    relative_error,
    run_suite,
    summary_rows,
)
from kdcontrast.models import LossResult
from kdcontrast.objectives import simcse_loss


@pytest.mark.parametrize("name", sorted(OBJECTIVES))
def test_objectives_pass_on_random_batches(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    for case in range(20):
        n = (2, 3, 4)[case % 3]
        dim = (4, 8)[case % 2]
        report = grad_check(OBJECTIVES[name], random_case(name, rng, n, dim), epsilon=1e-4, tolerance=1e-4)
        assert report.passed, (name, case, report.slots)


def test_simcse_example_batch(rng):
    report = grad_check(simcse_loss, random_case("simcse", rng, 4, 8))
    assert report.max_rel_err < 1e-4


def test_frozen_slots_are_exact_zeros(rng):
    report = grad_check(OBJECTIVES["kdmcse"], random_case("kdmcse", rng, 3, 4))
    assert report.slots["v"].frozen and report.slots["t"].frozen
    assert report.slots["v"].max_rel_err == 0.0
    assert report.slots["t"].max_rel_err == 0.0
    assert not report.slots["s_z"].frozen


def test_literal_orientation_passes(rng):
    cfg = ObjectiveConfig(filter_orientation="paper_literal")
    for _ in range(5):
        report = grad_check(OBJECTIVES["kdmcse"], random_case("kdmcse", rng, 4, 4, cfg), cfg)
        assert report.passed


def test_wrong_gradient_is_caught(rng):
    def doubled(h_z, h_z_prime, cfg):
        result = simcse_loss(h_z, h_z_prime, cfg)
        result.grads["h_z"] = 2.0 * result.grads["h_z"]
        return result

    report = grad_check(doubled, random_case("simcse", rng, 3, 4))
    assert not report.passed
    assert report.slots["h_z"].max_rel_err == pytest.approx(0.5, abs=1e-3)
    assert report.slots["h_z_prime"].passed(1e-4)


def test_epsilon_range(rng):
    inputs = random_case("simcse", rng)
    with pytest.raises(ValidationError):
        grad_check(simcse_loss, inputs, epsilon=1e-2)
    with pytest.raises(ValidationError):
        grad_check(simcse_loss, inputs, epsilon=1e-7)


def test_non_finite_loss_rejected():
    def broken(x, cfg):
        return LossResult(np.array([math.nan]), math.nan, {"x": np.zeros_like(x)})

    with pytest.raises(NonFiniteLoss):
        grad_check(broken, {"x": np.ones((1, 2))})


def test_inputs_are_not_mutated(rng):
    inputs = random_case("mcse", rng)
    before = {k: v.copy() for k, v in inputs.items()}
    grad_check(OBJECTIVES["mcse"], inputs)
    assert all(np.array_equal(inputs[k], before[k]) for k in before)


def test_finite_difference_of_quadratic():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    grad = finite_difference(lambda: float(np.sum(x ** 2)), x, 1e-4)
    assert np.allclose(grad, 2 * x, atol=1e-8)
    assert x.tolist() == [[1.0, -2.0], [0.5, 3.0]]


def test_relative_error_scale():
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert relative_error(np.array([2.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(0.5)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_encoder_end_to_end(rng):
    ids = ["a", "b", "c"]
    student = StudentEncoder.initialize(
        ids, hidden_dim=6, grounded_dim=4, text_dim=4, visual_dim=4, dropout_rate=0.1, init_scale=0.5, seed=3
    )
    text_raw = rng.normal(size=(3, 4))
    visual_raw = text_raw + 0.5 * rng.normal(size=(3, 4))
    seeds = rng.integers(0, 2 ** 31, size=(2, 3))
    before = student.copy_params()
    report = encoder_grad_check(student, ids, seeds, text_raw, visual_raw)
    assert report.passed, report.slots
    assert report.slots["teacher_text.w1"].frozen
    assert report.slots["simcse.w1"].max_rel_err == 0.0
    assert all(np.array_equal(student.params[k], before[k]) for k in before)


def test_run_suite_rows(rng):
    reports = run_suite(cases=3, seed=5, objectives=["simcse", "kdmcse"])
    assert [r.objective for r in reports] == ["simcse", "kdmcse", "encoder"]
    rows = summary_rows(reports)
    assert ("simcse", "h_z") == rows[0][:2]
    assert all(row[3] for row in rows)
