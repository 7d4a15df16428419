"""Attack tests: projection, containment, counters, traces, and the
special-case relationships between the attack family members."""

import numpy as np
import pytest

from segrobust import attacks as atk
from segrobust.attacks import AttackConfig, AttackError, Budget
from segrobust.metrics import cross_entropy
from segrobust.synthdata import VOID

FAST = AttackConfig(iterations=5, step_size=0.01, adam_lr=0.01, seed=3)


def test_project_containment():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (6, 6, 3))
    z = x + rng.uniform(-0.5, 0.5, x.shape)
    out = atk.project(z, x, 0.1)
    assert np.max(np.abs(out - x)) <= 0.1 + 1e-15
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_project_identity_inside():
    x = np.full((2, 2, 3), 0.5)
    np.testing.assert_array_equal(atk.project(x.copy(), x, 0.1), x)


def test_project_shape_mismatch():
    from segrobust.numcore import ShapeError
    with pytest.raises(ShapeError):
        atk.project(np.zeros((2, 2, 3)), np.zeros((3, 3, 3)), 0.1)


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget(epsilon=-0.1)
    with pytest.raises(ValueError):
        AttackConfig(iterations=0)
    with pytest.raises(ValueError):
        AttackConfig(mix_weight=1.5)
    with pytest.raises(ValueError):
        AttackConfig(restarts=0)


@pytest.mark.parametrize("kind", ["fgsm", "pgd", "padam", "cira", "cira+"])
def test_bounded_attacks_stay_in_budget(kind, tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    budget = Budget(epsilon=0.05)
    if kind == "fgsm":
        res = atk.fgsm(tiny_model, ex.image, ex.mask, budget)
    elif kind == "pgd":
        res = atk.pgd(tiny_model, ex.image, ex.mask, budget, FAST)
    elif kind == "padam":
        res = atk.padam(tiny_model, ex.image, ex.mask, budget, FAST)
    elif kind == "cira":
        res = atk.cira(tiny_model, ex.image, ex.mask, budget, FAST)
    else:
        res = atk.cira_plus(tiny_model, ex.image, ex.mask, budget, FAST)
    assert res.delta_linf <= budget.epsilon + 1e-12
    assert res.adv_image.min() >= 0.0 and res.adv_image.max() <= 1.0
    assert np.max(np.abs(res.adv_image - ex.image)) <= budget.epsilon + 1e-12
    assert 0.0 <= res.pixel_error <= 1.0


def test_fgsm_single_step(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    res = atk.fgsm(tiny_model, ex.image, ex.mask, Budget(epsilon=0.02))
    assert res.iterations == 1
    assert len(res.trace) == 2  # before and after


def test_pgd_best_seen_dominates_trace(tiny_model, tiny_dataset):
    ex = tiny_dataset[1]
    res = atk.pgd(tiny_model, ex.image, ex.mask, Budget(), FAST)
    assert len(res.trace) == FAST.iterations + 1
    assert res.objective == pytest.approx(max(res.trace))
    # returned image really achieves the reported objective
    ce = cross_entropy(tiny_model.full_forward(res.adv_image).data, ex.mask)
    assert ce == pytest.approx(res.objective)


def test_pgd_last_iterate_mode(tiny_model, tiny_dataset):
    ex = tiny_dataset[1]
    res = atk.pgd(tiny_model, ex.image, ex.mask, Budget(), FAST, best_seen=False)
    assert res.objective == pytest.approx(res.trace[-1])


def test_pgd_determinism(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    a = atk.pgd(tiny_model, ex.image, ex.mask, Budget(), FAST)
    b = atk.pgd(tiny_model, ex.image, ex.mask, Budget(), FAST)
    np.testing.assert_array_equal(a.adv_image, b.adv_image)
    assert a.trace == b.trace


def test_padam_is_cira_plus_mix_one(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    a = atk.padam(tiny_model, ex.image, ex.mask, Budget(), FAST)
    b = atk.cira_plus(tiny_model, ex.image, ex.mask, Budget(),
                      AttackConfig(**{**FAST.__dict__, "mix_weight": 1.0}))
    np.testing.assert_array_equal(a.adv_image, b.adv_image)
    assert a.trace == b.trace
    assert a.objective == b.objective


def test_cira_plus_mix_zero_traces_cira(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    a = atk.cira(tiny_model, ex.image, ex.mask, Budget(), FAST)
    b = atk.cira_plus(tiny_model, ex.image, ex.mask, Budget(),
                      AttackConfig(**{**FAST.__dict__, "mix_weight": 0.0}))
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.adv_image, b.adv_image)


def test_cira_uses_backbone_only(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    res = atk.cira(tiny_model, ex.image, ex.mask, Budget(), FAST)
    assert res.head_evals == 0
    assert res.backbone_evals > 0
    assert res.cos_term_evals == FAST.iterations + 1


def test_cira_without_labels(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    res = atk.cira(tiny_model, ex.image, None, Budget(), FAST)
    assert np.isnan(res.pixel_error)
    assert res.delta_linf <= Budget().epsilon + 1e-12


def test_cira_seed_changes_direction(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    a = atk.cira(tiny_model, ex.image, ex.mask, Budget(), FAST)
    other = AttackConfig(**{**FAST.__dict__, "seed": FAST.seed + 1})
    b = atk.cira(tiny_model, ex.image, ex.mask, Budget(), other)
    assert not np.array_equal(a.adv_image, b.adv_image)


def test_cira_targeted(tiny_model, tiny_dataset):
    src, tgt = tiny_dataset[0], tiny_dataset[1]
    res = atk.cira_targeted(tiny_model, src.image, tgt.image, tgt.mask,
                            Budget(), FAST)
    assert res.head_evals == 0
    assert res.target_agreement is not None
    assert res.target_agreement == pytest.approx(1.0 - res.pixel_error)
    with pytest.raises(AttackError):
        atk.cira_targeted(tiny_model, src.image, src.image, None, Budget(), FAST)


def test_cira_plus_targeted(tiny_model, tiny_dataset):
    src, tgt = tiny_dataset[0], tiny_dataset[1]
    res = atk.cira_plus_targeted(tiny_model, src.image, tgt.image, tgt.mask,
                                 Budget(), FAST)
    assert res.target_agreement is not None
    assert res.delta_linf <= Budget().epsilon + 1e-12
    with pytest.raises(AttackError):
        atk.cira_plus_targeted(tiny_model, src.image, src.image, tgt.mask,
                               Budget(), FAST)


def test_restarts_do_not_break_containment(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    cfg = AttackConfig(iterations=3, restarts=3, seed=1)
    res = atk.cira_plus(tiny_model, ex.image, ex.mask, Budget(epsilon=0.02), cfg)
    assert res.delta_linf <= 0.02 + 1e-12
    assert res.adv_image.min() >= 0.0 and res.adv_image.max() <= 1.0


def test_dag_reaches_level_or_cap(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    cfg = AttackConfig(dag_step_size=0.01, dag_max_iter=50)
    res = atk.dag(tiny_model, ex.image, ex.mask, cfg, mu=0.5)
    assert res.pixel_error >= 0.5 or res.iterations == 50
    assert res.adv_image.min() >= 0.0 and res.adv_image.max() <= 1.0
    assert res.head_evals > 0  # DAG differentiates through the full model


def test_dag_respects_void(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    assert np.any(ex.mask == VOID)
    cfg = AttackConfig(dag_step_size=0.01, dag_max_iter=10)
    res = atk.dag(tiny_model, ex.image, ex.mask, cfg, mu=0.9)
    assert 0.0 <= res.pixel_error <= 1.0


def test_dag_mu_validation(tiny_model, tiny_dataset):
    ex = tiny_dataset[0]
    with pytest.raises(ValueError):
        atk.dag(tiny_model, ex.image, ex.mask, AttackConfig(), mu=0.0)
