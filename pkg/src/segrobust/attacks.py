"""Adversarial attacks: FGSM, PGD, projected-Adam (PAdam), the cosine
internal-representation family (CIRA, CIRA+, targeted variants), and DAG.

All attacks are pure functions of (model, example, budget, config, seed).
Bounded attacks return the best-seen iterate under their own objective and
always keep the output inside [0,1] and the L-inf ball around the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numcore as nc
from .metrics import cos_sim_graph, cross_entropy_graph, pixel_agreement, pixel_error
from .numcore import AdamState, Tensor, adam_step, grad_of
from .segmodel import SegModel
from .synthdata import VOID


@dataclass(frozen=True)
class Budget:
    epsilon: float = 0.03
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 120
    step_size: float = 0.01      # PGD signed-step size
    adam_lr: float = 0.01        # PAdam / CIRA / CIRA+ learning rate
    mix_weight: float = 0.5      # CIRA+ cross-entropy weight
    dag_step_size: float = 0.003
    dag_max_iter: int = 200
    seed: int = 0
    restarts: int = 1            # >1 adds random-start restarts

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0.0 <= self.mix_weight <= 1.0):
            raise ValueError("mix_weight must be in [0, 1]")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class AttackResult:
    adv_image: np.ndarray
    delta_linf: float
    pixel_error: float
    objective: float
    iterations: int
    backbone_evals: int
    head_evals: int
    cos_term_evals: int = 0
    trace: list[float] = field(default_factory=list)
    target_agreement: float | None = None  # set by targeted attacks only


class AttackError(RuntimeError):
    pass


def project(z: np.ndarray, x: np.ndarray, epsilon: float,
            lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Clip each coordinate into [x_i - eps, x_i + eps], then into [lo, hi]."""
    if z.shape != x.shape:
        raise nc.ShapeError(f"project: {z.shape} vs {x.shape}")
    return np.clip(np.clip(z, x - epsilon, x + epsilon), lo, hi)


def _report(model: SegModel, x: np.ndarray, adv: np.ndarray, y: np.ndarray | None,
            objective: float, iters: int, counters: tuple[int, int],
            cos_evals: int = 0, trace=None) -> AttackResult:
    pe = float("nan")
    if y is not None:
        probs = model.full_forward(adv)
        pe = pixel_error(probs.data, y)
    return AttackResult(
        adv_image=adv,
        delta_linf=float(np.max(np.abs(adv - x))),
        pixel_error=pe,
        objective=objective,
        iterations=iters,
        backbone_evals=counters[0],
        head_evals=counters[1],
        cos_term_evals=cos_evals,
        trace=list(trace or ()),
    )


def _counters(model: SegModel) -> tuple[int, int]:
    return model.backbone_evals, model.head_evals


def _delta(before, after) -> tuple[int, int]:
    return after[0] - before[0], after[1] - before[1]


def fgsm(model: SegModel, x: np.ndarray, y: np.ndarray, budget: Budget) -> AttackResult:
    """One signed-gradient step of size epsilon, projected."""
    before = _counters(model)
    xt = Tensor(x, requires_grad=True)
    loss = cross_entropy_graph(model.full_forward(xt), y)
    (g,) = grad_of(loss, [xt])
    adv = project(x + budget.epsilon * np.sign(g), x, budget.epsilon, budget.lo, budget.hi)
    used = _delta(before, _counters(model))
    final = cross_entropy_graph(model.full_forward(Tensor(adv)), y).item()
    return _report(model, x, adv, y, final, 1, used, trace=[loss.item(), final])


def pgd(model: SegModel, x: np.ndarray, y: np.ndarray, budget: Budget,
        config: AttackConfig, best_seen: bool = True) -> AttackResult:
    """Iterated signed-gradient ascent on the cross-entropy, projected."""
    before = _counters(model)
    cur = x.copy()
    best_obj, best_x = -np.inf, x.copy()
    trace = []
    for _ in range(config.iterations):
        xt = Tensor(cur, requires_grad=True)
        loss = cross_entropy_graph(model.full_forward(xt), y)
        val = loss.item()
        trace.append(val)
        if val > best_obj:
            best_obj, best_x = val, cur.copy()
        (g,) = grad_of(loss, [xt])
        cur = project(cur + config.step_size * np.sign(g), x, budget.epsilon,
                      budget.lo, budget.hi)
    final = cross_entropy_graph(model.full_forward(Tensor(cur)), y).item()
    trace.append(final)
    if final > best_obj:
        best_obj, best_x = final, cur
    used = _delta(before, _counters(model))
    adv, obj = (best_x, best_obj) if best_seen else (cur, final)
    return _report(model, x, adv, y, obj, config.iterations, used, trace=trace)


def _projected_adam(model: SegModel, x: np.ndarray, budget: Budget,
                    config: AttackConfig, objective, rng: np.random.Generator,
                    maximize: bool = True, best_seen: bool = True) -> tuple:
    """Shared projected-Adam loop; ``objective`` maps an image tensor to a
    scalar tensor. Returns (image, objective value, trace)."""
    sign = 1.0 if maximize else -1.0
    overall = None  # (signed best objective, image, trace)
    for restart in range(config.restarts):
        if restart == 0:
            cur = x.copy()
        else:
            cur = project(x + rng.uniform(-budget.epsilon, budget.epsilon, x.shape),
                          x, budget.epsilon, budget.lo, budget.hi)
        adam = AdamState(lr=config.adam_lr)
        best_obj, best_x = -np.inf, cur.copy()
        trace = []
        for _ in range(config.iterations):
            xt = Tensor(cur, requires_grad=True)
            obj = objective(xt)
            val = obj.item()
            trace.append(val)
            if sign * val > best_obj:
                best_obj, best_x = sign * val, cur.copy()
            (g,) = grad_of(obj, [xt])
            cur = adam_step(adam, cur, -sign * g)
            cur = project(cur, x, budget.epsilon, budget.lo, budget.hi)
        final = objective(Tensor(cur)).item()
        trace.append(final)
        if sign * final > best_obj:
            best_obj, best_x = sign * final, cur
        cand_obj, cand_x = (best_obj, best_x) if best_seen else (sign * final, cur)
        if overall is None or cand_obj > overall[0]:
            overall = (cand_obj, cand_x, trace)
    return overall[1], sign * overall[0], overall[2]


def padam(model: SegModel, x: np.ndarray, y: np.ndarray, budget: Budget,
          config: AttackConfig, best_seen: bool = True) -> AttackResult:
    """PGD with Adam updates; the mix_weight=1 special case of CIRA+."""
    return cira_plus(model, x, y, budget, replace(config, mix_weight=1.0),
                     best_seen=best_seen)


def _draw_z(model: SegModel, rng: np.random.Generator) -> np.ndarray:
    # signed direction: relu features are non-negative, so a non-negative z
    # would start with a large cosine instead of a near-orthogonal one
    s = model.shape
    return rng.standard_normal((s.height // 2, s.width // 2, s.feat_channels))


def cira(model: SegModel, x: np.ndarray, y: np.ndarray | None, budget: Budget,
         config: AttackConfig, best_seen: bool = True) -> AttackResult:
    """Drive the backbone features toward a random direction z via cosine
    similarity. Only the backbone is evaluated during optimization; ``y`` is
    used solely for the final pixel-error report."""
    rng = np.random.default_rng(config.seed)
    z = Tensor(_draw_z(model, rng))
    before = _counters(model)
    cos_evals = 0

    def objective(xt):
        nonlocal cos_evals
        cos_evals += 1
        return cos_sim_graph(model.backbone_forward(xt), z)

    adv, obj, trace = _projected_adam(model, x, budget, config, objective, rng,
                                      best_seen=best_seen)
    used = _delta(before, _counters(model))
    return _report(model, x, adv, y, obj, config.iterations, used, cos_evals, trace)


def cira_targeted(model: SegModel, x: np.ndarray, x_target: np.ndarray,
                  y_target: np.ndarray | None, budget: Budget, config: AttackConfig,
                  best_seen: bool = True) -> AttackResult:
    """CIRA with z replaced by the backbone features of a target image."""
    if np.array_equal(x, x_target):
        raise AttackError("target image must differ from the source")
    rng = np.random.default_rng(config.seed)
    target_feats = Tensor(model.backbone_forward(x_target).data)
    before = _counters(model)
    cos_evals = 0

    def objective(xt):
        nonlocal cos_evals
        cos_evals += 1
        return cos_sim_graph(model.backbone_forward(xt), target_feats)

    adv, obj, trace = _projected_adam(model, x, budget, config, objective, rng,
                                      best_seen=best_seen)
    used = _delta(before, _counters(model))
    res = _report(model, x, adv, y_target, obj, config.iterations, used, cos_evals, trace)
    if y_target is not None:
        res.target_agreement = 1.0 - res.pixel_error
    return res


def cira_plus(model: SegModel, x: np.ndarray, y: np.ndarray, budget: Budget,
              config: AttackConfig, best_seen: bool = True) -> AttackResult:
    """Weighted ascent of mix*CE + (1-mix)*CosSim(backbone features, z).

    mix_weight=1 skips the cosine term entirely (bit-identical to PAdam);
    mix_weight=0 skips the cross-entropy term and never runs the head,
    matching CIRA's objective trace.
    """
    mix = config.mix_weight
    rng = np.random.default_rng(config.seed)
    z = Tensor(_draw_z(model, rng))
    before = _counters(model)
    cos_evals = 0

    def objective(xt):
        nonlocal cos_evals
        feats = model.backbone_forward(xt)
        if mix == 0.0:
            cos_evals += 1
            return cos_sim_graph(feats, z)
        ce = cross_entropy_graph(model.head_forward(xt, feats), y)
        if mix == 1.0:
            return ce
        cos_evals += 1
        return mix * ce + (1.0 - mix) * cos_sim_graph(feats, z)

    adv, obj, trace = _projected_adam(model, x, budget, config, objective, rng,
                                      best_seen=best_seen)
    used = _delta(before, _counters(model))
    return _report(model, x, adv, y, obj, config.iterations, used, cos_evals, trace)


def cira_plus_targeted(model: SegModel, x: np.ndarray, x_target: np.ndarray,
                       y_target: np.ndarray, budget: Budget, config: AttackConfig,
                       best_seen: bool = True) -> AttackResult:
    """Projected-Adam descent of mix*CE(x+d, y') - (1-mix)*CosSim to the
    target's backbone features. Reports pixel agreement with y'."""
    if np.array_equal(x, x_target):
        raise AttackError("target image must differ from the source")
    mix = config.mix_weight
    rng = np.random.default_rng(config.seed)
    target_feats = Tensor(model.backbone_forward(x_target).data)
    before = _counters(model)
    cos_evals = 0

    def objective(xt):
        nonlocal cos_evals
        if mix == 1.0:
            return cross_entropy_graph(model.full_forward(xt), y_target)
        cos_evals += 1
        feats = model.backbone_forward(xt)
        cos = cos_sim_graph(feats, target_feats)
        if mix == 0.0:
            return nc.neg(cos)
        ce = cross_entropy_graph(model.head_forward(xt, feats), y_target)
        return mix * ce - (1.0 - mix) * cos

    adv, obj, trace = _projected_adam(model, x, budget, config, objective, rng,
                                      maximize=False, best_seen=best_seen)
    used = _delta(before, _counters(model))
    res = _report(model, x, adv, y_target, obj, config.iterations, used, cos_evals, trace)
    res.target_agreement = 1.0 - res.pixel_error  # agreement with y' is the success measure
    return res


def dag(model: SegModel, x: np.ndarray, y: np.ndarray, config: AttackConfig,
        mu: float) -> AttackResult:
    """Unbounded accumulation attack stepping only on still-correct pixels.

    Each step ascends the cross-entropy restricted to correctly predicted
    non-void pixels, normalized by its L-inf norm, until the pixel error
    reaches mu or the iteration cap. No epsilon projection is applied.
    """
    if not (0.0 < mu <= 1.0):
        raise ValueError("mu must be in (0, 1]")
    before = _counters(model)
    h, w, _ = x.shape
    classes = model.shape.classes
    valid = y != VOID
    cur = x.copy()
    iters = 0
    pe = 0.0
    for t in range(config.dag_max_iter + 1):
        xt = Tensor(cur, requires_grad=t < config.dag_max_iter)
        probs = model.full_forward(xt)
        pred = np.argmax(probs.data, axis=-1)
        pe = float(np.mean(pred[valid] != y[valid]))
        if pe >= mu or t == config.dag_max_iter:
            iters = t
            break
        active = valid & (pred == y)
        hot = np.zeros((h, w, classes))
        ys, xs = np.nonzero(active)
        hot[ys, xs, y[active].astype(int)] = 1.0
        loss = nc.tsum(nc.mul(nc.neg(nc.log(probs)), Tensor(hot))) / float(h * w)
        (g,) = grad_of(loss, [xt])
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0:
            iters = t
            break  # stuck: reported as failure via the achieved pixel error
        cur = np.clip(cur + config.dag_step_size * g / gmax, 0.0, 1.0)
    used = _delta(before, _counters(model))
    return AttackResult(
        adv_image=cur,
        delta_linf=float(np.max(np.abs(cur - x))),
        pixel_error=pe,
        objective=pe,
        iterations=iters,
        backbone_evals=used[0],
        head_evals=used[1],
    )
