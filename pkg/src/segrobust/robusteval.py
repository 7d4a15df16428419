"""Robustness evaluation: the bounded-attack suite with per-example MIN
aggregation, minimum-perturbation records via bisection, survival curves, and
best-attack distributions.

Work is embarrassingly parallel over (example, attack) pairs; results are
always reduced in (example, attack) order so the worker count never changes
output bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks as atk
from .attacks import AttackConfig, AttackResult, Budget
from .metrics import DEFAULT_LEVELS, miou, pixel_error
from .segmodel import SegModel
from .synthdata import Dataset

VISIBILITY_LANDMARK = 0.015  # L-inf norms above this are visible to the eye

SURVIVAL_GRID = np.linspace(0.0, 0.1, 200)


@dataclass(frozen=True)
class AttackSpec:
    """A named bounded attack with its configuration."""

    name: str
    kind: str  # fgsm | pgd | padam | cira | cira+ | dag
    config: AttackConfig

    def run(self, model: SegModel, x, y, budget: Budget, seed: int,
            mu: float | None = None) -> AttackResult:
        cfg = AttackConfig(**{**self.config.__dict__, "seed": seed})
        if self.kind == "fgsm":
            return atk.fgsm(model, x, y, budget)
        if self.kind == "pgd":
            return atk.pgd(model, x, y, budget, cfg)
        if self.kind == "padam":
            return atk.padam(model, x, y, budget, cfg)
        if self.kind == "cira":
            return atk.cira(model, x, y, budget, cfg)
        if self.kind == "cira+":
            return atk.cira_plus(model, x, y, budget, cfg)
        if self.kind == "dag":
            return atk.dag(model, x, y, cfg, mu if mu is not None else 0.99)
        raise ValueError(f"unknown attack kind '{self.kind}'")


def default_suite() -> list[AttackSpec]:
    """The bounded evaluation columns: PGD(6), PGD(120), PAdam(120),
    CIRA(120), CIRA+(120)."""
    return [
        AttackSpec("PGD(6)", "pgd", AttackConfig(iterations=6, step_size=0.01)),
        AttackSpec("PGD(120)", "pgd", AttackConfig(iterations=120, step_size=0.01)),
        AttackSpec("PAdam(120)", "padam", AttackConfig(iterations=120, adam_lr=0.01)),
        AttackSpec("CIRA(120)", "cira", AttackConfig(iterations=120, adam_lr=0.01)),
        AttackSpec("CIRA+(120)", "cira+", AttackConfig(iterations=120, adam_lr=0.01,
                                                       mix_weight=0.5)),
    ]


def derive_seed(global_seed: int, attack_name: str, example_id: int) -> int:
    """Stable per-(attack, example) seed derivation."""
    h = hashlib.blake2s(f"{global_seed}:{attack_name}:{example_id}".encode(),
                        digest_size=8)
    return int.from_bytes(h.digest(), "little") % (2 ** 63)


@dataclass
class EvalRow:
    example: int
    clean: float
    scores: dict[str, float]
    min_score: float


@dataclass
class EvalReport:
    model_id: str
    suite: list[str]
    epsilon: float
    rows: list[EvalRow]
    means: dict[str, float]  # per-attack means plus "clean" and "min"
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model_id,
            "suite": self.suite,
            "budget": {"epsilon": self.epsilon},
            "rows": [{"example": r.example, "clean": r.clean,
                      "scores": r.scores, "min": r.min_score} for r in self.rows],
            "means": self.means,
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rows = [EvalRow(r["example"], r["clean"], r["scores"], r["min"])
                for r in d["rows"]]
        return cls(d["model"], d["suite"], d["budget"]["epsilon"], rows,
                   d["means"], d.get("config_digest", ""))


class SuiteError(RuntimeError):
    pass


def run_bounded_suite(model: SegModel, dataset: Dataset,
                      suite: list[AttackSpec] | None = None,
                      budget: Budget | None = None, seed: int = 0,
                      workers: int = 1, model_id: str = "model") -> EvalReport:
    """Per-example mIoU under every attack plus the per-example MIN column."""
    suite = default_suite() if suite is None else suite
    budget = budget or Budget()
    if not suite or len(dataset) == 0:
        raise SuiteError("empty dataset or attack list")

    def one(job):
        i, spec = job
        ex = dataset[i]
        try:
            res = spec.run(model, ex.image, ex.mask, budget,
                           derive_seed(seed, spec.name, i))
        except Exception as e:  # noqa: BLE001 - re-raised with context
            raise SuiteError(f"attack '{spec.name}' failed on example {i}: {e}") from e
        return miou(model.full_forward(res.adv_image).data, ex.mask)

    jobs = [(i, spec) for i in range(len(dataset)) for spec in suite]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(one, jobs))
    else:
        scores = [one(j) for j in jobs]

    rows = []
    k = len(suite)
    for i in range(len(dataset)):
        ex = dataset[i]
        clean = miou(model.full_forward(ex.image).data, ex.mask)
        per_attack = {spec.name: scores[i * k + j] for j, spec in enumerate(suite)}
        rows.append(EvalRow(i, clean, per_attack, min(per_attack.values())))
    means = {spec.name: float(np.mean([r.scores[spec.name] for r in rows]))
             for spec in suite}
    means["clean"] = float(np.mean([r.clean for r in rows]))
    means["min"] = float(np.mean([r.min_score for r in rows]))
    return EvalReport(model_id, [s.name for s in suite], budget.epsilon, rows, means)


# -- minimum-perturbation records --------------------------------------------

@dataclass
class MinPerturbRecord:
    example: int
    attack: str
    norm_linf: float  # math.inf marks failure at the search target
    achieved_pe: float

    def norm_at(self, mu: float) -> float:
        """Norm under the level-mu convention: failures count as infinite."""
        return self.norm_linf if self.achieved_pe >= mu else math.inf

    def success_at(self, mu: float) -> bool:
        return math.isfinite(self.norm_linf) and self.achieved_pe >= mu


def min_perturbation_search(spec: AttackSpec, model: SegModel, example, mu: float,
                            eps_hi: float = 0.2, bisect_steps: int = 12,
                            seed: int = 0) -> MinPerturbRecord:
    """Bisect on epsilon over [0, eps_hi], running the bounded attack at each
    midpoint; returns the smallest feasible epsilon's record."""
    if not (0.0 < mu <= 1.0):
        raise ValueError("mu must be in (0, 1]")
    if eps_hi <= 0:
        raise ValueError("eps_hi must be > 0")
    x, y = example.image, example.mask
    clean_pe = pixel_error(model.full_forward(x).data, y)
    if clean_pe >= mu:
        return MinPerturbRecord(-1, spec.name, 0.0, clean_pe)

    def attempt(eps: float) -> AttackResult:
        return spec.run(model, x, y, Budget(epsilon=eps), seed)

    best = attempt(eps_hi)
    if best.pixel_error < mu:
        # infeasible at eps_hi: keep the achieved error so lower levels can
        # still use the record; norm_at() treats unmet levels as infinite
        return MinPerturbRecord(-1, spec.name, best.delta_linf, best.pixel_error)
    lo, hi = 0.0, eps_hi
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        res = attempt(mid)
        if res.pixel_error >= mu:
            hi, best = mid, res
        else:
            lo = mid
    # re-verify the reported error with a fresh forward pass
    pe = pixel_error(model.full_forward(best.adv_image).data, y)
    return MinPerturbRecord(-1, spec.name, best.delta_linf, pe)


def run_min_perturb_suite(model: SegModel, dataset: Dataset,
                          suite: list[AttackSpec],
                          levels=DEFAULT_LEVELS, eps_hi: float = 0.2,
                          bisect_steps: int = 12, seed: int = 0,
                          workers: int = 1) -> list[MinPerturbRecord]:
    """One record per (example, attack). DAG contributes its native record;
    bounded attacks go through the bisection search at mu = max(levels)."""
    if not levels:
        raise ValueError("levels must be non-empty")
    target = max(levels)

    def one(job):
        i, spec = job
        ex = dataset[i]
        s = derive_seed(seed, spec.name, i)
        if spec.kind == "dag":
            res = spec.run(model, ex.image, ex.mask, Budget(), s, mu=target)
            return MinPerturbRecord(i, spec.name, res.delta_linf, res.pixel_error)
        rec = min_perturbation_search(spec, model, ex, target, eps_hi,
                                      bisect_steps, s)
        rec.example = i
        return rec

    jobs = [(i, spec) for i in range(len(dataset)) for spec in suite]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


@dataclass
class SurvivalCurve:
    mu: float
    thresholds: np.ndarray
    fractions: np.ndarray


def _per_example_min_norm(records: list[MinPerturbRecord], mu: float) -> dict[int, float]:
    out: dict[int, float] = {}
    for r in records:
        out[r.example] = min(out.get(r.example, math.inf), r.norm_at(mu))
    return out


def survival_curve(records: list[MinPerturbRecord], mu: float,
                   thresholds=None) -> SurvivalCurve:
    """Fraction of examples whose per-example minimum norm at level mu is
    strictly larger than each threshold; failures count as infinite."""
    if not records:
        raise ValueError("no records")
    thresholds = SURVIVAL_GRID if thresholds is None else np.asarray(thresholds, float)
    mins = np.array(list(_per_example_min_norm(records, mu).values()))
    fractions = np.array([float(np.mean(mins > t)) for t in thresholds])
    return SurvivalCurve(mu, thresholds, fractions)


def best_attack_distribution(records: list[MinPerturbRecord], mu: float,
                             attack_order: list[str] | None = None) -> dict[str, float]:
    """Proportion of successful examples on which each attack found the
    smallest perturbation; ties break toward the earliest attack in order."""
    if attack_order is None:
        attack_order = []
        for r in records:
            if r.attack not in attack_order:
                attack_order.append(r.attack)
    rank = {name: i for i, name in enumerate(attack_order)}
    by_example: dict[int, list[MinPerturbRecord]] = {}
    for r in records:
        by_example.setdefault(r.example, []).append(r)
    wins = {name: 0 for name in attack_order}
    successful = 0
    for recs in by_example.values():
        ok = [r for r in recs if r.success_at(mu)]
        if not ok:
            continue
        successful += 1
        winner = min(ok, key=lambda r: (r.norm_at(mu), rank[r.attack]))
        wins[winner.attack] += 1
    if successful == 0:
        raise ValueError("no successful examples at this level")
    return {name: wins[name] / successful for name in attack_order}


# -- file exports ------------------------------------------------------------

def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def write_records_csv(records: list[MinPerturbRecord], path,
                      levels=DEFAULT_LEVELS) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        level_cols = [f"succ_{int(round(mu * 100))}" for mu in levels]
        w.writerow(["example_id", "attack_id", "norm_linf", "pixel_error", *level_cols])
        for r in sorted(records, key=lambda r: (r.example, r.attack)):
            norm = "inf" if not math.isfinite(r.norm_linf) else f"{r.norm_linf:.9f}"
            w.writerow([r.example, r.attack, norm, f"{r.achieved_pe:.6f}",
                        *[int(r.success_at(mu)) for mu in levels]])


def write_survival_csv(curve: SurvivalCurve, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# visibility_landmark={VISIBILITY_LANDMARK}\n")
        w = csv.writer(f)
        w.writerow(["threshold", "fraction"])
        for t, fr in zip(curve.thresholds, curve.fractions):
            w.writerow([f"{t:.9f}", f"{fr:.9f}"])
