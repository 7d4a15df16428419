"""Figure rendering for the report path: survival curves and the
best-attack histogram, saved as PNG next to the delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .robusteval import VISIBILITY_LANDMARK, SurvivalCurve

_PNG_META = {"Software": "segrobust"}  # fixed so output bytes are reproducible


def plot_survival_curves(curves: dict[str, SurvivalCurve], mu: float, path) -> None:
    """Overlay one survival curve per model for a single error level."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label in sorted(curves):
        c = curves[label]
        ax.plot(c.thresholds, c.fractions, label=label)
    ax.axvline(VISIBILITY_LANDMARK, color="gray", linestyle="--", linewidth=0.8)
    ax.set_xlabel("perturbation L-inf norm")
    ax.set_ylabel(f"P(min perturbation > norm) at PE >= {mu:.2f}")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_best_attack_histogram(distributions: dict[str, dict[str, float]],
                               mu: float, path) -> None:
    """Grouped bars: proportion of examples each attack wins, per model."""
    models = sorted(distributions)
    attack_names: list[str] = []
    for d in distributions.values():
        for name in d:
            if name not in attack_names:
                attack_names.append(name)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(models), 1)
    for mi, model in enumerate(models):
        vals = [distributions[model].get(a, 0.0) for a in attack_names]
        xs = [i + mi * width for i in range(len(attack_names))]
        ax.bar(xs, vals, width=width, label=model)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(attack_names))])
    ax.set_xticklabels(attack_names, fontsize=8)
    ax.set_ylabel(f"best-attack proportion at PE >= {mu:.2f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_miou_table(table: dict[str, dict[str, float]], columns: list[str],
                    path) -> None:
    """Bar chart of the bounded-suite mIoU comparison across models."""
    models = list(table)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(models), 1)
    for mi, model in enumerate(models):
        vals = [table[model].get(c, 0.0) for c in columns]
        xs = [i + mi * width for i in range(len(columns))]
        ax.bar(xs, vals, width=width, label=model)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(columns))])
    ax.set_xticklabels(columns, fontsize=8)
    ax.set_ylabel("mean mIoU")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
