"""Report figures, rendered off-screen to image files."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_training_curve(records: Sequence[Mapping], path, title: str = "training") -> None:
    """Dataset error and gradient norm per epoch, on log axes."""
    epochs = [r["epoch"] for r in records if r.get("kind", "epoch") == "epoch"]
    errors = [r["error"] for r in records if r.get("kind", "epoch") == "epoch"]
    norms = [r["grad_norm"] for r in records if r.get("kind", "epoch") == "epoch"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.semilogy(epochs, errors)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("error")
    ax2.semilogy(epochs, norms, color="tab:orange")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("gradient norm")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_generalization(rows: Sequence[Mapping], path) -> None:
    """Grouped bars of overall and collision generalization per architecture."""
    labels = [r["architecture"] for r in rows]
    overall = [r["overall_pct"] or 0.0 for r in rows]
    collision = [r["collision_pct"] or 0.0 for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([i - 0.2 for i in x], overall, width=0.4, label="overall")
    ax.bar([i + 0.2 for i in x], collision, width=0.4, label="collision")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 100)
    ax.set_ylabel("generalization (%)")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
