"""Evaluation metrics: weighted accuracy (overall fraction correct),
unweighted average recall, and the 4x4 confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EMOTIONS


def confusion_matrix(preds, truth, classes=EMOTIONS) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truth)} labels")
    if not truth:
        raise ValueError("cannot score an empty label list")
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(preds, truth):
        cm[index[t], index[p]] += 1
    return cm


def weighted_accuracy(preds, truth) -> float:
    """Overall accuracy: count(preds[i] == truth[i]) / N."""
    cm = confusion_matrix(preds, truth)
    return float(np.trace(cm) / cm.sum())


def unweighted_average_recall(preds, truth) -> float:
    """Mean per-class recall; classes absent from the truth are excluded."""
    cm = confusion_matrix(preds, truth)
    support = cm.sum(axis=1)
    present = support > 0
    recalls = cm.diagonal()[present] / support[present]
    return float(recalls.mean())


def score_predictions(preds, truth) -> tuple[float, float, np.ndarray]:
    """(weighted accuracy, unweighted average recall, confusion matrix)."""
    cm = confusion_matrix(preds, truth)
    support = cm.sum(axis=1)
    present = support > 0
    wa = float(np.trace(cm) / cm.sum())
    ua = float((cm.diagonal()[present] / support[present]).mean())
    return wa, ua, cm


@dataclass
class EvalResult:
    """Per-repeat scores plus their mean and standard deviation."""

    wa_per_repeat: list[float]
    ua_per_repeat: list[float]
    confusion: np.ndarray  # from the final repeat
    seeds: list[int] = field(default_factory=list)

    @property
    def repeats(self) -> int:
        return len(self.wa_per_repeat)

    @property
    def wa_mean(self) -> float:
        return float(np.mean(self.wa_per_repeat))

    @property
    def wa_std(self) -> float:
        return float(np.std(self.wa_per_repeat))

    @property
    def ua_mean(self) -> float:
        return float(np.mean(self.ua_per_repeat))

    @property
    def ua_std(self) -> float:
        return float(np.std(self.ua_per_repeat))

    def table(self) -> str:
        """Aligned text table of per-repeat and aggregate scores."""
        lines = [f"{'repeat':>6} {'seed':>10} {'WA':>8} {'UA':>8}"]
        for i, (wa, ua) in enumerate(zip(self.wa_per_repeat, self.ua_per_repeat)):
            seed = self.seeds[i] if i < len(self.seeds) else "-"
            lines.append(f"{i:>6} {seed:>10} {wa:>8.4f} {ua:>8.4f}")
        lines.append(f"{'mean':>6} {'':>10} {self.wa_mean:>8.4f} {self.ua_mean:>8.4f}")
        lines.append(f"{'std':>6} {'':>10} {self.wa_std:>8.4f} {self.ua_std:>8.4f}")
        lines.append("")
        lines.append("confusion (rows = truth, cols = predicted):")
        header = " ".join(f"{c[:7]:>8}" for c in EMOTIONS)
        lines.append(f"{'':>8} {header}")
        for i, c in enumerate(EMOTIONS):
            row = " ".join(f"{int(n):>8}" for n in self.confusion[i])
            lines.append(f"{c[:7]:>8} {row}")
        return "\n".join(lines)

    def summary_items(self) -> list[tuple[str, str]]:
        """Flat key=value pairs for the machine-readable summary file."""
        items = [
            ("repeats", str(self.repeats)),
            ("wa_mean", f"{self.wa_mean:.6f}"),
            ("wa_std", f"{self.wa_std:.6f}"),
            ("ua_mean", f"{self.ua_mean:.6f}"),
            ("ua_std", f"{self.ua_std:.6f}"),
        ]
        for i, (wa, ua) in enumerate(zip(self.wa_per_repeat, self.ua_per_repeat)):
            items.append((f"wa_repeat{i}", f"{wa:.6f}"))
            items.append((f"ua_repeat{i}", f"{ua:.6f}"))
        for i, row_class in enumerate(EMOTIONS):
            for j, col_class in enumerate(EMOTIONS):
                items.append((f"confusion_{row_class}_{col_class}", str(int(self.confusion[i, j]))))
        return items
