"""Overlap and residual metrics: per-label Dice, its three averages, volume
fractions, Jacobian extrema, and the pointwise residual image.  All set
counts are exact integers; ratios are formed in double precision at the end.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GridError
from .grid import LabelMap, ScalarField


@dataclass
class DiceReport:
    label_ids: list
    dice: list
    volume0: list
    volume1: list
    alpha: list          # reference-volume fractions
    d_a: float
    d_vw: float
    d_ivw: float

    @property
    def num_labels(self) -> int:
        return len(self.label_ids)

    def per_label(self) -> dict:
        return dict(zip(self.label_ids, self.dice))

    def to_table(self) -> str:
        lines = ["label\tvolume0\tvolume1\talpha\tdice"]
        for i, lab in enumerate(self.label_ids):
            lines.append(f"{lab}\t{self.volume0[i]}\t{self.volume1[i]}"
                         f"\t{self.alpha[i]:.6e}\t{self.dice[i]:.6e}")
        lines.append(f"summary\tD_a={self.d_a:.6e}\tD_vw={self.d_vw:.6e}"
                     f"\tD_ivw={self.d_ivw:.6e}\tM={self.num_labels}")
        return "\n".join(lines) + "\n"


def dice(l0: LabelMap, l1: LabelMap, label_id: int) -> float:
    """2|A n B| / (|A| + |B|) on the binary masks of one label; 0/0 is scored
    as 1 (both masks empty agree vacuously), one-sided empty as 0."""
    if l0.grid != l1.grid:
        raise GridError("label maps live on different grids")
    a = l0.labels == label_id
    b = l1.labels == label_id
    na = int(np.count_nonzero(a))
    nb = int(np.count_nonzero(b))
    if na + nb == 0:
        return 1.0
    overlap = int(np.count_nonzero(a & b))
    return 2.0 * overlap / (na + nb)


def dice_averages(l0: LabelMap, l1: LabelMap, labels=None) -> DiceReport:
    """Arithmetic (D_a), volume-weighted (D_vw), and inverse-volume-weighted
    (D_ivw) Dice averages; weighted variants use reference volumes |l1^i| and
    skip labels empty in the reference (their weights are undefined)."""
    if labels is None:
        labels = sorted(set(l0.label_ids()) | set(l1.label_ids()))
    labels = [int(lab) for lab in labels]
    if not labels:
        raise ValueError("no labels to score")
    scores, vol0, vol1 = [], [], []
    for lab in labels:
        scores.append(dice(l0, l1, lab))
        vol0.append(int(np.count_nonzero(l0.labels == lab)))
        vol1.append(int(np.count_nonzero(l1.labels == lab)))
    total1 = sum(vol1)
    alpha = [v / total1 if total1 else 0.0 for v in vol1]
    d_a = float(np.mean(scores))
    weighted = [(d, v) for d, v in zip(scores, vol1) if v > 0]
    if len(weighted) < len(labels):
        missing = [lab for lab, v in zip(labels, vol1) if v == 0]
        warnings.warn(f"labels {missing} empty in the reference map; "
                      "excluded from the volume-weighted averages")
    if weighted:
        d_vw = sum(d * v for d, v in weighted) / sum(v for _, v in weighted)
        d_ivw = sum(d / v for d, v in weighted) / sum(1.0 / v for _, v in weighted)
    else:
        d_vw = d_ivw = float("nan")
    return DiceReport(labels, scores, vol0, vol1, alpha, d_a, d_vw, d_ivw)


def jacobian_stats(j_field: ScalarField) -> tuple[float, float]:
    return float(j_field.values.min()), float(j_field.values.max())


def residual_image(m_final: ScalarField, m1: ScalarField) -> ScalarField:
    if m_final.grid != m1.grid:
        raise GridError("residual operands live on different grids")
    return ScalarField(m_final.grid, np.abs(m_final.values - m1.values))
