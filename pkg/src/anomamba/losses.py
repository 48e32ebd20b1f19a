"""Training objectives: feature reconstruction distance, focal, dice.

The refinement loss is focal + dice and the total is reconstruction +
refinement; both sums are kept bit-exact in the emitted LossReport.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, clamp, log, sqrt

FOCAL_GAMMA = 2.0
FOCAL_ALPHA_POS = 0.75
PROB_EPS = 1e-7
DICE_EPS = 1.0


@dataclass
class LossReport:
    l_rec: float
    l_focal: float
    l_dice: float
    l_ref: float
    l_total: float

    CSV_HEADER = "step,l_rec,l_focal,l_dice,l_ref,l_total"

    def csv_row(self, step: int) -> str:
        return f"{step},{self.l_rec!r},{self.l_focal!r},{self.l_dice!r},{self.l_ref!r},{self.l_total!r}"


def rec_loss(f_hat: Tensor, phi: Tensor) -> Tensor:
    """Mean over grid positions of the per-position channel-vector L2 norm."""
    if f_hat.shape != phi.shape:
        raise ShapeError(f"rec_loss: {f_hat.shape} vs {phi.shape}")
    chan_axis = 0 if f_hat.ndim == 3 else 1
    d = f_hat - phi
    return sqrt((d * d).sum(axis=chan_axis)).mean()


def _check_binary(mask: np.ndarray) -> None:
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("ground-truth mask must be binary {0,1}")


def focal_loss(
    pred: Tensor,
    gt_mask: np.ndarray,
    alpha_pos: float = FOCAL_ALPHA_POS,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Mean of -alpha_i * (1 - p_i)^gamma * log(p_i), p_i the true-class prob."""
    if pred.shape != gt_mask.shape:
        raise ShapeError(f"focal_loss: pred {pred.shape} vs mask {gt_mask.shape}")
    _check_binary(gt_mask)
    gt = gt_mask.astype(pred.dtype)
    p = clamp(pred, PROB_EPS, 1.0 - PROB_EPS)
    pt = p * Tensor(gt) + (1.0 - p) * Tensor(1.0 - gt)
    weight = Tensor(alpha_pos * gt + (1.0 - alpha_pos) * (1.0 - gt))
    return (weight * ((1.0 - pt) ** gamma) * (-log(pt))).mean()


def dice_loss(pred: Tensor, gt_mask: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    """Soft dice on probabilities: 1 - (2*sum(p*m) + eps) / (sum p + sum m + eps)."""
    if pred.shape != gt_mask.shape:
        raise ShapeError(f"dice_loss: pred {pred.shape} vs mask {gt_mask.shape}")
    gt = Tensor(gt_mask.astype(pred.dtype))
    inter = (pred * gt).sum()
    denom = pred.sum() + float(gt_mask.sum())
    return 1.0 - (inter * 2.0 + eps) / (denom + eps)


def total_loss(
    l_rec: Tensor,
    pred: Tensor | None,
    gt_mask: np.ndarray | None,
    alpha_pos: float = FOCAL_ALPHA_POS,
    gamma: float = FOCAL_GAMMA,
) -> tuple[Tensor, LossReport]:
    """Assemble the training scalar and its report.

    With ``pred`` None (no refinement head) the total is the reconstruction
    term alone and the refinement components are zero.
    """
    if pred is None:
        r = float(l_rec.item())
        return l_rec, LossReport(l_rec=r, l_focal=0.0, l_dice=0.0, l_ref=0.0, l_total=r + 0.0)
    lf = focal_loss(pred, gt_mask, alpha_pos, gamma)
    ld = dice_loss(pred, gt_mask)
    l_ref = lf + ld
    total = l_rec + l_ref
    rf, rd, rr = lf.item(), ld.item(), l_rec.item()
    ref_val = rf + rd
    return total, LossReport(
        l_rec=rr, l_focal=rf, l_dice=rd, l_ref=ref_val, l_total=rr + ref_val
    )
