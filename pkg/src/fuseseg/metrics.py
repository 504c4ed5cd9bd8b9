"""Evaluation metrics for referring segmentation.

gIoU is the mean of per-sample IoUs; cIoU is the ratio of the summed
intersections to the summed unions across the whole split (size-weighted).
A pair with empty prediction and empty ground truth counts as IoU 1 for
gIoU and contributes nothing to the cIoU sums.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError


@dataclass
class MetricsReport:
    giou: float
    ciou: float
    n_samples: int
    per_sample_iou: Optional[list[float]] = None

    def to_json(self) -> str:
        payload = {"giou": self.giou, "ciou": self.ciou, "n_samples": self.n_samples}
        if self.per_sample_iou is not None:
            payload["per_sample_iou"] = self.per_sample_iou
        return json.dumps(payload, sort_keys=True)

    def to_text(self) -> str:
        """Flat key-value record, one metric per line."""
        return f"giou {self.giou:.6f}\nciou {self.ciou:.6f}\nn_samples {self.n_samples}\n"


def compute_metrics(pred_masks: Sequence[np.ndarray],
                    gt_masks: Sequence[np.ndarray],
                    keep_per_sample: bool = False) -> MetricsReport:
    if len(pred_masks) != len(gt_masks):
        raise ShapeError(
            f"got {len(pred_masks)} predictions for {len(gt_masks)} ground truths")
    ious: list[float] = []
    total_intersection = 0
    total_union = 0
    for i, (pred, gt) in enumerate(zip(pred_masks, gt_masks)):
        pred = np.asarray(pred).astype(bool)
        gt = np.asarray(gt).astype(bool)
        if pred.shape != gt.shape:
            raise ShapeError(f"sample {i}: pred {pred.shape} vs gt {gt.shape}")
        intersection = int(np.count_nonzero(pred & gt))
        union = int(np.count_nonzero(pred | gt))
        ious.append(1.0 if union == 0 else intersection / union)
        total_intersection += intersection
        total_union += union
    # fsum is exactly rounded, so giou is independent of sample order
    giou = math.fsum(ious) / len(ious) if ious else 0.0
    ciou = total_intersection / total_union if total_union > 0 else 0.0
    return MetricsReport(giou=giou, ciou=float(ciou), n_samples=len(ious),
                         per_sample_iou=ious if keep_per_sample else None)
