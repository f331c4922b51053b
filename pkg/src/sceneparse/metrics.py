"""Confusion-matrix evaluation: pixel accuracy, mIoU variants, top-1.

One matrix per task, sized (classes + reserved index 0). Index 0 is
"unlabeled" for objects/materials (never counted unless count_unlabeled is
set) and "background" for parts (a real class, counted). Matrices accumulate
with bincount and merge by addition, so evaluation can shard across workers
and still produce bit-identical metrics.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError


class ConfusionMatrix:
    """counts[gt][pred] over k classes (k includes the reserved index 0)."""

    def __init__(self, k):
        if k < 2:
            raise ValidationError(f"confusion matrix needs >= 2 classes, got {k}")
        self.k = k
        self.counts = np.zeros((k, k), dtype=np.int64)

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, gt_mask, pred_mask, count_unlabeled=False, ignore_index=None):
        gt = np.asarray(gt_mask)
        pred = np.asarray(pred_mask)
        if gt.shape != pred.shape:
            raise ShapeError(f"accumulate: gt {gt.shape} vs pred {pred.shape}")
        gt = gt.ravel()
        pred = pred.ravel()
        if ignore_index is not None:
            keep = gt != ignore_index
            gt = gt[keep]
            pred = pred[keep]
        if gt.size and (gt.min() < 0 or gt.max() >= self.k):
            raise ValidationError(f"accumulate: gt index outside [0, {self.k})")
        if pred.size and (pred.min() < 0 or pred.max() >= self.k):
            raise ValidationError(f"accumulate: pred index outside [0, {self.k})")
        if not count_unlabeled:
            keep = gt != 0
            gt = gt[keep]
            pred = pred[keep]
            if pred.size and (pred == 0).any():
                raise ValidationError(
                    "accumulate: prediction uses the unlabeled index 0 on a counted pixel"
                )
        if gt.size:
            flat = np.bincount(gt * self.k + pred, minlength=self.k * self.k)
            self.counts += flat.reshape(self.k, self.k)

    def merge(self, other):
        if other.k != self.k:
            raise ValidationError(f"merge: class count {other.k} vs {self.k}")
        out = ConfusionMatrix(self.k)
        out.counts = self.counts + other.counts
        return out


def pixel_accuracy(cm):
    total = cm.total
    if total == 0:
        raise ValidationError("pixel_accuracy: empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def per_class_iou(cm):
    """IoU per class; NaN where the union is empty (class absent everywhere)."""
    counts = cm.counts
    inter = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - np.diag(counts)
    out = np.full(cm.k, np.nan)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def mean_iou(cm, include_background=False):
    """Mean over classes with nonzero union; class 0 joins only when asked."""
    ious = per_class_iou(cm)
    if not include_background:
        ious = ious[1:]
    defined = ious[~np.isnan(ious)]
    if defined.size == 0:
        raise ValidationError("mean_iou: no class has a nonzero union")
    return float(defined.mean())


def part_miou_grouped(part_ious, part_owners):
    """Average part IoUs within each owner object, then across objects.

    part_ious: per-part IoU values aligned with part class indices 1..P
    (NaN = undefined); part_owners: owner object index for the same parts.
    Undefined parts drop out of their object's mean; objects with no defined
    part drop out of the outer mean.
    """
    part_ious = np.asarray(part_ious, dtype=np.float64)
    part_owners = np.asarray(part_owners)
    if part_ious.shape != part_owners.shape:
        raise ShapeError(f"part_miou_grouped: {part_ious.shape} vs {part_owners.shape}")
    object_means = []
    for owner in np.unique(part_owners):
        vals = part_ious[part_owners == owner]
        vals = vals[~np.isnan(vals)]
        if vals.size:
            object_means.append(vals.mean())
    if not object_means:
        raise ValidationError("part_miou_grouped: every part IoU is undefined")
    return float(np.mean(object_means))


def top1(labels, preds):
    labels = list(labels)
    preds = list(preds)
    if not labels or len(labels) != len(preds):
        raise ValidationError(
            f"top1: need equal non-empty lists, got {len(labels)} and {len(preds)}"
        )
    hits = sum(1 for a, b in zip(labels, preds) if a == b)
    return hits / len(labels)


def texture_image_label(logit_map):
    """Image label = most frequent per-pixel argmax; ties take the smaller index."""
    arr = np.asarray(logit_map)
    if arr.ndim != 3 or arr.size == 0:
        raise ShapeError(f"texture_image_label: need (T, h, w) logits, got {arr.shape}")
    pixel_pred = arr.argmax(axis=0)  # argmax tie-break: smallest index
    votes = np.bincount(pixel_pred.ravel(), minlength=arr.shape[0])
    return int(votes.argmax())  # bincount argmax tie-break: smallest index


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


def build_report(task_results):
    """Eval report keyed by task, mirroring each task's metric set.

    task_results maps task name to its accumulated state: confusion matrices
    for object/part/material, (labels, preds) pairs for scene/texture.
    """
    report = {}
    if "object" in task_results:
        cm = task_results["object"]
        report["object"] = {"mIoU": mean_iou(cm), "pixel_acc": pixel_accuracy(cm)}
    if "part" in task_results:
        entry = task_results["part"]
        cm, owners = entry["cm"], entry["owners"]
        ious = per_class_iou(cm)[1:]  # align to part classes 1..P
        report["part"] = {
            "mIoU_bg": part_miou_grouped(ious, owners),
            "pixel_acc": pixel_accuracy(cm),
        }
    if "scene" in task_results:
        labels, preds = task_results["scene"]
        report["scene"] = {"top1": top1(labels, preds)}
    if "material" in task_results:
        cm = task_results["material"]
        report["material"] = {"mIoU": mean_iou(cm), "pixel_acc": pixel_accuracy(cm)}
    if "texture" in task_results:
        labels, preds = task_results["texture"]
        report["texture"] = {"top1": top1(labels, preds)}
    return report
