"""SGD training under heterogeneous annotations, evaluation, and prediction.

Each iteration samples one data source, builds a batch from it alone, runs
only the heads that source supervises, and updates only the parameters that
received gradients (shared trunk + active heads). Losses are masked: object
and material ignore unlabeled pixels, the part loss lives only inside
super-object regions, the texture loss broadcasts its image-level label to
every logit pixel. The texture branch trains during the main loop too (its
gradients never reach the trunk), then gets a dedicated fine-tune stage.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import (
    Batch,
    ResizePolicy,
    SampleCache,
    make_batch,
    prefetch_map,
    sample_source,
    scale_jitter,
    worker_count,
)
from .errors import NumericError, ValidationError
from .metrics import ConfusionMatrix, build_report, texture_image_label

# ---------------------------------------------------------------------------
# Learning-rate schedule and optimizer
# ---------------------------------------------------------------------------


def poly_lr(iteration, max_iter, lr0=0.02, power=0.9):
    """lr0 * (1 - iter/max_iter)^power."""
    if iteration < 0 or iteration > max_iter:
        raise ValidationError(f"poly_lr: iteration {iteration} outside [0, {max_iter}]")
    return lr0 * (1.0 - iteration / max_iter) ** power


@dataclass
class OptimState:
    max_iter: int
    iter: int = 0
    lr0: float = 0.02
    power: float = 0.9
    momentum_coef: float = 0.9
    weight_decay: float = 1e-4
    momentum: dict = field(default_factory=dict)  # param name -> velocity array

    def validate(self):
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if not (0 <= self.iter <= self.max_iter):
            raise ValidationError(f"iter {self.iter} outside [0, {self.max_iter}]")
        return self


def sgd_momentum_step(named_params, state, lr):
    """v <- momentum*v + grad + wd*param; param <- param - lr*v.

    named_params: (name, tensor, decay_flag) triples, all of which must carry
    gradients; weight decay applies only where decay_flag is set (conv/linear
    weights, not BN parameters or biases). Velocity buffers are created on
    first use so never-updated parameters keep no state.
    """
    for name, t, decay in named_params:
        if t.grad is None:
            raise ValidationError(f"sgd step: parameter {name!r} selected but has no gradient")
        g = t.grad
        if decay and state.weight_decay:
            g = g + state.weight_decay * t.data
        v = state.momentum.get(name)
        if v is None:
            v = np.zeros_like(t.data)
        v = state.momentum_coef * v + g
        state.momentum[name] = v
        t.data -= lr * v


# ---------------------------------------------------------------------------
# Loss targets
# ---------------------------------------------------------------------------

IGNORE = -1


def build_part_mask(object_gt, part_gt, label_space):
    """Three-way part target: ignore / background / part index.

    Outside any super-object region (object classes owning at least one
    part): ignore. Inside one with no part annotation: background 0. Inside
    one with a part whose owner matches the object: the part index. Part
    pixels whose owner does not match the object there are data noise --
    ignored and counted in the returned mismatch tally.
    """
    object_gt = np.asarray(object_gt)
    part_gt = np.asarray(part_gt)
    if object_gt.shape != part_gt.shape:
        raise ValidationError(
            f"build_part_mask: object {object_gt.shape} vs part {part_gt.shape}"
        )
    P = label_space.n_parts
    if part_gt.size and (part_gt.min() < 0 or part_gt.max() > P):
        raise ValidationError(f"build_part_mask: part index outside 0..{P}")
    owner = np.zeros(P + 1, dtype=np.int64)  # slot 0 unused
    owner[1:] = label_space.part_owner
    is_super = np.zeros(label_space.n_objects + 1, dtype=bool)
    is_super[label_space.part_owner] = True

    inside = is_super[object_gt]
    target = np.full(object_gt.shape, IGNORE, dtype=np.int64)
    target[inside] = 0
    has_part = part_gt > 0
    owner_ok = owner[part_gt] == object_gt
    good = inside & has_part & owner_ok
    target[good] = part_gt[good]
    mismatches = int((has_part & ~owner_ok).sum())
    return target, mismatches


def _seg_loss(logits, mask, offset):
    """Per-pixel CE against a mask at label resolution; offset maps mask
    values to channels (object/material: class k -> channel k-1, 0 ignored)."""
    H, W = mask.shape[1], mask.shape[2]
    up = T.bilinear_resize(logits, H, W)
    return T.masked_cross_entropy(up, mask + offset, ignore_index=IGNORE)


def batch_losses(model, batch, label_space):
    """Forward the batch's tasks; return (total_loss, {task: float}, bundle)."""
    tasks = set(batch.tasks)
    bundle = model(T.Tensor(batch.images), tasks)
    pieces = {}
    if "scene" in tasks:
        pieces["scene"] = T.masked_cross_entropy(bundle.scene_logits, batch.scene)
    if "object" in tasks:
        pieces["object"] = _seg_loss(bundle.object_logits, batch.object_mask, -1)
    if "material" in tasks:
        pieces["material"] = _seg_loss(bundle.material_logits, batch.material_mask, -1)
    if "part" in tasks:
        if batch.object_mask is None:
            raise ValidationError(
                "part supervision needs object annotations in the same source"
            )
        target, _ = build_part_mask(batch.object_mask, batch.part_mask, label_space)
        H, W = target.shape[1], target.shape[2]
        up = T.bilinear_resize(bundle.part_logits, H, W)
        pieces["part"] = T.masked_cross_entropy(up, target, ignore_index=IGNORE)
    if "texture" in tasks:
        logits = bundle.texture_logits
        h, w = logits.data.shape[2], logits.data.shape[3]
        target = np.repeat(batch.texture[:, None, None], h, axis=1)
        target = np.repeat(target, w, axis=2)
        pieces["texture"] = T.masked_cross_entropy(logits, target)
    if not pieces:
        raise ValidationError(f"source {batch.source_id!r} supervises no configured task")
    total = None
    for loss in pieces.values():
        total = loss if total is None else T.add(total, loss)
    return total, {k: float(v.data) for k, v in pieces.items()}, bundle


def train_step(model, batch, label_space, state, lr):
    """One optimization step on one homogeneous batch; returns a loss report."""
    model.zero_grad()
    total, per_task, _ = batch_losses(model, batch, label_space)
    if not np.isfinite(total.data):
        raise NumericError(f"non-finite loss on source {batch.source_id!r}")
    total.backward()
    touched = [(n, t, d) for n, t, d in model.named_parameters() if t.grad is not None]
    sgd_momentum_step(touched, state, lr)
    return {"total": float(total.data), "per_task": per_task,
            "updated_params": len(touched)}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainPlan:
    base_iters: int = 2000
    reference_size: int = 0   # 0: use the dataset size itself
    dataset_size: int = 0     # filled from the manifest when 0
    batch_size: int = 2
    checkpoint_every: int = 0  # 0: only the final checkpoint
    texture_epochs: int = 5
    texture_lr: float = 0.01
    lr0: float = 0.02
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def max_iter(self):
        if self.dataset_size < 1:
            raise ValidationError("TrainPlan: dataset_size not set")
        ref = self.reference_size or self.dataset_size
        return max(1, round(self.base_iters * self.dataset_size / ref))


def run_training(plan, model, label_space, sources, root, seed, out_dir=None,
                 policy=None, log_fn=None, config_meta=None):
    """Main loop: sample source, batch, jitter, step, poly LR; checkpoints.

    Returns (OptimState, summary dict). Deterministic for a given seed: all
    randomness is drawn on the coordinator in a fixed order, so prefetch
    workers cannot perturb the sequence.
    """
    policy = policy or ResizePolicy()
    train_sources = [s for s in sources if s.split_samples("train")]
    if not train_sources:
        raise ValidationError("run_training: no source has train samples")
    if plan.dataset_size == 0:
        plan.dataset_size = sum(len(s.split_samples("train")) for s in train_sources)
    max_iter = plan.max_iter()
    state = OptimState(max_iter=max_iter, lr0=plan.lr0, power=plan.power,
                       momentum_coef=plan.momentum,
                       weight_decay=plan.weight_decay).validate()
    rng = np.random.default_rng(seed)
    cache = SampleCache(root)
    by_id = {s.id: s for s in train_sources}

    def draw_jobs():
        for i in range(max_iter):
            sid = sample_source(rng, train_sources)
            src = by_id[sid]
            pool = src.split_samples("train")
            k = min(plan.batch_size, len(pool))
            idxs = rng.choice(len(pool), size=k, replace=False)
            jitter_seed = int(rng.integers(0, 2**63 - 1))
            yield (i, src, [pool[j] for j in idxs], jitter_seed)

    def build(job):
        i, src, samples, jitter_seed = job
        jrng = np.random.default_rng(jitter_seed)
        texture_mode = "texture" in src.tasks
        arrays = [
            scale_jitter(cache.get(s), jrng, "train", policy, texture_mode=texture_mode)
            for s in samples
        ]
        return i, src, make_batch(arrays, src.id, src.tasks)

    checkpoints = []
    losses = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint(tag):
        if not out_dir:
            return
        path = os.path.join(out_dir, f"ckpt_{tag}.ckpt")
        save_checkpoint(path, model, state, metadata=dict(config_meta or {}, seed=seed))
        checkpoints.append(path)

    model.train()
    workers = worker_count()
    for i, src, batch in prefetch_map(build, draw_jobs(), workers):
        lr = poly_lr(i, max_iter, state.lr0, state.power)
        t0 = time.monotonic()
        try:
            report = train_step(model, batch, label_space, state, lr)
        except NumericError as exc:
            raise NumericError(f"iteration {i}: {exc}") from None
        state.iter = i + 1
        losses.append(report["total"])
        if log_fn is not None:
            log_fn({"iter": i, "source": src.id, "lr": lr,
                    "loss": report["total"],
                    "wall_ms": round((time.monotonic() - t0) * 1000.0, 3)})
        if plan.checkpoint_every and (i + 1) % plan.checkpoint_every == 0 and (i + 1) < max_iter:
            checkpoint(f"{i + 1:06d}")
    checkpoint("final")
    return state, {"max_iter": max_iter, "losses": losses, "checkpoints": checkpoints}


def texture_finetune(model, label_space, source, root, state, seed,
                     epochs=5, lr=0.01, batch_size=2, policy=None, log_fn=None):
    """Dedicated texture-branch refinement after the main loop completes.

    Only texture-branch parameters can change (the branch input is graph-cut,
    so nothing else ever receives a gradient from the texture loss). Images
    ride the fixed small texture resolution.
    """
    if state.iter != state.max_iter:
        raise ValidationError(
            f"texture_finetune: main training incomplete ({state.iter}/{state.max_iter})"
        )
    if "texture" not in source.tasks:
        raise ValidationError(f"source {source.id!r} has no texture annotations")
    pool = source.split_samples("train")
    if not pool:
        raise ValidationError(f"source {source.id!r} has no train samples")
    policy = policy or ResizePolicy()
    rng = np.random.default_rng(seed)
    cache = SampleCache(root)
    model.train()
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(pool))
        for lo in range(0, len(order), batch_size):
            samples = [pool[j] for j in order[lo : lo + batch_size]]
            arrays = [
                scale_jitter(cache.get(s), rng, "train", policy, texture_mode=True)
                for s in samples
            ]
            batch = make_batch(arrays, source.id, ("texture",))
            model.zero_grad()
            total, per_task, _ = batch_losses(model, batch, label_space)
            if not np.isfinite(total.data):
                raise NumericError(f"non-finite texture loss at fine-tune step {step}")
            total.backward()
            touched = [(n, t, d) for n, t, d in model.named_parameters()
                       if t.grad is not None]
            for name, _, _ in touched:
                if not name.startswith("texture_branch."):
                    raise ValidationError(
                        f"texture fine-tune leaked a gradient into {name!r}"
                    )
            sgd_momentum_step(touched, state, lr)
            if log_fn is not None:
                log_fn({"iter": step, "source": source.id, "lr": lr,
                        "loss": float(total.data), "wall_ms": 0.0})
            step += 1
    return model


# ---------------------------------------------------------------------------
# Evaluation and prediction
# ---------------------------------------------------------------------------


def _pred_from_logits(logits_t, out_h, out_w, offset):
    """Upsample logits to (out_h, out_w) and argmax; offset shifts channel to
    class index (+1 for object/material where channel 0 is class 1)."""
    up = T.bilinear_resize(logits_t, out_h, out_w)
    return up.data.argmax(axis=1) + offset


def evaluate(model, label_space, sources, root, policy=None, split="val", tasks=None):
    """Metric report over one split; batch size 1, eval-mode BN, no jitter noise."""
    policy = policy or ResizePolicy()
    cfg_tasks = model.config.configured_tasks()
    tasks = set(tasks) if tasks is not None else cfg_tasks
    missing = tasks - cfg_tasks
    if missing:
        raise ValidationError(f"evaluate: task(s) {sorted(missing)} not configured")

    results = {}
    if "object" in tasks:
        results["object"] = ConfusionMatrix(label_space.n_objects + 1)
    if "material" in tasks:
        results["material"] = ConfusionMatrix(label_space.n_materials + 1)
    if "part" in tasks:
        results["part"] = {"cm": ConfusionMatrix(label_space.n_parts + 1),
                           "owners": list(label_space.part_owner)}
    if "scene" in tasks:
        results["scene"] = ([], [])
    if "texture" in tasks:
        results["texture"] = ([], [])

    cache = SampleCache(root)
    model.eval()
    rng = np.random.default_rng(0)  # eval jitter draws nothing, mode is fixed
    with T.no_grad():
        for source in sources:
            run_tasks = tasks & set(source.tasks)
            if not run_tasks:
                continue
            texture_mode = "texture" in source.tasks
            for sample in source.split_samples(split):
                arrays = scale_jitter(cache.get(sample), rng, "eval", policy,
                                      texture_mode=texture_mode)
                batch = make_batch([arrays], source.id, source.tasks)
                bundle = model(T.Tensor(batch.images), run_tasks)
                H, W = batch.images.shape[2], batch.images.shape[3]
                if "object" in run_tasks:
                    pred = _pred_from_logits(bundle.object_logits, H, W, 1)
                    results["object"].accumulate(batch.object_mask, pred)
                if "material" in run_tasks:
                    pred = _pred_from_logits(bundle.material_logits, H, W, 1)
                    results["material"].accumulate(batch.material_mask, pred)
                if "part" in run_tasks:
                    target, _ = build_part_mask(batch.object_mask, batch.part_mask,
                                                label_space)
                    pred = _pred_from_logits(bundle.part_logits, H, W, 0)
                    results["part"]["cm"].accumulate(
                        target, pred, count_unlabeled=True, ignore_index=IGNORE
                    )
                if "scene" in run_tasks:
                    labels, preds = results["scene"]
                    labels.append(int(batch.scene[0]))
                    preds.append(int(bundle.scene_logits.data[0].argmax()))
                if "texture" in run_tasks:
                    labels, preds = results["texture"]
                    labels.append(int(batch.texture[0]))
                    preds.append(texture_image_label(bundle.texture_logits.data[0]))
    model.train()
    # Drop tasks that saw no data so the report only covers what ran.
    pruned = {}
    for task, acc in results.items():
        if task in ("object", "material") and acc.total == 0:
            continue
        if task == "part" and acc["cm"].total == 0:
            continue
        if task in ("scene", "texture") and not acc[0]:
            continue
        pruned[task] = acc
    return build_report(pruned)


def predict_image(model, image_chw, tasks=None):
    """Per-task predictions for one decoded image at its native resolution.

    Returns {task: index map HW (object/part/material) or int label
    (scene/texture)}.
    """
    cfg_tasks = model.config.configured_tasks()
    tasks = set(tasks) if tasks is not None else cfg_tasks
    H, W = image_chw.shape[1], image_chw.shape[2]
    model.eval()
    with T.no_grad():
        bundle = model(T.Tensor(image_chw[None]), tasks)
        out = {}
        if "scene" in tasks:
            out["scene"] = int(bundle.scene_logits.data[0].argmax())
        if "object" in tasks:
            out["object"] = _pred_from_logits(bundle.object_logits, H, W, 1)[0]
        if "part" in tasks:
            out["part"] = _pred_from_logits(bundle.part_logits, H, W, 0)[0]
        if "material" in tasks:
            out["material"] = _pred_from_logits(bundle.material_logits, H, W, 1)[0]
        if "texture" in tasks:
            out["texture"] = texture_image_label(bundle.texture_logits.data[0])
            up = T.bilinear_resize(bundle.texture_logits, H, W)
            out["texture_map"] = up.data[0].argmax(axis=0)
    model.train()
    return out


def format_log_line(entry):
    return json.dumps(entry, sort_keys=True)
