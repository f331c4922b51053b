"""Central finite-difference gradient verification.

Runs a tensor program twice per perturbed element and compares the numeric
derivative against the recorded-graph gradient. Meant to run in 64-bit mode;
float32 inputs are rejected because the roundoff floor would drown the signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensor import Tensor

# Elements whose analytic and numeric gradients are both below this magnitude
# are compared against the floor instead of each other, so roundoff noise on a
# near-zero gradient does not read as a huge relative error. With tol 1e-4
# this makes the sub-floor comparison absolute at tol * floor = 1e-8, roughly
# two orders above the float64 central-difference cancellation noise for O(100)
# losses at h = 1e-4, and far below the magnitude any real gradient bug shows.
DENOM_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_input: list = field(default_factory=list)
    worst: tuple = ()

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max relative error {self.max_rel_error:.3e} "
            f"(tol {self.tol:.1e}) worst at {self.worst}"
        )


def grad_check(fn, inputs, h=1e-4, tol=1e-4, element_limit=None, rng=None):
    """Compare analytic gradients of ``fn(inputs)`` against central differences.

    fn maps the list of input Tensors to a scalar Tensor. Every element of
    every input is perturbed by +/- h; when element_limit is given, at most
    that many elements per input are probed (chosen by rng, which is then
    required). Returns a GradCheckReport; pass iff max relative error < tol.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValidationError(
                f"grad_check requires float64 inputs, got {t.data.dtype}"
            )
        t.requires_grad = True
        t.zero_grad()

    loss = fn(inputs)
    loss.backward()
    analytic = []
    for t in inputs:
        if t.grad is None:
            raise ValidationError("grad_check: input received no gradient")
        analytic.append(t.grad.copy())

    max_rel = 0.0
    worst = ()
    per_input = []
    for idx, t in enumerate(inputs):
        flat = t.data.ravel()
        ana = analytic[idx].ravel()
        input_max = 0.0
        if element_limit is not None and flat.size > element_limit:
            if rng is None:
                raise ValidationError("grad_check: element_limit needs an rng")
            elements = rng.choice(flat.size, size=element_limit, replace=False)
        else:
            elements = range(flat.size)
        for e in elements:
            orig = flat[e]
            flat[e] = orig + h
            f_plus = float(fn(inputs).data)
            flat[e] = orig - h
            f_minus = float(fn(inputs).data)
            flat[e] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(ana[e])
            denom = max(abs(a), abs(numeric), DENOM_FLOOR)
            rel = abs(a - numeric) / denom
            if rel > input_max:
                input_max = rel
            if rel > max_rel:
                max_rel = rel
                worst = (idx, e, a, numeric)
        per_input.append(input_max)
    return GradCheckReport(max_rel_error=max_rel, tol=tol, per_input=per_input, worst=worst)


def numeric_gradient(fn, inputs, index, h=1e-4):
    """Full central-difference gradient of fn w.r.t. inputs[index]."""
    t = inputs[index]
    flat = t.data.ravel()
    out = np.zeros_like(flat)
    for e in range(flat.size):
        orig = flat[e]
        flat[e] = orig + h
        f_plus = float(fn(inputs).data)
        flat[e] = orig - h
        f_minus = float(fn(inputs).data)
        flat[e] = orig
        out[e] = (f_plus - f_minus) / (2.0 * h)
    return out.reshape(t.data.shape)


def make_default_suite():
    """The standard set of op-level programs checked by the grad-check command.

    Each entry is (name, fn, inputs, h). Shapes are randomized once from a
    fixed seed so the suite is deterministic.
    """
    from . import tensor as T

    rng = np.random.default_rng(20240817)

    def t(shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)

    suite = []

    x = t((2, 3, 8, 8))
    w = t((4, 3, 3, 3), scale=0.5)
    b = t((4,), scale=0.1)
    suite.append(
        ("conv2d", lambda ts: T.conv2d(ts[0], ts[1], ts[2], stride=1, pad=1).sum(), [x, w, b], 1e-4)
    )

    x = t((2, 3, 9, 7))
    w = t((2, 3, 3, 3), scale=0.5)
    suite.append(
        ("conv2d_stride2", lambda ts: T.conv2d(ts[0], ts[1], None, stride=2, pad=1).sum(), [x, w], 1e-4)
    )

    x = t((3, 4, 5, 5))
    gamma = Tensor(rng.uniform(0.5, 1.5, size=4), dtype=np.float64)
    beta = t((4,), scale=0.2)

    def bn_prog(ts):
        rm = np.zeros(4, dtype=np.float64)
        rv = np.ones(4, dtype=np.float64)
        out = T.batch_norm2d(ts[0], ts[1], ts[2], rm, rv, training=True)
        return T.mul(out, out).sum()

    suite.append(("batch_norm2d", bn_prog, [x, gamma, beta], 1e-4))

    x = t((2, 3, 5, 6))
    suite.append(
        ("bilinear_resize_up", lambda ts: T.mul(T.bilinear_resize(ts[0], 9, 11), 0.5).sum(), [x], 1e-4)
    )
    x = t((2, 3, 8, 8))
    suite.append(
        ("bilinear_resize_down", lambda ts: T.mul(T.bilinear_resize(ts[0], 3, 5), T.bilinear_resize(ts[0], 3, 5)).sum(), [x], 1e-4)
    )

    x = t((2, 5, 7, 7))
    suite.append(
        ("adaptive_avg_pool2d", lambda ts: T.mul(T.adaptive_avg_pool2d(ts[0], 3, 2), 2.0).sum(), [x], 1e-4)
    )

    x = t((2, 2, 6, 6))
    suite.append(
        ("max_pool2d", lambda ts: T.max_pool2d(ts[0], 3, 2, pad=1).sum(), [x], 1e-4)
    )

    logits = t((2, 5, 4, 4))
    target = rng.integers(0, 5, size=(2, 4, 4))
    target[0, 0, :] = -1  # exercise the ignore path
    suite.append(
        (
            "masked_cross_entropy",
            lambda ts: T.masked_cross_entropy(ts[0], target, ignore_index=-1),
            [logits],
            1e-4,
        )
    )

    x = t((3, 6))
    w = t((6, 4), scale=0.5)
    b = t((4,), scale=0.1)
    suite.append(("linear", lambda ts: T.linear(ts[0], ts[1], ts[2]).sum(), [x, w, b], 1e-4))

    x = t((2, 3, 4, 4))
    y = t((2, 3, 4, 4))

    def diamond(ts):
        s = T.add(ts[0], ts[1])
        p = T.mul(s, ts[0])  # ts[0] used on two paths
        return T.relu(p).sum()

    suite.append(("diamond_graph", diamond, [x, y], 1e-4))

    return suite


def run_model_check(tol=1e-4, elements_per_param=4, seed=20240817):
    """Finite-difference check of a complete micro parsing network.

    Builds the smallest usable network in float64 and probes a deterministic
    random sample of elements from every parameter. Two passes: trunk and
    head parameters against the sum of the scene/object/part/material
    losses, then texture-branch parameters against the texture loss. They
    cannot share one combined loss because the texture loss still *depends*
    on trunk parameters through the forward values while its gradient is
    deliberately cut; a finite difference would see the severed path. The
    probe step is small (1e-5) so it stays on one side of ReLU / max-pool
    kinks for the frozen seed.
    """
    from . import tensor as T
    from .backbone import BackboneConfig
    from .model import ModelConfig, build_model

    bc = BackboneConfig(stem_channels=4, stage_channels=(4, 6, 8, 10),
                        blocks_per_stage=(1, 1, 1, 1))
    mc = ModelConfig(fpn_channels=6, ppm_bins=(1, 2), n_scenes=2, n_objects=2,
                     n_parts=1, n_materials=2, n_textures=2,
                     texture_layers=1, texture_channels=4)
    model = build_model(bc, mc, seed=seed)
    model.astype(np.float64)
    model.train()

    rng = np.random.default_rng(seed)
    # Two images: the pyramid-pooling 1x1 branch normalizes one value per
    # image, so train-mode BN statistics need N >= 2.
    image = Tensor(rng.standard_normal((2, 3, 48, 48)), dtype=np.float64)
    obj_t = rng.integers(0, 2, size=(2, 12, 12))
    obj_t[0, 0, 0] = -1  # keep the masking path live
    part_t = rng.integers(0, 2, size=(2, 12, 12))
    mat_t = rng.integers(0, 2, size=(2, 12, 12))
    tex_t = rng.integers(0, 2, size=(2, 12, 12))
    scene_t = np.array([1, 0])

    texture_params = [t for _, t, _ in model.texture_branch.named_parameters()]
    texture_ids = {id(t) for t in texture_params}
    trunk_params = [
        t for _, t, _ in model.named_parameters() if id(t) not in texture_ids
    ]

    def trunk_fn(_):
        bundle = model(image, tasks={"scene", "object", "part", "material"})
        loss = T.masked_cross_entropy(bundle.scene_logits, scene_t)
        loss = T.add(loss, T.masked_cross_entropy(bundle.object_logits, obj_t))
        loss = T.add(loss, T.masked_cross_entropy(bundle.part_logits, part_t))
        loss = T.add(loss, T.masked_cross_entropy(bundle.material_logits, mat_t))
        return loss

    def texture_fn(_):
        bundle = model(image, tasks={"texture"})
        return T.masked_cross_entropy(bundle.texture_logits, tex_t)

    sample_rng = np.random.default_rng(seed + 1)
    rep_trunk = grad_check(trunk_fn, trunk_params, h=1e-5, tol=tol,
                           element_limit=elements_per_param, rng=sample_rng)
    rep_tex = grad_check(texture_fn, texture_params, h=1e-5, tol=tol,
                         element_limit=elements_per_param, rng=sample_rng)
    worse = rep_trunk if rep_trunk.max_rel_error >= rep_tex.max_rel_error else rep_tex
    return GradCheckReport(
        max_rel_error=worse.max_rel_error,
        tol=tol,
        per_input=rep_trunk.per_input + rep_tex.per_input,
        worst=worse.worst,
    )


def run_default_suite(tol=1e-4, verbose_lines=None, include_model=True):
    """Run the op suite (plus the micro-model check); returns (all_passed, results)."""
    results = []
    ok = True
    for name, fn, inputs, h in make_default_suite():
        report = grad_check(fn, inputs, h=h, tol=tol)
        results.append((name, report))
        ok = ok and report.passed
        if verbose_lines is not None:
            verbose_lines.append(f"{name}: {report}")
    if include_model:
        report = run_model_check(tol=tol)
        results.append(("micro_model", report))
        ok = ok and report.passed
        if verbose_lines is not None:
            verbose_lines.append(f"micro_model: {report}")
    return ok, results
