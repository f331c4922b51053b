"""Multi-head parsing network on top of the residual backbone.

Layout: a pyramid pooling module turns C5 into P5; a top-down pathway with
1x1 lateral connections produces P4..P2; resizing P3..P5 to P2's size and
concatenating gives the fused map. Head attachment points:

    scene    -> global average of P5, linear classifier
    object   -> fused map
    part     -> fused map (channel 0 is explicit background)
    material -> P2
    texture  -> C2, read through a graph cut so its loss never
                back-propagates into the backbone

Every non-classifier conv carries BN+ReLU and outputs fpn_channels channels.
Ablation switches: use_ppm=False replaces the PPM with a plain 1x1 lateral on
C5; use_fusion=False attaches the object/part heads to a single pyramid level
(head_level).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, build_backbone
from .errors import ConfigError, ValidationError
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Linear, Module, ModuleList

TASKS = ("scene", "object", "part", "material", "texture")


@dataclass
class ModelConfig:
    fpn_channels: int = 512
    ppm_bins: tuple = (1, 2, 3, 6)
    n_scenes: int = 0
    n_objects: int = 0
    n_parts: int = 0
    n_materials: int = 0
    n_textures: int = 0
    use_ppm: bool = True
    use_fusion: bool = True
    head_level: int = 2  # pyramid level feeding object/part heads when fusion is off
    texture_layers: int = 4
    texture_channels: int = 128

    def validate(self):
        if self.fpn_channels < 1:
            raise ConfigError(f"fpn_channels must be positive, got {self.fpn_channels}")
        bins = tuple(self.ppm_bins)
        if not bins or any(b2 <= b1 for b1, b2 in zip(bins, bins[1:])):
            raise ConfigError(f"ppm_bins must be non-empty and strictly increasing, got {bins}")
        if bins[0] < 1:
            raise ConfigError(f"ppm_bins must be >= 1, got {bins}")
        if self.head_level not in (2, 3, 4, 5):
            raise ConfigError(f"head_level must be one of 2..5, got {self.head_level}")
        if all(n == 0 for n in self.class_counts().values()):
            raise ConfigError("at least one task needs a nonzero class count")
        if any(n < 0 for n in self.class_counts().values()):
            raise ConfigError("class counts must be >= 0")
        if self.texture_layers < 1 or self.texture_channels < 1:
            raise ConfigError("texture branch needs at least one layer and one channel")
        return self

    def class_counts(self):
        return {
            "scene": self.n_scenes,
            "object": self.n_objects,
            "part": self.n_parts,
            "material": self.n_materials,
            "texture": self.n_textures,
        }

    def configured_tasks(self):
        return {t for t, n in self.class_counts().items() if n > 0}


@dataclass
class PredictionBundle:
    """Per-task logits; a field is None when its task was not requested.

    object/part logits share the spatial grid of the map they ride; material
    logits carry P2's; texture logits carry C2's. Nothing is resized here --
    the loss and the predictors resize to label resolution themselves.
    """

    scene_logits: object = None
    object_logits: object = None
    part_logits: object = None
    material_logits: object = None
    texture_logits: object = None

    def get(self, task):
        return getattr(self, f"{task}_logits")


class PyramidPooling(Module):
    """Multi-bin context pooling fused back onto the deepest feature map."""

    def __init__(self, in_ch, out_ch, bins, rng):
        super().__init__()
        object.__setattr__(self, "bins", tuple(bins))
        self.branches = ModuleList(
            ConvBNReLU(in_ch, out_ch, 1, rng) for _ in self.bins
        )
        self.fuse = ConvBNReLU(in_ch + out_ch * len(self.bins), out_ch, 3, rng)

    def forward(self, c5):
        H, W = c5.data.shape[2], c5.data.shape[3]
        if max(self.bins) > min(H, W):
            raise ValidationError(
                f"pyramid pooling: bin {max(self.bins)} exceeds feature size {(H, W)}"
            )
        pieces = [c5]
        for b, branch in zip(self.bins, self.branches):
            pooled = T.adaptive_avg_pool2d(c5, b, b)
            pieces.append(T.bilinear_resize(branch(pooled), H, W))
        return self.fuse(T.concat_channels(pieces))


class SegmentationHead(Module):
    """One 3x3 conv+BN+ReLU, then a 1x1 classifier conv (with bias)."""

    def __init__(self, in_ch, mid_ch, n_classes, rng):
        super().__init__()
        self.block = ConvBNReLU(in_ch, mid_ch, 3, rng)
        self.classifier = Conv2d(mid_ch, n_classes, 1, rng)

    def forward(self, x):
        return self.classifier(self.block(x))


class TextureBranch(Module):
    """Stack of 3x3 convs on C2, kept shallow so its receptive field stays small."""

    def __init__(self, in_ch, width, n_layers, n_classes, rng):
        super().__init__()
        layers = ModuleList()
        ch = in_ch
        for _ in range(n_layers):
            layers.append(ConvBNReLU(ch, width, 3, rng))
            ch = width
        self.layers = layers
        self.classifier = Conv2d(ch, n_classes, 1, rng)

    def forward(self, c2):
        x = c2.detach()  # graph cut: texture loss never reaches the backbone
        for layer in self.layers:
            x = layer(x)
        return self.classifier(x)


class UPerNet(Module):
    def __init__(self, backbone_config, model_config, rng):
        super().__init__()
        model_config.validate()
        backbone_config.validate()
        self.config = model_config
        self.backbone = Backbone(backbone_config, rng)
        ch = model_config.fpn_channels
        c2_ch, c3_ch, c4_ch, c5_ch = backbone_config.stage_channels

        if model_config.use_ppm:
            self.ppm = PyramidPooling(c5_ch, ch, model_config.ppm_bins, rng)
        else:
            self.ppm = ConvBNReLU(c5_ch, ch, 1, rng)
        self.lateral = ModuleList(
            ConvBNReLU(c, ch, 1, rng) for c in (c2_ch, c3_ch, c4_ch)
        )
        self.topdown = ModuleList(ConvBNReLU(ch, ch, 3, rng) for _ in range(3))
        if model_config.use_fusion:
            self.fusion = ConvBNReLU(4 * ch, ch, 3, rng)

        cc = model_config.class_counts()
        if cc["scene"]:
            self.scene_fc = Linear(ch, cc["scene"], rng)
        if cc["object"]:
            self.object_head = SegmentationHead(ch, ch, cc["object"], rng)
        if cc["part"]:
            self.part_head = SegmentationHead(ch, ch, cc["part"] + 1, rng)
        if cc["material"]:
            self.material_head = SegmentationHead(ch, ch, cc["material"], rng)
        if cc["texture"]:
            self.texture_branch = TextureBranch(
                c2_ch,
                model_config.texture_channels,
                model_config.texture_layers,
                cc["texture"],
                rng,
            )

    # Pieces are exposed separately so forward() can build only the sub-graph
    # the requested tasks need.

    def compute_p5(self, c5):
        return self.ppm(c5)

    def compute_pyramid(self, hierarchy, p5):
        """Top-down pathway: P_k = 3x3(lateral(C_k) + upsample(P_{k+1}))."""
        pyramid = {5: p5}
        feats = {2: hierarchy.c2, 3: hierarchy.c3, 4: hierarchy.c4}
        for k in (4, 3, 2):
            c_k = feats[k]
            lat = self.lateral[k - 2](c_k)
            up = T.bilinear_resize(pyramid[k + 1], c_k.data.shape[2], c_k.data.shape[3])
            pyramid[k] = self.topdown[k - 2](T.add(lat, up))
        return pyramid

    def fuse_pyramid(self, pyramid):
        H, W = pyramid[2].data.shape[2], pyramid[2].data.shape[3]
        pieces = [pyramid[2]] + [
            T.bilinear_resize(pyramid[k], H, W) for k in (3, 4, 5)
        ]
        return self.fusion(T.concat_channels(pieces))

    def scene_head(self, p5):
        pooled = T.adaptive_avg_pool2d(p5, 1, 1)
        flat = T.reshape(pooled, (p5.data.shape[0], p5.data.shape[1]))
        return self.scene_fc(flat)

    def forward(self, image, tasks=None):
        cfg_tasks = self.config.configured_tasks()
        if tasks is None:
            tasks = cfg_tasks
        tasks = set(tasks)
        unknown = tasks - set(TASKS)
        if unknown:
            raise ValidationError(f"unknown task(s) {sorted(unknown)}; expected {TASKS}")
        missing = tasks - cfg_tasks
        if missing:
            raise ValidationError(
                f"task(s) {sorted(missing)} have no classes configured"
            )
        if not tasks:
            raise ValidationError("no tasks requested")

        hierarchy = self.backbone(image)
        bundle = PredictionBundle()

        if "texture" in tasks:
            bundle.texture_logits = self.texture_branch(hierarchy.c2)

        need_seg = tasks & {"object", "part", "material"}
        need_p5 = bool(need_seg) or "scene" in tasks
        if not need_p5:
            return bundle

        p5 = self.compute_p5(hierarchy.c5)
        if "scene" in tasks:
            bundle.scene_logits = self.scene_head(p5)
        if not need_seg:
            return bundle

        pyramid = self.compute_pyramid(hierarchy, p5)
        if "material" in tasks:
            bundle.material_logits = self.material_head(pyramid[2])
        if tasks & {"object", "part"}:
            if self.config.use_fusion:
                seg_map = self.fuse_pyramid(pyramid)
            else:
                seg_map = pyramid[self.config.head_level]
            if "object" in tasks:
                bundle.object_logits = self.object_head(seg_map)
            if "part" in tasks:
                bundle.part_logits = self.part_head(seg_map)
        return bundle


def upernet_forward(model, image, tasks=None):
    return model(image, tasks)


def build_model(backbone_config, model_config, seed):
    """Deterministic construction; the same seed gives bit-identical parameters."""
    rng = np.random.default_rng(seed)
    return UPerNet(backbone_config, model_config, rng)


def texture_receptive_radius(backbone_config, model_config):
    """Input-pixel radius around a texture logit's center that can influence it.

    Walks the (kernel, stride) chain feeding the texture branch: stem conv,
    stem pool, every conv on the first stage's main path, then the branch's
    own 3x3 stack. Radius = (receptive_field - 1) / 2.
    """
    chain = [(3, 2), (3, 2)]  # stem conv, stem max pool
    per_block = [(3, 1), (3, 1)] if backbone_config.block == "basic" else [
        (1, 1),
        (3, 1),
        (1, 1),
    ]
    for _ in range(backbone_config.blocks_per_stage[0]):
        chain.extend(per_block)
    chain.extend([(3, 1)] * model_config.texture_layers)
    chain.append((1, 1))  # classifier
    r, j = 1, 1
    for k, s in chain:
        r += (k - 1) * j
        j *= s
    return (r - 1) // 2


# Named configurations mirroring the ablation rows: a plain top-down pyramid
# read at one level, the same plus pyramid pooling, and the full fused model.
PRESETS = {
    "fpn-16": dict(use_ppm=False, use_fusion=False, head_level=4),
    "fpn-8": dict(use_ppm=False, use_fusion=False, head_level=3),
    "fpn-4": dict(use_ppm=False, use_fusion=False, head_level=2),
    "fpn-ppm": dict(use_ppm=True, use_fusion=False, head_level=2),
    "fpn-ppm-fusion": dict(use_ppm=True, use_fusion=True, head_level=2),
}


def apply_preset(model_config, name):
    try:
        overrides = PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None
    for key, value in overrides.items():
        setattr(model_config, key, value)
    return model_config
