"""Residual backbone producing the four-stage feature hierarchy.

The stem contributes a total stride of 4 (stride-2 conv then stride-2 max
pool); each of the four stages then halves resolution except the first, so
the stage outputs c2..c5 sit at down-sampling rates 4, 8, 16, 32. Odd sizes
round up (ceil) thanks to the padded stride arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module, ModuleList

MIN_INPUT_SIDE = 32


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    stage_channels: tuple = (16, 32, 64, 128)
    blocks_per_stage: tuple = (2, 2, 2, 2)
    block: str = "basic"  # "basic" | "bottleneck"

    def validate(self):
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ConfigError("backbone needs exactly four stages")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(f"every stage needs at least one block, got {self.blocks_per_stage}")
        if self.block not in ("basic", "bottleneck"):
            raise ConfigError(f"unknown block kind {self.block!r}")
        if self.stem_channels < 1 or any(c < 1 for c in self.stage_channels):
            raise ConfigError("channel counts must be positive")
        if self.block == "bottleneck" and any(c % 4 for c in self.stage_channels):
            raise ConfigError("bottleneck stage channels must be divisible by 4")
        return self

    @staticmethod
    def resnet50_shaped():
        """Full-scale layout; untrained here (no classification pre-training)."""
        return BackboneConfig(
            stem_channels=64,
            stage_channels=(256, 512, 1024, 2048),
            blocks_per_stage=(3, 4, 6, 3),
            block="bottleneck",
        )


@dataclass
class FeatureHierarchy:
    c2: object
    c3: object
    c4: object
    c5: object

    def as_list(self):
        return [self.c2, self.c3, self.c4, self.c5]


class BasicBlock(Module):
    def __init__(self, in_ch, out_ch, stride, rng):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, pad=1, bias=False)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, pad=1, bias=False)
        self.bn2 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            object.__setattr__(self, "proj", None)

    def forward(self, x):
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return T.relu(T.add(out, skip))


class BottleneckBlock(Module):
    def __init__(self, in_ch, out_ch, stride, rng):
        super().__init__()
        mid = out_ch // 4
        self.conv1 = Conv2d(in_ch, mid, 1, rng, bias=False)
        self.bn1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, mid, 3, rng, stride=stride, pad=1, bias=False)
        self.bn2 = BatchNorm2d(mid)
        self.conv3 = Conv2d(mid, out_ch, 1, rng, bias=False)
        self.bn3 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            object.__setattr__(self, "proj", None)

    def forward(self, x):
        out = T.relu(self.bn1(self.conv1(x)))
        out = T.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return T.relu(T.add(out, skip))


class Backbone(Module):
    def __init__(self, config, rng):
        super().__init__()
        config.validate()
        self.config = config
        block_cls = BasicBlock if config.block == "basic" else BottleneckBlock
        self.stem_conv = Conv2d(3, config.stem_channels, 3, rng, stride=2, pad=1, bias=False)
        self.stem_bn = BatchNorm2d(config.stem_channels)
        self.stages = ModuleList()
        in_ch = config.stem_channels
        for stage_idx, (out_ch, n_blocks) in enumerate(
            zip(config.stage_channels, config.blocks_per_stage)
        ):
            blocks = ModuleList()
            for b in range(n_blocks):
                stride = 2 if (stage_idx > 0 and b == 0) else 1
                blocks.append(block_cls(in_ch, out_ch, stride, rng))
                in_ch = out_ch
            self.stages.append(blocks)

    def forward(self, image):
        if image.data.ndim != 4 or image.data.shape[1] != 3:
            raise ShapeError(f"backbone: need N,3,H,W image, got {image.data.shape}")
        H, W = image.data.shape[2], image.data.shape[3]
        if H < MIN_INPUT_SIDE or W < MIN_INPUT_SIDE:
            raise ShapeError(
                f"backbone: input {H}x{W} smaller than minimum side {MIN_INPUT_SIDE}"
            )
        x = T.relu(self.stem_bn(self.stem_conv(image)))
        x = T.max_pool2d(x, 3, 2, pad=1)
        feats = []
        for stage in self.stages:
            for block in stage:
                x = block(x)
            feats.append(x)
        return FeatureHierarchy(*feats)


def build_backbone(config, seed):
    """Deterministic backbone construction: same seed gives bit-identical parameters."""
    rng = np.random.default_rng(seed)
    return Backbone(config, rng)
