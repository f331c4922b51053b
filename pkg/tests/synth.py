"""Synthetic dataset builders shared by the test modules.

Every builder is deterministic: same arguments, same bytes on disk. Images
are written through imgio so the tests exercise the same decode path as
real data.
"""
import numpy as np

from sceneparse.data import DataSource, LabelSpace, Sample, save_manifest
from sceneparse.imgio import save_image, save_mask


def shapes_dataset(root, n=8, size=32, seed=7):
    """Two-class color/shape dataset: halves, rectangles, diagonal stripes.

    Class 1 is warm (0.75, 0.35, 0.30), class 2 cold (0.25, 0.40, 0.75),
    plus N(0, 0.08) pixel noise. Every pixel is labeled. All samples train.
    """
    root.joinpath("img").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        kind = i % 4
        mask = np.ones((size, size), dtype=np.int64)
        if kind == 0:
            c = rng.integers(size // 4, 3 * size // 4)
            mask[:, c:] = 2
        elif kind == 1:
            r = rng.integers(size // 4, 3 * size // 4)
            mask[r:, :] = 2
        elif kind == 2:
            h = rng.integers(size // 4, 5 * size // 8)
            w = rng.integers(size // 4, 5 * size // 8)
            top = (size - h) // 2
            left = (size - w) // 2
            mask[top:top + h, left:left + w] = 2
        else:
            ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
            mask = 1 + (((ii + jj) // (size // 4)) % 2).astype(np.int64)
        img = np.empty((size, size, 3))
        img[mask == 1] = (0.75, 0.35, 0.30)
        img[mask == 2] = (0.25, 0.40, 0.75)
        img += rng.normal(0.0, 0.08, img.shape)
        img = np.clip(img, 0.0, 1.0)
        save_image(root / "img" / f"{i}.png", img.transpose(2, 0, 1))
        save_mask(root / "img" / f"{i}_o.png", mask.astype(np.uint16))
        samples.append(Sample(image=f"img/{i}.png", object_mask=f"img/{i}_o.png",
                              split="train", source_id="shapes"))
    ls = LabelSpace(scenes=[], objects=["left", "right"], parts=[],
                    part_owner=[], materials=[], textures=[]).validate()
    sources = [DataSource(id="shapes", tasks=("object",), samples=samples, weight=1.0)]
    save_manifest(root / "manifest.json", ls, sources)
    return ls, sources


def scales_dataset(root, dens=(0.07, 0.12), size=48, n=64, n_val=20, seed=23):
    """Multi-scale fixture: 2 px lines + blobs on a dotted background.

    The object class (2 or 3) is decided by the global density of bright
    background dots; the object shapes themselves are identical across
    classes. Thin lines punish coarse output strides, the global density
    cue rewards whole-image context. Last n_val samples are val.
    """
    root.joinpath("img").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    samples = []
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for i in range(n):
        k = i % 2
        cls = 2 + k
        mask = np.ones((size, size), dtype=np.int64)
        obj = np.zeros((size, size), dtype=bool)
        for _ in range(2):
            r = rng.integers(6, 9)
            cy = rng.integers(r, size - r)
            cx = rng.integers(r, size - r)
            obj |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        for _ in range(2):
            if rng.random() < 0.5:
                c = rng.integers(0, size - 2)
                obj[:, c:c + 2] = True
            else:
                rr = rng.integers(0, size - 2)
                obj[rr:rr + 2, :] = True
        mask[obj] = cls
        img = np.empty((size, size, 3))
        img[...] = 0.5
        img[obj] = (0.35, 0.55, 0.35)
        dots = (rng.random((size, size)) < dens[k]) & ~obj
        img[dots] = (0.95, 0.95, 0.95)
        img += rng.normal(0.0, 0.10, img.shape)
        img = np.clip(img, 0.0, 1.0)
        save_image(root / "img" / f"{i}.png", img.transpose(2, 0, 1))
        save_mask(root / "img" / f"{i}_o.png", mask.astype(np.uint16))
        samples.append(Sample(image=f"img/{i}.png", object_mask=f"img/{i}_o.png",
                              split="val" if i >= n - n_val else "train",
                              source_id="scales"))
    ls = LabelSpace(scenes=[], objects=["field", "sparse_mark", "dense_mark"],
                    parts=[], part_owner=[], materials=[], textures=[]).validate()
    sources = [DataSource(id="scales", tasks=("object",), samples=samples, weight=1.0)]
    save_manifest(root / "manifest.json", ls, sources)
    return ls, sources


FULL_LABEL_SPACE = dict(
    scenes=["indoor", "outdoor"],
    objects=["floor", "wall"],
    parts=["baseboard"], part_owner=[2],
    materials=["wood", "brick"],
    textures=["striped", "plain"],
)


def rooms_dataset(root, n_rooms=6, n_tex=4, extra_object_only=0, seed=9,
                  weights=(4.0, 3.0, 2.0)):
    """Heterogeneous fixture: fully annotated rooms, texture crops, and an
    optional object-only source.

    Rooms are 48x48, wall on top, floor below, a baseboard strip inside the
    wall, materials tied to the object class. Texture crops are 40x40 with
    image-level labels only.
    """
    root.joinpath("img").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ls = LabelSpace(**FULL_LABEL_SPACE).validate()
    rooms, texs, objonly = [], [], []
    for i in range(n_rooms):
        im = rng.random((3, 48, 48)).astype(np.float32)
        om = np.ones((48, 48), dtype=np.int64)
        om[:24] = 2
        pm = np.zeros((48, 48), dtype=np.int64)
        pm[20:24] = 1
        mm = np.where(om == 1, 1, 2).astype(np.int64)
        save_image(root / "img" / f"room{i}.png", im)
        save_mask(root / "img" / f"room{i}_o.png", om)
        save_mask(root / "img" / f"room{i}_p.png", pm)
        save_mask(root / "img" / f"room{i}_m.png", mm)
        rooms.append(Sample(image=f"img/room{i}.png", scene=i % 2,
                            object_mask=f"img/room{i}_o.png",
                            part_mask=f"img/room{i}_p.png",
                            material_mask=f"img/room{i}_m.png",
                            split="train" if i < n_rooms - 2 else "val",
                            source_id="rooms"))
    for i in range(n_tex):
        im = rng.random((3, 40, 40)).astype(np.float32)
        save_image(root / "img" / f"tex{i}.png", im)
        texs.append(Sample(image=f"img/tex{i}.png", texture=i % 2,
                           split="train" if i < n_tex - 1 else "val",
                           source_id="tex"))
    for i in range(extra_object_only):
        im = rng.random((3, 40, 40)).astype(np.float32)
        om = np.ones((40, 40), dtype=np.int64)
        om[:, 20:] = 2
        save_image(root / "img" / f"plain{i}.png", im)
        save_mask(root / "img" / f"plain{i}_o.png", om)
        objonly.append(Sample(image=f"img/plain{i}.png",
                              object_mask=f"img/plain{i}_o.png",
                              split="train", source_id="plain"))
    sources = [
        DataSource("rooms", ("scene", "object", "part", "material"), rooms, weights[0]),
        DataSource("tex", ("texture",), texs, weights[1]),
    ]
    if extra_object_only:
        sources.append(DataSource("plain", ("object",), objonly, weights[2]))
    save_manifest(root / "manifest.json", ls, sources)
    return ls, sources


def tiny_backbone(**overrides):
    from sceneparse.backbone import BackboneConfig
    kw = dict(stem_channels=4, stage_channels=(4, 6, 8, 10),
              blocks_per_stage=(1, 1, 1, 1), block="basic")
    kw.update(overrides)
    return BackboneConfig(**kw)


def tiny_model_config(**overrides):
    from sceneparse.model import ModelConfig
    kw = dict(fpn_channels=6, ppm_bins=(1, 2), n_scenes=2, n_objects=2,
              n_parts=1, n_materials=2, n_textures=2,
              texture_layers=1, texture_channels=4)
    kw.update(overrides)
    return ModelConfig(**kw)
