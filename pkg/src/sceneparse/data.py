"""Manifest ingestion, scale jitter, batching, and source sampling.

The manifest is one JSON document:

    {"label_space": {"scenes": [...], "objects": [...],
                     "parts": [{"name": ..., "object": ...}, ...],
                     "materials": [...], "textures": [...]},
     "sources": [{"id": ..., "tasks": [...],
                  "samples": [{"image": ..., "scene"?: int,
                               "object_mask"?: ..., "part_mask"?: ...,
                               "material_mask"?: ..., "texture"?: int,
                               "split": "train"|"val"}, ...]}, ...]}

Index conventions: object and material masks use 0 = unlabeled, so mask value
k >= 1 names objects[k-1] / materials[k-1]. Part masks use 0 = background and
k >= 1 names parts[k-1]. Scene and texture labels are plain 0-based indices
into their tables. Every source supervises a fixed task subset and all of its
samples carry annotations for exactly those tasks.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import IOFailure, ManifestError, ValidationError
from .imgio import load_image, load_mask, resize_image, resize_mask

TASK_NAMES = ("scene", "object", "part", "material", "texture")
# Annotation field on a Sample for each task.
TASK_FIELDS = {
    "scene": "scene",
    "object": "object_mask",
    "part": "part_mask",
    "material": "material_mask",
    "texture": "texture",
}


@dataclass
class LabelSpace:
    scenes: list
    objects: list
    parts: list          # part class names, index i names mask value i+1
    part_owner: list     # 1-based object index owning parts[i]
    materials: list
    textures: list

    @property
    def n_scenes(self):
        return len(self.scenes)

    @property
    def n_objects(self):
        return len(self.objects)

    @property
    def n_parts(self):
        return len(self.parts)

    @property
    def n_materials(self):
        return len(self.materials)

    @property
    def n_textures(self):
        return len(self.textures)

    def validate(self):
        for cat, names in (("scenes", self.scenes), ("objects", self.objects),
                           ("parts", self.parts), ("materials", self.materials),
                           ("textures", self.textures)):
            if len(set(names)) != len(names):
                dup = sorted(n for n in set(names) if names.count(n) > 1)
                raise ManifestError(f"duplicate {cat} class name(s): {dup}")
        if len(self.part_owner) != len(self.parts):
            raise ManifestError("part_owner table length != number of parts")
        for name, owner in zip(self.parts, self.part_owner):
            if not (1 <= owner <= len(self.objects)):
                raise ManifestError(
                    f"part {name!r} references object index {owner} outside 1..{len(self.objects)}"
                )
        return self

    def owner_of_part(self, part_index):
        """1-based owner object index of 1-based part index."""
        if not (1 <= part_index <= len(self.parts)):
            raise ValidationError(f"part index {part_index} outside 1..{len(self.parts)}")
        return self.part_owner[part_index - 1]


@dataclass
class Sample:
    image: str
    scene: int | None = None
    object_mask: str | None = None
    part_mask: str | None = None
    material_mask: str | None = None
    texture: int | None = None
    split: str = "train"
    source_id: str = ""

    def annotation_tasks(self):
        return tuple(t for t in TASK_NAMES if getattr(self, TASK_FIELDS[t]) is not None)


@dataclass
class DataSource:
    id: str
    tasks: tuple
    samples: list
    weight: float = 0.0  # proportional to train-split sample count

    def split_samples(self, split):
        return [s for s in self.samples if s.split == split]


def _parse_label_space(doc):
    try:
        ls = doc["label_space"]
        scenes = list(ls["scenes"])
        objects = list(ls["objects"])
        materials = list(ls["materials"])
        textures = list(ls["textures"])
        raw_parts = list(ls["parts"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"label_space malformed: missing {exc}") from None
    parts, owners = [], []
    for entry in raw_parts:
        try:
            name, obj = entry["name"], entry["object"]
        except (KeyError, TypeError):
            raise ManifestError(f"part entry {entry!r} needs name and object") from None
        if obj not in objects:
            raise ManifestError(f"part {name!r} references unknown object {obj!r}")
        parts.append(name)
        owners.append(objects.index(obj) + 1)
    return LabelSpace(scenes, objects, parts, owners, materials, textures).validate()


def _parse_sample(raw, source_id, label_space):
    known = {"image", "scene", "object_mask", "part_mask", "material_mask",
             "texture", "split"}
    extra = set(raw) - known
    if extra:
        raise ManifestError(f"sample {raw.get('image')!r}: unknown field(s) {sorted(extra)}")
    if "image" not in raw:
        raise ManifestError(f"sample in source {source_id!r} missing image path")
    split = raw.get("split", "train")
    if split not in ("train", "val"):
        raise ManifestError(f"sample {raw['image']!r}: split must be train|val, got {split!r}")
    s = Sample(
        image=raw["image"],
        scene=raw.get("scene"),
        object_mask=raw.get("object_mask"),
        part_mask=raw.get("part_mask"),
        material_mask=raw.get("material_mask"),
        texture=raw.get("texture"),
        split=split,
        source_id=source_id,
    )
    if s.scene is not None and not (0 <= s.scene < label_space.n_scenes):
        raise ManifestError(
            f"sample {s.image!r}: scene label {s.scene} outside 0..{label_space.n_scenes - 1}"
        )
    if s.texture is not None and not (0 <= s.texture < label_space.n_textures):
        raise ManifestError(
            f"sample {s.image!r}: texture label {s.texture} outside 0..{label_space.n_textures - 1}"
        )
    if not s.annotation_tasks():
        raise ManifestError(f"sample {s.image!r} carries no annotation")
    return s


def load_manifest(path, check_files=True):
    """Parse and validate a manifest; returns (LabelSpace, [DataSource])."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise IOFailure(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None

    label_space = _parse_label_space(doc)
    root = os.path.dirname(os.path.abspath(path))
    sources = []
    seen_ids = set()
    for raw_src in doc.get("sources", []):
        sid = raw_src.get("id")
        if not sid or sid in seen_ids:
            raise ManifestError(f"source id {sid!r} missing or duplicate")
        seen_ids.add(sid)
        tasks = tuple(raw_src.get("tasks", ()))
        unknown = set(tasks) - set(TASK_NAMES)
        if unknown or not tasks:
            raise ManifestError(
                f"source {sid!r}: tasks must be a non-empty subset of {TASK_NAMES}, got {tasks}"
            )
        samples = [_parse_sample(r, sid, label_space) for r in raw_src.get("samples", [])]
        for s in samples:
            have = set(s.annotation_tasks())
            if have != set(tasks):
                raise ManifestError(
                    f"sample {s.image!r} annotations {sorted(have)} do not match "
                    f"source {sid!r} profile {sorted(tasks)}"
                )
        src = DataSource(id=sid, tasks=tasks, samples=samples)
        src.weight = float(len(src.split_samples("train")))
        sources.append(src)
    if not sources:
        raise ManifestError(f"manifest {path} declares no sources")

    if check_files:
        for src in sources:
            for s in src.samples:
                for attr in ("image", "object_mask", "part_mask", "material_mask"):
                    rel = getattr(s, attr)
                    if rel is None:
                        continue
                    full = os.path.join(root, rel)
                    if not os.path.isfile(full):
                        raise ManifestError(f"source {src.id!r}: missing file {full}")
    return label_space, sources


def manifest_to_dict(label_space, sources):
    return {
        "label_space": {
            "scenes": list(label_space.scenes),
            "objects": list(label_space.objects),
            "parts": [
                {"name": p, "object": label_space.objects[o - 1]}
                for p, o in zip(label_space.parts, label_space.part_owner)
            ],
            "materials": list(label_space.materials),
            "textures": list(label_space.textures),
        },
        "sources": [
            {
                "id": src.id,
                "tasks": list(src.tasks),
                "samples": [
                    {
                        k: v
                        for k, v in (
                            ("image", s.image),
                            ("scene", s.scene),
                            ("object_mask", s.object_mask),
                            ("part_mask", s.part_mask),
                            ("material_mask", s.material_mask),
                            ("texture", s.texture),
                            ("split", s.split),
                        )
                        if v is not None
                    }
                    for s in src.samples
                ],
            }
            for src in sources
        ],
    }


def save_manifest(path, label_space, sources):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(label_space, sources), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Source sampling
# ---------------------------------------------------------------------------


def sample_source(rng, sources):
    """Categorical draw over sources with probability proportional to weight."""
    if not sources:
        raise ValidationError("sample_source: empty source list")
    weights = np.array([s.weight for s in sources], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValidationError("sample_source: no source has positive weight")
    idx = rng.choice(len(sources), p=weights / total)
    return sources[idx].id


# ---------------------------------------------------------------------------
# Scale jitter and batching
# ---------------------------------------------------------------------------


@dataclass
class ResizePolicy:
    train_scales: tuple = (300, 375, 450, 525, 600)
    eval_scale: int = 450
    max_long_side: int = 1200
    texture_size: int = 64


MASK_KEYS = ("object_mask", "part_mask", "material_mask")


def load_sample_arrays(sample, root):
    """Decode a sample's image and masks; masks must match the image size."""
    arrays = {"image": load_image(os.path.join(root, sample.image))}
    H, W = arrays["image"].shape[1:]
    for key in MASK_KEYS:
        rel = getattr(sample, key)
        if rel is None:
            continue
        mask = load_mask(os.path.join(root, rel))
        if mask.shape != (H, W):
            raise ManifestError(
                f"mask {rel!r} shape {mask.shape} does not match image {(H, W)}"
            )
        arrays[key] = mask
    if sample.scene is not None:
        arrays["scene"] = sample.scene
    if sample.texture is not None:
        arrays["texture"] = sample.texture
    return arrays


def scale_jitter(arrays, rng, mode, policy=None, texture_mode=False):
    """Resize a decoded sample: image bilinear, masks nearest-neighbor.

    Train mode draws the shorter-side target from policy.train_scales; eval
    uses policy.eval_scale. If the longer side would exceed
    policy.max_long_side, the whole sample is rescaled so the longer side
    lands exactly on the cap. Texture-task samples are forced to a fixed
    square instead (their labels are image-level, aspect does not matter).
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"scale_jitter: mode must be train|eval, got {mode!r}")
    policy = policy or ResizePolicy()
    H, W = arrays["image"].shape[1:]
    if texture_mode:
        out_h = out_w = policy.texture_size
    else:
        target = int(rng.choice(policy.train_scales)) if mode == "train" else policy.eval_scale
        scale = target / min(H, W)
        if scale * max(H, W) > policy.max_long_side:
            scale = policy.max_long_side / max(H, W)
        out_h = max(1, round(H * scale))
        out_w = max(1, round(W * scale))
    out = dict(arrays)
    if (out_h, out_w) != (H, W):
        out["image"] = resize_image(arrays["image"], out_h, out_w)
        for key in MASK_KEYS:
            if key in arrays:
                out[key] = resize_mask(arrays[key], out_h, out_w)
    return out


@dataclass
class Batch:
    source_id: str
    tasks: tuple
    images: np.ndarray                  # (N, 3, H, W) float32
    object_mask: np.ndarray | None = None
    part_mask: np.ndarray | None = None
    material_mask: np.ndarray | None = None
    scene: np.ndarray | None = None     # (N,) int64
    texture: np.ndarray | None = None   # (N,) int64

    @property
    def size(self):
        return self.images.shape[0]


def make_batch(sample_arrays, source_id, tasks):
    """Stack decoded samples from one source, padding to the largest H, W.

    Image padding is 0; mask padding is 0 too, which the losses already treat
    as unlabeled, so padded pixels never contribute.
    """
    if not sample_arrays:
        raise ValidationError("make_batch: empty sample list")
    sids = {a.get("source_id", source_id) for a in sample_arrays}
    if sids != {source_id}:
        raise ValidationError(f"make_batch: mixed sources {sorted(sids)}")
    H = max(a["image"].shape[1] for a in sample_arrays)
    W = max(a["image"].shape[2] for a in sample_arrays)
    N = len(sample_arrays)
    images = np.zeros((N, 3, H, W), dtype=np.float32)
    batch = Batch(source_id=source_id, tasks=tuple(tasks), images=images)
    for key in MASK_KEYS:
        if key in sample_arrays[0]:
            setattr(batch, key, np.zeros((N, H, W), dtype=np.int64))
    for n, arrays in enumerate(sample_arrays):
        h, w = arrays["image"].shape[1:]
        images[n, :, :h, :w] = arrays["image"]
        for key in MASK_KEYS:
            if key in arrays:
                getattr(batch, key)[n, :h, :w] = arrays[key]
    if "scene" in sample_arrays[0]:
        batch.scene = np.array([a["scene"] for a in sample_arrays], dtype=np.int64)
    if "texture" in sample_arrays[0]:
        batch.texture = np.array([a["texture"] for a in sample_arrays], dtype=np.int64)
    return batch


# ---------------------------------------------------------------------------
# Deterministic prefetching
# ---------------------------------------------------------------------------


def worker_count(env=os.environ):
    """Prefetch workers from SCENEPARSE_WORKERS; 0 (the default) is synchronous."""
    raw = env.get("SCENEPARSE_WORKERS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"SCENEPARSE_WORKERS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError(f"SCENEPARSE_WORKERS must be >= 0, got {n}")
    return n


def prefetch_map(fn, jobs, workers):
    """Yield fn(job) in job order; workers only overlap the computation.

    All randomness must already be bound inside each job (the coordinator
    draws it beforehand), so the output sequence is identical for any worker
    count.
    """
    if workers <= 0:
        for job in jobs:
            yield fn(job)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        window = deque()
        jobs_iter = iter(jobs)
        try:
            for _ in range(workers * 2):
                window.append(pool.submit(fn, next(jobs_iter)))
        except StopIteration:
            pass
        while window:
            yield window.popleft().result()
            try:
                window.append(pool.submit(fn, next(jobs_iter)))
            except StopIteration:
                continue


class SampleCache:
    """Decoded-sample cache; desk-scale corpora fit in memory comfortably."""

    def __init__(self, root):
        self.root = root
        self._store = {}

    def get(self, sample):
        key = (sample.source_id, sample.image)
        hit = self._store.get(key)
        if hit is None:
            hit = load_sample_arrays(sample, self.root)
            self._store[key] = hit
        return hit
