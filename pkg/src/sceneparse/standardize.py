"""Corpus standardization: merge aliased concepts across sources, filter
rare labels, remap scene vocabularies, and balance the train/val split.

All operations are functional: they take a Corpus (manifest plus decoded
masks held in memory) and return a new one, re-indexing label spaces and
rewriting mask values as needed. Untouched mask arrays are shared, not
copied. Sources whose samples end up with different annotation profiles
(scene drops can do this) are partitioned so every output source stays
homogeneous.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import shutil
from dataclasses import dataclass, field

import numpy as np

from .data import (
    DataSource,
    LabelSpace,
    Sample,
    load_manifest,
    save_manifest,
)
from .errors import ManifestError, ValidationError
from .imgio import load_mask, save_mask

MASK_CATEGORY = {"objects": "object_mask", "parts": "part_mask", "materials": "material_mask"}
PIXEL_CATEGORIES = ("objects", "parts", "materials")
IMAGE_CATEGORIES = ("scenes", "textures")
ALIAS_CATEGORIES = ("objects", "parts", "materials", "textures")


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    """A manifest with every mask decoded; the unit the standardizer works on."""

    label_space: LabelSpace
    sources: list
    masks: dict          # relative mask path -> int ndarray
    root: str = ""

    def samples(self):
        for source in self.sources:
            for sample in source.samples:
                yield source, sample

    def n_images(self):
        return sum(len(s.samples) for s in self.sources)

    def mask_for(self, sample, field_name):
        rel = getattr(sample, field_name)
        if rel is None:
            return None
        return self.masks[rel]


def load_corpus(manifest_path, check_files=True):
    label_space, sources = load_manifest(manifest_path, check_files=check_files)
    root = os.path.dirname(os.path.abspath(manifest_path))
    masks = {}
    for source in sources:
        for sample in source.samples:
            for field_name in MASK_CATEGORY.values():
                rel = getattr(sample, field_name)
                if rel is not None:
                    masks[rel] = load_mask(os.path.join(root, rel))
    return Corpus(label_space=label_space, sources=sources, masks=masks, root=root)


def _regrouped_sources(pairs):
    """Split each (source, samples) pair into homogeneous-profile sources."""
    out = []
    for source, samples in pairs:
        groups = {}
        for s in samples:
            groups.setdefault(s.annotation_tasks(), []).append(s)
        if len(groups) == 1:
            profile = next(iter(groups))
            out.append(DataSource(id=source.id, tasks=profile, samples=samples,
                                  weight=sum(1 for s in samples if s.split == "train")))
            continue
        for profile in sorted(groups, key=lambda p: (-len(p), p)):
            subset = groups[profile]
            missing = sorted(set(source.tasks) - set(profile))
            sid = source.id if profile == tuple(source.tasks) else (
                source.id + "#no-" + "-".join(missing) if missing else source.id + "#alt"
            )
            for s in subset:
                s.source_id = sid
            out.append(DataSource(id=sid, tasks=profile, samples=subset,
                                  weight=sum(1 for s in subset if s.split == "train")))
    return out


def save_corpus(corpus, out_dir, manifest_name="manifest.json"):
    """Write a self-contained copy: images copied, masks re-encoded, manifest.

    Output paths are images/<source>/<index>.<ext> and
    masks/<source>/<index>_<kind>.png, in corpus order, so repeated saves of
    the same corpus are byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    new_sources = []
    for source in corpus.sources:
        img_dir = os.path.join(out_dir, "images", source.id)
        msk_dir = os.path.join(out_dir, "masks", source.id)
        os.makedirs(img_dir, exist_ok=True)
        new_samples = []
        for idx, sample in enumerate(source.samples):
            ext = os.path.splitext(sample.image)[1] or ".png"
            img_rel = f"images/{source.id}/{idx:05d}{ext}"
            shutil.copyfile(os.path.join(corpus.root, sample.image),
                            os.path.join(out_dir, img_rel))
            fields = {"image": img_rel}
            for cat, field_name in MASK_CATEGORY.items():
                mask = corpus.mask_for(sample, field_name)
                if mask is None:
                    continue
                os.makedirs(msk_dir, exist_ok=True)
                kind = field_name.replace("_mask", "")
                rel = f"masks/{source.id}/{idx:05d}_{kind}.png"
                save_mask(os.path.join(out_dir, rel), mask)
                fields[field_name] = rel
            new_samples.append(dataclasses.replace(sample, **fields))
        new_sources.append(dataclasses.replace(source, samples=new_samples))
    save_manifest(os.path.join(out_dir, manifest_name), corpus.label_space, new_sources)
    return os.path.join(out_dir, manifest_name)


def _clone_shell(corpus):
    """Copy sources and samples (masks shared) so edits never leak back."""
    new_sources = []
    for source in corpus.sources:
        new_samples = [dataclasses.replace(s) for s in source.samples]
        new_sources.append(dataclasses.replace(source, samples=new_samples))
    return Corpus(label_space=dataclasses.replace(corpus.label_space),
                  sources=new_sources, masks=dict(corpus.masks), root=corpus.root)


# ---------------------------------------------------------------------------
# Concept merging
# ---------------------------------------------------------------------------


@dataclass
class MergeSpec:
    """Alias maps per category plus a scene rename/drop map.

    aliases: {"objects"|"parts"|"materials"|"textures": {raw name: canonical}}
    scenes: {raw scene name: canonical name or None to drop}
    """

    aliases: dict = field(default_factory=dict)
    scenes: dict = field(default_factory=dict)

    @staticmethod
    def from_json(path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ManifestError(f"cannot read merge spec {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ManifestError(f"merge spec {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ManifestError("merge spec must be a JSON object")
        aliases = doc.get("aliases", {})
        for cat in aliases:
            if cat not in ALIAS_CATEGORIES:
                raise ManifestError(f"merge spec aliases: unknown category {cat!r}")
        return MergeSpec(aliases=aliases, scenes=doc.get("scenes", {}))

    def validate(self, label_space):
        for cat, table in self.aliases.items():
            if cat not in ALIAS_CATEGORIES:
                raise ManifestError(f"unknown alias category {cat!r}")
            names = set(getattr(label_space, cat))
            for raw, canonical in table.items():
                if raw not in names:
                    raise ManifestError(f"alias for undeclared {cat} label {raw!r}")
                if canonical in table:
                    raise ManifestError(
                        f"alias chain: {cat} target {canonical!r} is itself aliased"
                    )
        return self


def _merge_names(names, alias):
    """New name list + index remap (index 0 reserved for pixel categories)."""
    canonical = [alias.get(n, n) for n in names]
    new_names = []
    where = {}
    remap = np.zeros(len(names) + 1, dtype=np.int64)
    for old, name in enumerate(canonical, start=1):
        j = where.get(name)
        if j is None:
            new_names.append(name)
            j = len(new_names)
            where[name] = j
        remap[old] = j
    return new_names, remap


def _remap_masks(corpus, field_name, remap):
    done = set()
    for _, sample in corpus.samples():
        rel = getattr(sample, field_name)
        if rel is None or rel in done:
            continue
        done.add(rel)
        corpus.masks[rel] = remap[corpus.masks[rel]].astype(np.int32)


def merge_concepts(corpus, spec):
    """Fold aliased labels together; one canonical index per canonical name."""
    spec.validate(corpus.label_space)
    out = _clone_shell(corpus)
    ls = out.label_space

    for cat in ("objects", "materials"):
        table = spec.aliases.get(cat, {})
        if not table:
            continue
        new_names, remap = _merge_names(getattr(ls, cat), table)
        setattr(ls, cat, new_names)
        if cat == "objects":
            ls.part_owner = [int(remap[o]) for o in ls.part_owner]
        _remap_masks(out, MASK_CATEGORY[cat], remap)

    table = spec.aliases.get("parts", {})
    if table:
        new_names, remap = _merge_names(ls.parts, table)
        owners = {}
        for old, owner in enumerate(ls.part_owner, start=1):
            new = int(remap[old])
            if owners.setdefault(new, owner) != owner:
                raise ManifestError(
                    f"cannot merge parts with different owner objects into "
                    f"{new_names[new - 1]!r}"
                )
        ls.parts = new_names
        ls.part_owner = [owners[i] for i in range(1, len(new_names) + 1)]
        _remap_masks(out, "part_mask", remap)

    table = spec.aliases.get("textures", {})
    if table:
        new_names, remap = _merge_names(ls.textures, table)
        ls.textures = new_names
        for _, sample in out.samples():
            if sample.texture is not None:
                sample.texture = int(remap[sample.texture + 1]) - 1

    ls.validate()
    return out


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    n_images: int
    object_images: np.ndarray
    object_pixels: np.ndarray
    part_images: np.ndarray
    part_pixels: np.ndarray
    material_images: np.ndarray
    material_pixels: np.ndarray
    scene_images: np.ndarray
    texture_images: np.ndarray
    split_pixels: dict   # split -> {category: pixel/count vector}

    def category_counts(self, category):
        return {
            "objects": (self.object_images, self.object_pixels),
            "parts": (self.part_images, self.part_pixels),
            "materials": (self.material_images, self.material_pixels),
            "scenes": (self.scene_images, self.scene_images),
            "textures": (self.texture_images, self.texture_images),
        }[category]


def _per_image_counts(corpus, source, sample):
    """Label-count vectors for one sample, one per category."""
    ls = corpus.label_space
    out = {}
    for cat, field_name in MASK_CATEGORY.items():
        n = len(getattr(ls, cat))
        mask = corpus.mask_for(sample, field_name)
        if mask is None or n == 0:
            out[cat] = np.zeros(n, dtype=np.int64)
        else:
            out[cat] = np.bincount(mask.ravel(), minlength=n + 1)[1:].astype(np.int64)
    for cat, field_name, n in (("scenes", "scene", ls.n_scenes),
                               ("textures", "texture", ls.n_textures)):
        vec = np.zeros(n, dtype=np.int64)
        value = getattr(sample, field_name)
        if value is not None:
            vec[value] = 1
        out[cat] = vec
    return out


def compute_stats(corpus):
    ls = corpus.label_space
    images = {cat: np.zeros(len(getattr(ls, cat)), dtype=np.int64)
              for cat in PIXEL_CATEGORIES + IMAGE_CATEGORIES}
    pixels = {cat: np.zeros(len(getattr(ls, cat)), dtype=np.int64)
              for cat in PIXEL_CATEGORIES}
    split_pixels = {}
    for source, sample in corpus.samples():
        counts = _per_image_counts(corpus, source, sample)
        per_split = split_pixels.setdefault(sample.split, {
            cat: np.zeros(len(getattr(ls, cat)), dtype=np.int64)
            for cat in PIXEL_CATEGORIES + IMAGE_CATEGORIES
        })
        for cat in PIXEL_CATEGORIES:
            images[cat] += counts[cat] > 0
            pixels[cat] += counts[cat]
            per_split[cat] += counts[cat]
        for cat in IMAGE_CATEGORIES:
            images[cat] += counts[cat]
            per_split[cat] += counts[cat]
    return CorpusStats(
        n_images=corpus.n_images(),
        object_images=images["objects"], object_pixels=pixels["objects"],
        part_images=images["parts"], part_pixels=pixels["parts"],
        material_images=images["materials"], material_pixels=pixels["materials"],
        scene_images=images["scenes"], texture_images=images["textures"],
        split_pixels=split_pixels,
    )


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


def _keep_remap(keep):
    """Boolean keep vector (1-based classes) -> remap array, dropped -> 0."""
    remap = np.zeros(len(keep) + 1, dtype=np.int64)
    nxt = 0
    for i, k in enumerate(keep, start=1):
        if k:
            nxt += 1
            remap[i] = nxt
    return remap


def filter_labels(corpus, stats=None, *, object_min_images=50,
                  object_min_pixels=50_000, part_min_images=20,
                  material_min_images=50):
    """Drop rare labels; their pixels become unlabeled.

    Objects need both enough images and enough pixels; parts and materials
    need enough images. Boundary counts (exactly at a threshold) are kept.
    Parts of a dropped object are dropped with it, whatever their own counts.
    """
    if stats is None:
        stats = compute_stats(corpus)
    out = _clone_shell(corpus)
    ls = out.label_space

    keep_obj = (stats.object_images >= object_min_images) & \
               (stats.object_pixels >= object_min_pixels)
    obj_remap = _keep_remap(keep_obj)
    owner_kept = np.array([bool(obj_remap[o]) for o in ls.part_owner])
    keep_part = (stats.part_images >= part_min_images) & owner_kept
    part_remap = _keep_remap(keep_part)
    keep_mat = stats.material_images >= material_min_images
    mat_remap = _keep_remap(keep_mat)

    ls.objects = [n for n, k in zip(ls.objects, keep_obj) if k]
    new_owner = [int(obj_remap[o]) for o, k in zip(ls.part_owner, keep_part) if k]
    ls.parts = [n for n, k in zip(ls.parts, keep_part) if k]
    ls.part_owner = new_owner
    ls.materials = [n for n, k in zip(ls.materials, keep_mat) if k]

    _remap_masks(out, "object_mask", obj_remap)
    _remap_masks(out, "part_mask", part_remap)
    _remap_masks(out, "material_mask", mat_remap)
    ls.validate()
    return out


def drop_labels(corpus, drops):
    """Remove explicitly listed labels ({category: [names]}); same cascade
    rules as frequency filtering, plus scene/texture support."""
    out = _clone_shell(corpus)
    ls = out.label_space
    for cat, names in drops.items():
        if cat not in PIXEL_CATEGORIES + IMAGE_CATEGORIES:
            raise ManifestError(f"drop list: unknown category {cat!r}")
        have = getattr(ls, cat)
        missing = sorted(set(names) - set(have))
        if missing:
            raise ManifestError(f"drop list names undeclared {cat} label(s) {missing}")

    def kept(cat):
        names = set(drops.get(cat, []))
        return np.array([n not in names for n in getattr(ls, cat)], dtype=bool)

    keep_obj = kept("objects")
    obj_remap = _keep_remap(keep_obj)
    owner_kept = np.array([bool(obj_remap[o]) for o in ls.part_owner]) \
        if ls.parts else np.zeros(0, dtype=bool)
    keep_part = kept("parts") & owner_kept
    part_remap = _keep_remap(keep_part)
    keep_mat = kept("materials")
    mat_remap = _keep_remap(keep_mat)

    ls.objects = [n for n, k in zip(ls.objects, keep_obj) if k]
    ls.part_owner = [int(obj_remap[o]) for o, k in zip(ls.part_owner, keep_part) if k]
    ls.parts = [n for n, k in zip(ls.parts, keep_part) if k]
    ls.materials = [n for n, k in zip(ls.materials, keep_mat) if k]
    _remap_masks(out, "object_mask", obj_remap)
    _remap_masks(out, "part_mask", part_remap)
    _remap_masks(out, "material_mask", mat_remap)

    for cat, field_name in (("scenes", "scene"), ("textures", "texture")):
        names = set(drops.get(cat, []))
        if not names:
            continue
        keep = [n not in names for n in getattr(ls, cat)]
        remap = {}
        nxt = 0
        for i, k in enumerate(keep):
            remap[i] = nxt if k else None
            nxt += k
        setattr(ls, cat, [n for n, k in zip(getattr(ls, cat), keep) if k])
        for _, sample in out.samples():
            value = getattr(sample, field_name)
            if value is not None:
                setattr(sample, field_name, remap[value])

    ls.validate()
    out.sources = _regrouped_sources([(s, s.samples) for s in out.sources])
    return out


# ---------------------------------------------------------------------------
# Scene mapping
# ---------------------------------------------------------------------------


def map_scenes(corpus, scene_map):
    """Rename scene labels through the map; None targets drop the scene
    annotation from affected samples (their pixel annotations survive)."""
    out = _clone_shell(corpus)
    ls = out.label_space
    unmapped = sorted(set(ls.scenes) - set(scene_map))
    if unmapped:
        raise ManifestError(f"scene map does not cover label(s) {unmapped}")

    new_names = []
    where = {}
    remap = {}
    for i, name in enumerate(ls.scenes):
        target = scene_map[name]
        if target is None:
            remap[i] = None
            continue
        j = where.get(target)
        if j is None:
            new_names.append(target)
            j = len(new_names) - 1
            where[target] = j
        remap[i] = j
    ls.scenes = new_names

    for _, sample in out.samples():
        if sample.scene is not None:
            sample.scene = remap[sample.scene]
    out.sources = _regrouped_sources([(s, s.samples) for s in out.sources])
    return out


# ---------------------------------------------------------------------------
# Balanced split
# ---------------------------------------------------------------------------


def _image_vectors(corpus):
    """One concatenated label-count vector per sample, all categories."""
    order = [(source, sample) for source, sample in corpus.samples()]
    vectors = np.zeros((len(order), _vector_width(corpus.label_space)), dtype=np.float64)
    for i, (source, sample) in enumerate(order):
        counts = _per_image_counts(corpus, source, sample)
        vectors[i] = np.concatenate([counts[cat] for cat in
                                     PIXEL_CATEGORIES + IMAGE_CATEGORIES])
    return order, vectors


def _vector_width(ls):
    return ls.n_objects + ls.n_parts + ls.n_materials + ls.n_scenes + ls.n_textures


def split_score(val_vector, total_vector, val_fraction):
    """Sum over labels of |val share - target fraction|; absent labels skip."""
    present = total_vector > 0
    if not present.any():
        return 0.0
    share = val_vector[present] / total_vector[present]
    return float(np.abs(share - val_fraction).sum())


def balanced_split(corpus, rng, val_fraction=0.10, rounds=None):
    """Random val draw, then greedy train/val swaps that strictly lower the
    per-label imbalance score. Sample membership never changes, only splits.

    Returns (corpus, report) where report carries the score trajectory: one
    entry per round, non-increasing by construction.
    """
    out = _clone_shell(corpus)
    order, vectors = _image_vectors(out)
    n = len(order)
    if n < 2:
        raise ValidationError(f"balanced split needs at least 2 samples, got {n}")
    if rounds is None:
        rounds = 10 * n
    total = vectors.sum(axis=0)
    n_val = max(1, round(n * val_fraction))
    perm = rng.permutation(n)
    val_idx = list(perm[:n_val])
    train_idx = list(perm[n_val:])
    val_vec = vectors[val_idx].sum(axis=0)

    score = split_score(val_vec, total, val_fraction)
    initial = score
    trajectory = []
    swaps = 0
    for _ in range(rounds):
        ti = int(rng.integers(len(train_idx)))
        vi = int(rng.integers(len(val_idx)))
        candidate = val_vec - vectors[val_idx[vi]] + vectors[train_idx[ti]]
        new_score = split_score(candidate, total, val_fraction)
        if new_score < score:
            train_idx[ti], val_idx[vi] = val_idx[vi], train_idx[ti]
            val_vec = candidate
            score = new_score
            swaps += 1
        trajectory.append(score)

    val_set = set(val_idx)
    for i, (_, sample) in enumerate(order):
        sample.split = "val" if i in val_set else "train"
    for source in out.sources:
        source.weight = float(len(source.split_samples("train")))
    report = {"initial_score": initial, "final_score": score,
              "swaps": swaps, "rounds": rounds, "trajectory": trajectory,
              "val_count": n_val}
    return out, report


def enumerate_split_optimum(corpus, val_fraction=0.10):
    """Exhaustive minimum over all splits with the same val count. Exponential;
    fixture-sized corpora only."""
    import itertools

    _, vectors = _image_vectors(corpus)
    n = len(vectors)
    total = vectors.sum(axis=0)
    n_val = max(1, round(n * val_fraction))
    best = None
    for combo in itertools.combinations(range(n), n_val):
        s = split_score(vectors[list(combo)].sum(axis=0), total, val_fraction)
        if best is None or s < best:
            best = s
    return best


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def emit_stats(corpus, stats=None):
    """JSON-ready frequency report: per-category tables sorted by frequency,
    parts grouped under their owner objects, per-split pixel totals."""
    if stats is None:
        stats = compute_stats(corpus)
    ls = corpus.label_space

    def table(names, images, pixels, with_pixels=True):
        rows = []
        for i, name in enumerate(names):
            row = {"name": name, "images": int(images[i])}
            if with_pixels:
                row["pixels"] = int(pixels[i])
            rows.append(row)
        key = (lambda r: (-r["pixels"], r["name"])) if with_pixels else \
              (lambda r: (-r["images"], r["name"]))
        return sorted(rows, key=key)

    parts_rows = []
    for i, name in enumerate(ls.parts):
        parts_rows.append({
            "name": name,
            "owner": ls.objects[ls.part_owner[i] - 1],
            "images": int(stats.part_images[i]),
            "pixels": int(stats.part_pixels[i]),
        })
    parts_rows.sort(key=lambda r: (r["owner"], -r["pixels"], r["name"]))

    splits = {}
    for split in sorted(stats.split_pixels):
        vecs = stats.split_pixels[split]
        splits[split] = {
            cat: {name: int(v) for name, v in zip(getattr(ls, cat), vecs[cat])}
            for cat in PIXEL_CATEGORIES + IMAGE_CATEGORIES
        }

    return {
        "images": stats.n_images,
        "objects": table(ls.objects, stats.object_images, stats.object_pixels),
        "parts": parts_rows,
        "materials": table(ls.materials, stats.material_images, stats.material_pixels),
        "scenes": table(ls.scenes, stats.scene_images, None, with_pixels=False),
        "textures": table(ls.textures, stats.texture_images, None, with_pixels=False),
        "splits": splits,
    }


def write_stats(report, out_dir):
    """stats.json plus one frequency CSV per category."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "stats.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    tables = {
        "objects": ("name", "images", "pixels"),
        "parts": ("owner", "name", "images", "pixels"),
        "materials": ("name", "images", "pixels"),
        "scenes": ("name", "images"),
        "textures": ("name", "images"),
    }
    written = [os.path.join(out_dir, "stats.json")]
    for cat, cols in tables.items():
        path = os.path.join(out_dir, f"{cat}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in report[cat]:
                writer.writerow([row[c] for c in cols])
        written.append(path)
    return written


def standardize(corpus, merge_spec=None, drops=None, rng=None,
                val_fraction=0.10, rounds=None, thresholds=None):
    """Whole pipeline: merge, map scenes, drop, filter, balance the split.

    thresholds: optional dict overriding the filter keyword arguments.
    Returns (corpus, report) with the split report and final stats included.
    """
    if merge_spec is not None:
        corpus = merge_concepts(corpus, merge_spec)
        if merge_spec.scenes:
            corpus = map_scenes(corpus, merge_spec.scenes)
    if drops:
        corpus = drop_labels(corpus, drops)
    corpus = filter_labels(corpus, **(thresholds or {}))
    split_report = None
    if rng is not None:
        corpus, split_report = balanced_split(corpus, rng, val_fraction, rounds)
    return corpus, {"split": split_report, "stats": emit_stats(corpus)}
