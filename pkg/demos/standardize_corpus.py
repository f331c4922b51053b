"""Clean up a messy multi-source corpus into one training-ready manifest.

Three sources disagree about naming ("brick wall" vs "wall"), carry labels
too rare to train on, and have no balanced train/val assignment. The
standardizer merges synonyms, drops rare concepts, regroups scenes, and
searches for a split whose label distribution matches between train and val.

Run from the repository root:

    python3 demos/standardize_corpus.py
"""
import json
from pathlib import Path

import numpy as np

from sceneparse.data import DataSource, LabelSpace, Sample
from sceneparse.standardize import (
    Corpus, MergeSpec, balanced_split, compute_stats, emit_stats,
    filter_labels, map_scenes, merge_concepts, save_corpus,
)

OUT = Path(__file__).parent / "out" / "standardize_corpus"


def messy_corpus(seed=3):
    rng = np.random.default_rng(seed)
    ls = LabelSpace(
        scenes=["kitchen-indoor", "galley", "backyard"],
        objects=["wall", "brick wall", "sink", "rare-sculpture"],
        parts=["faucet"], part_owner=[3],
        materials=["ceramic", "porcelain"],
        textures=[],
    ).validate()
    sources, masks = [], {}
    for sid, n, wall_label in (("web", 14, 1), ("lab", 10, 2)):
        samples = []
        for i in range(n):
            om = np.zeros((32, 32), dtype=np.int64)
            om[:16] = wall_label                     # same concept, two names
            if rng.random() < 0.8:
                om[20:28, 8:24] = 3                  # sink
            if sid == "web" and i == 0:
                om[30:, 30:] = 4                     # appears once: too rare
            pm = np.zeros((32, 32), dtype=np.int64)
            pm[22:24, 12:20] = 1                     # faucet on the sink
            mm = np.where(om == 3, 1 + (i % 2), 0)
            rel_o, rel_p, rel_m = (f"{sid}/{i}_{c}.png" for c in "opm")
            masks[rel_o], masks[rel_p], masks[rel_m] = om, pm, mm
            samples.append(Sample(image=f"{sid}/{i}.png", scene=i % 3,
                                  object_mask=rel_o, part_mask=rel_p,
                                  material_mask=rel_m, split="train",
                                  source_id=sid))
        sources.append(DataSource(sid, ("scene", "object", "part", "material"),
                                  samples, float(n)))
    return Corpus(label_space=ls, sources=sources, masks=masks, root=str(OUT))


def main():
    corpus = messy_corpus()
    print("raw labels:", corpus.label_space.objects,
          corpus.label_space.materials)

    spec = MergeSpec(aliases={
        "objects": {"brick wall": "wall"},
        "materials": {"porcelain": "ceramic"},
    })
    merged = merge_concepts(corpus, spec)
    print("after merge:", merged.label_space.objects,
          merged.label_space.materials)

    stats = compute_stats(merged)
    print("object image counts:", dict(zip(merged.label_space.objects,
                                           stats.object_images.tolist())))

    filtered = filter_labels(merged, object_min_images=5,
                             object_min_pixels=100, part_min_images=5,
                             material_min_images=5)
    print("after rarity filter:", filtered.label_space.objects)

    mapped = map_scenes(filtered, {"kitchen-indoor": "kitchen",
                                   "galley": "kitchen", "backyard": None})
    print("scenes regrouped to:", mapped.label_space.scenes)

    final, report = balanced_split(mapped, np.random.default_rng(0),
                                   rounds=500)
    print(f"split score {report['initial_score']:.4f} -> "
          f"{report['final_score']:.4f} "
          f"({len(report['trajectory'])} accepted moves)")

    manifest = save_corpus(final, OUT)
    (OUT / "stats.json").write_text(json.dumps(emit_stats(final), indent=2))
    print("wrote", manifest, "and stats.json")


if __name__ == "__main__":
    main()
