"""Concept merging, rarity filtering, scene mapping, balanced splitting."""
import json

import numpy as np
import pytest

from sceneparse.data import DataSource, LabelSpace, Sample, save_manifest
from sceneparse.errors import ManifestError
from sceneparse.imgio import save_image, save_mask
from sceneparse.standardize import (
    Corpus, MergeSpec, balanced_split, compute_stats, drop_labels, emit_stats,
    enumerate_split_optimum, filter_labels, load_corpus, map_scenes,
    merge_concepts, save_corpus, standardize,
)


def corpus_from_arrays(ls, rows):
    """rows: (source_id, tasks, [ {field: array-or-int} ])"""
    sources, masks = [], {}
    for sid, tasks, items in rows:
        samples = []
        for i, item in enumerate(items):
            fields = {"image": f"{sid}/im{i}.png", "source_id": sid,
                      "split": item.get("split", "train")}
            for f in ("object_mask", "part_mask", "material_mask"):
                if f in item:
                    rel = f"{sid}/{f[:3]}{i}.png"
                    masks[rel] = np.asarray(item[f], dtype=np.int32)
                    fields[f] = rel
            for f in ("scene", "texture"):
                if f in item:
                    fields[f] = item[f]
            samples.append(Sample(**fields))
        sources.append(DataSource(id=sid, tasks=tuple(tasks), samples=samples,
                                  weight=max(1, sum(1 for s in samples
                                                    if s.split == "train"))))
    return Corpus(label_space=ls, sources=sources, masks=masks,
                  root="/nonexistent")


M1 = np.array([[1, 1], [0, 2]])
M2 = np.array([[2, 2], [2, 0]])
MAT = np.array([[1, 2], [0, 0]])


@pytest.fixture()
def alias_corpus():
    ls = LabelSpace(scenes=["street"], objects=["wall", "brick wall"], parts=[],
                    part_owner=[], materials=["clear plastic", "opaque plastic"],
                    textures=[]).validate()
    return corpus_from_arrays(ls, [
        ("a", ("object", "material"), [{"object_mask": M1, "material_mask": MAT}]),
        ("b", ("object",), [{"object_mask": M2}]),
    ])


def test_merge_folds_aliases_and_leaves_input_intact(alias_corpus):
    spec = MergeSpec(aliases={"objects": {"brick wall": "wall"},
                              "materials": {"clear plastic": "plastic",
                                            "opaque plastic": "plastic"}})
    merged = merge_concepts(alias_corpus, spec)
    assert merged.label_space.objects == ["wall"]
    assert merged.label_space.materials == ["plastic"]
    st = compute_stats(merged)
    assert st.object_pixels.tolist() == [6]          # 3 px per source
    assert st.material_pixels.tolist() == [2]
    assert merged.masks["a/obj0.png"].tolist() == [[1, 1], [0, 1]]
    assert alias_corpus.label_space.objects == ["wall", "brick wall"]
    assert alias_corpus.masks["a/obj0.png"].tolist() == [[1, 1], [0, 2]]


def test_merge_empty_spec_is_identity(alias_corpus):
    same = merge_concepts(alias_corpus, MergeSpec())
    assert same.label_space.objects == alias_corpus.label_space.objects
    assert all(np.array_equal(same.masks[k], alias_corpus.masks[k])
               for k in alias_corpus.masks)


def test_merge_rejects_undeclared_and_chained_aliases(alias_corpus):
    with pytest.raises(ManifestError, match="undeclared"):
        merge_concepts(alias_corpus,
                       MergeSpec(aliases={"objects": {"door": "wall"}}))
    with pytest.raises(ManifestError, match="chain"):
        merge_concepts(alias_corpus,
                       MergeSpec(aliases={"objects": {"brick wall": "wall",
                                                      "wall": "barrier"}}))


def test_merge_parts_owner_rules():
    ls = LabelSpace(scenes=[], objects=["car", "train"],
                    parts=["car wheel", "train wheel"], part_owner=[1, 2],
                    materials=[], textures=[]).validate()
    c = corpus_from_arrays(ls, [("a", ("object", "part"),
                                 [{"object_mask": M1,
                                   "part_mask": np.zeros((2, 2), int)}])])
    with pytest.raises(ManifestError, match="owner"):
        merge_concepts(c, MergeSpec(aliases={"parts": {"car wheel": "wheel",
                                                       "train wheel": "wheel"}}))
    ls2 = LabelSpace(scenes=[], objects=["car"],
                     parts=["front wheel", "rear wheel"], part_owner=[1, 1],
                     materials=[], textures=[]).validate()
    c2 = corpus_from_arrays(ls2, [("a", ("object", "part"),
                                   [{"object_mask": np.ones((2, 2), int),
                                     "part_mask": np.array([[1, 2], [0, 0]])}])])
    mg = merge_concepts(c2, MergeSpec(aliases={"parts": {"front wheel": "wheel",
                                                         "rear wheel": "wheel"}}))
    assert mg.label_space.parts == ["wheel"]
    assert mg.label_space.part_owner == [1]
    assert mg.masks["a/par0.png"].tolist() == [[1, 1], [0, 0]]


def test_merge_textures_remaps_image_labels():
    ls = LabelSpace(scenes=[], objects=[], parts=[], part_owner=[],
                    materials=[], textures=["dotted", "spotted", "lined"]).validate()
    c = corpus_from_arrays(ls, [("t", ("texture",),
                                 [{"texture": 0}, {"texture": 1}, {"texture": 2}])])
    mt = merge_concepts(c, MergeSpec(aliases={"textures": {"spotted": "dotted"}}))
    assert mt.label_space.textures == ["dotted", "lined"]
    assert [s.texture for _, s in mt.samples()] == [0, 0, 1]


# ---------------------------------------------------------------------------
# rarity filter: every label sits exactly on or just off a threshold
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def boundary_corpus():
    ls = LabelSpace(
        scenes=[], objects=["obj50-50k", "obj49-big", "obj50-short"],
        parts=["p20", "p19", "p-orphan"], part_owner=[1, 1, 2],
        materials=["mat50", "mat49"], textures=[],
    ).validate()
    items = []
    for i in range(50):
        om = np.zeros((64, 64), int)
        pm = np.zeros((64, 64), int)
        mm = np.zeros((64, 64), int)
        om.ravel()[:1000] = 1                  # 1000 px * 50 img = 50,000 exactly
        if i < 49:
            om.ravel()[1000:3000] = 2          # plenty of pixels, one image short
        om.ravel()[3000:3999] = 3              # 50 images but 49,950 px
        if i < 20:
            pm.ravel()[:100] = 1
        if i < 19:
            pm.ravel()[100:150] = 2
        if i < 30:
            pm.ravel()[1000:1100] = 3          # frequent, but its owner dies
        mm.ravel()[:200] = 1
        if i < 49:
            mm.ravel()[200:300] = 2
        items.append({"object_mask": om, "part_mask": pm, "material_mask": mm})
    return corpus_from_arrays(ls, [("src", ("object", "part", "material"), items)])


def test_stats_counts(boundary_corpus):
    st = compute_stats(boundary_corpus)
    assert st.object_images.tolist() == [50, 49, 50]
    assert st.object_pixels.tolist() == [50000, 98000, 49950]
    assert st.part_images.tolist() == [20, 19, 30]
    assert st.material_images.tolist() == [50, 49]


def test_filter_boundaries_and_cascade(boundary_corpus):
    filtered = filter_labels(boundary_corpus)
    assert filtered.label_space.objects == ["obj50-50k"]
    assert filtered.label_space.parts == ["p20"]
    assert filtered.label_space.part_owner == [1]
    assert filtered.label_space.materials == ["mat50"]
    assert set(np.unique(filtered.masks["src/obj0.png"])) == {0, 1}
    assert compute_stats(filtered).object_pixels.tolist() == [50000]


def test_filter_idempotent(boundary_corpus):
    once = filter_labels(boundary_corpus)
    twice = filter_labels(once)
    assert twice.label_space.objects == once.label_space.objects
    assert all(np.array_equal(twice.masks[k], once.masks[k])
               for k in once.masks)


def test_drop_labels_cascades_and_validates(boundary_corpus):
    dropped = drop_labels(boundary_corpus, {"objects": ["obj49-big"]})
    assert dropped.label_space.objects == ["obj50-50k", "obj50-short"]
    assert dropped.label_space.parts == ["p20", "p19"]   # orphan part follows
    assert dropped.masks["src/obj0.png"].max() == 2
    with pytest.raises(ManifestError):
        drop_labels(boundary_corpus, {"objects": ["nope"]})


# ---------------------------------------------------------------------------
# scene mapping
# ---------------------------------------------------------------------------

def test_map_scenes_renames_drops_regroups():
    ls = LabelSpace(scenes=["kitchen-indoor", "galley", "weird"],
                    objects=["wall"], parts=[], part_owner=[], materials=[],
                    textures=[]).validate()
    c = corpus_from_arrays(ls, [("s", ("scene", "object"), [
        {"scene": 0, "object_mask": M1}, {"scene": 1, "object_mask": M1},
        {"scene": 2, "object_mask": M1}])])
    ms = map_scenes(c, {"kitchen-indoor": "kitchen", "galley": "kitchen",
                        "weird": None})
    assert ms.label_space.scenes == ["kitchen"]
    by_src = {}
    for src, s in ms.samples():
        by_src.setdefault(src.id, []).append((s.scene, s.object_mask is not None))
    assert by_src["s"] == [(0, True), (0, True)]
    (other,) = [k for k in by_src if k != "s"]
    assert by_src[other] == [(None, True)]       # scene stripped, mask kept
    tasks = {src.id: src.tasks for src in ms.sources}
    assert tasks["s"] == ("scene", "object")
    assert tasks[other] == ("object",)
    with pytest.raises(ManifestError):
        map_scenes(c, {"kitchen-indoor": "kitchen"})


# ---------------------------------------------------------------------------
# balanced splitting
# ---------------------------------------------------------------------------

LS_AB = LabelSpace(scenes=[], objects=["a", "b"], parts=[], part_owner=[],
                   materials=[], textures=[]).validate()


def hetero_corpus():
    items = []
    for i in range(10):
        m = np.zeros((8, 8), int)
        m.ravel()[:(i + 1) * 3] = 1
        m.ravel()[(i + 1) * 3:(i + 1) * 3 + (10 - i)] = 2
        items.append({"object_mask": m})
    return corpus_from_arrays(LS_AB, [("s", ("object",), items)])


def test_split_identical_images_scores_zero():
    same = np.array([[1, 2], [1, 2]])
    c = corpus_from_arrays(LS_AB, [("s", ("object",),
                                    [{"object_mask": same} for _ in range(10)])])
    sc, rep = balanced_split(c, np.random.default_rng(0), rounds=50)
    assert rep["final_score"] == 0.0
    assert sum(1 for _, s in sc.samples() if s.split == "val") == 1


def test_split_improves_and_nears_enumeration_optimum():
    c = hetero_corpus()
    opt = enumerate_split_optimum(c)
    for seed in range(5):
        sc, rep = balanced_split(c, np.random.default_rng(seed), rounds=1000)
        traj = rep["trajectory"]
        assert all(traj[i + 1] <= traj[i] for i in range(len(traj) - 1))
        assert rep["final_score"] <= rep["initial_score"]
        assert rep["final_score"] <= 2 * opt + 1e-12
        before = sorted(s.image for _, s in c.samples())
        after = sorted(s.image for _, s in sc.samples())
        assert before == after


# ---------------------------------------------------------------------------
# stats emission and disk round trip
# ---------------------------------------------------------------------------

def test_emit_stats_pure_and_empty(boundary_corpus):
    d1 = emit_stats(boundary_corpus)
    d2 = emit_stats(boundary_corpus)
    assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)
    empty = corpus_from_arrays(LabelSpace([], [], [], [], [], []), [])
    ed = emit_stats(empty)
    assert ed["images"] == 0 and ed["objects"] == [] and ed["splits"] == {}


def test_corpus_disk_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    (tmp_path / "src" / "img").mkdir(parents=True)
    samples = []
    for i in range(4):
        save_image(tmp_path / "src" / f"img/im{i}.png",
                   rng.random((3, 16, 16)).astype(np.float32))
        mask = rng.integers(0, 3, (16, 16)).astype(np.int64)
        save_mask(tmp_path / "src" / f"img/om{i}.png", mask)
        samples.append(Sample(image=f"img/im{i}.png",
                              object_mask=f"img/om{i}.png",
                              split="train" if i < 3 else "val",
                              source_id="s"))
    ls = LabelSpace(scenes=[], objects=["a", "b"], parts=[], part_owner=[],
                    materials=[], textures=[]).validate()
    save_manifest(tmp_path / "src" / "manifest.json", ls,
                  [DataSource(id="s", tasks=("object",), samples=samples,
                              weight=1.0)])
    c = load_corpus(tmp_path / "src" / "manifest.json")
    out_manifest = save_corpus(c, tmp_path / "out")
    back = load_corpus(out_manifest)
    assert back.label_space.objects == c.label_space.objects
    assert back.n_images() == c.n_images() == 4
    assert ({(src.id, s.split) for src, s in back.samples()}
            == {(src.id, s.split) for src, s in c.samples()})
    for (_, sa), (_, sb) in zip(c.samples(), back.samples()):
        assert np.array_equal(c.mask_for(sa, "object_mask"),
                              back.mask_for(sb, "object_mask"))


def test_standardize_pipeline(boundary_corpus):
    cstd, rep = standardize(
        boundary_corpus, merge_spec=MergeSpec(), rng=np.random.default_rng(1),
        thresholds={"object_min_images": 1, "object_min_pixels": 1,
                    "part_min_images": 1, "material_min_images": 1})
    assert rep["split"] is not None
    assert rep["stats"]["images"] == 50
    assert {s.split for _, s in cstd.samples()} == {"train", "val"}
