"""Relation discovery over a prediction corpus.

Per-image prediction maps stream into a CooccurrenceStore (scene frequency,
scene-object image incidence, and three pixel-level joint tables). Graph
builders turn the tables into weighted bipartite relations, which feed plain
language statements and JSON/DOT exports.

Conventions: object and material maps are 1-based with 0 meaning no
prediction; part maps use 0 for background; texture maps are plain 0-based
class indices. Pixels whose left or right side is 0 never enter a pixel
table, and part-material pairs only count where the part's owner object is
also the object predicted at that pixel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .imgio import load_mask

CONTAINMENT_KINDS = ("object-material", "part-material", "material-texture")


class CooccurrenceStore:
    def __init__(self, label_space):
        self.label_space = label_space
        S, O = label_space.n_scenes, label_space.n_objects
        P, M, T = label_space.n_parts, label_space.n_materials, label_space.n_textures
        self.scene_counts = np.zeros(S, dtype=np.int64)
        self.scene_object = np.zeros((S, O), dtype=np.int64)
        self.object_material = np.zeros((O, M), dtype=np.int64)
        self.part_material = np.zeros((P, M), dtype=np.int64)
        self.material_texture = np.zeros((M, T), dtype=np.int64)
        # 1-based part index -> owning 1-based object index, 0 slot unused
        self._owner = np.zeros(P + 1, dtype=np.int64)
        if P:
            self._owner[1:] = label_space.part_owner

    def accumulate(self, bundle):
        """Fold one image's predictions in.

        bundle: {"scene": int, "object": HW int} at minimum; optional "part",
        "material", "texture_map" arrays of the same shape.
        """
        if "scene" not in bundle or "object" not in bundle:
            raise ValidationError("prediction bundle needs at least scene and object")
        scene = int(bundle["scene"])
        if not (0 <= scene < self.label_space.n_scenes):
            raise ValidationError(
                f"scene index {scene} outside 0..{self.label_space.n_scenes - 1}"
            )
        obj = np.asarray(bundle["object"])
        O = self.label_space.n_objects
        if obj.min() < 0 or obj.max() > O:
            raise ValidationError(f"object map values outside 0..{O}")

        self.scene_counts[scene] += 1
        present = np.unique(obj)
        present = present[present > 0]
        self.scene_object[scene, present - 1] += 1

        mat = bundle.get("material")
        if mat is not None:
            mat = np.asarray(mat)
            M = self.label_space.n_materials
            if mat.shape != obj.shape:
                raise ValidationError(
                    f"material map {mat.shape} does not match object map {obj.shape}"
                )
            if mat.min() < 0 or mat.max() > M:
                raise ValidationError(f"material map values outside 0..{M}")
            both = (obj > 0) & (mat > 0)
            if both.any():
                flat = (obj[both] - 1) * M + (mat[both] - 1)
                self.object_material += np.bincount(
                    flat, minlength=O * M
                ).reshape(O, M)

            part = bundle.get("part")
            if part is not None:
                part = np.asarray(part)
                P = self.label_space.n_parts
                if part.shape != obj.shape:
                    raise ValidationError(
                        f"part map {part.shape} does not match object map {obj.shape}"
                    )
                if part.min() < 0 or part.max() > P:
                    raise ValidationError(f"part map values outside 0..{P}")
                good = (part > 0) & (mat > 0) & (self._owner[part] == obj)
                if good.any():
                    flat = (part[good] - 1) * M + (mat[good] - 1)
                    self.part_material += np.bincount(
                        flat, minlength=P * M
                    ).reshape(P, M)

            tex = bundle.get("texture_map")
            if tex is not None:
                tex = np.asarray(tex)
                T = self.label_space.n_textures
                if tex.shape != obj.shape:
                    raise ValidationError(
                        f"texture map {tex.shape} does not match object map {obj.shape}"
                    )
                if tex.min() < 0 or tex.max() >= T:
                    raise ValidationError(f"texture map values outside 0..{T - 1}")
                valid = mat > 0
                if valid.any():
                    flat = (mat[valid] - 1) * T + tex[valid]
                    self.material_texture += np.bincount(
                        flat, minlength=self.label_space.n_materials * T
                    ).reshape(self.label_space.n_materials, T)

    def merge(self, other):
        """Add another store's counts (for per-worker accumulation)."""
        for attr in ("scene_counts", "scene_object", "object_material",
                     "part_material", "material_texture"):
            a, b = getattr(self, attr), getattr(other, attr)
            if a.shape != b.shape:
                raise ValidationError(f"store merge: {attr} shapes differ")
            a += b
        return self


def accumulate_predictions(store, bundles):
    for bundle in bundles:
        store.accumulate(bundle)
    return store


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------


@dataclass
class RelationGraph:
    left_category: str
    right_category: str
    edges: list  # (left name, right name, weight) with weight in [0, 1]

    def edges_of(self, left_name):
        return [(r, w) for l, r, w in self.edges if l == left_name]

    def left_nodes(self):
        seen = []
        for l, _, _ in self.edges:
            if l not in seen:
                seen.append(l)
        return seen


def scene_object_graph(store, threshold=0.05):
    """Edge weight = fraction of a scene's images containing the object."""
    ls = store.label_space
    edges = []
    for s in range(ls.n_scenes):
        count = store.scene_counts[s]
        if count == 0:
            continue
        weights = store.scene_object[s] / count
        for o in range(ls.n_objects):
            w = float(weights[o])
            if w > 0.0 and w >= threshold:
                edges.append((ls.scenes[s], ls.objects[o], w))
    return RelationGraph("scene", "object", edges)


def containment_graph(store, kind, top_k=3, threshold=0.10):
    """Per left node: pixel shares, keep the top_k, drop below threshold,
    renormalize survivors to sum 1. Rows with no pixels are omitted."""
    ls = store.label_space
    if kind == "object-material":
        table, left, right = store.object_material, ls.objects, ls.materials
        cats = ("object", "material")
    elif kind == "part-material":
        table, left, right = store.part_material, ls.parts, ls.materials
        cats = ("part", "material")
    elif kind == "material-texture":
        table, left, right = store.material_texture, ls.materials, ls.textures
        cats = ("material", "texture")
    else:
        raise ValidationError(
            f"containment kind must be one of {CONTAINMENT_KINDS}, got {kind!r}"
        )
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")

    edges = []
    for i, name in enumerate(left):
        row = table[i]
        total = int(row.sum())
        if total == 0:
            continue
        shares = row / total
        order = sorted(range(len(right)), key=lambda j: (-shares[j], j))
        kept = [j for j in order[:top_k] if shares[j] >= threshold and shares[j] > 0]
        if not kept:
            continue
        norm = float(sum(shares[j] for j in kept))
        for j in kept:
            edges.append((name, right[j], float(shares[j] / norm)))
    return RelationGraph(cats[0], cats[1], edges)


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------


def _join_names(parts):
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def _percent_list(pairs):
    return [f"{name} ({round(w * 100):d}%)" for name, w in pairs]


def emit_statements(graphs, scene_object_min=0.30):
    """Readable sentences from the relation graphs.

    graphs: {"scene-object": g?, "object-material": g?, "part-material": g?,
    "material-texture": g?}; output order follows that key order, left nodes
    in graph edge order, right sides by descending weight.
    """
    lines = []
    g = graphs.get("scene-object")
    if g is not None:
        for scene in g.left_nodes():
            members = [(r, w) for r, w in g.edges_of(scene) if w >= scene_object_min]
            members.sort(key=lambda rw: (-rw[1], rw[0]))
            if not members:
                continue
            lines.append(f"{scene} is composed of "
                         f"{_join_names([r for r, _ in members])}.")
    for key, verb in (("object-material", " is made of "),
                      ("part-material", " is made of "),
                      ("material-texture", " is ")):
        g = graphs.get(key)
        if g is None:
            continue
        for left in g.left_nodes():
            pairs = sorted(g.edges_of(left), key=lambda rw: (-rw[1], rw[0]))
            lines.append(left + verb + _join_names(_percent_list(pairs)) + ".")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _canonical_edges(graph):
    return sorted(graph.edges, key=lambda e: (e[0], -e[2], e[1]))


def export_graph(graph, format="json"):
    """Canonical serialization; identical graphs give identical bytes."""
    edges = _canonical_edges(graph)
    if format == "json":
        doc = {
            "left": sorted({l for l, _, _ in edges}),
            "right": sorted({r for _, r, _ in edges}),
            "left_category": graph.left_category,
            "right_category": graph.right_category,
            "edges": [{"l": l, "r": r, "w": w} for l, r, w in edges],
        }
        return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode()
    if format == "dot":
        out = [f"digraph {graph.left_category}_{graph.right_category} {{",
               "  rankdir=LR;"]
        lefts = sorted({l for l, _, _ in edges})
        rights = sorted({r for _, r, _ in edges})
        if lefts:
            out.append("  { rank=same; " + " ".join(f'"{l}";' for l in lefts) + " }")
        if rights:
            out.append("  { rank=same; " + " ".join(f'"{r}";' for r in rights) + " }")
        for l, r, w in edges:
            out.append(f'  "{l}" -> "{r}" [label="{w:.3f}"];')
        out.append("}")
        return ("\n".join(out) + "\n").encode()
    raise ValidationError(f"export format must be json or dot, got {format!r}")


def import_graph_json(data):
    doc = json.loads(data)
    try:
        edges = [(e["l"], e["r"], float(e["w"])) for e in doc["edges"]]
        return RelationGraph(doc["left_category"], doc["right_category"], edges)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed graph document: {exc}") from None


# ---------------------------------------------------------------------------
# Prediction directory ingestion
# ---------------------------------------------------------------------------


def load_prediction_dir(path, label_space):
    """Yield bundles from files written by the predict command: per image a
    <stem>_labels.json plus <stem>_object/part/material/texture.png maps."""
    try:
        names = sorted(os.listdir(path))
    except OSError as exc:
        raise ValidationError(f"cannot list prediction dir {path}: {exc}") from None
    stems = [n[: -len("_labels.json")] for n in names if n.endswith("_labels.json")]
    if not stems:
        raise ValidationError(f"no *_labels.json prediction files under {path}")
    for stem in stems:
        with open(os.path.join(path, stem + "_labels.json")) as fh:
            labels = json.load(fh)
        if "scene" not in labels:
            raise ValidationError(f"{stem}_labels.json has no scene label")
        bundle = {"scene": int(labels["scene"])}
        for task, key in (("object", "object"), ("part", "part"),
                          ("material", "material"), ("texture", "texture_map")):
            mask_path = os.path.join(path, f"{stem}_{task}.png")
            if os.path.exists(mask_path):
                bundle[key] = load_mask(mask_path).astype(np.int64)
        if "object" not in bundle:
            raise ValidationError(f"prediction {stem} has no object map")
        yield bundle


def build_all_graphs(store, scene_object_threshold=0.05,
                     containment_threshold=0.10, top_k=3):
    return {
        "scene-object": scene_object_graph(store, scene_object_threshold),
        "object-material": containment_graph(store, "object-material", top_k,
                                             containment_threshold),
        "part-material": containment_graph(store, "part-material", top_k,
                                           containment_threshold),
        "material-texture": containment_graph(store, "material-texture", top_k,
                                              containment_threshold),
    }
