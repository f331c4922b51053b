"""Command-line entry point.

Subcommands: train, eval, predict, standardize, extract-knowledge,
grad-check. Configuration is one JSON document; --set a.b.c=value overrides
individual fields (values parse as JSON, bare words as strings). Exit codes:
0 success, 2 validation failure, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .backbone import BackboneConfig
from .checkpoint import config_hash, load_checkpoint, save_checkpoint, split_records
from .data import ResizePolicy, SampleCache, load_manifest, scale_jitter
from .errors import (
    CheckpointError,
    ConfigError,
    IOFailure,
    NumericError,
    ValidationError,
)
from .gradcheck import run_default_suite
from .imgio import load_image, save_indexed_palette
from .knowledge import (
    CooccurrenceStore,
    build_all_graphs,
    emit_statements,
    export_graph,
    load_prediction_dir,
)
from .model import PRESETS, ModelConfig, apply_preset, build_model
from .standardize import MergeSpec, load_corpus, save_corpus, standardize, write_stats
from .train import (
    TrainPlan,
    evaluate,
    predict_image,
    run_training,
    texture_finetune,
)

DEFAULT_CONFIG = {
    "backbone": {
        "stem_channels": 16,
        "stage_channels": [16, 32, 64, 128],
        "blocks_per_stage": [2, 2, 2, 2],
        "block": "basic",
    },
    "model": {
        "fpn_channels": 512,
        "ppm_bins": [1, 2, 3, 6],
        "use_ppm": True,
        "use_fusion": True,
        "head_level": 2,
        "texture_layers": 4,
        "texture_channels": 128,
    },
    "preset": None,
    "train": {
        "base_iters": 2000,
        "reference_size": 0,
        "batch_size": 2,
        "checkpoint_every": 0,
        "texture_epochs": 5,
        "texture_lr": 0.01,
        "lr0": 0.02,
        "power": 0.9,
        "momentum": 0.9,
        "weight_decay": 1e-4,
    },
    "data": {
        "manifest": None,
        "train_scales": [300, 375, 450, 525, 600],
        "eval_scale": 450,
        "max_long_side": 1200,
        "texture_size": 64,
    },
    "seed": 0,
    "out_dir": "run",
}


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(doc, assignment):
    """Apply one 'dotted.path=value' override in place."""
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    keys = path.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"--set {path!r}: no such config section {key!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"--set {path!r}: no such config field {keys[-1]!r}")
    node[keys[-1]] = value


def resolve_config(args):
    """defaults <- config file <- preset <- --set <- direct flags."""
    doc = copy.deepcopy(DEFAULT_CONFIG)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise IOFailure(f"cannot read config {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = sorted(set(user) - set(doc))
        if unknown:
            raise ConfigError(f"unknown config section(s) {unknown}")
        doc = _deep_merge(doc, user)
    preset = getattr(args, "preset", None) or doc.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        doc["preset"] = preset
        doc["model"].update(PRESETS[preset])
    for assignment in getattr(args, "set", None) or []:
        _apply_set(doc, assignment)
    if getattr(args, "manifest", None):
        doc["data"]["manifest"] = args.manifest
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "out", None):
        doc["out_dir"] = args.out
    return doc


def _classes_dict(label_space):
    return {
        "n_scenes": label_space.n_scenes,
        "n_objects": label_space.n_objects,
        "n_parts": label_space.n_parts,
        "n_materials": label_space.n_materials,
        "n_textures": label_space.n_textures,
    }


def arch_hash(doc, classes):
    return config_hash({"backbone": doc["backbone"], "model": doc["model"],
                        "classes": classes})


def build_from_doc(doc, classes, seed):
    bc = BackboneConfig(
        stem_channels=doc["backbone"]["stem_channels"],
        stage_channels=tuple(doc["backbone"]["stage_channels"]),
        blocks_per_stage=tuple(doc["backbone"]["blocks_per_stage"]),
        block=doc["backbone"]["block"],
    ).validate()
    mc = ModelConfig(
        fpn_channels=doc["model"]["fpn_channels"],
        ppm_bins=tuple(doc["model"]["ppm_bins"]),
        use_ppm=doc["model"]["use_ppm"],
        use_fusion=doc["model"]["use_fusion"],
        head_level=doc["model"]["head_level"],
        texture_layers=doc["model"]["texture_layers"],
        texture_channels=doc["model"]["texture_channels"],
        **classes,
    ).validate()
    return build_model(bc, mc, seed)


def policy_from_doc(doc):
    d = doc["data"]
    return ResizePolicy(train_scales=tuple(d["train_scales"]),
                        eval_scale=d["eval_scale"],
                        max_long_side=d["max_long_side"],
                        texture_size=d["texture_size"])


def _canonical_report(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args):
    doc = resolve_config(args)
    if not doc["data"]["manifest"]:
        raise ConfigError("no manifest: set data.manifest or pass --manifest")
    label_space, sources = load_manifest(doc["data"]["manifest"])
    root = os.path.dirname(os.path.abspath(doc["data"]["manifest"]))
    classes = _classes_dict(label_space)
    for source in sources:
        for task in source.tasks:
            n = classes["n_" + task + "s"]
            if n == 0:
                raise ValidationError(
                    f"source {source.id!r} supervises {task!r} but the label "
                    f"space declares no {task} classes"
                )

    model = build_from_doc(doc, classes, doc["seed"])
    t = doc["train"]
    plan = TrainPlan(base_iters=t["base_iters"], reference_size=t["reference_size"],
                     batch_size=t["batch_size"], checkpoint_every=t["checkpoint_every"],
                     texture_epochs=t["texture_epochs"], texture_lr=t["texture_lr"],
                     lr0=t["lr0"], power=t["power"], momentum=t["momentum"],
                     weight_decay=t["weight_decay"])
    policy = policy_from_doc(doc)
    out_dir = doc["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "config.json"), _canonical_report(doc))
    # the output path is where the artifact lives, not what it is; leaving it
    # out keeps same-seed runs byte-identical wherever they land
    embedded = {k: v for k, v in doc.items() if k != "out_dir"}
    meta = {"config": embedded, "classes": classes,
            "config_hash": arch_hash(doc, classes)}

    log_path = os.path.join(out_dir, "train_log.jsonl")
    with open(log_path, "w") as log_fh:
        def log_fn(entry):
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            if args.verbose:
                print(json.dumps(entry, sort_keys=True))

        state, summary = run_training(plan, model, label_space, sources, root,
                                      seed=doc["seed"], out_dir=out_dir,
                                      policy=policy, log_fn=log_fn,
                                      config_meta=meta)
        if plan.texture_epochs > 0 and classes["n_textures"] > 0:
            for source in sources:
                if "texture" in source.tasks and source.split_samples("train"):
                    texture_finetune(model, label_space, source, root, state,
                                     seed=doc["seed"] + 1,
                                     epochs=plan.texture_epochs,
                                     lr=plan.texture_lr,
                                     batch_size=plan.batch_size,
                                     policy=policy, log_fn=log_fn)
            save_checkpoint(os.path.join(out_dir, "ckpt_final.ckpt"), model, state,
                            metadata=dict(meta, seed=doc["seed"]))
    final = summary["checkpoints"][-1]
    print(json.dumps({"max_iter": summary["max_iter"],
                      "final_loss": summary["losses"][-1],
                      "checkpoint": final, "log": log_path}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# eval / predict
# ---------------------------------------------------------------------------


def _load_model_from_checkpoint(path, expected_doc=None):
    meta, arrays = load_checkpoint(path)
    if "config" not in meta or "classes" not in meta:
        raise CheckpointError(f"{path} has no embedded run configuration")
    doc, classes = meta["config"], meta["classes"]
    recomputed = arch_hash(doc, classes)
    if meta.get("config_hash") != recomputed:
        raise CheckpointError(
            f"{path}: embedded config hash {meta.get('config_hash')} does not "
            f"match its own config ({recomputed})"
        )
    if expected_doc is not None:
        expected = arch_hash(expected_doc, classes)
        if expected != meta["config_hash"]:
            raise CheckpointError(
                f"config hash mismatch: checkpoint {meta['config_hash']}, "
                f"given config {expected}"
            )
    model = build_from_doc(doc, classes, seed=0)
    model_arrays, _ = split_records(arrays)
    model.load_state_arrays(model_arrays)
    model.eval()
    return model, meta


def cmd_eval(args):
    expected_doc = resolve_config(args) if args.config else None
    model, meta = _load_model_from_checkpoint(args.checkpoint, expected_doc)
    manifest = args.manifest or meta["config"]["data"]["manifest"]
    if not manifest:
        raise ConfigError("no manifest: pass --manifest or embed data.manifest")
    label_space, sources = load_manifest(manifest)
    root = os.path.dirname(os.path.abspath(manifest))
    if _classes_dict(label_space) != meta["classes"]:
        raise ValidationError(
            f"label space of {manifest} does not match the checkpoint classes"
        )
    tasks = None
    if args.tasks:
        tasks = set(args.tasks.split(","))
        bad = tasks - model.config.configured_tasks()
        if bad:
            raise ValidationError(f"task(s) {sorted(bad)} absent from checkpoint")
    policy = policy_from_doc(meta["config"])
    report = evaluate(model, label_space, sources, root, policy=policy,
                      split=args.split, tasks=tasks)
    text = _canonical_report(report)
    if args.out:
        _write_text(args.out, text)
    print(text, end="")
    return 0


def cmd_predict(args):
    model, meta = _load_model_from_checkpoint(args.checkpoint)
    classes = meta["classes"]
    tasks = model.config.configured_tasks()
    if args.tasks:
        wanted = set(args.tasks.split(","))
        bad = wanted - tasks
        if bad:
            raise ValidationError(f"task(s) {sorted(bad)} absent from checkpoint")
        tasks = wanted
    os.makedirs(args.out, exist_ok=True)
    failures, successes = [], 0
    for path in args.images:
        try:
            image = load_image(path)
        except (IOFailure, ValidationError, OSError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            failures.append(path)
            continue
        pred = predict_image(model, image, tasks)
        stem = os.path.splitext(os.path.basename(path))[0]
        base = os.path.join(args.out, stem)
        for task, n in (("object", classes["n_objects"] + 1),
                        ("part", classes["n_parts"] + 1),
                        ("material", classes["n_materials"] + 1)):
            if task in pred:
                save_indexed_palette(f"{base}_{task}.png", pred[task], n)
        if args.with_texture_map and "texture_map" in pred:
            save_indexed_palette(f"{base}_texture.png", pred["texture_map"],
                                 classes["n_textures"])
        labels = {}
        if "scene" in pred:
            labels["scene"] = pred["scene"]
        if "texture" in pred:
            labels["texture"] = pred["texture"]
        _write_text(f"{base}_labels.json",
                    json.dumps(labels, sort_keys=True) + "\n")
        successes += 1
    if args.images and not successes:
        raise IOFailure(f"none of the {len(args.images)} image(s) could be read")
    print(json.dumps({"predicted": successes, "skipped": len(failures),
                      "out_dir": args.out}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# standardize / extract-knowledge / grad-check
# ---------------------------------------------------------------------------


def cmd_standardize(args):
    corpus = load_corpus(args.manifest)
    merge_spec = MergeSpec.from_json(args.merge_spec) if args.merge_spec else None
    drops = None
    if args.drop_list:
        try:
            with open(args.drop_list) as fh:
                drops = json.load(fh)
        except OSError as exc:
            raise IOFailure(f"cannot read drop list {args.drop_list}: {exc}") from None
    rng = None if args.no_split else np.random.default_rng(args.seed)
    thresholds = {
        "object_min_images": args.object_min_images,
        "object_min_pixels": args.object_min_pixels,
        "part_min_images": args.part_min_images,
        "material_min_images": args.material_min_images,
    }
    corpus, report = standardize(corpus, merge_spec=merge_spec, drops=drops,
                                 rng=rng, val_fraction=args.val_fraction,
                                 rounds=args.rounds, thresholds=thresholds)
    manifest_path = save_corpus(corpus, args.out)
    write_stats(report["stats"], args.out)
    if report["split"] is not None:
        _write_text(os.path.join(args.out, "split_report.json"),
                    _canonical_report(report["split"]))
    print(json.dumps({"manifest": manifest_path, "images": report["stats"]["images"],
                      "objects": len(corpus.label_space.objects),
                      "parts": len(corpus.label_space.parts),
                      "materials": len(corpus.label_space.materials)},
                     sort_keys=True))
    return 0


def _bundles_from_inference(args):
    model, meta = _load_model_from_checkpoint(args.checkpoint)
    label_space, sources = load_manifest(args.manifest)
    if _classes_dict(label_space) != meta["classes"]:
        raise ValidationError(
            f"label space of {args.manifest} does not match the checkpoint classes"
        )
    tasks = model.config.configured_tasks()
    if not {"scene", "object"} <= tasks:
        raise ValidationError(
            "knowledge extraction needs scene and object heads in the checkpoint"
        )
    root = os.path.dirname(os.path.abspath(args.manifest))
    policy = policy_from_doc(meta["config"])
    cache = SampleCache(root)
    rng = np.random.default_rng(0)
    bundles = []
    for source in sources:
        for sample in source.split_samples(args.split):
            arrays = scale_jitter(cache.get(sample), rng, "eval", policy,
                                  texture_mode="texture" in source.tasks)
            pred = predict_image(model, arrays["image"], tasks)
            bundle = {"scene": pred["scene"], "object": pred["object"]}
            if "part" in pred:
                bundle["part"] = pred["part"]
            if "material" in pred:
                bundle["material"] = pred["material"]
            if "texture_map" in pred:
                bundle["texture_map"] = pred["texture_map"]
            bundles.append(bundle)
    return label_space, bundles


def cmd_extract_knowledge(args):
    if bool(args.predictions) == bool(args.checkpoint):
        raise ConfigError("pass exactly one of --predictions or --checkpoint")
    if args.predictions:
        label_space, _ = load_manifest(args.manifest)
        bundles = load_prediction_dir(args.predictions, label_space)
    else:
        label_space, bundles = _bundles_from_inference(args)
    store = CooccurrenceStore(label_space)
    for bundle in bundles:
        store.accumulate(bundle)
    graphs = build_all_graphs(store,
                              scene_object_threshold=args.scene_object_threshold,
                              containment_threshold=args.containment_threshold,
                              top_k=args.top_k)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for kind, graph in graphs.items():
        for fmt in args.formats.split(","):
            path = os.path.join(args.out, f"{kind}.{fmt}")
            with open(path, "wb") as fh:
                fh.write(export_graph(graph, fmt))
            written.append(path)
    statements = emit_statements(graphs, scene_object_min=args.scene_object_min)
    _write_text(os.path.join(args.out, "statements.txt"), statements)
    written.append(os.path.join(args.out, "statements.txt"))
    print(json.dumps({"out_dir": args.out, "files": len(written),
                      "statements": len(statements.splitlines())}, sort_keys=True))
    return 0


def cmd_grad_check(args):
    lines = []
    ok, _ = run_default_suite(tol=args.tol, verbose_lines=lines,
                              include_model=not args.ops_only)
    for line in lines:
        print(line)
    if not ok:
        raise NumericError(f"gradient check failed at tol {args.tol}")
    print(f"all gradient checks passed at tol {args.tol}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_flags(p, with_out=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="named architecture variant")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config field (dotted path, JSON value)")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--seed", type=int, help="run seed")
    if with_out:
        p.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sceneparse",
        description="Multi-task scene parsing: training, evaluation, "
                    "prediction, corpus tools, and relation extraction.",
    )
    parser.add_argument("--workers", type=int, default=None,
                        help="prefetch worker count (also SCENEPARSE_WORKERS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a manifest")
    _add_config_flags(p)
    p.add_argument("--verbose", action="store_true", help="echo log lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="val")
    p.add_argument("--tasks", help="comma-separated subset of tasks")
    p.add_argument("--out", help="write the report JSON here as well")
    p.add_argument("--config", help="verify checkpoint against this config")
    p.add_argument("--preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write prediction maps for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", help="comma-separated subset of tasks")
    p.add_argument("--with-texture-map", action="store_true",
                   help="also write the per-pixel texture map")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("standardize", help="merge, filter, and split a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merge-spec", help="JSON alias/scene map")
    p.add_argument("--drop-list", help="JSON {category: [names]} removals")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--no-split", action="store_true",
                   help="keep existing split assignments")
    p.add_argument("--object-min-images", type=int, default=50)
    p.add_argument("--object-min-pixels", type=int, default=50_000)
    p.add_argument("--part-min-images", type=int, default=20)
    p.add_argument("--material-min-images", type=int, default=50)
    p.set_defaults(func=cmd_standardize)

    p = sub.add_parser("extract-knowledge",
                       help="build relation graphs from predictions")
    p.add_argument("--manifest", required=True,
                   help="manifest providing the label space")
    p.add_argument("--predictions", help="directory written by predict")
    p.add_argument("--checkpoint", help="run inference instead")
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--scene-object-threshold", type=float, default=0.05)
    p.add_argument("--containment-threshold", type=float, default=0.10)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--scene-object-min", type=float, default=0.30)
    p.add_argument("--formats", default="json,dot")
    p.set_defaults(func=cmd_extract_knowledge)

    p = sub.add_parser("grad-check", help="finite-difference self-test")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--ops-only", action="store_true",
                   help="skip the whole-network check")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers is not None:
        os.environ["SCENEPARSE_WORKERS"] = str(args.workers)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, IOFailure) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
