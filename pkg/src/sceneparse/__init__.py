"""Multi-level scene parsing on a numpy autograd core.

One network predicts scene, object, part, material, and texture labels from
a shared feature pyramid; the training loop handles data sources that each
annotate only some of those tasks. Supporting tools cover segmentation
metrics, corpus standardization, checkpointing, relation-graph extraction,
and a command-line driver.
"""

from .backbone import Backbone, BackboneConfig, build_backbone
from .checkpoint import config_hash, load_checkpoint, save_checkpoint, split_records
from .data import (
    Batch,
    DataSource,
    LabelSpace,
    ResizePolicy,
    Sample,
    load_manifest,
    make_batch,
    sample_source,
    save_manifest,
    scale_jitter,
)
from .errors import (
    CheckpointError,
    ConfigError,
    IOFailure,
    ManifestError,
    NumericError,
    SceneParseError,
    ShapeError,
    ValidationError,
)
from .gradcheck import grad_check, run_default_suite, run_model_check
from .knowledge import (
    CooccurrenceStore,
    RelationGraph,
    build_all_graphs,
    containment_graph,
    emit_statements,
    export_graph,
    scene_object_graph,
)
from .metrics import (
    ConfusionMatrix,
    build_report,
    mean_iou,
    part_miou_grouped,
    per_class_iou,
    pixel_accuracy,
    texture_image_label,
    top1,
)
from .model import (
    PRESETS,
    ModelConfig,
    PredictionBundle,
    UPerNet,
    apply_preset,
    build_model,
)
from .standardize import (
    Corpus,
    MergeSpec,
    balanced_split,
    compute_stats,
    emit_stats,
    filter_labels,
    load_corpus,
    map_scenes,
    merge_concepts,
    save_corpus,
    standardize,
)
from .tensor import Tensor, no_grad
from .train import (
    OptimState,
    TrainPlan,
    build_part_mask,
    evaluate,
    poly_lr,
    predict_image,
    run_training,
    sgd_momentum_step,
    texture_finetune,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "Backbone", "BackboneConfig", "build_backbone",
    "config_hash", "load_checkpoint", "save_checkpoint", "split_records",
    "Batch", "DataSource", "LabelSpace", "ResizePolicy", "Sample",
    "load_manifest", "make_batch", "sample_source", "save_manifest",
    "scale_jitter",
    "SceneParseError", "ValidationError", "ShapeError", "ManifestError",
    "ConfigError", "NumericError", "CheckpointError", "IOFailure",
    "grad_check", "run_default_suite", "run_model_check",
    "CooccurrenceStore", "RelationGraph", "build_all_graphs",
    "containment_graph", "emit_statements", "export_graph",
    "scene_object_graph",
    "ConfusionMatrix", "build_report", "mean_iou", "part_miou_grouped",
    "per_class_iou", "pixel_accuracy", "texture_image_label", "top1",
    "PRESETS", "ModelConfig", "PredictionBundle", "UPerNet", "apply_preset",
    "build_model",
    "Corpus", "MergeSpec", "balanced_split", "compute_stats", "emit_stats",
    "filter_labels", "load_corpus", "map_scenes", "merge_concepts",
    "save_corpus", "standardize",
    "Tensor", "no_grad",
    "OptimState", "TrainPlan", "build_part_mask", "evaluate", "poly_lr",
    "predict_image", "run_training", "sgd_momentum_step", "texture_finetune",
    "train_step",
    "__version__",
]
