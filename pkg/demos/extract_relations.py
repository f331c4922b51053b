"""Turn per-pixel predictions into a browsable relation graph.

Reuses the checkpointed model from train_and_evaluate.py (training it first
if needed), predicts every task for the validation rooms, accumulates
scene/object/part/material/texture co-occurrences, and prints the resulting
natural-language statements. Graphs are also exported as JSON and Graphviz.

Run from the repository root:

    python3 demos/extract_relations.py
"""
import subprocess
import sys
from pathlib import Path

from sceneparse.checkpoint import load_model
from sceneparse.data import load_manifest, load_sample_arrays
from sceneparse.knowledge import (
    CooccurrenceStore, build_all_graphs, emit_statements, export_graph,
)
from sceneparse.train import predict_image

HERE = Path(__file__).parent
TRAIN_OUT = HERE / "out" / "train_and_evaluate"
OUT = HERE / "out" / "extract_relations"


def main():
    ckpt = TRAIN_OUT / "run" / "ckpt_final.ckpt"
    if not ckpt.exists():
        print("no checkpoint yet; running the training demo first ...")
        subprocess.run([sys.executable,
                        str(HERE / "train_and_evaluate.py")], check=True)

    model, _ = load_model(ckpt)
    model.eval()
    ls, sources = load_manifest(TRAIN_OUT / "data" / "manifest.json")

    store = CooccurrenceStore(ls)
    n = 0
    for src in sources:
        if "object" not in src.tasks:
            continue
        for sample in src.samples:
            if sample.split != "val":
                continue
            arrays = load_sample_arrays(sample, TRAIN_OUT / "data")
            pred = predict_image(model, arrays["image"])
            store.accumulate(pred)
            n += 1
    print(f"accumulated predictions for {n} validation images")

    graphs = build_all_graphs(store)
    print("\nstatements:\n" + emit_statements(graphs))

    OUT.mkdir(parents=True, exist_ok=True)
    for name, graph in graphs.items():
        (OUT / f"{name}.json").write_bytes(export_graph(graph, "json"))
        (OUT / f"{name}.dot").write_bytes(export_graph(graph, "dot"))
    print(f"graph exports in {OUT} (render with: dot -Tpng scene-object.dot)")


if __name__ == "__main__":
    main()
