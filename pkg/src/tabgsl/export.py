"""Plot-ready exports of learned graphs and instance embeddings.

All text outputs start with the versioned header line so downstream
tooling can detect the format. Graphs export as three files sharing a
prefix: a thresholded edge list in original node ids, the dense weight
matrix in the requested node order, and the node-order file mapping
matrix positions back to node ids and labels.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import WeightedAdjacency

EXPORT_HEADER = "# tabgsl-export v1"
EDGE_WEIGHT_THRESHOLD = 1e-6
NODE_ORDERS = ("by_class", "natural")


def export_graph(
    a: WeightedAdjacency,
    y,
    order: str,
    out_prefix: str | Path,
    y_pred=None,
) -> dict[str, Path]:
    """Write edge list, dense matrix, and node order files.

    Edges below the weight threshold are omitted from the edge list. The
    matrix rows/columns follow the requested order: natural keeps node
    ids, by_class sorts stably by (label, node id). Predicted labels, if
    given, are added as a column of the node file.
    """
    if order not in NODE_ORDERS:
        raise ValueError(f"order must be one of {NODE_ORDERS}, got {order!r}")
    y = np.asarray(y, dtype=np.int64)
    w = a.numpy()
    n = w.shape[0]
    if y.shape[0] != n:
        raise ValueError("labels and adjacency disagree on node count")
    if y_pred is not None:
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_pred.shape[0] != n:
            raise ValueError("predictions and adjacency disagree on node count")

    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": prefix.with_name(prefix.name + ".edges.tsv"),
        "matrix": prefix.with_name(prefix.name + ".matrix.csv"),
        "nodes": prefix.with_name(prefix.name + ".nodes.tsv"),
    }

    if order == "by_class":
        positions = np.lexsort((np.arange(n), y))
    else:
        positions = np.arange(n)

    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write(f"{EXPORT_HEADER}\n")
        fh.write("src\tdst\tweight\n")
        src_idx, dst_idx = np.nonzero(np.triu(w, k=1) >= EDGE_WEIGHT_THRESHOLD)
        for i, j in zip(src_idx, dst_idx):
            fh.write(f"{i}\t{j}\t{w[i, j]:.9g}\n")

    with open(paths["matrix"], "w", encoding="utf-8") as fh:
        fh.write(f"{EXPORT_HEADER}\n")
        ordered = w[np.ix_(positions, positions)]
        for row in ordered:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")

    with open(paths["nodes"], "w", encoding="utf-8") as fh:
        fh.write(f"{EXPORT_HEADER}\n")
        columns = "position\tnode\tlabel" + ("\tpredicted" if y_pred is not None else "")
        fh.write(columns + "\n")
        for pos, node in enumerate(positions):
            line = f"{pos}\t{node}\t{y[node]}"
            if y_pred is not None:
                line += f"\t{y_pred[node]}"
            fh.write(line + "\n")

    return paths


def export_embeddings(h, y, out_path: str | Path) -> Path:
    """Write one row per instance: label then embedding values."""
    h = np.asarray(h, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if h.shape[0] != y.shape[0]:
        raise ValueError("labels and embeddings disagree on row count")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(f"{EXPORT_HEADER}\n")
        for label, row in zip(y, h):
            fh.write("\t".join([str(int(label))] + [f"{v:.9g}" for v in row]) + "\n")
    return out_path
