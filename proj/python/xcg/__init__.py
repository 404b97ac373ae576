"""Cell-graph survival models with grid-tiled subgraph relevance."""

from ._xcg import (
    CellGraph,
    Model,
    XcgError,
    auroc,
    build_knn_graph,
    concordance_index,
    cox_loss,
    explain,
    load_model,
    run_cli,
    synth_generate,
)

__all__ = [
    "CellGraph",
    "Model",
    "XcgError",
    "auroc",
    "build_knn_graph",
    "concordance_index",
    "cox_loss",
    "explain",
    "load_model",
    "run_cli",
    "synth_generate",
]
