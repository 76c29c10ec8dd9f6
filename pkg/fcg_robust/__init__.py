__version__ = "0.1.0"

from fcg_robust.graph import \
    AttributedGraph, \
    FeatureGroup, \
    FeatureSchema

from fcg_robust.collate import \
    collate, \
    trim, \
    zero, \
    prune

from fcg_robust.gnn import \
    ModelConfig, \
    ModelState, \
    init_model, \
    load_checkpoint, \
    save_checkpoint

from fcg_robust.diagram import \
    Diagram, \
    default_node_style, \
    default_edge_style
