"""Structured channel pruning for ONNX models via node association trees.

Typical use::

    from treeprune import TreePruner, load_model, save_model

    pruner = TreePruner(ratio=0.5, norm="l1", mode="tree")
    pruned = pruner.fit_transform(load_model("model.onnx"))
    save_model(pruned, "model_pruned.onnx")

The lower-level pipeline (graph building, association trees, scoring,
rewriting, the reference interpreter) is exported alongside for callers
that need the pieces.
"""

__version__ = "0.1.0"

from .attributes import AttributeRegistry, NodeAttribute, Role, classify, register_custom
from .errors import (
    AxisError,
    ChannelMismatchError,
    ConflictError,
    CycleError,
    EmptyReferenceError,
    MaskConflictError,
    ParseError,
    ShapeMismatchError,
    TreepruneError,
    UnboundedTreeError,
    UnknownOperatorError,
    UnknownTemplateError,
    UnsupportedDtypeError,
    UnsupportedOpError,
    UnsupportedRewriteError,
    ValidationError,
)
from .estimator import TreePruner, check_model
from .fixtures import synthesize_model
from .graph import NodeGraph, build_graph
from .interp import ValidationReport, mask_model, run, validate_equivalence
from .model import (
    Diagnostic,
    ElemType,
    GraphDef,
    InitializerTensor,
    ModelArchive,
    NodeDef,
    ValueInfo,
    validate_syntax,
)
from .report import PruneReport, count_flops, count_params, summarize
from .rewrite import RewriteAction, apply_plan, slice_initializer
from .scoring import (
    Criterion,
    NormKind,
    PruningPlan,
    ScoreMode,
    ScoreVector,
    filter_norm,
    make_plan,
    overlap_index,
    select_channels,
    single_node_score,
    tree_score,
)
from .serde import decode_model, encode_model, load_model, save_model
from .shapes import infer_shapes
from .tree import (
    AssocTree,
    PruningGroup,
    build_all_trees,
    build_tree,
    merge_groups,
    select_groups,
    tree_to_graphviz,
    tree_to_json,
)

__all__ = [
    "AssocTree",
    "AttributeRegistry",
    "AxisError",
    "ChannelMismatchError",
    "ConflictError",
    "Criterion",
    "CycleError",
    "Diagnostic",
    "ElemType",
    "EmptyReferenceError",
    "GraphDef",
    "InitializerTensor",
    "MaskConflictError",
    "ModelArchive",
    "NodeAttribute",
    "NodeDef",
    "NodeGraph",
    "NormKind",
    "ParseError",
    "PruneReport",
    "PruningGroup",
    "PruningPlan",
    "RewriteAction",
    "Role",
    "ScoreMode",
    "ScoreVector",
    "ShapeMismatchError",
    "TreePruner",
    "TreepruneError",
    "UnboundedTreeError",
    "UnknownOperatorError",
    "UnknownTemplateError",
    "UnsupportedDtypeError",
    "UnsupportedOpError",
    "UnsupportedRewriteError",
    "ValidationError",
    "ValidationReport",
    "ValueInfo",
    "apply_plan",
    "build_all_trees",
    "build_graph",
    "build_tree",
    "check_model",
    "classify",
    "count_flops",
    "count_params",
    "decode_model",
    "encode_model",
    "filter_norm",
    "infer_shapes",
    "load_model",
    "make_plan",
    "mask_model",
    "merge_groups",
    "overlap_index",
    "register_custom",
    "run",
    "save_model",
    "select_channels",
    "select_groups",
    "single_node_score",
    "slice_initializer",
    "summarize",
    "synthesize_model",
    "tree_score",
    "tree_to_graphviz",
    "tree_to_json",
    "validate_equivalence",
    "validate_syntax",
]
