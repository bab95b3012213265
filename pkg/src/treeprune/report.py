"""Architecture statistics: parameters, FLOPs, sparsity, speedup, overlap.

FLOPs convention (stated here because published numbers rarely agree):
one multiply-accumulate counts as 2 FLOPs, so Conv costs
2*CO*CI*kH*kW*Hout*Wout and Gemm/MatMul cost 2*M*K*N; batch-norm and
elementwise ops cost 2 per output element; pooling costs one FLOP per
kernel element per output element; pure data movement (reshape, concat,
transpose, slice, pad, gather, cast) is free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedOpError
from .graph import NodeGraph, build_graph
from .model import ModelArchive
from .scoring import PruningPlan, overlap_index
from .shapes import infer_shapes

_ELEMENTWISE = {
    "Relu", "Sigmoid", "Tanh", "Softmax", "Erf", "Sqrt", "Pow",
    "Add", "Sub", "Mul", "Div", "BatchNormalization",
}
_FREE = {
    "Flatten", "Reshape", "Transpose", "Concat", "Slice", "Unsqueeze",
    "Squeeze", "Cast", "Gather", "Pad", "Identity", "Resize",
}


def count_params(model: ModelArchive) -> int:
    """Total elements of initializers actually consumed by nodes."""
    consumed = set()
    for node in model.graph.nodes:
        consumed.update(n for n in node.inputs if n)
    return sum(t.size for t in model.graph.initializers if t.name in consumed)


def _concrete(shape, what):
    if shape is None:
        raise UnsupportedOpError("missing shape for %s" % what)
    return [1 if isinstance(d, str) or d is None else int(d) for d in shape]


def _elements(shape):
    return int(np.prod(shape)) if shape else 1


def node_flops(graph: NodeGraph, idx: int, shapes: dict) -> int:
    node = graph.nodes[idx]
    op = node.op_type
    if op in _FREE:
        return 0
    if op in _ELEMENTWISE:
        out = _concrete(shapes.get(node.outputs[0]), graph.label(idx))
        return 2 * _elements(out)
    if op in ("Conv", "ConvTranspose"):
        w = graph.initializers.get(node.inputs[1])
        wdims = w.dims if w is not None else shapes.get(node.inputs[1])
        wdims = _concrete(wdims, graph.label(idx))
        out = _concrete(shapes.get(node.outputs[0]), graph.label(idx))
        spatial_out = _elements(out[2:])
        return 2 * _elements(wdims) * spatial_out * out[0]
    if op == "Gemm":
        a = _concrete(shapes.get(node.inputs[0]), graph.label(idx))
        out = _concrete(shapes.get(node.outputs[0]), graph.label(idx))
        k = a[0] if node.attr("transA", 0) else a[1]
        return 2 * out[0] * k * out[1]
    if op == "MatMul":
        a = _concrete(shapes.get(node.inputs[0]), graph.label(idx))
        out = _concrete(shapes.get(node.outputs[0]), graph.label(idx))
        k = a[-1]
        return 2 * _elements(out) * k
    if op in ("MaxPool", "AveragePool"):
        out = _concrete(shapes.get(node.outputs[0]), graph.label(idx))
        kernel = _elements(list(node.attr("kernel_shape")))
        return kernel * _elements(out)
    if op == "GlobalAveragePool":
        x = _concrete(shapes.get(node.inputs[0]), graph.label(idx))
        return _elements(x)
    if op in ("ReduceMean", "ReduceMax"):
        x = _concrete(shapes.get(node.inputs[0]), graph.label(idx))
        return _elements(x)
    raise UnsupportedOpError("no FLOPs rule for operator %r" % op)


def count_flops(model: ModelArchive, shapes: dict | None = None,
                graph: NodeGraph | None = None) -> int:
    """Whole-model FLOPs at batch 1 under the convention above."""
    graph = graph or build_graph(model)
    if shapes is None:
        shapes = infer_shapes(model, graph)
    return sum(node_flops(graph, idx, shapes) for idx in range(len(graph.nodes)))


@dataclass
class LayerRow:
    name: str
    op_type: str
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    overlap: float | None = None


@dataclass
class PruneReport:
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    layers: list = field(default_factory=list)
    flops_convention: str = "multiply-accumulate = 2 FLOPs"

    @property
    def sparsity(self) -> float:
        if self.params_before == 0:
            return 0.0
        return 1.0 - self.params_after / self.params_before

    @property
    def speedup(self) -> float:
        if self.flops_after == 0:
            return float("inf")
        return self.flops_before / self.flops_after

    def to_dict(self) -> dict:
        return {
            "flops_convention": self.flops_convention,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "sparsity": self.sparsity,
            "flops_before": self.flops_before,
            "flops_after": self.flops_after,
            "speedup": self.speedup,
            "layers": [
                {
                    "name": r.name,
                    "op_type": r.op_type,
                    "params_before": r.params_before,
                    "params_after": r.params_after,
                    "flops_before": r.flops_before,
                    "flops_after": r.flops_after,
                    "overlap": r.overlap,
                }
                for r in self.layers
            ],
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_text(self) -> str:
        lines = [
            "FLOPs convention: %s" % self.flops_convention,
            "params : %d -> %d   sparsity %.2f%%" % (
                self.params_before, self.params_after, 100 * self.sparsity),
            "flops  : %d -> %d   speedup %.2fx" % (
                self.flops_before, self.flops_after, self.speedup),
            "",
        ]
        has_overlap = any(r.overlap is not None for r in self.layers)
        header = "%-20s %-10s %12s %12s %14s %14s" % (
            "layer", "op", "params", "params'", "flops", "flops'")
        if has_overlap:
            header += "  overlap"
        lines.append(header)
        lines.append("-" * len(header))
        for r in self.layers:
            row = "%-20s %-10s %12d %12d %14d %14d" % (
                r.name, r.op_type, r.params_before, r.params_after,
                r.flops_before, r.flops_after)
            if has_overlap:
                row += "  %7s" % ("%.3f" % r.overlap if r.overlap is not None else "-")
            lines.append(row)
        return "\n".join(lines)


def _params_per_node(model: ModelArchive, graph: NodeGraph) -> dict:
    """Attribute each initializer's elements to its first consuming node."""
    owner = {}
    for idx, node in enumerate(graph.nodes):
        for name in node.inputs:
            if name in graph.initializers and name not in owner:
                owner[name] = idx
    per_node = {}
    for name, idx in owner.items():
        per_node[idx] = per_node.get(idx, 0) + graph.initializers[name].size
    return per_node


def _plan_overlaps(plan: PruningPlan, reference: PruningPlan) -> dict:
    """Overlap of pruned indices per group id present in both plans."""
    ref_by_id = {e.group_id: e for e in reference.entries}
    out = {}
    for entry in plan.entries:
        ref = ref_by_id.get(entry.group_id)
        if ref is None or not ref.pruned_indices:
            continue
        out[entry.group_id] = overlap_index(entry.pruned_indices, ref.pruned_indices)
    return out


def summarize(before: ModelArchive, after: ModelArchive,
              plan: PruningPlan | None = None,
              reference_plan: PruningPlan | None = None) -> PruneReport:
    """Full report between an unpruned and a pruned model."""
    graph_b = build_graph(before)
    graph_a = build_graph(after)
    shapes_b = infer_shapes(before, graph_b)
    shapes_a = infer_shapes(after, graph_a)

    report = PruneReport(
        params_before=count_params(before),
        params_after=count_params(after),
        flops_before=count_flops(before, shapes_b, graph_b),
        flops_after=count_flops(after, shapes_a, graph_a),
    )

    overlaps = {}
    if plan is not None and reference_plan is not None:
        by_group = _plan_overlaps(plan, reference_plan)
        for entry in plan.entries:
            if entry.group_id in by_group:
                for member in entry.members:
                    overlaps[member] = by_group[entry.group_id]

    params_b = _params_per_node(before, graph_b)
    params_a = _params_per_node(after, graph_a)
    for idx, node in enumerate(graph_b.nodes):
        pb = params_b.get(idx, 0)
        fb = node_flops(graph_b, idx, shapes_b)
        fa = node_flops(graph_a, idx, shapes_a)
        if pb == 0 and fb == 0:
            continue
        label = graph_b.label(idx)
        report.layers.append(LayerRow(
            label, node.op_type, pb, params_a.get(idx, 0), fb, fa,
            overlaps.get(label),
        ))
    return report
