"""Physically applies a pruning plan: slices initializers, fixes metadata.

The input model is never mutated; the result is a fresh archive that has
already passed syntax validation and shape inference.  Stale internal
value-info entries are dropped (shapes are recomputable); graph output
shapes are refreshed in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AxisError,
    MaskConflictError,
    UnsupportedDtypeError,
    UnsupportedRewriteError,
)
from .graph import NodeGraph, build_graph
from .model import (
    ElemType,
    GraphDef,
    InitializerTensor,
    ModelArchive,
    ValueInfo,
    has_errors,
    validate_syntax,
)
from .scoring import PruningPlan, _producer_axis
from .shapes import infer_shapes


@dataclass(frozen=True)
class RewriteAction:
    """One gather along one axis of one initializer."""

    target: str
    axis: int
    keep_indices: tuple
    reason: str  # "producer" | "leaf" | "side"


def slice_initializer(tensor: InitializerTensor, axis: int, keep_indices) -> InitializerTensor:
    """Gather ``keep_indices`` along ``axis``; other axes untouched."""
    if axis < 0 or axis >= len(tensor.dims):
        raise AxisError("axis %d out of range for dims %r" % (axis, tensor.dims))
    keep = list(keep_indices)
    if any(b <= a for a, b in zip(keep, keep[1:])):
        raise IndexError("keep indices must be strictly increasing")
    if keep and (keep[0] < 0 or keep[-1] >= tensor.dims[axis]):
        raise IndexError(
            "keep indices %r outside axis bound %d" % (keep, tensor.dims[axis])
        )
    if tensor.data is None:
        raise UnsupportedDtypeError(
            "initializer %r has an undecoded dtype and cannot be sliced" % tensor.name
        )
    if tensor.dtype != ElemType.FLOAT:
        raise UnsupportedDtypeError(
            "initializer %r is %s; only float32 tensors are sliced"
            % (tensor.name, tensor.dtype.name)
        )
    data = np.take(tensor.data, keep, axis=axis)
    return InitializerTensor(tensor.name, tensor.dtype, data.shape, data=data)


def _bias_slot(op_type: str):
    if op_type in ("Conv", "ConvTranspose", "Gemm"):
        return 2
    return None


class _ActionSet:
    """Accumulates pruned positions per (initializer, axis) with reason checks."""

    def __init__(self, graph: NodeGraph):
        self.graph = graph
        self.pruned = {}   # (target, axis) -> set of positions
        self.reasons = {}  # (target, axis) -> reason

    def add(self, target: str, axis: int, positions, reason: str):
        if not positions:
            return
        key = (target, axis)
        prev = self.reasons.get(key)
        if prev is not None and prev != reason:
            raise MaskConflictError(
                "initializer %r axis %d claimed as both %s and %s"
                % (target, axis, prev, reason)
            )
        self.reasons[key] = reason
        self.pruned.setdefault(key, set()).update(positions)

    def actions(self) -> list:
        out = []
        for (target, axis), positions in sorted(self.pruned.items()):
            init = self.graph.initializers.get(target)
            if init is None:
                raise MaskConflictError("slice target %r is not an initializer" % target)
            dim = init.dims[axis]
            keep = tuple(p for p in range(dim) if p not in positions)
            if not keep:
                raise UnsupportedRewriteError(
                    "mask removes every entry of %r along axis %d" % (target, axis)
                )
            out.append(RewriteAction(target, axis, keep, self.reasons[(target, axis)]))
        return out


def _mapped_positions(index_map, pruned_channels):
    positions = set()
    for i in pruned_channels:
        positions.update(index_map[i])
    return positions


def collect_actions(graph: NodeGraph, plan: PruningPlan):
    """(actions, reshape fixes) implied by a live plan."""
    actions = _ActionSet(graph)
    reshape_cut = {}  # shape-constant tensor -> (entry, set of pruned positions)
    for entry in plan.entries:
        if entry.group is None or entry.effects is None:
            raise UnsupportedRewriteError(
                "plan entry %s was loaded without its model context; rebuild the plan"
                % entry.group_id
            )
        pruned = entry.pruned_indices
        group = entry.group
        for member in group.members:
            init, out_axis = _producer_axis(graph, member)
            actions.add(init.name, out_axis, set(pruned), "producer")
            node = graph.nodes[member]
            bslot = _bias_slot(node.op_type)
            if bslot is not None and bslot < len(node.inputs) and node.inputs[bslot]:
                bias = graph.initializers.get(node.inputs[bslot])
                if bias is not None and bias.dims and bias.dims[-1] == group.channels:
                    actions.add(bias.name, len(bias.dims) - 1, set(pruned), "producer")
        for ss in entry.effects.side_slices:
            actions.add(ss.tensor, ss.axis, _mapped_positions(ss.index_map, pruned), "side")
        for ls in entry.effects.leaf_slices:
            actions.add(ls.weight_name, ls.in_axis,
                        _mapped_positions(ls.index_map, pruned), "leaf")
        for rf in entry.effects.reshape_fixes:
            slot = reshape_cut.setdefault(rf.tensor, (rf.entry, set()))
            if slot[0] != rf.entry:
                raise MaskConflictError("conflicting reshape fixes on %r" % rf.tensor)
            slot[1].update(_mapped_positions(rf.index_map, pruned))
    return actions.actions(), reshape_cut


def removed_elements(dims, axis_keeps) -> int:
    """Element count removed by slicing ``dims`` per {axis: kept count}."""
    before = int(np.prod(dims)) if dims else 1
    after_dims = list(dims)
    for axis, kept in axis_keeps.items():
        after_dims[axis] = kept
    after = int(np.prod(after_dims)) if after_dims else 1
    return before - after


def apply_plan(model: ModelArchive, graph: NodeGraph, shapes: dict,
               plan: PruningPlan) -> ModelArchive:
    """Build the pruned model; validates the result before returning it."""
    actions, reshape_cut = collect_actions(graph, plan)

    by_target = {}
    for action in actions:
        by_target.setdefault(action.target, []).append(action)

    new_initializers = []
    for init in model.graph.initializers:
        todo = by_target.get(init.name)
        if todo:
            out = init
            for action in sorted(todo, key=lambda a: a.axis):
                out = slice_initializer(out, action.axis, action.keep_indices)
            new_initializers.append(out)
        elif init.name in reshape_cut:
            entry, positions = reshape_cut[init.name]
            data = np.array(init.data, dtype=np.int64, copy=True).reshape(-1)
            data[entry] -= len(positions)
            if data[entry] <= 0:
                raise UnsupportedRewriteError(
                    "reshape constant %r would drop to %d" % (init.name, data[entry])
                )
            new_initializers.append(InitializerTensor(
                init.name, init.dtype, init.dims, data=data.reshape(init.dims)
            ))
        else:
            new_initializers.append(init)

    new_graph = GraphDef(
        name=model.graph.name,
        nodes=list(model.graph.nodes),
        inputs=list(model.graph.inputs),
        outputs=list(model.graph.outputs),
        initializers=new_initializers,
        value_infos=[],  # stale after surgery; recomputable on demand
    )
    pruned = ModelArchive(
        new_graph,
        ir_version=model.ir_version,
        opset_imports=list(model.opset_imports),
        producer_name=model.producer_name,
        producer_version=model.producer_version,
    )

    diags = validate_syntax(pruned)
    if has_errors(diags):
        raise MaskConflictError(
            "rewritten model failed validation: "
            + "; ".join(str(d) for d in diags if d.severity == "error")
        )
    new_nodegraph = build_graph(pruned)
    env = infer_shapes(pruned, new_nodegraph)
    refreshed = []
    for vi in new_graph.outputs:
        dims = env.get(vi.name)
        refreshed.append(ValueInfo(vi.name, vi.elem_type, dims) if dims else vi)
    new_graph.outputs = refreshed
    return pruned
