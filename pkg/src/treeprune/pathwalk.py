"""Turns association trees into concrete slicing instructions.

A walk follows every root-to-leaf path, tracking where the pruned channel
axis lives and how channel indices map onto downstream coordinates
(concat offsets, flatten blocks, pads, slices).  The result is a set of
leaf weight slices plus side-parameter slices (batch-norm stats,
broadcast constants) shared by the scorer, the rewriter, and the masking
oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attributes import NodeAttribute
from .errors import UnsupportedRewriteError
from .graph import NodeGraph
from .model import Diagnostic
from .tree import AssocTree, PruningGroup


@dataclass(frozen=True)
class LeafSlice:
    """How one weighted consumer's weight must be sliced on its input axis."""

    leaf: int             # graph node index
    slot: int             # input slot that carries the influenced tensor
    weight_name: str
    in_axis: int          # weight axis indexed by incoming channels
    out_axis: int         # weight axis indexed by the consumer's own channels
    index_map: tuple      # index_map[i] = positions channel i occupies on in_axis

    def dedup_key(self):
        return (self.leaf, self.slot, self.index_map)


@dataclass(frozen=True)
class SideSlice:
    """A 1-D or broadcast parameter that must follow the group mask."""

    node: int
    tensor: str
    axis: int
    index_map: tuple
    kind: str             # "bn" | "broadcast"


@dataclass(frozen=True)
class ReshapeFix:
    """A constant reshape target whose folded dim shrinks with the mask."""

    node: int
    tensor: str           # the int64 shape initializer
    entry: int            # which entry of the shape constant to adjust
    index_map: tuple      # channel -> positions on the folded output axis


@dataclass
class GroupEffects:
    """All slicing work implied by one pruning group."""

    group: PruningGroup
    leaf_slices: list = field(default_factory=list)    # deduplicated
    side_slices: list = field(default_factory=list)
    reshape_fixes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


_PASSTHROUGH_UNARY = frozenset({
    "Relu", "Sigmoid", "Tanh", "Erf", "Sqrt", "Cast", "BatchNormalization",
    "MaxPool", "AveragePool", "GlobalAveragePool", "Resize",
})


def _identity_map(channels: int) -> tuple:
    return tuple((i,) for i in range(channels))


def root_channel_axis(graph: NodeGraph, idx: int, shapes: dict) -> int:
    """Axis of the output tensor enumerated by the root's own channels."""
    node = graph.nodes[idx]
    op = node.op_type
    if op in ("Conv", "ConvTranspose"):
        return 1
    if op == "Gemm":
        return 1
    out_shape = shapes.get(node.outputs[0])
    if out_shape is None:
        raise UnsupportedRewriteError(
            "cannot resolve the channel axis of %s: unknown output shape" % graph.label(idx)
        )
    if op == "MatMul":
        return len(out_shape) - 1
    if op == "Mul":
        inits = graph.initializer_inputs(idx)
        init = graph.initializers[inits[0][1]]
        wide = [a for a, d in enumerate(init.dims) if d > 1]
        return len(out_shape) - len(init.dims) + wide[0]
    raise UnsupportedRewriteError("no channel axis rule for %s" % op)


def _reject(graph, idx, why):
    raise UnsupportedRewriteError("%s (%s): %s" % (graph.label(idx), graph.nodes[idx].op_type, why))


def _const_ints(graph: NodeGraph, tensor: str):
    init = graph.initializers.get(tensor)
    if init is None or init.data is None:
        return None
    return [int(v) for v in init.data.reshape(-1)]


class _Walker:
    def __init__(self, graph: NodeGraph, shapes: dict, effects: GroupEffects):
        self.graph = graph
        self.shapes = shapes
        self.effects = effects
        self._leaf_keys = {ls.dedup_key() for ls in effects.leaf_slices}

    def shape(self, tensor, idx):
        s = self.shapes.get(tensor)
        if s is None:
            _reject(self.graph, idx, "shape of %r is unknown" % tensor)
        if any(not isinstance(d, int) for d in s[1:]):
            _reject(self.graph, idx, "symbolic non-batch dims in %r" % tensor)
        return s

    def walk_tree(self, tree: AssocTree, channels: int):
        root = tree.root
        axis = root_channel_axis(self.graph, root.node, self.shapes)
        out = self.graph.nodes[root.node].outputs[0]
        state = (out, axis, _identity_map(channels))
        for child in root.children:
            self._visit(child, state)

    def _add_leaf(self, leaf_slice: LeafSlice):
        key = leaf_slice.dedup_key()
        if key not in self._leaf_keys:
            self._leaf_keys.add(key)
            self.effects.leaf_slices.append(leaf_slice)

    def _visit(self, tn, state):
        tensor, axis, index_map = state
        graph = self.graph
        idx = tn.node
        node = graph.nodes[idx]
        if tn.via_tensor != tensor:
            # influence via a secondary output (e.g. pool indices): no rule
            _reject(graph, idx, "influence through secondary output %r" % tn.via_tensor)
        if tn.attribute == NodeAttribute.STOP_PROCESS:
            self._add_leaf(self._leaf_slice(tn, axis, index_map))
            return
        new_state = self._transform(tn, tensor, axis, index_map)
        for child in tn.children:
            self._visit(child, new_state)

    # -- leaves

    def _leaf_slice(self, tn, axis, index_map) -> LeafSlice:
        graph = self.graph
        idx, slot = tn.node, tn.input_slot
        node = graph.nodes[idx]
        op = node.op_type

        def weight(widx):
            name = node.inputs[widx] if widx < len(node.inputs) else ""
            init = graph.initializers.get(name)
            if init is None:
                _reject(graph, idx, "weight operand %r is not an initializer" % name)
            return init

        if op == "Conv":
            if slot != 0:
                _reject(graph, idx, "influenced tensor enters a non-data slot")
            if axis != 1:
                _reject(graph, idx, "pruned axis %d is not the channel axis" % axis)
            if int(node.attr("group", 1)) != 1:
                _reject(graph, idx, "grouped convolution")
            w = weight(1)
            return LeafSlice(idx, slot, w.name, 1, 0, index_map)
        if op == "ConvTranspose":
            if slot != 0 or axis != 1:
                _reject(graph, idx, "unsupported transposed-conv consumption")
            if int(node.attr("group", 1)) != 1:
                _reject(graph, idx, "grouped convolution")
            w = weight(1)
            return LeafSlice(idx, slot, w.name, 0, 1, index_map)
        if op == "Gemm":
            if slot != 0:
                _reject(graph, idx, "influenced tensor is the weight operand")
            if node.attr("transA", 0):
                _reject(graph, idx, "transA is not supported on a pruned path")
            if axis != 1:
                _reject(graph, idx, "pruned axis %d does not feed the reduction" % axis)
            w = weight(1)
            if node.attr("transB", 0):
                return LeafSlice(idx, slot, w.name, 1, 0, index_map)
            return LeafSlice(idx, slot, w.name, 0, 1, index_map)
        if op == "MatMul":
            a_shape = self.shape(node.inputs[slot], idx)
            if slot == 0:
                if axis != len(a_shape) - 1:
                    _reject(graph, idx, "pruned axis does not feed the reduction")
                w = weight(1)
                if len(w.dims) != 2:
                    _reject(graph, idx, "only rank-2 weights are sliceable")
                return LeafSlice(idx, slot, w.name, 0, 1, index_map)
            if slot == 1:
                if axis != len(a_shape) - 2:
                    _reject(graph, idx, "pruned axis does not feed the reduction")
                w = weight(0)
                if len(w.dims) != 2:
                    _reject(graph, idx, "only rank-2 weights are sliceable")
                return LeafSlice(idx, slot, w.name, 1, 0, index_map)
            _reject(graph, idx, "influenced tensor enters slot %d" % slot)
        if op == "Mul":
            _reject(graph, idx, "constant-multiply consumers cannot absorb a channel slice")
        _reject(graph, idx, "no input-slice rule for this consumer")

    # -- interior transforms

    def _transform(self, tn, tensor, axis, index_map):
        graph = self.graph
        idx, slot = tn.node, tn.input_slot
        node = graph.nodes[idx]
        op = node.op_type
        out = node.outputs[0]

        if op in _PASSTHROUGH_UNARY:
            if slot != 0:
                _reject(graph, idx, "influence enters parameter slot %d" % slot)
            if op in ("MaxPool", "AveragePool", "GlobalAveragePool") and axis != 1:
                _reject(graph, idx, "pooling with pruned axis %d" % axis)
            if op == "BatchNormalization":
                for pslot in (1, 2, 3, 4):
                    pname = node.inputs[pslot]
                    if pname not in graph.initializers:
                        _reject(graph, idx, "normalization statistics are not initializers")
                    self.effects.side_slices.append(
                        SideSlice(idx, pname, 0, index_map, "bn")
                    )
            return (out, axis, index_map)

        if op == "Softmax":
            sm_axis = int(node.attr("axis", -1)) % len(self.shape(tensor, idx))
            if sm_axis == axis:
                self.effects.warnings.append(Diagnostic(
                    "warning", graph.label(idx),
                    "Softmax normalizes over the pruned axis; scores and masking are approximate",
                ))
            return (out, axis, index_map)

        if op in ("Add", "Sub", "Div", "Mul"):
            in_shape = self.shape(tensor, idx)
            for oslot, oname in enumerate(node.inputs):
                if oslot == slot or not oname:
                    continue
                init = graph.initializers.get(oname)
                if init is None:
                    continue  # coupled data operand; its own group pass covers it
                off = len(in_shape) - len(init.dims)
                init_axis = axis - off
                if init_axis < 0 or init.dims[init_axis] == 1:
                    continue  # broadcast over channels; nothing to slice
                self.effects.side_slices.append(
                    SideSlice(idx, oname, init_axis, index_map, "broadcast")
                )
            return (out, axis, index_map)

        if op == "Concat":
            shapes = [self.shape(t, idx) for t in node.inputs if t]
            cat_axis = int(node.attr("axis")) % len(shapes[0])
            if cat_axis != axis:
                return (out, axis, index_map)
            offset = sum(shapes[j][cat_axis] for j in range(slot))
            shifted = tuple(tuple(p + offset for p in positions) for positions in index_map)
            return (out, axis, shifted)

        if op == "Flatten":
            in_shape = self.shape(tensor, idx)
            f_axis = int(node.attr("axis", 1)) % (len(in_shape) + 1)
            if axis < f_axis:
                _reject(graph, idx, "pruned axis folds into the flattened row dimension")
            tail = in_shape[f_axis:]
            return (out, 1, _expand_tail(index_map, tail, axis - f_axis))

        if op == "Reshape":
            in_shape = self.shape(tensor, idx)
            out_shape = self.shape(out, idx)
            if tuple(in_shape) == tuple(out_shape):
                return (out, axis, index_map)
            if len(out_shape) == 2 and out_shape[0] == in_shape[0] and axis >= 1:
                expanded = _expand_tail(index_map, in_shape[1:], axis - 1)
                target = _const_ints(graph, node.inputs[1])
                if target is not None and len(target) == 2 and target[1] > 0:
                    self.effects.reshape_fixes.append(
                        ReshapeFix(idx, node.inputs[1], 1, expanded)
                    )
                return (out, 1, expanded)
            _reject(graph, idx, "reshape does not preserve or flatten the pruned axis")

        if op == "Transpose":
            in_shape = self.shape(tensor, idx)
            perm = list(node.attr("perm", tuple(reversed(range(len(in_shape))))))
            return (out, perm.index(axis), index_map)

        if op == "Unsqueeze":
            in_shape = self.shape(tensor, idx)
            if len(node.inputs) > 1 and node.inputs[1]:
                axes = _const_ints(graph, node.inputs[1])
                if axes is None:
                    _reject(graph, idx, "non-constant unsqueeze axes")
            else:
                axes = list(node.attr("axes"))
            out_rank = len(in_shape) + len(axes)
            new_axis = axis
            for a in sorted(a % out_rank for a in axes):
                if a <= new_axis:
                    new_axis += 1
            return (out, new_axis, index_map)

        if op in ("ReduceMean", "ReduceMax"):
            in_shape = self.shape(tensor, idx)
            axes = node.attr("axes")
            if axes is None and len(node.inputs) > 1 and node.inputs[1]:
                axes = _const_ints(graph, node.inputs[1])
            if axes is None:
                axes = list(range(len(in_shape)))
            axes = sorted(a % len(in_shape) for a in axes)
            if axis in axes:
                _reject(graph, idx, "reduction collapses the pruned axis")
            if node.attr("keepdims", 1):
                return (out, axis, index_map)
            return (out, axis - sum(1 for a in axes if a < axis), index_map)

        if op == "Slice":
            in_shape = self.shape(tensor, idx)
            starts = _const_ints(graph, node.inputs[1])
            ends = _const_ints(graph, node.inputs[2])
            if starts is None or ends is None:
                _reject(graph, idx, "non-constant slice bounds")
            axes = _const_ints(graph, node.inputs[3]) if len(node.inputs) > 3 and node.inputs[3] \
                else list(range(len(starts)))
            steps = _const_ints(graph, node.inputs[4]) if len(node.inputs) > 4 and node.inputs[4] \
                else [1] * len(starts)
            new_map = index_map
            for start, end, s_axis, step in zip(starts, ends, axes, steps):
                s_axis = s_axis % len(in_shape)
                if s_axis != axis:
                    continue
                if step <= 0:
                    _reject(graph, idx, "negative slice step on the pruned axis")
                dim = in_shape[axis]
                start = min(max(start + dim if start < 0 else start, 0), dim)
                end = min(max(end + dim if end < 0 else end, 0), dim)
                kept = {orig: pos for pos, orig in enumerate(range(start, end, step))}
                new_map = tuple(
                    tuple(kept[p] for p in positions if p in kept) for positions in new_map
                )
            return (out, axis, new_map)

        if op == "Pad":
            in_shape = self.shape(tensor, idx)
            if len(node.inputs) > 1 and node.inputs[1]:
                pads = _const_ints(graph, node.inputs[1])
                if pads is None:
                    _reject(graph, idx, "non-constant pads")
            else:
                pads = list(node.attr("pads"))
            rank = len(in_shape)
            begin, end = pads[axis], pads[rank + axis]
            if begin == 0 and end == 0:
                return (out, axis, index_map)
            mode = node.attr("mode", "constant")
            if isinstance(mode, bytes):
                mode = mode.decode()
            if mode != "constant":
                _reject(graph, idx, "non-constant pad mode on the pruned axis")
            shifted = tuple(tuple(p + begin for p in positions) for positions in index_map)
            return (out, axis, shifted)

        if op == "Gather":
            in_shape = self.shape(tensor, idx)
            if slot != 0:
                _reject(graph, idx, "influence through gather indices")
            g_axis = int(node.attr("axis", 0)) % len(in_shape)
            if g_axis == axis:
                _reject(graph, idx, "gather selects along the pruned axis")
            init = self.graph.initializers.get(node.inputs[1])
            if init is not None:
                idx_rank = len(init.dims)
            else:
                idx_shape = self.shapes.get(node.inputs[1])
                if idx_shape is None:
                    _reject(graph, idx, "unknown gather indices shape")
                idx_rank = len(idx_shape)
            new_axis = axis if g_axis > axis else axis + idx_rank - 1
            return (out, new_axis, index_map)

        if op == "Pow":
            if slot != 0:
                _reject(graph, idx, "influence through the exponent operand")
            return (out, axis, index_map)

        _reject(graph, idx, "no pass-through rule for this operator")


def _expand_tail(index_map, tail, pos):
    """Channel positions after row-major folding of ``tail`` dims into one axis."""
    inner = 1
    for d in tail[pos + 1:]:
        inner *= d
    chan = tail[pos]
    outer = 1
    for d in tail[:pos]:
        outer *= d
    stride = chan * inner
    return tuple(
        tuple(
            o * stride + p * inner + i
            for p in positions
            for o in range(outer)
            for i in range(inner)
        )
        for positions in index_map
    )


def group_effects(group: PruningGroup, shapes: dict) -> GroupEffects:
    """Walk every member tree of a group, deduplicating leaf contributions."""
    effects = GroupEffects(group)
    graph = group.trees[0].graph
    walker = _Walker(graph, shapes, effects)
    for tree in group.trees:
        walker.walk_tree(tree, group.channels)
    for tree in group.trees:
        effects.warnings.extend(tree.diagnostics)
    return effects
