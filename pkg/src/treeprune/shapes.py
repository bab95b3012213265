"""Static shape inference for the supported operator neighborhood.

Shapes are tuples whose entries are concrete ints or a symbolic token
(string); only dim 0 (batch) may stay symbolic on prunable paths.  Ops
outside the supported set do not fail here: their outputs simply stay
unknown, and later passes raise if they actually need those tensors.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatchError, UnsupportedOpError
from .graph import NodeGraph
from .model import ModelArchive, NodeDef


def _is_concrete(dim) -> bool:
    return isinstance(dim, int)


def _volume(dims) -> int:
    vol = 1
    for d in dims:
        if not _is_concrete(d):
            raise ShapeMismatchError("volume of symbolic shape %r" % (dims,))
        vol *= d
    return vol


def _broadcast(a, b, label):
    ra, rb = len(a), len(b)
    rank = max(ra, rb)
    out = []
    for i in range(rank):
        da = a[ra - rank + i] if ra - rank + i >= 0 else 1
        db = b[rb - rank + i] if rb - rank + i >= 0 else 1
        if da == db:
            out.append(da)
        elif da == 1:
            out.append(db)
        elif db == 1:
            out.append(da)
        elif not _is_concrete(da) or not _is_concrete(db):
            raise ShapeMismatchError("%s: cannot broadcast %r with %r" % (label, a, b))
        else:
            raise ShapeMismatchError("%s: cannot broadcast %r with %r" % (label, a, b))
    return tuple(out)


def _const_ints(graph: NodeGraph, tensor: str):
    """Integer contents of an initializer, or None if not statically known."""
    init = graph.initializers.get(tensor)
    if init is None or init.data is None:
        return None
    return [int(v) for v in np.asarray(init.data).reshape(-1)]


_ELEMENTWISE_UNARY = {
    "Relu", "Sigmoid", "Tanh", "Softmax", "Erf", "Sqrt", "Cast", "Identity",
    "LeakyRelu", "Elu", "Exp", "Log", "Neg", "Abs", "Clip", "HardSigmoid", "HardSwish",
}
_ELEMENTWISE_BINARY = {"Add", "Sub", "Mul", "Div", "Pow"}


def _spatial_out(size, kernel, pad_begin, pad_end, stride, dilation, ceil_mode=False):
    eff = dilation * (kernel - 1) + 1
    num = size + pad_begin + pad_end - eff
    if num < 0:
        raise ShapeMismatchError("kernel %d exceeds padded input %d" % (kernel, size))
    if ceil_mode:
        return int(math.ceil(num / stride)) + 1
    return num // stride + 1


class _Inference:
    def __init__(self, model: ModelArchive, graph: NodeGraph, env: dict):
        self.model = model
        self.graph = graph
        self.env = env

    def get(self, tensor):
        return self.env.get(tensor)

    def require(self, node: NodeDef, tensor):
        shape = self.env.get(tensor)
        if shape is None:
            raise UnsupportedOpError(
                "%s needs the shape of %r, which is unknown" % (node.op_type, tensor)
            )
        return shape

    # one method per op family; each returns a list of output shapes or None
    # when the op is unsupported (leaving its outputs unknown)

    def infer_node(self, idx: int):
        node = self.graph.nodes[idx]
        op = node.op_type
        handler = getattr(self, "_op_" + op.lower(), None)
        if handler is None:
            if op in _ELEMENTWISE_UNARY:
                return [self.require(node, node.inputs[0])]
            if op in _ELEMENTWISE_BINARY:
                a = self.require(node, node.inputs[0])
                b = self.require(node, node.inputs[1])
                return [_broadcast(a, b, op)]
            return None
        return handler(node)

    def _conv_like(self, node, transposed):
        x = self.require(node, node.inputs[0])
        w = self.require(node, node.inputs[1])
        if len(x) < 3 or len(w) != len(x):
            raise ShapeMismatchError("%s expects matching input/weight ranks" % node.op_type)
        spatial_rank = len(x) - 2
        if node.attr("auto_pad", "NOTSET") not in ("NOTSET", b"NOTSET"):
            raise UnsupportedOpError("auto_pad is not supported on %s" % node.op_type)
        kernel = list(node.attr("kernel_shape", w[2:]))
        strides = list(node.attr("strides", [1] * spatial_rank))
        dilations = list(node.attr("dilations", [1] * spatial_rank))
        pads = list(node.attr("pads", [0] * (2 * spatial_rank)))
        group = int(node.attr("group", 1))
        out = [x[0]]
        if not transposed:
            if _is_concrete(x[1]) and _is_concrete(w[1]) and x[1] != w[1] * group:
                raise ShapeMismatchError(
                    "Conv %s: input channels %r vs weight %r x group %d"
                    % (node.name, x[1], w[1], group)
                )
            out.append(w[0])
            for i in range(spatial_rank):
                out.append(
                    _spatial_out(x[2 + i], kernel[i], pads[i], pads[spatial_rank + i],
                                 strides[i], dilations[i])
                )
        else:
            output_padding = list(node.attr("output_padding", [0] * spatial_rank))
            out.append(w[1] * group)
            for i in range(spatial_rank):
                eff = dilations[i] * (kernel[i] - 1) + 1
                out.append(
                    (x[2 + i] - 1) * strides[i] - pads[i] - pads[spatial_rank + i]
                    + eff + output_padding[i]
                )
        return [tuple(out)]

    def _op_conv(self, node):
        return self._conv_like(node, transposed=False)

    def _op_convtranspose(self, node):
        return self._conv_like(node, transposed=True)

    def _pool(self, node, global_pool=False):
        x = self.require(node, node.inputs[0])
        if global_pool:
            return [tuple(list(x[:2]) + [1] * (len(x) - 2))]
        spatial_rank = len(x) - 2
        kernel = list(node.attr("kernel_shape"))
        strides = list(node.attr("strides", [1] * spatial_rank))
        pads = list(node.attr("pads", [0] * (2 * spatial_rank)))
        ceil_mode = bool(node.attr("ceil_mode", 0))
        out = [x[0], x[1]]
        for i in range(spatial_rank):
            out.append(
                _spatial_out(x[2 + i], kernel[i], pads[i], pads[spatial_rank + i],
                             strides[i], 1, ceil_mode)
            )
        shapes = [tuple(out)]
        if len(node.outputs) > 1 and node.outputs[1]:
            shapes.append(tuple(out))  # MaxPool optional indices output
        return shapes

    def _op_maxpool(self, node):
        return self._pool(node)

    def _op_averagepool(self, node):
        return self._pool(node)

    def _op_globalaveragepool(self, node):
        return self._pool(node, global_pool=True)

    def _op_batchnormalization(self, node):
        return [self.require(node, node.inputs[0])]

    def _op_gemm(self, node):
        a = self.require(node, node.inputs[0])
        b = self.require(node, node.inputs[1])
        if len(a) != 2 or len(b) != 2:
            raise ShapeMismatchError("Gemm expects rank-2 operands")
        if node.attr("transA", 0):
            a = (a[1], a[0])
        if node.attr("transB", 0):
            b = (b[1], b[0])
        if _is_concrete(a[1]) and _is_concrete(b[0]) and a[1] != b[0]:
            raise ShapeMismatchError("Gemm %s: inner dims %r vs %r" % (node.name, a[1], b[0]))
        return [(a[0], b[1])]

    def _op_matmul(self, node):
        a = list(self.require(node, node.inputs[0]))
        b = list(self.require(node, node.inputs[1]))
        if len(a) == 1:
            a = [1] + a
        if len(b) == 1:
            b = b + [1]
        if _is_concrete(a[-1]) and _is_concrete(b[-2]) and a[-1] != b[-2]:
            raise ShapeMismatchError("MatMul %s: inner dims %r vs %r" % (node.name, a[-1], b[-2]))
        batch = _broadcast(tuple(a[:-2]), tuple(b[:-2]), "MatMul") if (a[:-2] or b[:-2]) else ()
        return [tuple(list(batch) + [a[-2], b[-1]])]

    def _op_concat(self, node):
        shapes = [self.require(node, t) for t in node.inputs if t]
        axis = int(node.attr("axis"))
        rank = len(shapes[0])
        axis = axis % rank
        out = list(shapes[0])
        total = 0
        for s in shapes:
            if len(s) != rank:
                raise ShapeMismatchError("Concat rank mismatch")
            if not _is_concrete(s[axis]):
                raise ShapeMismatchError("Concat with symbolic axis dim")
            total += s[axis]
        out[axis] = total
        return [tuple(out)]

    def _op_flatten(self, node):
        x = self.require(node, node.inputs[0])
        axis = int(node.attr("axis", 1)) % (len(x) + 1)
        head = x[:axis]
        tail = x[axis:]
        if axis == 1 and not _is_concrete(x[0]):
            return [(x[0], _volume(tail))]
        return [(_volume(head), _volume(tail))]

    def _op_reshape(self, node):
        x = self.require(node, node.inputs[0])
        target = _const_ints(self.graph, node.inputs[1])
        if target is None:
            raise UnsupportedOpError("Reshape %s has a non-constant shape operand" % node.name)
        out = []
        neg_one = None
        known = 1
        for i, d in enumerate(target):
            if d == 0:
                d = x[i]
            if d == -1:
                neg_one = i
                out.append(-1)
                continue
            out.append(d)
            if _is_concrete(d):
                known *= d
        if neg_one is not None:
            out[neg_one] = _volume(x) // known
        return [tuple(out)]

    def _op_transpose(self, node):
        x = self.require(node, node.inputs[0])
        perm = node.attr("perm", tuple(reversed(range(len(x)))))
        return [tuple(x[p] for p in perm)]

    def _op_unsqueeze(self, node):
        x = list(self.require(node, node.inputs[0]))
        if len(node.inputs) > 1 and node.inputs[1]:
            axes = _const_ints(self.graph, node.inputs[1])
            if axes is None:
                raise UnsupportedOpError("Unsqueeze %s has non-constant axes" % node.name)
        else:
            axes = list(node.attr("axes"))
        out_rank = len(x) + len(axes)
        axes = sorted(a % out_rank for a in axes)
        for a in axes:
            x.insert(a, 1)
        return [tuple(x)]

    def _op_squeeze(self, node):
        x = list(self.require(node, node.inputs[0]))
        if len(node.inputs) > 1 and node.inputs[1]:
            axes = _const_ints(self.graph, node.inputs[1])
        else:
            axes = node.attr("axes")
        if axes is None:
            return [tuple(d for d in x if d != 1)]
        axes = {a % len(x) for a in axes}
        return [tuple(d for i, d in enumerate(x) if i not in axes)]

    def _op_pad(self, node):
        x = self.require(node, node.inputs[0])
        if len(node.inputs) > 1 and node.inputs[1]:
            pads = _const_ints(self.graph, node.inputs[1])
            if pads is None:
                raise UnsupportedOpError("Pad %s has non-constant pads" % node.name)
        else:
            pads = list(node.attr("pads"))
        rank = len(x)
        out = []
        for i, d in enumerate(x):
            if pads[i] or pads[rank + i]:
                if not _is_concrete(d):
                    raise ShapeMismatchError("Pad on symbolic dim")
                d = d + pads[i] + pads[rank + i]
            out.append(d)
        return [tuple(out)]

    def _reduce(self, node):
        x = self.require(node, node.inputs[0])
        axes = node.attr("axes")
        if axes is None and len(node.inputs) > 1 and node.inputs[1]:
            axes = _const_ints(self.graph, node.inputs[1])
        keepdims = bool(node.attr("keepdims", 1))
        if axes is None:
            axes = list(range(len(x)))
        axes = {a % len(x) for a in axes}
        out = []
        for i, d in enumerate(x):
            if i in axes:
                if keepdims:
                    out.append(1)
            else:
                out.append(d)
        return [tuple(out)]

    def _op_reducemean(self, node):
        return self._reduce(node)

    def _op_reducemax(self, node):
        return self._reduce(node)

    def _op_slice(self, node):
        x = self.require(node, node.inputs[0])
        starts = _const_ints(self.graph, node.inputs[1])
        ends = _const_ints(self.graph, node.inputs[2])
        if starts is None or ends is None:
            raise UnsupportedOpError("Slice %s has non-constant bounds" % node.name)
        axes = _const_ints(self.graph, node.inputs[3]) if len(node.inputs) > 3 and node.inputs[3] else list(range(len(starts)))
        steps = _const_ints(self.graph, node.inputs[4]) if len(node.inputs) > 4 and node.inputs[4] else [1] * len(starts)
        out = list(x)
        for start, end, axis, step in zip(starts, ends, axes, steps):
            axis = axis % len(x)
            dim = x[axis]
            if not _is_concrete(dim):
                raise ShapeMismatchError("Slice on symbolic dim")
            start = min(max(start + dim if start < 0 else start, 0), dim)
            end = min(max(end + dim if end < 0 else end, 0), dim)
            if step <= 0:
                raise UnsupportedOpError("Slice with non-positive step")
            out[axis] = max(0, -(-(end - start) // step))
        return [tuple(out)]

    def _op_gather(self, node):
        data = self.require(node, node.inputs[0])
        init = self.graph.initializers.get(node.inputs[1])
        if init is not None:
            idx_shape = init.dims
        else:
            idx_shape = self.get(node.inputs[1])
            if idx_shape is None:
                raise UnsupportedOpError("Gather %s has unknown indices shape" % node.name)
        axis = int(node.attr("axis", 0)) % len(data)
        return [tuple(list(data[:axis]) + list(idx_shape) + list(data[axis + 1:]))]

    def _op_resize(self, node):
        x = self.require(node, node.inputs[0])
        if len(node.inputs) > 3 and node.inputs[3]:
            sizes = _const_ints(self.graph, node.inputs[3])
            if sizes is not None:
                return [tuple(sizes)]
        if len(node.inputs) > 2 and node.inputs[2]:
            init = self.graph.initializers.get(node.inputs[2])
            if init is not None and init.data is not None and init.data.size:
                scales = np.asarray(init.data, dtype=np.float64).reshape(-1)
                out = []
                for d, s in zip(x, scales):
                    if not _is_concrete(d):
                        raise ShapeMismatchError("Resize on symbolic dim")
                    out.append(int(math.floor(d * s)))
                return [tuple(out)]
        raise UnsupportedOpError("Resize %s has no constant scales or sizes" % node.name)


def infer_shapes(model: ModelArchive, graph: NodeGraph, input_shapes=None) -> dict:
    """Compute shapes for every tensor reachable through supported ops.

    ``input_shapes`` overrides the declared graph input shapes.  Returns a
    dict tensor name -> shape tuple; tensors behind unsupported ops are
    absent rather than failing eagerly.
    """
    env = {}
    for vi in model.graph.inputs:
        dims = tuple(vi.dims)
        if input_shapes and vi.name in input_shapes:
            dims = tuple(input_shapes[vi.name])
        for i, d in enumerate(dims):
            if d is None or (isinstance(d, str) and i > 0):
                raise ShapeMismatchError(
                    "graph input %r: only dim 0 may be symbolic, got %r" % (vi.name, dims)
                )
        env[vi.name] = dims
    for name, init in graph.initializers.items():
        env[name] = tuple(init.dims)

    inf = _Inference(model, graph, env)
    for idx in graph.topo_order:
        node = graph.nodes[idx]
        if any(name and env.get(name) is None for name in node.inputs):
            continue  # an unsupported producer upstream; stay unknown
        try:
            shapes = inf.infer_node(idx)
        except UnsupportedOpError:
            shapes = None
        if shapes is None:
            continue
        for name, shape in zip(node.outputs, shapes):
            if name:
                env[name] = shape
    return env
