"""Reference interpreter and the masked-equivalence oracle.

Kernels are direct (no fusion, no fast convolution algorithms),
accumulate in float64, and store float32.  The masking oracle zeroes
exactly the contributions a plan removes -- producer filter rows and
biases, batch-norm scale and shift, consumer input slices -- so the
masked original and the physically pruned model must agree numerically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, UnsupportedOpError
from .graph import NodeGraph, build_graph
from .model import ElemType, InitializerTensor, ModelArchive, NUMPY_DTYPES
from .pathwalk import root_channel_axis
from .scoring import PruningPlan, _producer_axis
from .rewrite import _bias_slot


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def _store(x):
    return np.asarray(x, dtype=np.float32)


def _pool_patches(x, kernel, strides, pads, pad_value):
    n, c, h, w = x.shape
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=pad_value)
    ho = (h + pt + pb - kh) // sh + 1
    wo = (w + pl + pr - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatchError("pooling window exceeds input")
    out = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i, j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    return out


def _conv2d(x, w, b, pads, strides, dilations):
    n, cin, h, hw = x.shape
    m, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeMismatchError("conv input channels %d vs weight %d" % (cin, cin_w))
    pt, pl, pb, pr = pads
    sh, sw = strides
    dh, dw = dilations
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    ho = (h + pt + pb - dh * (kh - 1) - 1) // sh + 1
    wo = (hw + pl + pr - dw * (kw - 1) - 1) // sw + 1
    cols = np.empty((n, cin, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            ri = i * dh
            rj = j * dw
            cols[:, :, i, j] = xp[:, :, ri:ri + sh * (ho - 1) + 1:sh, rj:rj + sw * (wo - 1) + 1:sw]
    cols = cols.reshape(n, cin * kh * kw, ho * wo)
    out = np.matmul(w.reshape(m, cin * kh * kw), cols)  # (n, m, ho*wo)
    out = out.reshape(n, m, ho, wo)
    if b is not None:
        out = out + b.reshape(1, m, 1, 1)
    return out


class _Executor:
    def __init__(self, graph: NodeGraph):
        self.graph = graph
        self.env = {}

    def fetch(self, name):
        try:
            return self.env[name]
        except KeyError:
            raise ShapeMismatchError("tensor %r evaluated before definition" % name) from None

    def fetch_f64(self, name):
        return _f64(self.fetch(name))

    def run_node(self, idx):
        node = self.graph.nodes[idx]
        handler = getattr(self, "_op_" + node.op_type.lower(), None)
        if handler is None:
            raise UnsupportedOpError("interpreter has no kernel for %r" % node.op_type)
        results = handler(node)
        if not isinstance(results, (list, tuple)):
            results = [results]
        for name, value in zip(node.outputs, results):
            if name:
                self.env[name] = value

    # -- kernels

    def _op_conv(self, node):
        if int(node.attr("group", 1)) != 1:
            raise UnsupportedOpError("grouped Conv is not supported")
        if node.attr("auto_pad", "NOTSET") not in ("NOTSET", b"NOTSET"):
            raise UnsupportedOpError("Conv auto_pad is not supported")
        x = self.fetch_f64(node.inputs[0])
        w = self.fetch_f64(node.inputs[1])
        b = self.fetch_f64(node.inputs[2]) if len(node.inputs) > 2 and node.inputs[2] else None
        pads = list(node.attr("pads", [0, 0, 0, 0]))
        strides = list(node.attr("strides", [1, 1]))
        dilations = list(node.attr("dilations", [1, 1]))
        return _store(_conv2d(x, w, b, pads, strides, dilations))

    def _op_convtranspose(self, node):
        if int(node.attr("group", 1)) != 1:
            raise UnsupportedOpError("grouped ConvTranspose is not supported")
        strides = list(node.attr("strides", [1, 1]))
        if strides != [1, 1]:
            raise UnsupportedOpError("ConvTranspose supports stride 1 only")
        if any(node.attr("output_padding", [0, 0])):
            raise UnsupportedOpError("ConvTranspose output_padding is not supported")
        x = self.fetch_f64(node.inputs[0])
        w = self.fetch_f64(node.inputs[1])  # (cin, cout, kh, kw)
        b = self.fetch_f64(node.inputs[2]) if len(node.inputs) > 2 and node.inputs[2] else None
        pads = list(node.attr("pads", [0, 0, 0, 0]))
        kh, kw = w.shape[2], w.shape[3]
        flipped = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        eq_pads = [kh - 1 - pads[0], kw - 1 - pads[1], kh - 1 - pads[2], kw - 1 - pads[3]]
        if any(p < 0 for p in eq_pads):
            raise UnsupportedOpError("ConvTranspose pads exceed kernel - 1")
        return _store(_conv2d(x, flipped, b, eq_pads, [1, 1], [1, 1]))

    def _op_relu(self, node):
        return _store(np.maximum(self.fetch_f64(node.inputs[0]), 0.0))

    def _op_sigmoid(self, node):
        x = self.fetch_f64(node.inputs[0])
        return _store(1.0 / (1.0 + np.exp(-x)))

    def _op_tanh(self, node):
        return _store(np.tanh(self.fetch_f64(node.inputs[0])))

    def _op_erf(self, node):
        from math import erf
        x = self.fetch_f64(node.inputs[0])
        return _store(np.vectorize(erf)(x))

    def _op_sqrt(self, node):
        return _store(np.sqrt(self.fetch_f64(node.inputs[0])))

    def _op_softmax(self, node):
        x = self.fetch_f64(node.inputs[0])
        axis = int(node.attr("axis", -1))
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return _store(e / e.sum(axis=axis, keepdims=True))

    def _op_maxpool(self, node):
        x = self.fetch_f64(node.inputs[0])
        if node.attr("ceil_mode", 0):
            raise UnsupportedOpError("MaxPool ceil_mode is not supported")
        kernel = list(node.attr("kernel_shape"))
        strides = list(node.attr("strides", [1, 1]))
        pads = list(node.attr("pads", [0, 0, 0, 0]))
        patches = _pool_patches(x, kernel, strides, pads, -np.inf)
        return _store(patches.max(axis=(2, 3)))

    def _op_averagepool(self, node):
        x = self.fetch_f64(node.inputs[0])
        if node.attr("ceil_mode", 0):
            raise UnsupportedOpError("AveragePool ceil_mode is not supported")
        kernel = list(node.attr("kernel_shape"))
        strides = list(node.attr("strides", [1, 1]))
        pads = list(node.attr("pads", [0, 0, 0, 0]))
        include_pad = bool(node.attr("count_include_pad", 0))
        patches = _pool_patches(x, kernel, strides, pads, 0.0)
        sums = patches.sum(axis=(2, 3))
        if include_pad or not any(pads):
            return _store(sums / (kernel[0] * kernel[1]))
        ones = np.ones((1, 1) + x.shape[2:], dtype=np.float64)
        counts = _pool_patches(ones, kernel, strides, pads, 0.0).sum(axis=(2, 3))
        return _store(sums / counts)

    def _op_globalaveragepool(self, node):
        x = self.fetch_f64(node.inputs[0])
        return _store(x.mean(axis=tuple(range(2, x.ndim)), keepdims=True))

    def _op_batchnormalization(self, node):
        x = self.fetch_f64(node.inputs[0])
        scale = self.fetch_f64(node.inputs[1])
        bias = self.fetch_f64(node.inputs[2])
        mean = self.fetch_f64(node.inputs[3])
        var = self.fetch_f64(node.inputs[4])
        eps = float(node.attr("epsilon", 1e-5))
        shape = [1] * x.ndim
        shape[1] = -1
        scale, bias, mean, var = (v.reshape(shape) for v in (scale, bias, mean, var))
        return _store(scale * (x - mean) / np.sqrt(var + eps) + bias)

    def _op_flatten(self, node):
        x = self.fetch(node.inputs[0])
        axis = int(node.attr("axis", 1)) % (x.ndim + 1)
        head = int(np.prod(x.shape[:axis])) if axis else 1
        return np.ascontiguousarray(x).reshape(head, -1)

    def _op_reshape(self, node):
        x = self.fetch(node.inputs[0])
        target = [int(v) for v in np.asarray(self.fetch(node.inputs[1])).reshape(-1)]
        resolved = [x.shape[i] if d == 0 else d for i, d in enumerate(target)]
        return np.ascontiguousarray(x).reshape(resolved)

    def _op_transpose(self, node):
        x = self.fetch(node.inputs[0])
        perm = node.attr("perm", tuple(reversed(range(x.ndim))))
        return np.ascontiguousarray(np.transpose(x, perm))

    def _binary(self, node, fn):
        a = self.fetch_f64(node.inputs[0])
        b = self.fetch_f64(node.inputs[1])
        return _store(fn(a, b))

    def _op_add(self, node):
        return self._binary(node, np.add)

    def _op_sub(self, node):
        return self._binary(node, np.subtract)

    def _op_mul(self, node):
        return self._binary(node, np.multiply)

    def _op_div(self, node):
        return self._binary(node, np.divide)

    def _op_pow(self, node):
        return self._binary(node, np.power)

    def _op_concat(self, node):
        parts = [self.fetch(t) for t in node.inputs if t]
        axis = int(node.attr("axis"))
        return np.concatenate([_f64(p) for p in parts], axis=axis).astype(np.float32)

    def _op_gemm(self, node):
        a = self.fetch_f64(node.inputs[0])
        b = self.fetch_f64(node.inputs[1])
        if node.attr("transA", 0):
            a = a.T
        if node.attr("transB", 0):
            b = b.T
        alpha = float(node.attr("alpha", 1.0))
        beta = float(node.attr("beta", 1.0))
        out = alpha * (a @ b)
        if len(node.inputs) > 2 and node.inputs[2]:
            out = out + beta * self.fetch_f64(node.inputs[2])
        return _store(out)

    def _op_matmul(self, node):
        a = self.fetch_f64(node.inputs[0])
        b = self.fetch_f64(node.inputs[1])
        return _store(np.matmul(a, b))

    def _op_pad(self, node):
        x = self.fetch(node.inputs[0])
        if len(node.inputs) > 1 and node.inputs[1]:
            pads = [int(v) for v in np.asarray(self.fetch(node.inputs[1])).reshape(-1)]
        else:
            pads = list(node.attr("pads"))
        mode = node.attr("mode", "constant")
        if isinstance(mode, bytes):
            mode = mode.decode()
        value = 0.0
        if len(node.inputs) > 2 and node.inputs[2]:
            value = float(np.asarray(self.fetch(node.inputs[2])).reshape(-1)[0])
        rank = x.ndim
        width = [(pads[i], pads[rank + i]) for i in range(rank)]
        if mode == "constant":
            return np.pad(_f64(x), width, constant_values=value).astype(np.float32)
        if mode in ("reflect", "edge"):
            return np.pad(_f64(x), width, mode="reflect" if mode == "reflect" else "edge").astype(np.float32)
        raise UnsupportedOpError("Pad mode %r is not supported" % mode)

    def _reduce(self, node, fn):
        x = self.fetch_f64(node.inputs[0])
        axes = node.attr("axes")
        if axes is None and len(node.inputs) > 1 and node.inputs[1]:
            axes = [int(v) for v in np.asarray(self.fetch(node.inputs[1])).reshape(-1)]
        keepdims = bool(node.attr("keepdims", 1))
        axes = tuple(range(x.ndim)) if axes is None else tuple(a % x.ndim for a in axes)
        return _store(fn(x, axis=axes, keepdims=keepdims))

    def _op_reducemean(self, node):
        return self._reduce(node, np.mean)

    def _op_reducemax(self, node):
        return self._reduce(node, np.max)

    def _op_unsqueeze(self, node):
        x = self.fetch(node.inputs[0])
        if len(node.inputs) > 1 and node.inputs[1]:
            axes = [int(v) for v in np.asarray(self.fetch(node.inputs[1])).reshape(-1)]
        else:
            axes = list(node.attr("axes"))
        out_rank = x.ndim + len(axes)
        for a in sorted(a % out_rank for a in axes):
            x = np.expand_dims(x, a)
        return x

    def _op_slice(self, node):
        x = self.fetch(node.inputs[0])
        starts = [int(v) for v in np.asarray(self.fetch(node.inputs[1])).reshape(-1)]
        ends = [int(v) for v in np.asarray(self.fetch(node.inputs[2])).reshape(-1)]
        axes = [int(v) for v in np.asarray(self.fetch(node.inputs[3])).reshape(-1)] \
            if len(node.inputs) > 3 and node.inputs[3] else list(range(len(starts)))
        steps = [int(v) for v in np.asarray(self.fetch(node.inputs[4])).reshape(-1)] \
            if len(node.inputs) > 4 and node.inputs[4] else [1] * len(starts)
        slicer = [slice(None)] * x.ndim
        for start, end, axis, step in zip(starts, ends, axes, steps):
            slicer[axis % x.ndim] = slice(start, end, step)
        return np.ascontiguousarray(x[tuple(slicer)])

    def _op_cast(self, node):
        x = self.fetch(node.inputs[0])
        to = ElemType(int(node.attr("to")))
        np_dtype = NUMPY_DTYPES.get(to)
        if np_dtype is None:
            raise UnsupportedOpError("Cast to %s is not supported" % to.name)
        return np.asarray(x).astype(np_dtype)

    def _op_gather(self, node):
        data = self.fetch(node.inputs[0])
        indices = np.asarray(self.fetch(node.inputs[1]), dtype=np.int64)
        axis = int(node.attr("axis", 0))
        return np.take(data, indices, axis=axis)

    def _op_identity(self, node):
        return self.fetch(node.inputs[0])


def run(model: ModelArchive, inputs: dict, graph: NodeGraph | None = None) -> dict:
    """Execute the graph on concrete inputs; returns the graph outputs."""
    graph = graph or build_graph(model)
    ex = _Executor(graph)
    for name, init in graph.initializers.items():
        if init.data is None:
            raise UnsupportedOpError("initializer %r has an undecoded dtype" % name)
        ex.env[name] = init.data
    for vi in model.graph.inputs:
        if vi.name not in inputs:
            raise ShapeMismatchError("missing graph input %r" % vi.name)
        value = np.asarray(inputs[vi.name])
        if value.dtype.kind == "f":
            value = value.astype(np.float32)
        ex.env[vi.name] = value
    for idx in graph.topo_order:
        ex.run_node(idx)
    return {name: ex.fetch(name) for name in graph.graph_outputs}


# ---------------------------------------------------------------------------
# masking oracle


def _zero_along(data: np.ndarray, axis: int, positions) -> np.ndarray:
    if not positions:
        return data
    out = np.array(data, copy=True)
    slicer = [slice(None)] * out.ndim
    slicer[axis] = sorted(positions)
    out[tuple(slicer)] = 0
    return out


def mask_model(model: ModelArchive, plan: PruningPlan) -> ModelArchive:
    """Same-shape model in which every pruned channel contributes exactly zero.

    Producer filter rows and biases are zeroed, batch-norm scale and shift
    are zeroed (forcing the channel output to zero regardless of the
    running statistics), and consumer input slices are zeroed so any
    residue upstream cannot leak into kept channels.
    """
    graph = build_graph(model)
    updates = {}

    def stage(name):
        if name not in updates:
            init = graph.initializers[name]
            if init.data is None:
                raise UnsupportedOpError("initializer %r has an undecoded dtype" % name)
            updates[name] = np.array(init.data, copy=True)
        return updates[name]

    for entry in plan.entries:
        if entry.group is None or entry.effects is None:
            raise UnsupportedOpError(
                "plan entry %s lacks model context; rebuild the plan" % entry.group_id
            )
        pruned = list(entry.pruned_indices)
        if not pruned:
            continue
        for member in entry.group.members:
            init, out_axis = _producer_axis(graph, member)
            updates[init.name] = _zero_along(stage(init.name), out_axis, pruned)
            node = graph.nodes[member]
            bslot = _bias_slot(node.op_type)
            if bslot is not None and bslot < len(node.inputs) and node.inputs[bslot]:
                bias = graph.initializers.get(node.inputs[bslot])
                if bias is not None and bias.dims and bias.dims[-1] == entry.group.channels:
                    updates[bias.name] = _zero_along(stage(bias.name), len(bias.dims) - 1, pruned)
        for ss in entry.effects.side_slices:
            if ss.kind != "bn":
                continue  # broadcast constants stay; leaf zeroing absorbs them
            bn_node = graph.nodes[ss.node]
            if ss.tensor not in (bn_node.inputs[1], bn_node.inputs[2]):
                continue  # running statistics stay untouched
            positions = {p for i in pruned for p in ss.index_map[i]}
            updates[ss.tensor] = _zero_along(stage(ss.tensor), ss.axis, positions)
        for ls in entry.effects.leaf_slices:
            positions = {p for i in pruned for p in ls.index_map[i]}
            updates[ls.weight_name] = _zero_along(stage(ls.weight_name), ls.in_axis, positions)

    new_initializers = [
        init if init.name not in updates else init.with_data(updates[init.name])
        for init in model.graph.initializers
    ]
    from .model import GraphDef

    new_graph = GraphDef(
        name=model.graph.name,
        nodes=list(model.graph.nodes),
        inputs=list(model.graph.inputs),
        outputs=list(model.graph.outputs),
        initializers=new_initializers,
        value_infos=list(model.graph.value_infos),
    )
    return ModelArchive(new_graph, model.ir_version, list(model.opset_imports),
                        model.producer_name, model.producer_version)


# ---------------------------------------------------------------------------
# equivalence validation


@dataclass
class ValidationReport:
    """Outcome of a masked-equivalence run."""

    passed: bool
    tolerance: float
    trials: int
    max_deviations: list = field(default_factory=list)  # one per trial
    warnings: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    @property
    def worst(self) -> float:
        return max(self.max_deviations) if self.max_deviations else 0.0

    def to_json(self, indent=2) -> str:
        return json.dumps({
            "passed": bool(self.passed),
            "tolerance": self.tolerance,
            "trials": self.trials,
            "max_deviation": self.worst,
            "per_trial": [float(d) for d in self.max_deviations],
            "warnings": list(self.warnings),
            "messages": list(self.messages),
        }, indent=indent)


def _batch_agnostic(model: ModelArchive, graph: NodeGraph) -> bool:
    """False when any Reshape hard-codes the batch dim in its constant."""
    for node in model.graph.nodes:
        if node.op_type != "Reshape" or len(node.inputs) < 2:
            continue
        init = graph.initializers.get(node.inputs[1])
        if init is None or init.data is None:
            return False
        target = [int(v) for v in np.asarray(init.data).reshape(-1)]
        if target and target[0] > 0:
            return False
    return True


def _trial_inputs(model: ModelArchive, trials: int, seed: int):
    """Seeded random inputs, batched along dim 0 when every input has one."""
    specs = []
    for vi in model.graph.inputs:
        dims = [1 if isinstance(d, str) or d is None else int(d) for d in vi.dims]
        specs.append((vi.name, dims))
    batchable = all(dims and dims[0] == 1 for _name, dims in specs)
    rng = np.random.default_rng(seed)
    per_trial = []
    for _t in range(trials):
        per_trial.append({
            name: rng.standard_normal(dims).astype(np.float32) for name, dims in specs
        })
    return per_trial, batchable


def _pruned_output_masks(plan: PruningPlan, graph: NodeGraph, shapes: dict) -> dict:
    """Kept-channel indices per graph output whose producer group was pruned."""
    keep_by_output = {}
    for entry in plan.entries:
        if entry.group is None:
            continue
        for member, tree in zip(entry.group.members, entry.group.trees):
            out_tensor = graph.nodes[member].outputs[0]
            if out_tensor in graph.graph_outputs and not all(entry.keep):
                axis = root_channel_axis(graph, member, shapes)
                kept = [i for i, k in enumerate(entry.keep) if k]
                keep_by_output[out_tensor] = (axis, kept)
    return keep_by_output


def validate_equivalence(original: ModelArchive, plan: PruningPlan,
                         pruned: ModelArchive, trials: int = 8,
                         tol: float = 1e-5, seed: int = 0) -> ValidationReport:
    """Check max |masked(original) - pruned| <= tol over seeded inputs."""
    from .shapes import infer_shapes

    graph = build_graph(original)
    shapes = infer_shapes(original, graph)
    masked = mask_model(original, plan)
    pruned_graph = build_graph(pruned)
    output_masks = _pruned_output_masks(plan, graph, shapes)

    warnings = [str(d) for d in plan.diagnostics if "Softmax" in d.message]
    soft = bool(warnings)

    inputs, batchable = _trial_inputs(original, trials, seed)
    batchable = batchable and _batch_agnostic(original, graph) \
        and _batch_agnostic(pruned, pruned_graph)
    deviations = []
    messages = []

    def compare(masked_out, pruned_out):
        worst = 0.0
        for name in masked_out:
            a = masked_out[name]
            b = pruned_out[name]
            if a.shape != b.shape:
                if name in output_masks:
                    axis, kept = output_masks[name]
                    a = np.take(a, kept, axis=axis)
                if a.shape != b.shape:
                    messages.append(
                        "output %r shape %r vs %r cannot be aligned" % (name, a.shape, b.shape)
                    )
                    return np.inf
            worst = max(worst, float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64)))) if a.size else 0.0)
        return worst

    if batchable and trials > 1:
        stacked = {
            name: np.concatenate([t[name] for t in inputs], axis=0)
            for name in inputs[0]
        }
        masked_out = run(masked, stacked)
        pruned_out = run(pruned, stacked, pruned_graph)
        for t in range(trials):
            m = {k: v[t:t + 1] for k, v in masked_out.items()}
            p = {k: v[t:t + 1] for k, v in pruned_out.items()}
            deviations.append(compare(m, p))
    else:
        for t in range(trials):
            masked_out = run(masked, inputs[t])
            pruned_out = run(pruned, inputs[t], pruned_graph)
            deviations.append(compare(masked_out, pruned_out))

    within = all(d <= tol for d in deviations)
    passed = within or soft
    if soft and not within:
        messages.append("deviation exceeds tolerance but a normalization op sits on the "
                        "pruned path; reported as warning")
    return ValidationReport(passed, tol, trials, deviations, warnings, messages)
