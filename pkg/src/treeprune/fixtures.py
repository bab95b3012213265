"""Deterministic fixture models covering the wiring patterns the pruner handles.

Each template builds a small image network with seeded random weights:

============== =================================================================
one_to_one     Conv -> Conv, the plain sequential pattern
one_to_many    Conv feeding two sibling Convs (feature reuse)
many_to_one    two Convs summed by Add, then one consumer Conv (residual merge)
many_to_many   two Convs summed by Add, then two consumer Convs
conv_chain     Conv (+Relu) chain of configurable depth
fire_module    squeeze Conv -> Relu -> two expand Convs -> Concat -> head Conv
residual_block one skip connection with BatchNormalization on the main path
residual_stage several chained residual blocks sharing identity skips
alexnet_cifar  5 Conv + 3 pool + 2 Gemm head for 32x32 inputs
vgg16_cifar    13 Conv + 5 pool + 2 Gemm head for 32x32 inputs
============== =================================================================

The same (template, seed, params) triple always produces a byte-identical
file; weights are drawn from a seeded generator in graph order.
"""

from __future__ import annotations

import numpy as np

from .errors import UnknownTemplateError
from .model import (
    ElemType,
    GraphDef,
    InitializerTensor,
    ModelArchive,
    NodeDef,
    ValueInfo,
    attr_int,
    attr_ints,
)

_OPSET = 13


class _Builder:
    """Assembles a graph while tracking tensor shapes for layer sizing."""

    def __init__(self, seed, input_shape=(1, 3, 32, 32), input_name="input"):
        self.rng = np.random.default_rng(seed)
        self.graph = GraphDef(name="fixture")
        self.graph.inputs.append(ValueInfo(input_name, ElemType.FLOAT, input_shape))
        self.shapes = {input_name: tuple(input_shape)}
        self.input_name = input_name

    # -- parameters

    def _weight(self, name, dims, fan_in):
        std = np.sqrt(2.0 / max(fan_in, 1))
        data = self.rng.normal(0.0, std, size=dims).astype(np.float32)
        self.graph.initializers.append(InitializerTensor(name, ElemType.FLOAT, dims, data=data))
        return name

    def _param(self, name, data):
        data = np.asarray(data, dtype=np.float32)
        self.graph.initializers.append(
            InitializerTensor(name, ElemType.FLOAT, data.shape, data=data)
        )
        return name

    # -- layers

    def conv(self, name, src, out_ch, kernel=3, pads=1, strides=1, bias=True):
        n, in_ch, h, w = self.shapes[src]
        wname = self._weight(name + ".weight", (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel)
        inputs = [src, wname]
        if bias:
            inputs.append(self._param(name + ".bias", self.rng.normal(0, 0.1, out_ch)))
        out = name + ".out"
        self.graph.nodes.append(
            NodeDef(
                "Conv",
                name,
                inputs,
                [out],
                {
                    "kernel_shape": attr_ints([kernel, kernel]),
                    "pads": attr_ints([pads, pads, pads, pads]),
                    "strides": attr_ints([strides, strides]),
                    "dilations": attr_ints([1, 1]),
                },
            )
        )
        oh = (h + 2 * pads - kernel) // strides + 1
        ow = (w + 2 * pads - kernel) // strides + 1
        self.shapes[out] = (n, out_ch, oh, ow)
        return out

    def relu(self, name, src):
        out = name + ".out"
        self.graph.nodes.append(NodeDef("Relu", name, [src], [out]))
        self.shapes[out] = self.shapes[src]
        return out

    def maxpool(self, name, src, kernel=2, stride=2):
        n, c, h, w = self.shapes[src]
        out = name + ".out"
        self.graph.nodes.append(
            NodeDef(
                "MaxPool",
                name,
                [src],
                [out],
                {"kernel_shape": attr_ints([kernel, kernel]), "strides": attr_ints([stride, stride])},
            )
        )
        self.shapes[out] = (n, c, (h - kernel) // stride + 1, (w - kernel) // stride + 1)
        return out

    def batchnorm(self, name, src):
        n, c, h, w = self.shapes[src]
        scale = self._param(name + ".scale", self.rng.uniform(0.5, 1.5, c))
        bias = self._param(name + ".bias", self.rng.normal(0, 0.5, c))
        mean = self._param(name + ".mean", self.rng.normal(0, 0.1, c))
        var = self._param(name + ".var", self.rng.uniform(0.5, 1.5, c))
        out = name + ".out"
        self.graph.nodes.append(
            NodeDef("BatchNormalization", name, [src, scale, bias, mean, var], [out])
        )
        self.shapes[out] = self.shapes[src]
        return out

    def add(self, name, a, b):
        out = name + ".out"
        self.graph.nodes.append(NodeDef("Add", name, [a, b], [out]))
        self.shapes[out] = self.shapes[a]
        return out

    def concat(self, name, srcs, axis=1):
        out = name + ".out"
        self.graph.nodes.append(NodeDef("Concat", name, srcs, [out], {"axis": attr_int(axis)}))
        dims = list(self.shapes[srcs[0]])
        dims[axis] = sum(self.shapes[s][axis] for s in srcs)
        self.shapes[out] = tuple(dims)
        return out

    def flatten(self, name, src):
        n = self.shapes[src][0]
        rest = int(np.prod(self.shapes[src][1:]))
        out = name + ".out"
        self.graph.nodes.append(NodeDef("Flatten", name, [src], [out], {"axis": attr_int(1)}))
        self.shapes[out] = (n, rest)
        return out

    def gemm(self, name, src, out_features, trans_b=True, bias=True):
        n, in_features = self.shapes[src]
        dims = (out_features, in_features) if trans_b else (in_features, out_features)
        wname = self._weight(name + ".weight", dims, in_features)
        inputs = [src, wname]
        if bias:
            inputs.append(self._param(name + ".bias", self.rng.normal(0, 0.1, out_features)))
        out = name + ".out"
        self.graph.nodes.append(
            NodeDef("Gemm", name, inputs, [out], {"transB": attr_int(1 if trans_b else 0)})
        )
        self.shapes[out] = (n, out_features)
        return out

    def finish(self, *outputs):
        for out in outputs:
            self.graph.outputs.append(ValueInfo(out, ElemType.FLOAT, self.shapes[out]))
        return ModelArchive(self.graph, ir_version=8, opset_imports=[("", _OPSET)])


# ---------------------------------------------------------------------------
# templates


def _one_to_one(seed, **_):
    b = _Builder(seed, input_shape=(1, 3, 8, 8))
    x = b.conv("conv_a", b.input_name, 6)
    x = b.conv("conv_b", x, 5)
    return b.finish(x)


def _one_to_many(seed, **_):
    b = _Builder(seed, input_shape=(1, 3, 8, 8))
    x = b.conv("conv_a", b.input_name, 6)
    y1 = b.conv("conv_b", x, 5)
    y2 = b.conv("conv_c", x, 7, kernel=1, pads=0)
    return b.finish(y1, y2)


def _many_to_one(seed, **_):
    b = _Builder(seed, input_shape=(1, 3, 8, 8))
    xa = b.conv("conv_a", b.input_name, 6)
    xb = b.conv("conv_b", b.input_name, 6)
    s = b.add("merge", xa, xb)
    y = b.conv("conv_c", s, 5)
    return b.finish(y)


def _many_to_many(seed, **_):
    b = _Builder(seed, input_shape=(1, 3, 8, 8))
    xa = b.conv("conv_a", b.input_name, 6)
    xb = b.conv("conv_b", b.input_name, 6)
    s = b.add("merge", xa, xb)
    y1 = b.conv("conv_c", s, 5)
    y2 = b.conv("conv_d", s, 7, kernel=1, pads=0)
    return b.finish(y1, y2)


def _conv_chain(seed, depth=2, width=16, **_):
    if depth < 1:
        raise UnknownTemplateError("conv_chain depth must be >= 1")
    b = _Builder(seed, input_shape=(1, 3, 16, 16))
    x = b.conv("conv1", b.input_name, width)
    for i in range(2, depth + 1):
        x = b.relu("relu%d" % (i - 1), x)
        x = b.conv("conv%d" % i, x, width)
    return b.finish(x)


def _fire_module(seed, **_):
    b = _Builder(seed, input_shape=(1, 3, 16, 16))
    x = b.conv("squeeze", b.input_name, 8, kernel=1, pads=0)
    x = b.relu("squeeze_relu", x)
    e1 = b.conv("expand1x1", x, 16, kernel=1, pads=0)
    e3 = b.conv("expand3x3", x, 16, kernel=3, pads=1)
    cat = b.concat("expand_concat", [e1, e3])
    y = b.conv("head", cat, 10, kernel=1, pads=0)
    return b.finish(y)


def _residual_block(seed, **_):
    b = _Builder(seed, input_shape=(1, 3, 16, 16))
    x = b.conv("conv_in", b.input_name, 16)
    skip = b.relu("relu_in", x)
    y = b.conv("conv_mid", skip, 16)
    y = b.batchnorm("bn_mid", y)
    s = b.add("residual_add", y, skip)
    s = b.relu("relu_out", s)
    z = b.conv("head", s, 10, kernel=1, pads=0)
    return b.finish(z)


def _residual_stage(seed, blocks=2, width=16, **_):
    b = _Builder(seed, input_shape=(1, 3, 16, 16))
    x = b.conv("conv_in", b.input_name, width)
    x = b.relu("relu_in", x)
    for k in range(1, blocks + 1):
        y = b.conv("block%d_conv" % k, x, width)
        y = b.batchnorm("block%d_bn" % k, y)
        s = b.add("block%d_add" % k, y, x)
        x = b.relu("block%d_relu" % k, s)
    z = b.conv("head", x, 10, kernel=1, pads=0)
    return b.finish(z)


def _alexnet_cifar(seed, **_):
    b = _Builder(seed)
    x = b.conv("conv1", b.input_name, 64, kernel=5, pads=2)
    x = b.relu("relu1", x)
    x = b.maxpool("pool1", x)
    x = b.conv("conv2", x, 192, kernel=5, pads=2)
    x = b.relu("relu2", x)
    x = b.maxpool("pool2", x)
    x = b.conv("conv3", x, 384)
    x = b.relu("relu3", x)
    x = b.conv("conv4", x, 256)
    x = b.relu("relu4", x)
    x = b.conv("conv5", x, 256)
    x = b.relu("relu5", x)
    x = b.maxpool("pool3", x)
    x = b.flatten("flatten", x)
    x = b.gemm("fc1", x, 512, trans_b=False)
    x = b.relu("relu6", x)
    x = b.gemm("fc2", x, 10, trans_b=False)
    return b.finish(x)


_VGG16_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def _vgg16_cifar(seed, **_):
    b = _Builder(seed)
    x = b.input_name
    conv_idx = 0
    pool_idx = 0
    for entry in _VGG16_CFG:
        if entry == "M":
            pool_idx += 1
            x = b.maxpool("pool%d" % pool_idx, x)
        else:
            conv_idx += 1
            x = b.conv("conv%d" % conv_idx, x, entry)
            x = b.relu("relu%d" % conv_idx, x)
    x = b.flatten("flatten", x)
    x = b.gemm("fc1", x, 512, trans_b=True)
    x = b.relu("fc1_relu", x)
    x = b.gemm("fc2", x, 10, trans_b=True)
    return b.finish(x)


TEMPLATES = {
    "one_to_one": _one_to_one,
    "one_to_many": _one_to_many,
    "many_to_one": _many_to_one,
    "many_to_many": _many_to_many,
    "conv_chain": _conv_chain,
    "fire_module": _fire_module,
    "residual_block": _residual_block,
    "residual_stage": _residual_stage,
    "alexnet_cifar": _alexnet_cifar,
    "vgg16_cifar": _vgg16_cifar,
}


def synthesize_model(template: str, seed: int = 0, **params) -> ModelArchive:
    """Build the named fixture template with seeded random weights."""
    try:
        builder = TEMPLATES[template]
    except KeyError:
        raise UnknownTemplateError(
            "unknown template %r; available: %s" % (template, ", ".join(sorted(TEMPLATES)))
        ) from None
    return builder(seed, **params)
