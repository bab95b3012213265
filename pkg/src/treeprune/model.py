"""In-memory model container: graph, nodes, initializers, and syntax checks.

The layout mirrors the ONNX graph format (nodes reference tensors by name,
weights live in named initializers) but everything here is a plain Python
value object, immutable by convention after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional, Union

import numpy as np


class ElemType(IntEnum):
    """Tensor element types, numbered per the ONNX wire format."""

    UNDEFINED = 0
    FLOAT = 1
    UINT8 = 2
    INT8 = 3
    UINT16 = 4
    INT16 = 5
    INT32 = 6
    INT64 = 7
    STRING = 8
    BOOL = 9
    FLOAT16 = 10
    DOUBLE = 11
    UINT32 = 12
    UINT64 = 13


NUMPY_DTYPES = {
    ElemType.FLOAT: np.dtype("float32"),
    ElemType.INT32: np.dtype("int32"),
    ElemType.INT64: np.dtype("int64"),
    ElemType.DOUBLE: np.dtype("float64"),
    ElemType.BOOL: np.dtype("bool"),
    ElemType.FLOAT16: np.dtype("float16"),
}


class AttrValue(NamedTuple):
    """One node attribute: a type tag plus its payload.

    kind is one of "int", "float", "string", "ints", "floats", "strings",
    "tensor".  Sequence payloads are stored as tuples so values hash and
    compare structurally.
    """

    kind: str
    value: object


def attr_int(v: int) -> AttrValue:
    return AttrValue("int", int(v))


def attr_float(v: float) -> AttrValue:
    return AttrValue("float", float(v))


def attr_string(v: str) -> AttrValue:
    return AttrValue("string", str(v))


def attr_ints(v) -> AttrValue:
    return AttrValue("ints", tuple(int(x) for x in v))


def attr_floats(v) -> AttrValue:
    return AttrValue("floats", tuple(float(x) for x in v))


def attr_strings(v) -> AttrValue:
    return AttrValue("strings", tuple(str(x) for x in v))


class InitializerTensor:
    """A named constant tensor.

    float32 (and the other dtypes in NUMPY_DTYPES) are decoded into a
    numpy array; anything else is carried opaquely as raw bytes and
    written back verbatim.
    """

    __slots__ = ("name", "dtype", "dims", "data", "raw_payload")

    def __init__(self, name, dtype, dims, data=None, raw_payload=None):
        self.name = str(name)
        self.dtype = ElemType(dtype)
        self.dims = tuple(int(d) for d in dims)
        if any(d < 0 for d in self.dims):
            raise ValueError("initializer %r has negative dim" % name)
        if data is not None:
            arr = np.asarray(data, dtype=NUMPY_DTYPES[self.dtype]).reshape(self.dims)
            self.data = np.ascontiguousarray(arr)
            self.raw_payload = None
        else:
            if raw_payload is None:
                raise ValueError("initializer %r needs data or raw_payload" % name)
            self.data = None
            self.raw_payload = bytes(raw_payload)

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def is_decoded(self) -> bool:
        return self.data is not None

    def with_data(self, data: np.ndarray) -> "InitializerTensor":
        return InitializerTensor(self.name, self.dtype, data.shape, data=data)

    def __eq__(self, other):
        if not isinstance(other, InitializerTensor):
            return NotImplemented
        if (self.name, self.dtype, self.dims) != (other.name, other.dtype, other.dims):
            return False
        if (self.data is None) != (other.data is None):
            return False
        if self.data is None:
            return self.raw_payload == other.raw_payload
        return bool(np.array_equal(self.data, other.data)) and self.data.dtype == other.data.dtype

    def __repr__(self):
        return "InitializerTensor(%r, %s, dims=%r)" % (self.name, self.dtype.name, self.dims)


# A dimension is a concrete size, a symbolic token (e.g. "batch"), or unknown.
DimValue = Union[int, str, None]


@dataclass(frozen=True)
class ValueInfo:
    """Name, element type, and (possibly symbolic) shape of one tensor."""

    name: str
    elem_type: ElemType = ElemType.FLOAT
    dims: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "elem_type", ElemType(self.elem_type))
        object.__setattr__(self, "dims", tuple(self.dims))


@dataclass(frozen=True)
class NodeDef:
    """One operator application: names in, names out, plus attributes."""

    op_type: str
    name: str
    inputs: tuple
    outputs: tuple
    attributes: tuple = ()  # sorted tuple of (attr name, AttrValue)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        attrs = self.attributes
        if isinstance(attrs, dict):
            attrs = attrs.items()
        object.__setattr__(self, "attributes", tuple(sorted(attrs)))

    def attr(self, name, default=None):
        for key, val in self.attributes:
            if key == name:
                return val.value
        return default


@dataclass
class GraphDef:
    """The dataflow graph: ordered nodes plus tensor declarations."""

    name: str = "graph"
    nodes: list = field(default_factory=list)
    inputs: list = field(default_factory=list)      # list[ValueInfo]
    outputs: list = field(default_factory=list)     # list[ValueInfo]
    initializers: list = field(default_factory=list)
    value_infos: list = field(default_factory=list)

    def initializer_map(self) -> dict:
        return {t.name: t for t in self.initializers}

    def input_names(self) -> set:
        return {v.name for v in self.inputs}


@dataclass
class ModelArchive:
    """Top-level model container (graph + format metadata)."""

    graph: GraphDef
    ir_version: int = 8
    opset_imports: list = field(default_factory=lambda: [("", 13)])
    producer_name: str = "treeprune"
    producer_version: str = ""

    def __post_init__(self):
        self.opset_imports = [(str(d), int(v)) for d, v in self.opset_imports]

    def opset_version(self, domain: str = "") -> Optional[int]:
        for dom, ver in self.opset_imports:
            if dom == domain:
                return ver
        return None


@dataclass(frozen=True)
class Diagnostic:
    """One finding from a validation pass."""

    severity: str  # "error" | "warning"
    node: str      # node or tensor name the finding refers to, "" if global
    message: str

    def __str__(self):
        where = " [%s]" % self.node if self.node else ""
        return "%s%s: %s" % (self.severity, where, self.message)


def _err(node, message):
    return Diagnostic("error", node, message)


def _warn(node, message):
    return Diagnostic("warning", node, message)


def validate_syntax(model: ModelArchive) -> list:
    """Check the structural invariants; returns diagnostics (never raises).

    An empty error set means: every node input resolves to exactly one
    producer (graph input, initializer, or a preceding node output), node
    outputs are unique, op types are non-empty, and initializer payloads
    match their dims.  Hygiene issues (dangling initializers) come back as
    warnings.
    """
    diags = []
    graph = model.graph

    seen_domains = set()
    for domain, _version in model.opset_imports:
        if domain in seen_domains:
            diags.append(_err("", "opset domain %r imported more than once" % domain))
        seen_domains.add(domain)

    available = set()
    for vi in graph.inputs:
        if vi.name in available:
            diags.append(_err(vi.name, "duplicate graph input name"))
        available.add(vi.name)
    init_names = set()
    for tensor in graph.initializers:
        if tensor.name in init_names:
            diags.append(_err(tensor.name, "duplicate initializer name"))
        init_names.add(tensor.name)
        if tensor.data is not None and tensor.data.size != tensor.size:
            diags.append(_err(tensor.name, "initializer payload does not match dims"))
    available |= init_names

    produced = set()
    consumed = set()
    for node in graph.nodes:
        label = node.name or node.op_type
        if not node.op_type:
            diags.append(_err(label, "empty op_type"))
        for name in node.inputs:
            if name == "":
                continue  # optional input slot
            consumed.add(name)
            if name not in available:
                diags.append(_err(label, "consumes undefined tensor %r" % name))
        for name in node.outputs:
            if name == "":
                continue
            if name in produced:
                diags.append(_err(label, "output %r produced more than once" % name))
            if name in init_names or name in graph.input_names():
                diags.append(_err(label, "output %r shadows a graph input or initializer" % name))
            produced.add(name)
            available.add(name)

    for vi in graph.outputs:
        if vi.name not in available:
            diags.append(_err(vi.name, "graph output is never produced"))

    for name in init_names - consumed:
        diags.append(_warn(name, "initializer consumed by no node"))

    return diags


def has_errors(diagnostics) -> bool:
    return any(d.severity == "error" for d in diagnostics)
