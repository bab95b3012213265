"""Serialization to and from the ONNX protobuf wire format.

Field numbers follow the ONNX message definitions (ModelProto, GraphProto,
NodeProto, TensorProto, ValueInfoProto, AttributeProto, TypeProto,
TensorShapeProto, OperatorSetIdProto).  Tensors are accepted in both the
raw-data and typed-field encodings; writing always emits typed fields for
decoded dtypes and replays the original payload for opaque ones.

Unknown or unsupported fields are dropped with a recorded warning rather
than preserved: rewritten models are regenerated, not patched.
"""

from __future__ import annotations

import logging
import struct

import numpy as np

from . import protowire as pw
from .errors import ParseError, ValidationError
from .model import (
    AttrValue,
    ElemType,
    GraphDef,
    InitializerTensor,
    ModelArchive,
    NodeDef,
    NUMPY_DTYPES,
    ValueInfo,
    has_errors,
    validate_syntax,
)

logger = logging.getLogger(__name__)

# AttributeProto.AttributeType values
_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_STRING = 3
_ATTR_TENSOR = 4
_ATTR_FLOATS = 6
_ATTR_INTS = 7
_ATTR_STRINGS = 8

# TensorProto dtypes whose payload lives in int32_data
_INT32_CARRIED = {ElemType.INT32, ElemType.BOOL, ElemType.INT8, ElemType.UINT8,
                  ElemType.INT16, ElemType.UINT16}


# ---------------------------------------------------------------------------
# decoding


def _decode_dims(shape_payload: bytes, warnings: list) -> tuple:
    dims = []
    for field, wt, val in pw.iter_fields(shape_payload):
        if field == 1:  # Dimension
            pw.expect_len(wt, field)
            dim_value = None
            for dfield, dwt, dval in pw.iter_fields(val):
                if dfield == 1:
                    pw.expect_varint(dwt, dfield)
                    dim_value = pw.to_signed(dval)
                elif dfield == 2:
                    pw.expect_len(dwt, dfield)
                    dim_value = dval.decode("utf-8")
                elif dfield != 3:
                    warnings.append("dimension field %d dropped" % dfield)
            dims.append(dim_value)
        else:
            warnings.append("tensor shape field %d dropped" % field)
    return tuple(dims)


def _decode_value_info(payload: bytes, warnings: list) -> ValueInfo:
    name = ""
    elem_type = ElemType.UNDEFINED
    dims = ()
    for field, wt, val in pw.iter_fields(payload):
        if field == 1:
            pw.expect_len(wt, field)
            name = val.decode("utf-8")
        elif field == 2:  # TypeProto
            pw.expect_len(wt, field)
            for tfield, twt, tval in pw.iter_fields(val):
                if tfield == 1:  # tensor_type
                    pw.expect_len(twt, tfield)
                    for ttfield, ttwt, ttval in pw.iter_fields(tval):
                        if ttfield == 1:
                            pw.expect_varint(ttwt, ttfield)
                            elem_type = ElemType(pw.to_signed(ttval))
                        elif ttfield == 2:
                            pw.expect_len(ttwt, ttfield)
                            dims = _decode_dims(ttval, warnings)
                        else:
                            warnings.append("tensor type field %d dropped" % ttfield)
                elif tfield != 6:  # 6 = denotation, silently ignorable
                    warnings.append("non-tensor type field %d dropped" % tfield)
        elif field != 3:  # 3 = doc_string
            warnings.append("value info field %d dropped" % field)
    return ValueInfo(name, elem_type, dims)


def _decode_tensor(payload: bytes, warnings: list) -> InitializerTensor:
    name = ""
    dtype = ElemType.UNDEFINED
    dims: list[int] = []
    raw_data = None
    floats: list[float] = []
    doubles: list[float] = []
    int32s: list[int] = []
    int64s: list[int] = []
    saw_typed_unsupported = False
    for field, wt, val in pw.iter_fields(payload):
        if field == 1:
            dims.extend(pw.decode_packed_varints(wt, val))
        elif field == 2:
            pw.expect_varint(wt, field)
            dtype = ElemType(pw.to_signed(val))
        elif field == 4:
            floats.extend(pw.decode_packed_floats(wt, val))
        elif field == 5:
            int32s.extend(pw.decode_packed_varints(wt, val))
        elif field == 7:
            int64s.extend(pw.decode_packed_varints(wt, val))
        elif field == 8:
            pw.expect_len(wt, field)
            name = val.decode("utf-8")
        elif field == 9:
            pw.expect_len(wt, field)
            raw_data = bytes(val)
        elif field == 10:
            doubles.extend(pw.decode_packed_doubles(wt, val))
        elif field == 13:
            raise ParseError("tensor %r uses external data, which is unsupported" % name)
        elif field == 14:
            pw.expect_varint(wt, field)
            if pw.to_signed(val) != 0:
                raise ParseError("tensor %r stored outside the model file" % name)
        elif field in (6, 11):
            saw_typed_unsupported = True
        elif field != 12:  # 12 = doc_string
            warnings.append("tensor field %d dropped on %r" % (field, name))

    np_dtype = NUMPY_DTYPES.get(dtype)
    if np_dtype is None or saw_typed_unsupported:
        # pass-through: keep the original encoding byte-for-byte
        return InitializerTensor(name, dtype, dims, raw_payload=payload)

    size = int(np.prod(dims, dtype=np.int64)) if dims else 1
    if raw_data is not None:
        arr = np.frombuffer(raw_data, dtype=np_dtype.newbyteorder("<")).astype(np_dtype)
    elif dtype == ElemType.FLOAT:
        arr = np.asarray(floats, dtype=np_dtype)
    elif dtype == ElemType.DOUBLE:
        arr = np.asarray(doubles, dtype=np_dtype)
    elif dtype == ElemType.INT64:
        arr = np.asarray(int64s, dtype=np_dtype)
    elif dtype in _INT32_CARRIED:
        arr = np.asarray(int32s, dtype=np_dtype)
    else:
        return InitializerTensor(name, dtype, dims, raw_payload=payload)
    if arr.size != size:
        raise ParseError("tensor %r carries %d elements for dims %r" % (name, arr.size, dims))
    return InitializerTensor(name, dtype, dims, data=arr.reshape(dims))


def _decode_attribute(payload: bytes, warnings: list):
    name = ""
    atype = 0
    f = i = s = t = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[bytes] = []
    opaque = False
    for field, wt, val in pw.iter_fields(payload):
        if field == 1:
            pw.expect_len(wt, field)
            name = val.decode("utf-8")
        elif field == 2:
            f = struct.unpack("<f", val)[0]
        elif field == 3:
            pw.expect_varint(wt, field)
            i = pw.to_signed(val)
        elif field == 4:
            pw.expect_len(wt, field)
            s = val
        elif field == 5:
            pw.expect_len(wt, field)
            t = _decode_tensor(val, warnings)
        elif field == 7:
            floats.extend(pw.decode_packed_floats(wt, val))
        elif field == 8:
            ints.extend(pw.decode_packed_varints(wt, val))
        elif field == 9:
            pw.expect_len(wt, field)
            strings.append(bytes(val))
        elif field == 20:
            pw.expect_varint(wt, field)
            atype = pw.to_signed(val)
        elif field == 13:
            pass  # doc_string
        else:
            opaque = True
    if opaque or atype in (5, 10, 11):  # graph-valued and other exotic attrs
        warnings.append("attribute %r kept as opaque payload" % name)
        return name, AttrValue("raw_proto", bytes(payload))
    if atype == _ATTR_FLOAT:
        return name, AttrValue("float", float(f if f is not None else 0.0))
    if atype == _ATTR_INT:
        return name, AttrValue("int", int(i if i is not None else 0))
    if atype == _ATTR_STRING:
        return name, AttrValue("string", (s or b"").decode("utf-8"))
    if atype == _ATTR_TENSOR:
        if t is None:
            raise ParseError("tensor attribute %r has no tensor" % name)
        return name, AttrValue("tensor", t)
    if atype == _ATTR_FLOATS:
        return name, AttrValue("floats", tuple(floats))
    if atype == _ATTR_INTS:
        return name, AttrValue("ints", tuple(ints))
    if atype == _ATTR_STRINGS:
        return name, AttrValue("strings", tuple(b.decode("utf-8") for b in strings))
    # untyped attribute: infer from populated field, oldest exporters do this
    if i is not None:
        return name, AttrValue("int", i)
    if f is not None:
        return name, AttrValue("float", f)
    if s is not None:
        return name, AttrValue("string", s.decode("utf-8"))
    if ints:
        return name, AttrValue("ints", tuple(ints))
    if floats:
        return name, AttrValue("floats", tuple(floats))
    warnings.append("attribute %r has no recognizable payload" % name)
    return name, AttrValue("raw_proto", bytes(payload))


def _decode_node(payload: bytes, warnings: list) -> NodeDef:
    inputs: list[str] = []
    outputs: list[str] = []
    name = ""
    op_type = ""
    attrs = []
    for field, wt, val in pw.iter_fields(payload):
        if field == 1:
            pw.expect_len(wt, field)
            inputs.append(val.decode("utf-8"))
        elif field == 2:
            pw.expect_len(wt, field)
            outputs.append(val.decode("utf-8"))
        elif field == 3:
            pw.expect_len(wt, field)
            name = val.decode("utf-8")
        elif field == 4:
            pw.expect_len(wt, field)
            op_type = val.decode("utf-8")
        elif field == 5:
            pw.expect_len(wt, field)
            attrs.append(_decode_attribute(val, warnings))
        elif field == 7:
            pw.expect_len(wt, field)
            if val:
                warnings.append("node %r domain %r dropped" % (name, val.decode("utf-8")))
        elif field != 6:
            warnings.append("node field %d dropped on %r" % (field, name))
    return NodeDef(op_type, name, inputs, outputs, attrs)


def _decode_graph(payload: bytes, warnings: list) -> GraphDef:
    graph = GraphDef()
    for field, wt, val in pw.iter_fields(payload):
        if field == 1:
            pw.expect_len(wt, field)
            graph.nodes.append(_decode_node(val, warnings))
        elif field == 2:
            pw.expect_len(wt, field)
            graph.name = val.decode("utf-8")
        elif field == 5:
            pw.expect_len(wt, field)
            graph.initializers.append(_decode_tensor(val, warnings))
        elif field == 11:
            pw.expect_len(wt, field)
            graph.inputs.append(_decode_value_info(val, warnings))
        elif field == 12:
            pw.expect_len(wt, field)
            graph.outputs.append(_decode_value_info(val, warnings))
        elif field == 13:
            pw.expect_len(wt, field)
            graph.value_infos.append(_decode_value_info(val, warnings))
        elif field != 10:  # 10 = doc_string
            warnings.append("graph field %d dropped" % field)
    return graph


def decode_model(data: bytes):
    """Parse wire bytes into (ModelArchive, warnings)."""
    graph = None
    ir_version = 0
    producer_name = ""
    producer_version = ""
    opsets = []
    warnings: list[str] = []
    for field, wt, val in pw.iter_fields(bytes(data)):
        if field == 1:
            pw.expect_varint(wt, field)
            ir_version = pw.to_signed(val)
        elif field == 2:
            pw.expect_len(wt, field)
            producer_name = val.decode("utf-8")
        elif field == 3:
            pw.expect_len(wt, field)
            producer_version = val.decode("utf-8")
        elif field == 7:
            pw.expect_len(wt, field)
            graph = _decode_graph(val, warnings)
        elif field == 8:
            pw.expect_len(wt, field)
            domain = ""
            version = 0
            for ofield, owt, oval in pw.iter_fields(val):
                if ofield == 1:
                    pw.expect_len(owt, ofield)
                    domain = oval.decode("utf-8")
                elif ofield == 2:
                    pw.expect_varint(owt, ofield)
                    version = pw.to_signed(oval)
            opsets.append((domain, version))
        elif field in (4, 5, 6, 14):
            pass  # domain / model_version / doc_string / metadata
        else:
            warnings.append("model field %d dropped" % field)
    if graph is None:
        raise ParseError("model has no graph")
    if not opsets:
        opsets = [("", 13)]
        warnings.append("model declares no opset imports; assuming default domain 13")
    model = ModelArchive(graph, ir_version or 8, opsets, producer_name, producer_version)
    for msg in warnings:
        logger.warning("decode: %s", msg)
    return model, warnings


# ---------------------------------------------------------------------------
# encoding


def _encode_dims(dims) -> bytes:
    w = pw.MessageWriter()
    for d in dims:
        dim = pw.MessageWriter()
        if isinstance(d, int):
            dim.varint(1, d)
        elif isinstance(d, str):
            dim.string(2, d)
        # None encodes as an empty Dimension: size unknown
        w.message(1, dim.getvalue())
    return w.getvalue()


def _encode_value_info(vi: ValueInfo) -> bytes:
    w = pw.MessageWriter()
    w.string(1, vi.name)
    tensor_type = pw.MessageWriter()
    tensor_type.varint(1, int(vi.elem_type))
    tensor_type.message(2, _encode_dims(vi.dims))
    type_proto = pw.MessageWriter()
    type_proto.message(1, tensor_type.getvalue())
    w.message(2, type_proto.getvalue())
    return w.getvalue()


def _encode_tensor(t: InitializerTensor) -> bytes:
    if t.data is None:
        return t.raw_payload
    w = pw.MessageWriter()
    w.packed_varints(1, t.dims)
    w.varint(2, int(t.dtype))
    if t.dtype == ElemType.FLOAT:
        w.packed_fixed(4, np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    elif t.dtype == ElemType.DOUBLE:
        w.packed_fixed(10, np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    elif t.dtype == ElemType.INT64:
        w.packed_varints(7, t.data.reshape(-1).tolist())
    elif t.dtype in _INT32_CARRIED:
        w.packed_varints(5, [int(v) for v in t.data.reshape(-1).tolist()])
    elif t.dtype == ElemType.FLOAT16:
        w.packed_varints(5, np.ascontiguousarray(t.data, dtype="<f2").view("<u2").reshape(-1).tolist())
    else:
        raise ParseError("cannot encode dtype %s" % t.dtype.name)
    w.string(8, t.name)
    return w.getvalue()


def _encode_attribute(name: str, attr: AttrValue) -> bytes:
    if attr.kind == "raw_proto":
        return attr.value
    w = pw.MessageWriter()
    w.string(1, name)
    if attr.kind == "float":
        w._chunks.append(pw.encode_tag(2, pw.WIRE_I32))
        w._chunks.append(struct.pack("<f", attr.value))
        w.varint(20, _ATTR_FLOAT)
    elif attr.kind == "int":
        w.varint(3, attr.value)
        w.varint(20, _ATTR_INT)
    elif attr.kind == "string":
        w.string(4, attr.value)
        w.varint(20, _ATTR_STRING)
    elif attr.kind == "tensor":
        w.message(5, _encode_tensor(attr.value))
        w.varint(20, _ATTR_TENSOR)
    elif attr.kind == "floats":
        w.packed_fixed(7, np.asarray(attr.value, dtype="<f4").tobytes())
        w.varint(20, _ATTR_FLOATS)
    elif attr.kind == "ints":
        w.packed_varints(8, attr.value)
        w.varint(20, _ATTR_INTS)
    elif attr.kind == "strings":
        for s in attr.value:
            w.string(9, s)
        w.varint(20, _ATTR_STRINGS)
    else:
        raise ParseError("cannot encode attribute kind %r" % attr.kind)
    return w.getvalue()


def _encode_node(node: NodeDef) -> bytes:
    w = pw.MessageWriter()
    for name in node.inputs:
        w.string(1, name)
    for name in node.outputs:
        w.string(2, name)
    if node.name:
        w.string(3, node.name)
    w.string(4, node.op_type)
    for attr_name, attr in node.attributes:
        w.message(5, _encode_attribute(attr_name, attr))
    return w.getvalue()


def _encode_graph(graph: GraphDef) -> bytes:
    w = pw.MessageWriter()
    for node in graph.nodes:
        w.message(1, _encode_node(node))
    w.string(2, graph.name)
    for tensor in graph.initializers:
        w.message(5, _encode_tensor(tensor))
    for vi in graph.inputs:
        w.message(11, _encode_value_info(vi))
    for vi in graph.outputs:
        w.message(12, _encode_value_info(vi))
    for vi in graph.value_infos:
        w.message(13, _encode_value_info(vi))
    return w.getvalue()


def encode_model(model: ModelArchive) -> bytes:
    """Serialize a ModelArchive to wire bytes (field order is fixed)."""
    w = pw.MessageWriter()
    w.varint(1, model.ir_version)
    if model.producer_name:
        w.string(2, model.producer_name)
    if model.producer_version:
        w.string(3, model.producer_version)
    w.message(7, _encode_graph(model.graph))
    for domain, version in model.opset_imports:
        opset = pw.MessageWriter()
        if domain:
            opset.string(1, domain)
        opset.varint(2, version)
        w.message(8, opset.getvalue())
    return w.getvalue()


# ---------------------------------------------------------------------------
# file API


def load_model(path) -> ModelArchive:
    """Read and parse a model file.

    Raises OSError for unreadable paths and ParseError for malformed bytes.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    model, _warnings = decode_model(data)
    return model


def save_model(model: ModelArchive, path) -> None:
    """Validate and write a model file; refuses structurally broken models."""
    diags = validate_syntax(model)
    if has_errors(diags):
        raise ValidationError(
            "model failed validation: " + "; ".join(str(d) for d in diags if d.severity == "error"),
            diags,
        )
    data = encode_model(model)
    with open(path, "wb") as fh:
        fh.write(data)
