"""Operator classification into the four traversal attributes.

Weighted ops (Conv, ConvTranspose, Gemm, MatMul, Mul) are roots when the
walk starts at them and leaves (stop-process) when reached as descendants.
Shape- and activation-style ops pass channels through untouched
(next-no-process); ops that combine or re-parameterize channels need their
own rewrite handling (next-process).  The registry is extensible for
custom ops, either programmatically or from a config file.
"""

from __future__ import annotations

from enum import Enum

from .errors import ConflictError, UnknownOperatorError


class NodeAttribute(Enum):
    PRUNED = "pruned"
    NEXT_NO_PROCESS = "next-no-process"
    NEXT_PROCESS = "next-process"
    STOP_PROCESS = "stop-process"


class Role(Enum):
    ROOT = "root"
    DESCENDANT = "descendant"


ROOT_SET = frozenset({"Conv", "ConvTranspose", "Gemm", "MatMul", "Mul"})

NO_PROCESS_SET = frozenset({
    "Relu", "Sigmoid", "Softmax", "Tanh", "MaxPool", "AveragePool", "Flatten",
    "GlobalAveragePool", "Pad", "Reshape", "Transpose", "ReduceMean",
    "ReduceMax", "Pow", "Sqrt", "Erf", "Unsqueeze", "Resize", "Slice", "Cast",
})

PROCESS_SET = frozenset({"Add", "Concat", "BatchNormalization", "Sub", "Div", "Gather"})


class AttributeRegistry:
    """Immutable mapping from op type to traversal attribute.

    The built-in sets are pairwise disjoint (asserted at import); the root
    set doubles as the stop set for descendants.  ``register_custom``
    returns a new registry, leaving the receiver untouched.
    """

    def __init__(self, extensions=None):
        self._extensions = dict(extensions or {})
        for op, attr in self._extensions.items():
            if not isinstance(attr, NodeAttribute):
                raise TypeError("extension for %r must be a NodeAttribute" % op)

    @property
    def extensions(self) -> dict:
        return dict(self._extensions)

    def knows(self, op_type: str) -> bool:
        return (
            op_type in ROOT_SET
            or op_type in NO_PROCESS_SET
            or op_type in PROCESS_SET
            or op_type in self._extensions
        )

    def classify(self, op_type: str, role: Role) -> NodeAttribute:
        """Pure positional classification; raises UnknownOperatorError."""
        if op_type in ROOT_SET:
            return NodeAttribute.PRUNED if role == Role.ROOT else NodeAttribute.STOP_PROCESS
        if op_type in NO_PROCESS_SET:
            return NodeAttribute.NEXT_NO_PROCESS
        if op_type in PROCESS_SET:
            return NodeAttribute.NEXT_PROCESS
        ext = self._extensions.get(op_type)
        if ext is not None:
            if ext in (NodeAttribute.PRUNED, NodeAttribute.STOP_PROCESS):
                return NodeAttribute.PRUNED if role == Role.ROOT else NodeAttribute.STOP_PROCESS
            return ext
        raise UnknownOperatorError("operator %r is not classified" % op_type)

    def register_custom(self, op_type: str, attribute: NodeAttribute) -> "AttributeRegistry":
        if op_type in ROOT_SET or op_type in NO_PROCESS_SET or op_type in PROCESS_SET:
            raise ConflictError("operator %r already has a built-in attribute" % op_type)
        if op_type in self._extensions:
            raise ConflictError("operator %r is already registered" % op_type)
        merged = dict(self._extensions)
        merged[op_type] = attribute
        return AttributeRegistry(merged)


assert not (ROOT_SET & NO_PROCESS_SET) and not (ROOT_SET & PROCESS_SET) \
    and not (NO_PROCESS_SET & PROCESS_SET), "built-in attribute sets must be disjoint"


_ATTR_BY_NAME = {a.value: a for a in NodeAttribute}


def classify(registry: AttributeRegistry, op_type: str, role: Role) -> NodeAttribute:
    return registry.classify(op_type, role)


def register_custom(registry: AttributeRegistry, op_type: str, attribute: NodeAttribute):
    return registry.register_custom(op_type, attribute)


def load_extensions(path, registry: AttributeRegistry | None = None) -> AttributeRegistry:
    """Read ``OpType=attribute`` lines (one per line, '#' comments) into a registry."""
    registry = registry or AttributeRegistry()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected OpType=attribute, got %r" % (path, lineno, raw.strip()))
            op, _, attr_name = line.partition("=")
            op = op.strip()
            attr = _ATTR_BY_NAME.get(attr_name.strip().lower())
            if attr is None:
                raise ValueError(
                    "%s:%d: unknown attribute %r (expected one of %s)"
                    % (path, lineno, attr_name.strip(), ", ".join(sorted(_ATTR_BY_NAME)))
                )
            registry = registry.register_custom(op, attr)
    return registry
