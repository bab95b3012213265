"""Exception types raised across the toolkit.

Everything derives from :class:`TreepruneError` so callers can catch the
whole family with one clause.  I/O failures surface as the builtin
``OSError``.
"""


class TreepruneError(Exception):
    """Base class for all toolkit errors."""


class ParseError(TreepruneError):
    """Malformed protobuf wire data or an undecodable model file."""


class ValidationError(TreepruneError):
    """A model violates structural invariants (see the attached diagnostics)."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class UnsupportedDtypeError(TreepruneError):
    """A pass needed the values of an initializer whose dtype it cannot touch."""


class UnknownTemplateError(TreepruneError):
    """Requested fixture template does not exist."""


class CycleError(TreepruneError):
    """The node graph contains a cycle."""


class UnsupportedOpError(TreepruneError):
    """Operator outside the supported set on a required path."""


class ShapeMismatchError(TreepruneError):
    """Tensor shapes are inconsistent with the operator's contract."""


class UnknownOperatorError(TreepruneError):
    """Operator type absent from the attribute registry."""


class ConflictError(TreepruneError):
    """Attempt to re-register an operator that already has an attribute."""


class UnboundedTreeError(TreepruneError):
    """Tree expansion exceeded its node budget; indicates a classification bug."""


class ChannelMismatchError(TreepruneError):
    """Coupled producers disagree about the channel count they must share."""


class AxisError(TreepruneError):
    """The pruned axis cannot be resolved for a tensor layout."""


class EmptyReferenceError(TreepruneError):
    """Overlap metric requested against an empty reference index set."""


class UnsupportedRewriteError(TreepruneError):
    """The rewrite pass cannot express this surgery (grouped conv, dynamic dims, ...)."""


class MaskConflictError(TreepruneError):
    """Internal consistency failure while assembling rewrite actions; always a bug."""
