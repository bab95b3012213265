"""Estimator-style front end: fit a pruning plan, transform models with it.

``TreePruner`` follows the scikit-learn contract (``get_params`` /
``set_params`` / ``fit`` / ``transform``), so it clones, grid-searches,
and composes like any other transformer; the "X" it consumes is a model
archive (or a path to one) rather than a data matrix.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .attributes import AttributeRegistry
from .errors import ValidationError
from .graph import build_graph
from .model import ModelArchive, has_errors, validate_syntax
from .rewrite import apply_plan
from .scoring import Criterion, PlanEntry, PruningPlan, make_plan
from .serde import load_model
from .shapes import infer_shapes
from .tree import build_all_trees, merge_groups, select_groups


def check_model(model) -> ModelArchive:
    """Validation helper: coerce to an archive and reject broken graphs.

    Accepts a ModelArchive or a path; raises ValidationError when syntax
    checks produce errors (warnings pass through).
    """
    if not isinstance(model, ModelArchive):
        model = load_model(model)
    diags = validate_syntax(model)
    if has_errors(diags):
        raise ValidationError(
            "model failed validation: "
            + "; ".join(str(d) for d in diags if d.severity == "error"),
            diags,
        )
    return model


def _structure_signature(model: ModelArchive):
    return tuple(
        (node.name, node.op_type, node.inputs, node.outputs) for node in model.graph.nodes
    )


class TreePruner(TransformerMixin, BaseEstimator):
    """Structured channel pruner over model archives.

    Parameters
    ----------
    ratio : float, default=0.5
        Fraction of channels removed per prunable group, in [0, 1).
    norm : {"l1", "l2"}, default="l1"
        Filter norm used by the importance scores.
    mode : {"tree", "single"}, default="tree"
        "tree" scores channels jointly with every downstream weighted
        consumer; "single" uses producer norms alone.
    include_classifier : bool, default=False
        Also prune groups whose channels are visible in a graph output
        (changes the output shape).
    registry : AttributeRegistry, optional
        Operator classification registry with user extensions.

    Attributes
    ----------
    plan_ : PruningPlan
        Keep masks and scores per pruning group.
    groups_ : list of PruningGroup
        All pruning groups found, including skipped ones.
    diagnostics_ : list of Diagnostic
        Policy and scoring warnings gathered during fit.
    """

    def __init__(self, ratio=0.5, norm="l1", mode="tree",
                 include_classifier=False, registry=None):
        self.ratio = ratio
        self.norm = norm
        self.mode = mode
        self.include_classifier = include_classifier
        self.registry = registry

    def _pipeline(self, model: ModelArchive):
        registry = self.registry if self.registry is not None else AttributeRegistry()
        graph = build_graph(model)
        shapes = infer_shapes(model, graph)
        trees = build_all_trees(graph, registry)
        groups = merge_groups(trees, registry)
        selected, diags = select_groups(groups, bool(self.include_classifier))
        return graph, shapes, groups, selected, diags

    def fit(self, X, y=None):
        """Learn keep masks from the model's weights."""
        if not 0.0 <= float(self.ratio) < 1.0:
            raise ValueError("ratio must be in [0, 1), got %r" % (self.ratio,))
        model = check_model(X)
        criterion = Criterion.parse(self.norm, self.mode)
        graph, shapes, groups, selected, diags = self._pipeline(model)
        plan = make_plan(model, graph, selected, float(self.ratio), criterion, shapes)
        self.plan_ = plan
        self.groups_ = groups
        self.diagnostics_ = diags + plan.diagnostics
        self._fitted_model = model
        self._fitted_graph = graph
        self._fitted_shapes = shapes
        self._signature = _structure_signature(model)
        return self

    def transform(self, X) -> ModelArchive:
        """Apply the fitted plan; X must share the fitted architecture."""
        check_is_fitted(self, "plan_")
        model = check_model(X)
        if model is self._fitted_model:
            return apply_plan(model, self._fitted_graph, self._fitted_shapes, self.plan_)
        if _structure_signature(model) != self._signature:
            raise ValidationError(
                "transform input does not match the fitted architecture"
            )
        graph, shapes, _groups, selected, _diags = self._pipeline(model)
        by_id = {g.group_id: g for g in selected}
        plan = PruningPlan(self.plan_.ratio, self.plan_.criterion)
        for entry in self.plan_.entries:
            group = by_id.get(entry.group_id)
            if group is None or group.channels != len(entry.keep):
                raise ValidationError(
                    "fitted plan does not map onto group %s of this model" % entry.group_id
                )
            from .scoring import _require_effects

            plan.entries.append(PlanEntry(
                entry.group_id, group.member_names(), entry.keep, entry.scores,
                group, _require_effects(group, shapes),
            ))
        return apply_plan(model, graph, shapes, plan)
