import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import treeprune as tp
from treeprune import TreePruner, check_model


def test_get_set_params_roundtrip():
    pruner = TreePruner(ratio=0.3, norm="l2", mode="single", include_classifier=True)
    params = pruner.get_params()
    assert params["ratio"] == 0.3
    assert params["norm"] == "l2"
    assert params["mode"] == "single"
    assert params["include_classifier"] is True
    other = TreePruner().set_params(**params)
    assert other.get_params() == params


def test_clone_keeps_params(fire):
    pruner = TreePruner(ratio=0.7, norm="l2")
    cloned = clone(pruner)
    assert cloned.get_params() == pruner.get_params()


def test_transform_before_fit_raises(fire):
    model, _graph, _shapes = fire
    with pytest.raises(NotFittedError):
        TreePruner().transform(model)


def test_fit_transform_pipeline(fire):
    model, _graph, _shapes = fire
    pruner = TreePruner(ratio=0.5)
    pruned = pruner.fit_transform(model)
    assert isinstance(pruned, tp.ModelArchive)
    assert tp.validate_syntax(pruned) == []
    assert len(pruner.plan_.entries) == 3
    assert tp.count_params(pruned) < tp.count_params(model)


def test_fit_accepts_paths(tmp_path, fire):
    model, _graph, _shapes = fire
    path = tmp_path / "m.onnx"
    tp.save_model(model, path)
    pruner = TreePruner(ratio=0.5).fit(str(path))
    pruned = pruner.transform(str(path))
    assert tp.count_params(pruned) < tp.count_params(model)


def test_invalid_ratio_rejected(fire):
    model, _graph, _shapes = fire
    with pytest.raises(ValueError):
        TreePruner(ratio=1.0).fit(model)


def test_check_model_rejects_broken():
    graph = tp.GraphDef(nodes=[tp.NodeDef("Relu", "r", ["ghost"], ["y"])],
                        outputs=[tp.ValueInfo("y", tp.ElemType.FLOAT, (1,))])
    with pytest.raises(tp.ValidationError):
        check_model(tp.ModelArchive(graph))


def test_transform_same_architecture_other_weights(fire):
    model, _graph, _shapes = fire
    pruner = TreePruner(ratio=0.5).fit(model)
    sibling = tp.synthesize_model("fire_module", seed=99)
    pruned = pruner.transform(sibling)
    # masks learned on the fitted weights, applied to the sibling's weights
    fitted_prune = {e.group_id: e.pruned_indices for e in pruner.plan_.entries}
    dims = {t.name: t.dims for t in pruned.graph.initializers}
    assert dims["squeeze.weight"][0] == 8 - len(fitted_prune["g0000"])
    sib_w = {t.name: t.data for t in sibling.graph.initializers}
    out_w = {t.name: t.data for t in pruned.graph.initializers}
    keep = [i for i, k in enumerate(pruner.plan_.entries[0].keep) if k]
    np.testing.assert_array_equal(out_w["squeeze.weight"], sib_w["squeeze.weight"][keep])


def test_transform_architecture_mismatch_rejected(fire):
    model, _graph, _shapes = fire
    pruner = TreePruner(ratio=0.5).fit(model)
    other = tp.synthesize_model("residual_block", seed=0)
    with pytest.raises(tp.ValidationError):
        pruner.transform(other)


def test_estimator_matches_manual_pipeline(residual, registry):
    from conftest import pipeline

    model, graph, shapes = residual
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5)
    manual = tp.apply_plan(model, graph, shapes, plan)
    est = TreePruner(ratio=0.5).fit_transform(model)
    assert manual == est
