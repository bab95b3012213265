import numpy as np
import pytest

import treeprune as tp
from treeprune.model import attr_int, attr_ints

from conftest import pipeline, random_inputs


def _model_of(nodes, inputs, outputs, initializers=()):
    graph = tp.GraphDef(
        nodes=list(nodes),
        inputs=[tp.ValueInfo(n, tp.ElemType.FLOAT, s) for n, s in inputs],
        outputs=[tp.ValueInfo(n, tp.ElemType.FLOAT, s) for n, s in outputs],
        initializers=list(initializers),
    )
    return tp.ModelArchive(graph)


# ---------------------------------------------------------------------------
# hand-rolled direct convolution, the second implementation the interpreter
# is checked against (quadruple loop; no shared code with the package)


def naive_conv2d(x, w, b, pads, strides):
    n, cin, h, ww = x.shape
    m, _, kh, kw = w.shape
    pt, pl, pb, pr = pads
    sh, sw = strides
    ho = (h + pt + pb - kh) // sh + 1
    wo = (ww + pl + pr - kw) // sw + 1
    out = np.zeros((n, m, ho, wo), dtype=np.float64)
    for ni in range(n):
        for mi in range(m):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * sh + ky - pt
                                ix = ox * sw + kx - pl
                                if 0 <= iy < h and 0 <= ix < ww:
                                    acc += float(x[ni, ci, iy, ix]) * float(w[mi, ci, ky, kx])
                    out[ni, mi, oy, ox] = acc + (float(b[mi]) if b is not None else 0.0)
    return out.astype(np.float32)


def test_identity_1x1_conv():
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    init = tp.InitializerTensor("w", tp.ElemType.FLOAT, (3, 3, 1, 1), data=w)
    model = _model_of(
        [tp.NodeDef("Conv", "c", ["x", "w"], ["y"])],
        [("x", (1, 3, 5, 5))], [("y", (1, 3, 5, 5))], [init],
    )
    x = np.random.default_rng(0).standard_normal((1, 3, 5, 5)).astype(np.float32)
    out = tp.run(model, {"x": x})
    np.testing.assert_array_equal(out["y"], x)


def test_relu_values():
    model = _model_of([tp.NodeDef("Relu", "r", ["x"], ["y"])],
                      [("x", (3,))], [("y", (3,))])
    out = tp.run(model, {"x": np.array([-1.0, 0.0, 2.0], np.float32)})
    np.testing.assert_array_equal(out["y"], [0.0, 0.0, 2.0])


@pytest.mark.parametrize("pads,strides", [([0, 0, 0, 0], [1, 1]), ([1, 1, 1, 1], [2, 2]),
                                          ([2, 1, 2, 1], [1, 1])])
def test_conv_matches_naive(pads, strides):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    init_w = tp.InitializerTensor("w", tp.ElemType.FLOAT, w.shape, data=w)
    init_b = tp.InitializerTensor("b", tp.ElemType.FLOAT, b.shape, data=b)
    node = tp.NodeDef("Conv", "c", ["x", "w", "b"], ["y"],
                      {"pads": attr_ints(pads), "strides": attr_ints(strides)})
    model = _model_of([node], [("x", x.shape)], [("y", (1,))], [init_w, init_b])
    got = tp.run(model, {"x": x})["y"]
    want = naive_conv2d(x, w, b, pads, strides)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_convtranspose_matches_naive_scatter():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 5, 3, 3)).astype(np.float32)  # (cin, cout, kh, kw)
    pads = [1, 1, 1, 1]
    init_w = tp.InitializerTensor("w", tp.ElemType.FLOAT, w.shape, data=w)
    node = tp.NodeDef("ConvTranspose", "ct", ["x", "w"], ["y"], {"pads": attr_ints(pads)})
    model = _model_of([node], [("x", x.shape)], [("y", (1,))], [init_w])
    got = tp.run(model, {"x": x})["y"]

    # scatter semantics oracle
    ho = (6 - 1) - pads[0] - pads[2] + 3
    wo = (6 - 1) - pads[1] - pads[3] + 3
    want = np.zeros((1, 5, ho + pads[0] + pads[2], wo + pads[1] + pads[3]), np.float64)
    for ci in range(3):
        for co in range(5):
            for iy in range(6):
                for ix in range(6):
                    for ky in range(3):
                        for kx in range(3):
                            want[0, co, iy + ky, ix + kx] += float(x[0, ci, iy, ix]) * float(w[ci, co, ky, kx])
    want = want[:, :, pads[0]:pads[0] + ho, pads[1]:pads[1] + wo].astype(np.float32)
    np.testing.assert_allclose(got, want, atol=1e-5)
    env = tp.infer_shapes(model, tp.build_graph(model))
    assert got.shape == env["y"]


def test_fire_forward_matches_naive(fire):
    model, graph, _shapes = fire
    x = random_inputs(model, seed=11)["input"]
    got = tp.run(model, {"input": x})[model.graph.outputs[0].name]

    w = {t.name: t.data for t in model.graph.initializers}
    s = np.maximum(naive_conv2d(x, w["squeeze.weight"], w["squeeze.bias"], [0, 0, 0, 0], [1, 1]), 0)
    e1 = naive_conv2d(s, w["expand1x1.weight"], w["expand1x1.bias"], [0, 0, 0, 0], [1, 1])
    e3 = naive_conv2d(s, w["expand3x3.weight"], w["expand3x3.bias"], [1, 1, 1, 1], [1, 1])
    cat = np.concatenate([e1, e3], axis=1)
    want = naive_conv2d(cat, w["head.weight"], w["head.bias"], [0, 0, 0, 0], [1, 1])
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_pool_kernels():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    mp = tp.NodeDef("MaxPool", "m", ["x"], ["y"],
                    {"kernel_shape": attr_ints([2, 2]), "strides": attr_ints([2, 2])})
    ap = tp.NodeDef("AveragePool", "a", ["x"], ["z"],
                    {"kernel_shape": attr_ints([2, 2]), "strides": attr_ints([2, 2])})
    gp = tp.NodeDef("GlobalAveragePool", "g", ["x"], ["w"])
    model = _model_of([mp, ap, gp], [("x", (1, 1, 4, 4))],
                      [("y", (1, 1, 2, 2)), ("z", (1, 1, 2, 2)), ("w", (1, 1, 1, 1))])
    out = tp.run(model, {"x": x})
    np.testing.assert_array_equal(out["y"][0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(out["z"][0, 0], [[2.5, 4.5], [10.5, 12.5]])
    assert out["w"][0, 0, 0, 0] == pytest.approx(7.5)


def test_averagepool_pad_excludes_padding():
    x = np.ones((1, 1, 2, 2), dtype=np.float32)
    node = tp.NodeDef("AveragePool", "a", ["x"], ["y"],
                      {"kernel_shape": attr_ints([2, 2]), "strides": attr_ints([1, 1]),
                       "pads": attr_ints([1, 1, 1, 1])})
    model = _model_of([node], [("x", (1, 1, 2, 2))], [("y", (1, 1, 3, 3))])
    out = tp.run(model, {"x": x})["y"]
    np.testing.assert_allclose(out[0, 0], np.ones((3, 3)))  # divisor counts real cells only


def test_batchnorm_inference_formula():
    x = np.random.default_rng(1).standard_normal((1, 2, 3, 3)).astype(np.float32)
    params = {
        "s": np.array([2.0, 0.5], np.float32),
        "b": np.array([1.0, -1.0], np.float32),
        "m": np.array([0.1, 0.2], np.float32),
        "v": np.array([1.5, 0.75], np.float32),
    }
    inits = [tp.InitializerTensor(k, tp.ElemType.FLOAT, v.shape, data=v)
             for k, v in params.items()]
    node = tp.NodeDef("BatchNormalization", "bn", ["x", "s", "b", "m", "v"], ["y"])
    model = _model_of([node], [("x", x.shape)], [("y", x.shape)], inits)
    out = tp.run(model, {"x": x})["y"]
    want = (params["s"].reshape(1, 2, 1, 1) * (x - params["m"].reshape(1, 2, 1, 1))
            / np.sqrt(params["v"].reshape(1, 2, 1, 1) + 1e-5) + params["b"].reshape(1, 2, 1, 1))
    np.testing.assert_allclose(out, want, atol=1e-6)


def test_softmax_gemm_matmul():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 4)).astype(np.float32)
    w = rng.standard_normal((3, 4)).astype(np.float32)
    wm = rng.standard_normal((3, 5)).astype(np.float32)
    inits = [
        tp.InitializerTensor("w", tp.ElemType.FLOAT, w.shape, data=w),
        tp.InitializerTensor("wm", tp.ElemType.FLOAT, wm.shape, data=wm),
    ]
    nodes = [
        tp.NodeDef("Gemm", "g", ["x", "w"], ["h"], {"transB": attr_int(1)}),
        tp.NodeDef("MatMul", "m", ["h", "wm"], ["l"]),
        tp.NodeDef("Softmax", "s", ["l"], ["y"], {"axis": attr_int(-1)}),
    ]
    model = _model_of(nodes, [("x", (2, 4))], [("y", (2, 5))], inits)
    out = tp.run(model, {"x": x})["y"]
    h = x @ w.T
    l = h @ wm
    e = np.exp(l - l.max(axis=-1, keepdims=True))
    np.testing.assert_allclose(out, e / e.sum(axis=-1, keepdims=True), atol=1e-6)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_elementwise_and_shape_ops():
    x = np.array([[4.0, 9.0]], np.float32)
    nodes = [
        tp.NodeDef("Sqrt", "sq", ["x"], ["a"]),
        tp.NodeDef("Unsqueeze", "us", ["a"], ["b"], {"axes": attr_ints([2])}),
        tp.NodeDef("Transpose", "tr", ["b"], ["c"], {"perm": attr_ints([2, 1, 0])}),
        tp.NodeDef("Flatten", "fl", ["c"], ["y"], {"axis": attr_int(1)}),
    ]
    model = _model_of(nodes, [("x", (1, 2))], [("y", (1, 2))])
    out = tp.run(model, {"x": x})["y"]
    np.testing.assert_allclose(out, [[2.0, 3.0]])


def test_unsupported_op_raises():
    model = _model_of([tp.NodeDef("Resize", "r", ["x"], ["y"])],
                      [("x", (1, 2))], [("y", (1, 2))])
    with pytest.raises(tp.UnsupportedOpError):
        tp.run(model, {"x": np.zeros((1, 2), np.float32)})


def test_run_determinism(fire):
    model, _graph, _shapes = fire
    x = random_inputs(model, seed=3)
    a = tp.run(model, x)
    b = tp.run(model, x)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


# ---------------------------------------------------------------------------
# masking and equivalence


def test_mask_ratio_zero_is_identity(fire, registry):
    model, graph, shapes = fire
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.0)
    masked = tp.mask_model(model, plan)
    x = random_inputs(model, seed=1)
    a = tp.run(model, x)
    b = tp.run(masked, x)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_masked_channels_are_zero(chain, registry):
    model, graph, shapes = chain
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5)
    masked = tp.mask_model(model, plan)
    x = random_inputs(model, seed=2)
    mgraph = tp.build_graph(masked)
    from treeprune.interp import _Executor

    ex = _Executor(mgraph)
    for name, init in mgraph.initializers.items():
        ex.env[name] = init.data
    ex.env.update(x)
    for idx in mgraph.topo_order:
        ex.run_node(idx)
    feat = ex.env["conv1.out"]
    for i, keep in enumerate(plan.entries[0].keep):
        slab = feat[:, i]
        assert bool(np.any(slab != 0)) == bool(keep)


def test_residual_masked_add_inputs_zeroed(residual, registry):
    model, graph, shapes = residual
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5)
    masked = tp.mask_model(model, plan)
    x = random_inputs(model, seed=5)
    mgraph = tp.build_graph(masked)
    from treeprune.interp import _Executor

    ex = _Executor(mgraph)
    for name, init in mgraph.initializers.items():
        ex.env[name] = init.data
    ex.env.update(x)
    for idx in mgraph.topo_order:
        ex.run_node(idx)
    pruned_idx = list(plan.entries[0].pruned_indices)
    np.testing.assert_array_equal(ex.env["relu_in.out"][:, pruned_idx], 0.0)
    np.testing.assert_array_equal(ex.env["bn_mid.out"][:, pruned_idx], 0.0)


@pytest.mark.parametrize("ratio", [0.1, 0.5, 0.9])
def test_equivalence_fixture_grid(ratio, registry):
    for template in ("one_to_one", "many_to_many", "fire_module", "residual_stage"):
        model = tp.synthesize_model(template, seed=6)
        graph = tp.build_graph(model)
        shapes = tp.infer_shapes(model, graph)
        _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=ratio)
        pruned = tp.apply_plan(model, graph, shapes, plan)
        report = tp.validate_equivalence(model, plan, pruned, trials=4, tol=1e-5)
        assert report.passed, (template, ratio, report.worst)


def test_equivalence_ratio_zero_exact(fire, registry):
    model, graph, shapes = fire
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.0)
    pruned = tp.apply_plan(model, graph, shapes, plan)
    report = tp.validate_equivalence(model, plan, pruned, trials=3, tol=0.0)
    assert report.passed and report.worst == 0.0


def test_corrupted_pruned_model_fails(fire, registry):
    model, graph, shapes = fire
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5)
    pruned = tp.apply_plan(model, graph, shapes, plan)
    for init in pruned.graph.initializers:
        if init.name == "head.weight":
            init.data[0, 0] += 1.0  # single wrong slice entry
    report = tp.validate_equivalence(model, plan, pruned, trials=4, tol=1e-5)
    assert not report.passed
    assert report.worst > 1e-3


def test_include_classifier_output_comparison(fire, registry):
    model, graph, shapes = fire
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5,
                                include_classifier=True)
    pruned = tp.apply_plan(model, graph, shapes, plan)
    out_vi = pruned.graph.outputs[0]
    assert out_vi.dims[1] == 5  # head outputs halved
    report = tp.validate_equivalence(model, plan, pruned, trials=4, tol=1e-5)
    assert report.passed


def test_report_json_schema(fire, registry):
    import json

    model, graph, shapes = fire
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5)
    pruned = tp.apply_plan(model, graph, shapes, plan)
    report = tp.validate_equivalence(model, plan, pruned, trials=2, tol=1e-5)
    payload = json.loads(report.to_json())
    assert payload["passed"] is True
    assert payload["trials"] == 2
    assert len(payload["per_trial"]) == 2
