"""Acceptance suite: one test per release criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to watch the
PASS/FAIL lines stream).  Criterion 4 compares architecture metrics
against the published figures for this model family; every measured
number is printed next to its target so deviations are visible, never
hidden.
"""

import time

import numpy as np
import pytest

import treeprune as tp
from treeprune.scoring import NormKind
from treeprune.tree import select_groups

from conftest import pipeline, random_inputs
from test_scoring import (
    ref_many_to_many,
    ref_many_to_one,
    ref_one_to_many,
    ref_one_to_one,
)
from test_tree import shape_of


def _emit(capsys, line):
    with capsys.disabled():
        print(line)


def _check(capsys, number, label, failures, budget, elapsed):
    status = "PASS" if not failures else "FAIL"
    _emit(capsys, "ACCEPTANCE %d [%s] %s (%.2fs)" % (number, status, label, elapsed))
    assert elapsed < budget, "criterion %d exceeded its %.0fs budget" % (number, budget)
    if failures:
        pytest.fail("criterion %d: " % number + "; ".join(failures))


# ---------------------------------------------------------------------------
# 1. golden association trees


GOLDEN_TREES = {
    "one_to_one": ("conv_a", "pruned", (("conv_b", "stop-process", ()),)),
    "one_to_many": ("conv_a", "pruned",
                    (("conv_b", "stop-process", ()), ("conv_c", "stop-process", ()))),
    "many_to_one": ("conv_a", "pruned",
                    (("merge", "next-process", (("conv_c", "stop-process", ()),)),)),
    "many_to_many": ("conv_a", "pruned",
                     (("merge", "next-process",
                       (("conv_c", "stop-process", ()), ("conv_d", "stop-process", ()))),)),
    "fire_module": ("squeeze", "pruned",
                    (("squeeze_relu", "next-no-process",
                      (("expand1x1", "stop-process", ()),
                       ("expand3x3", "stop-process", ()))),)),
}
GOLDEN_ROOTS = {"fire_module": "squeeze"}


def test_criterion_1_tree_goldens(capsys, registry):
    start = time.monotonic()
    failures = []
    for template, golden in GOLDEN_TREES.items():
        model = tp.synthesize_model(template, seed=1)
        graph = tp.build_graph(model)
        root = graph.node_index(GOLDEN_ROOTS.get(template, "conv_a"))
        tree = tp.build_tree(graph, registry, root)
        got = shape_of(tree)
        if got != golden:
            failures.append("%s: %r != golden %r" % (template, got, golden))
    elapsed = time.monotonic() - start
    _check(capsys, 1, "association-tree goldens on the five pattern graphs",
           failures, 1.0, elapsed)


# ---------------------------------------------------------------------------
# 2. closed-form score specialization


def test_criterion_2_formula_specialization(capsys, registry):
    start = time.monotonic()
    failures = []
    cases = {
        "one_to_one": lambda w, kind: ref_one_to_one(
            w["conv_a.weight"], w["conv_b.weight"], kind),
        "one_to_many": lambda w, kind: ref_one_to_many(
            w["conv_a.weight"], w["conv_b.weight"], w["conv_c.weight"], kind),
        "many_to_one": lambda w, kind: ref_many_to_one(
            w["conv_b.weight"], w["conv_a.weight"], w["conv_c.weight"], kind),
        "many_to_many": lambda w, kind: ref_many_to_many(
            w["conv_b.weight"], w["conv_a.weight"], w["conv_c.weight"],
            w["conv_d.weight"], kind),
    }
    seeds = range(100)
    for template, reference in cases.items():
        for seed in seeds:
            model = tp.synthesize_model(template, seed=seed)
            graph = tp.build_graph(model)
            shapes = tp.infer_shapes(model, graph)
            groups = tp.merge_groups(tp.build_all_trees(graph, registry), registry)
            group = next(g for g in groups if "conv_a" in g.member_names())
            weights = {t.name: t.data for t in model.graph.initializers}
            for kind in (NormKind.L1, NormKind.L2):
                got = tp.tree_score(group, kind, shapes).values
                want = np.asarray(reference(weights, kind))
                rel = np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300))
                if rel > 1e-12:
                    failures.append("%s seed %d %s: rel err %.3g"
                                    % (template, seed, kind.value, rel))
    elapsed = time.monotonic() - start
    _check(capsys, 2,
           "tree scores equal the closed-form pattern formulas "
           "(100 seeds x 4 graphs x l1/l2, rel 1e-12)",
           failures, 10.0, elapsed)


# ---------------------------------------------------------------------------
# 3. masked-equivalence grid


EQUIV_FIXTURES = (
    ("conv_chain", {"seed": 7, "depth": 2}),
    ("fire_module", {"seed": 1}),
    ("residual_block", {"seed": 2}),
    ("residual_stage", {"seed": 2, "blocks": 2}),
    ("many_to_many", {"seed": 1}),
    ("alexnet_cifar", {"seed": 0}),
    ("vgg16_cifar", {"seed": 0}),
)
EQUIV_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)


def test_criterion_3_masked_equivalence(capsys, registry):
    start = time.monotonic()
    failures = []
    for template, params in EQUIV_FIXTURES:
        model = tp.synthesize_model(template, **params)
        graph = tp.build_graph(model)
        shapes = tp.infer_shapes(model, graph)
        trees = tp.build_all_trees(graph, registry)
        groups = tp.merge_groups(trees, registry)
        selected, _ = select_groups(groups)
        for ratio in EQUIV_RATIOS:
            plan = tp.make_plan(model, graph, selected, ratio,
                                tp.Criterion.parse("l1", "tree"), shapes)
            pruned = tp.apply_plan(model, graph, shapes, plan)
            report = tp.validate_equivalence(model, plan, pruned, trials=8, tol=1e-5)
            if not report.passed:
                failures.append("%s @ %.1f: deviation %.3g"
                                % (template, ratio, report.worst))
    elapsed = time.monotonic() - start
    _check(capsys, 3,
           "masked-equivalence on 7 fixtures x 5 ratios (8 trials, tol 1e-5)",
           failures, 120.0, elapsed)


# ---------------------------------------------------------------------------
# 4. architecture metrics vs the published table


TABLE_TARGETS = {
    0.3: (49.89, 1.89),
    0.5: (74.02, 3.37),
    0.7: (90.19, 7.57),
    0.9: (98.62, 30.11),
}


def test_criterion_4_architecture_metrics(capsys, vgg, registry):
    start = time.monotonic()
    model, graph, shapes = vgg
    trees = tp.build_all_trees(graph, registry)
    groups = tp.merge_groups(trees, registry)
    selected, _ = select_groups(groups)

    rows = []
    for ratio, (target_sparsity, target_speedup) in TABLE_TARGETS.items():
        plan = tp.make_plan(model, graph, selected, ratio,
                            tp.Criterion.parse("l1", "tree"), shapes)
        pruned = tp.apply_plan(model, graph, shapes, plan)
        rep = tp.summarize(model, pruned, plan)
        rows.append((ratio, 100 * rep.sparsity, target_sparsity,
                     rep.speedup, target_speedup))

    _emit(capsys, "  fixture: 13 conv + 512/10 head, no batch-norm; "
                  "params %.2fM (published family figure: 14.16M), "
                  "flops %.3fG (published: 0.58G)"
          % (tp.count_params(model) / 1e6, tp.count_flops(model, shapes, graph) / 1e9))
    failures = []
    for ratio, sparsity, t_sparsity, speedup, t_speedup in rows:
        s_ok = abs(sparsity - t_sparsity) <= 2.0
        v_ok = abs(speedup - t_speedup) <= 0.10 * t_speedup
        _emit(capsys,
              "  PR %.1f  sparsity %6.2f%% vs %5.2f%% [%s]   speedup %6.2fx vs %5.2fx [%s]"
              % (ratio, sparsity, t_sparsity, "ok" if s_ok else "OUT",
                 speedup, t_speedup, "ok" if v_ok else "OUT"))
        if not s_ok:
            failures.append("sparsity @%.1f: %.2f%% vs %.2f%% (±2pp)"
                            % (ratio, sparsity, t_sparsity))
        if not v_ok:
            failures.append("speedup @%.1f: %.2fx vs %.2fx (±10%%)"
                            % (ratio, speedup, t_speedup))
    elapsed = time.monotonic() - start
    _check(capsys, 4, "published-table sparsity/speedup bands", failures, 30.0, elapsed)


# ---------------------------------------------------------------------------
# 5. criterion disagreement shrinks with the ratio


def test_criterion_5_overlap_behavior(capsys, alexnet, registry):
    start = time.monotonic()
    model, graph, shapes = alexnet
    trees = tp.build_all_trees(graph, registry)
    groups = tp.merge_groups(trees, registry)
    selected, _ = select_groups(groups)

    def overlaps(ratio):
        tree_plan = tp.make_plan(model, graph, selected, ratio,
                                 tp.Criterion.parse("l1", "tree"), shapes)
        single_plan = tp.make_plan(model, graph, selected, ratio,
                                   tp.Criterion.parse("l1", "single"), shapes)
        return [
            tp.overlap_index(t.pruned_indices, s.pruned_indices)
            for t, s in zip(tree_plan.entries, single_plan.entries)
            if s.pruned_indices
        ]

    failures = []
    low = overlaps(0.3)
    high = overlaps(0.9)
    _emit(capsys, "  per-layer overlap @0.3: %s" % ["%.2f" % o for o in low])
    _emit(capsys, "  per-layer overlap @0.9: %s" % ["%.2f" % o for o in high])
    if min(low) >= 0.8:
        failures.append("no layer with overlap < 0.8 at ratio 0.3 (min %.3f)" % min(low))
    mean_high = float(np.mean(high))
    if abs(1.0 - mean_high) > 0.05:
        failures.append("mean overlap at 0.9 is %.3f, not within 0.05 of 1.0" % mean_high)
    elapsed = time.monotonic() - start
    _check(capsys, 5,
           "tree vs single-node plans: low-ratio disagreement, high-ratio convergence",
           failures, 30.0, elapsed)


# ---------------------------------------------------------------------------
# 6. consolidated properties + fault injection


def test_criterion_6_properties_and_fault_injection(capsys, tmp_path, registry):
    start = time.monotonic()
    failures = []

    # round-trip identity
    model = tp.synthesize_model("fire_module", seed=1)
    path = tmp_path / "m.onnx"
    tp.save_model(model, path)
    if tp.load_model(path) != model:
        failures.append("serialize/deserialize round-trip broke the archive")

    # determinism of synthesis
    from treeprune.serde import encode_model

    if encode_model(tp.synthesize_model("alexnet_cifar", seed=4)) != \
            encode_model(tp.synthesize_model("alexnet_cifar", seed=4)):
        failures.append("fixture synthesis is not byte-deterministic")

    # parameter accounting
    graph = tp.build_graph(model)
    shapes = tp.infer_shapes(model, graph)
    _t, _g, _s, plan = pipeline(model, graph, shapes, registry, ratio=0.5)
    pruned = tp.apply_plan(model, graph, shapes, plan)
    from treeprune.rewrite import collect_actions, removed_elements

    actions, _ = collect_actions(graph, plan)
    by_target = {}
    for a in actions:
        by_target.setdefault(a.target, {})[a.axis] = len(a.keep_indices)
    removed = sum(removed_elements(graph.initializers[t].dims, ax)
                  for t, ax in by_target.items())
    if tp.count_params(model) - tp.count_params(pruned) != removed:
        failures.append("parameter accounting mismatch")

    # interpreter vs static shapes
    x = random_inputs(model, seed=0)
    outputs = tp.run(model, x)
    for vi in model.graph.outputs:
        if tuple(outputs[vi.name].shape) != tuple(shapes[vi.name]):
            failures.append("interpreter/shape-inference disagreement on %s" % vi.name)

    # fault injection: a single wrong slice must be caught
    sabotaged = tp.apply_plan(model, graph, shapes, plan)
    for init in sabotaged.graph.initializers:
        if init.name == "head.weight":
            init.data[0, 0] += 1.0
    report = tp.validate_equivalence(model, plan, sabotaged, trials=8, tol=1e-5)
    if report.passed:
        failures.append("fault injection was not detected")

    elapsed = time.monotonic() - start
    _check(capsys, 6,
           "round-trip, determinism, accounting, interpreter agreement, fault injection",
           failures, 60.0, elapsed)
