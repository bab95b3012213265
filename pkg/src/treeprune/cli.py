"""Command-line interface.

Exit codes: 0 success, 1 numeric or equivalence failure, 2 usage or input
errors.  Subcommands never modify their input files, and identical
invocations produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from . import __version__
from .attributes import AttributeRegistry, Role, load_extensions
from .errors import TreepruneError, ValidationError
from .estimator import check_model
from .fixtures import TEMPLATES, synthesize_model
from .graph import build_graph
from .interp import validate_equivalence
from .model import has_errors, validate_syntax
from .report import summarize
from .rewrite import apply_plan
from .scoring import Criterion, PruningPlan, make_plan
from .serde import load_model, save_model
from .shapes import infer_shapes
from .tree import (
    build_all_trees,
    build_tree,
    merge_groups,
    prunable_roots,
    select_groups,
    tree_to_dict,
    tree_to_graphviz,
)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2


@dataclass
class RunConfig:
    """Validated knobs shared by the pipeline subcommands."""

    ratio: float = 0.5
    norm: str = "l1"
    mode: str = "tree"
    include_classifier: bool = False
    registry: AttributeRegistry = None
    seed: int = 0
    trials: int = 8
    tolerance: float = 1e-5
    fmt: str = "text"
    threads: int = 1

    @staticmethod
    def from_args(args) -> "RunConfig":
        cfg = RunConfig()
        ratio = getattr(args, "ratio", None)
        if ratio is not None:
            if not 0.0 <= ratio < 1.0:
                raise ValidationError("--ratio must be in [0, 1), got %g" % ratio)
            cfg.ratio = ratio
        cfg.norm = getattr(args, "criterion", cfg.norm)
        cfg.mode = getattr(args, "mode", cfg.mode)
        cfg.include_classifier = getattr(args, "include_classifier", False)
        cfg.seed = getattr(args, "seed", 0)
        cfg.trials = getattr(args, "trials", 8)
        cfg.tolerance = getattr(args, "tolerance", 1e-5)
        cfg.fmt = getattr(args, "format", "text")
        cfg.threads = int(os.environ.get("TREEPRUNE_THREADS", "1") or "1")
        ext = getattr(args, "registry_extension", None)
        cfg.registry = load_extensions(ext) if ext else AttributeRegistry()
        return cfg


def _pipeline(model, cfg: RunConfig):
    graph = build_graph(model)
    shapes = infer_shapes(model, graph)
    trees = build_all_trees(graph, cfg.registry)
    groups = merge_groups(trees, cfg.registry)
    selected, diags = select_groups(groups, cfg.include_classifier)
    return graph, shapes, trees, groups, selected, diags


def _print_diags(diags):
    for d in diags:
        print(str(d), file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def cmd_inspect(args) -> int:
    cfg = RunConfig.from_args(args)
    model = load_model(args.model)
    diags = validate_syntax(model)
    _print_diags(diags)
    if has_errors(diags):
        return EXIT_USAGE
    graph = build_graph(model)
    roots, root_diags = prunable_roots(graph, cfg.registry)
    root_set = set(roots)
    _print_diags(root_diags)
    trees = {}
    for idx in roots:
        try:
            trees[idx] = build_tree(graph, cfg.registry, idx)
        except TreepruneError as exc:
            print("warning: %s not expandable: %s" % (graph.label(idx), exc), file=sys.stderr)
    groups = merge_groups(trees, cfg.registry) if trees else []
    selected, _policy_diags = select_groups(groups, cfg.include_classifier)
    default_prunable = sum(len(g.members) for g in selected)

    rows = []
    unknown = []
    for idx, node in enumerate(graph.nodes):
        if idx in root_set:
            attr = "pruned"
        elif cfg.registry.knows(node.op_type):
            attr = cfg.registry.classify(node.op_type, Role.DESCENDANT).value
        else:
            attr = "unknown"
            unknown.append(node.op_type)
        rows.append((graph.label(idx), node.op_type,
                     ",".join(node.inputs), ",".join(node.outputs), attr))
    if cfg.fmt == "json":
        print(json.dumps({
            "nodes": [
                {"name": r[0], "op_type": r[1], "inputs": r[2].split(",") if r[2] else [],
                 "outputs": r[3].split(",") if r[3] else [], "attribute": r[4]}
                for r in rows
            ],
            "roots": len(roots),
            "prunable": default_prunable,
        }, indent=2))
    else:
        width = max([len(r[0]) for r in rows] + [4])
        print("%-*s %-22s %-15s %s" % (width, "node", "op_type", "attribute", "outputs"))
        for r in rows:
            print("%-*s %-22s %-15s %s" % (width, r[0], r[1], r[4], r[3]))
        print("\nprunable nodes: %d (of %d weighted roots; policy skips output-visible layers)"
              % (default_prunable, len(roots)))
    for op in sorted(set(unknown)):
        print("warning: operator %r is not in the attribute registry" % op, file=sys.stderr)
    return EXIT_OK


def cmd_tree(args) -> int:
    cfg = RunConfig.from_args(args)
    model = check_model(load_model(args.model))
    graph, _shapes, trees, groups, _selected, diags = _pipeline(model, cfg)
    _print_diags(diags)
    if cfg.fmt == "dot":
        text = "\n".join(tree_to_graphviz(t) for t in trees.values())
    else:
        payload = {
            "trees": [tree_to_dict(t) for _idx, t in sorted(trees.items())],
            "groups": [
                {
                    "id": g.group_id,
                    "members": g.member_names(),
                    "channels": g.channels,
                    "observable": g.observable,
                    "locked": g.locked,
                }
                for g in groups
            ],
        }
        text = json.dumps(payload, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = RunConfig.from_args(args)
    model = check_model(load_model(args.model))
    graph, shapes, _trees, _groups, selected, diags = _pipeline(model, cfg)
    criterion = Criterion.parse(cfg.norm, cfg.mode)
    plan = make_plan(model, graph, selected, cfg.ratio, criterion, shapes,
                     threads=cfg.threads)
    _print_diags(diags + plan.diagnostics)
    pruned = apply_plan(model, graph, shapes, plan)
    out_diags = validate_syntax(pruned)
    if has_errors(out_diags):
        _print_diags(out_diags)
        return EXIT_NUMERIC
    save_model(pruned, args.output)
    if args.plan_out:
        with open(args.plan_out, "w", encoding="utf-8") as fh:
            fh.write(plan.to_json() + "\n")
    report = summarize(model, pruned, plan)
    if cfg.fmt == "json":
        print(report.to_json())
    else:
        print(report.to_text())
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = RunConfig.from_args(args)
    model = check_model(load_model(args.model))
    graph, shapes, _trees, _groups, selected, diags = _pipeline(model, cfg)
    criterion = Criterion.parse(cfg.norm, cfg.mode)
    plan = make_plan(model, graph, selected, cfg.ratio, criterion, shapes,
                     threads=cfg.threads)
    _print_diags(diags + plan.diagnostics)
    if args.pruned:
        pruned = load_model(args.pruned)
    else:
        pruned = apply_plan(model, graph, shapes, plan)
    report = validate_equivalence(model, plan, pruned, trials=cfg.trials,
                                  tol=cfg.tolerance, seed=cfg.seed)
    if cfg.fmt == "json":
        print(report.to_json())
    else:
        status = "PASS" if report.passed else "FAIL"
        print("%s  max deviation %.3g over %d trials (tolerance %.3g)"
              % (status, report.worst, report.trials, report.tolerance))
        for msg in report.warnings + report.messages:
            print("  " + msg)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_report(args) -> int:
    cfg = RunConfig.from_args(args)
    before = check_model(load_model(args.before))
    after = check_model(load_model(args.after))
    plan = reference = None
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan = PruningPlan.from_json(fh.read())
    if args.reference:
        with open(args.reference, "r", encoding="utf-8") as fh:
            reference = PruningPlan.from_json(fh.read())
    report = summarize(before, after, plan, reference)
    if cfg.fmt == "json":
        print(report.to_json())
    else:
        print(report.to_text())
    return EXIT_OK


def cmd_synth(args) -> int:
    params = {}
    if args.depth is not None:
        params["depth"] = args.depth
    if args.blocks is not None:
        params["blocks"] = args.blocks
    model = synthesize_model(args.template, seed=args.seed, **params)
    save_model(model, args.output)
    print("wrote %s (%d nodes, %d initializers)"
          % (args.output, len(model.graph.nodes), len(model.graph.initializers)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p, ratio=False, validate=False, fmt_choices=("text", "json"), fmt_default="text"):
    p.add_argument("--registry-extension", metavar="FILE",
                   help="custom operator attributes, one OpType=attribute per line")
    p.add_argument("--format", choices=fmt_choices, default=fmt_default)
    if ratio:
        p.add_argument("--ratio", type=float, default=0.5,
                       help="fraction of channels to prune per layer group (default 0.5)")
        p.add_argument("--criterion", choices=("l1", "l2"), default="l1")
        p.add_argument("--mode", choices=("tree", "single"), default="tree")
        p.add_argument("--include-classifier", action="store_true",
                       help="also prune layers whose channels reach a graph output")
    if validate:
        p.add_argument("--trials", type=int, default=8)
        p.add_argument("--tolerance", type=float, default=1e-5)
        p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeprune",
        description="Structured channel pruning for ONNX models via node association trees.",
    )
    parser.add_argument("--version", action="version", version="treeprune " + __version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("inspect", help="node table with operator attributes")
    p.add_argument("model")
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("tree", help="emit association trees and pruning groups")
    p.add_argument("model")
    p.add_argument("-o", "--output", help="write to a file instead of stdout")
    _add_common(p, fmt_choices=("json", "dot"), fmt_default="json")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("prune", help="score, rewrite, and save a pruned model")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--plan-out", metavar="FILE", help="also write the plan as JSON")
    _add_common(p, ratio=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("validate", help="masked-equivalence check of the pruning")
    p.add_argument("model")
    p.add_argument("--pruned", metavar="FILE",
                   help="pruned model to check (default: prune in memory)")
    _add_common(p, ratio=True, validate=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="parameter/FLOPs/overlap report between two models")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--plan", metavar="FILE")
    p.add_argument("--reference", metavar="FILE",
                   help="reference plan for the filter-index overlap metric")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a fixture model")
    p.add_argument("template", choices=sorted(TEMPLATES))
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth", type=int, help="conv_chain depth")
    p.add_argument("--blocks", type=int, help="residual_stage block count")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, TreepruneError, OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
