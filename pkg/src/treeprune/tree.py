"""Association trees: which nodes must change when a layer loses channels.

For every prunable (root) node the tree records, per dataflow path, the
downstream nodes its output-channel axis influences: pass-through nodes
keep expanding, weighted consumers terminate branches as leaves.  Trees
whose roots are forced to share one channel mask (their outputs merge in
an elementwise node such as a residual Add) are merged into pruning
groups via union-find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .attributes import AttributeRegistry, NodeAttribute, PROCESS_SET, ROOT_SET, Role
from .errors import ChannelMismatchError, UnboundedTreeError, UnknownOperatorError
from .graph import NodeGraph
from .model import Diagnostic

# elementwise ops that force their data operands to share one channel mask
MERGE_OPS = frozenset({"Add", "Sub", "Div", "Mul"})

# ops through which a channel axis passes 1:1 (used when tracing the mask
# controller of a tensor; anything not listed is treated as opaque)
_CHANNEL_PRESERVING = frozenset({
    "Relu", "Sigmoid", "Tanh", "Softmax", "Erf", "Sqrt", "Cast",
    "MaxPool", "AveragePool", "GlobalAveragePool", "Resize", "Pad",
})


def classify_node(registry: AttributeRegistry, graph: NodeGraph, idx: int, role: Role):
    """Graph-aware classification.

    Identical to the positional table except for Mul, whose "weight" the
    table leaves ambiguous.  As a descendant it always passes channels
    through 1:1 (a broadcast constant is sliced in place, two computed
    operands couple their producers), so it classifies next-process, and
    it can anchor a tree only when exactly one operand is a constant.
    """
    node = graph.nodes[idx]
    attr = registry.classify(node.op_type, role)
    if node.op_type == "Mul":
        if role == Role.DESCENDANT:
            return NodeAttribute.NEXT_PROCESS
        inits = graph.initializer_inputs(idx)
        if len(inits) != 1:
            return NodeAttribute.NEXT_PROCESS
    return attr


def weight_slot(op_type: str):
    """Input slot holding the weight initializer for weighted ops."""
    if op_type in ("Conv", "ConvTranspose", "Gemm", "MatMul"):
        return 1
    return None


def output_channels(graph: NodeGraph, idx: int):
    """Size of the output-channel axis of a prunable node, or None."""
    node = graph.nodes[idx]
    op = node.op_type
    if op == "Mul":
        inits = graph.initializer_inputs(idx)
        if len(inits) != 1:
            return None
        init = graph.initializers[inits[0][1]]
        dims = [d for d in init.dims if d > 1]
        return dims[0] if len(dims) == 1 else None
    slot = weight_slot(op)
    if slot is None or slot >= len(node.inputs):
        return None
    init = graph.initializers.get(node.inputs[slot])
    if init is None:
        return None
    if op == "Conv":
        return init.dims[0]
    if op == "ConvTranspose":
        return init.dims[1] * int(node.attr("group", 1))
    if op == "Gemm":
        return init.dims[0] if node.attr("transB", 0) else init.dims[1]
    if op == "MatMul":
        return init.dims[-1] if len(init.dims) >= 2 else None
    return None


def prunable_roots(graph: NodeGraph, registry: AttributeRegistry):
    """(root indices, diagnostics): nodes that can anchor a tree."""
    roots = []
    diags = []
    for idx, node in enumerate(graph.nodes):
        if not registry.knows(node.op_type):
            continue
        if registry.classify(node.op_type, Role.ROOT) != NodeAttribute.PRUNED:
            continue
        if node.op_type == "Mul":
            # elementwise rescales never originate channel structure: their
            # constant follows the controlling layer's mask instead
            diags.append(Diagnostic(
                "warning", graph.label(idx),
                "Mul does not anchor a pruning group; its constant is sliced "
                "with the mask of the layer that owns the channels",
            ))
            continue
        if output_channels(graph, idx) is None:
            diags.append(Diagnostic(
                "warning", graph.label(idx),
                "%s has no weight initializer; not prunable" % node.op_type,
            ))
            continue
        roots.append(idx)
    return roots, diags


@dataclass
class TreeNode:
    """One occurrence of a graph node on one dataflow path of the tree."""

    uid: int
    node: int                 # graph node index
    attribute: NodeAttribute
    via_tensor: str           # tensor carrying the influence into this node
    input_slot: int           # slot of via_tensor at this node (-1 for the root)
    children: list = field(default_factory=list)


@dataclass
class AssocTree:
    """Per-root tree over the associated nodes, plus traversal facts."""

    root: TreeNode
    graph: NodeGraph
    leaves: list                  # TreeNodes tagged stop-process
    terminal_tensors: list        # tensors whose branches ended with no consumer
    observable: bool              # influence reaches a graph output unconsumed
    diagnostics: list = field(default_factory=list)

    def walk(self):
        stack = [self.root]
        while stack:
            tn = stack.pop()
            yield tn
            stack.extend(reversed(tn.children))


def build_tree(graph: NodeGraph, registry: AttributeRegistry, root: int,
               max_nodes: int = 100_000) -> AssocTree:
    """Expand the association tree below ``root``.

    Children follow the consumers of each expanded node's outputs, one
    tree node per (consumer, input slot) pair, so a graph node reached by
    several paths appears once per path.  Branch growth stops at weighted
    consumers (leaves) and at tensors nobody consumes.
    """
    attr = classify_node(registry, graph, root, Role.ROOT)
    if attr != NodeAttribute.PRUNED:
        raise UnknownOperatorError(
            "node %s (%s) does not classify as prunable" % (graph.label(root), graph.nodes[root].op_type)
        )
    uid = 0
    root_tn = TreeNode(uid, root, NodeAttribute.PRUNED, "", -1)
    leaves = []
    terminals = []
    diags = []
    observable = False
    graph_outputs = set(graph.graph_outputs)
    count = 1
    frontier = [root_tn]
    while frontier:
        parent = frontier.pop(0)
        pnode = graph.nodes[parent.node]
        for tensor in pnode.outputs:
            if not tensor:
                continue
            if tensor in graph_outputs:
                observable = True
            consumers = graph.consumers.get(tensor, [])
            if not consumers:
                terminals.append(tensor)
                continue
            for cidx in consumers:
                cnode = graph.nodes[cidx]
                for slot, name in enumerate(cnode.inputs):
                    if name != tensor:
                        continue
                    try:
                        cattr = classify_node(registry, graph, cidx, Role.DESCENDANT)
                    except UnknownOperatorError:
                        raise UnknownOperatorError(
                            "operator %r (node %s) reached while expanding the tree of %s"
                            % (cnode.op_type, graph.label(cidx), graph.label(root))
                        ) from None
                    count += 1
                    if count > max_nodes:
                        raise UnboundedTreeError(
                            "tree of %s exceeded %d nodes" % (graph.label(root), max_nodes)
                        )
                    child = TreeNode(count - 1, cidx, cattr, tensor, slot)
                    parent.children.append(child)
                    if cattr == NodeAttribute.STOP_PROCESS:
                        leaves.append(child)
                    else:
                        frontier.append(child)
                    if cnode.op_type == "Softmax":
                        diags.append(Diagnostic(
                            "warning", graph.label(cidx),
                            "Softmax on a pruned path; exact masked equivalence may not hold",
                        ))
    return AssocTree(root_tn, graph, leaves, terminals, observable, diags)


def build_all_trees(graph: NodeGraph, registry: AttributeRegistry) -> dict:
    """One tree per prunable node, keyed by graph node index."""
    roots, _diags = prunable_roots(graph, registry)
    return {idx: build_tree(graph, registry, idx) for idx in roots}


# ---------------------------------------------------------------------------
# pruning groups


@dataclass
class PruningGroup:
    """Roots forced to share one keep mask, with their trees."""

    group_id: str
    members: list                 # sorted graph node indices
    trees: list                   # AssocTree per member, same order
    channels: int
    observable: bool = False
    locked: bool = False
    lock_reason: str = ""
    _effects: object = field(default=None, repr=False, compare=False)

    def member_names(self):
        graph = self.trees[0].graph
        return [graph.label(m) for m in self.members]


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def channel_sources(graph: NodeGraph, registry: AttributeRegistry, tensor: str, memo=None):
    """Prunable nodes whose output-channel axis aligns 1:1 with ``tensor``.

    Returns a frozenset of node indices, an empty frozenset when the
    tensor is channel-fixed (graph input, constant), or None when the
    alignment is opaque (concat, reshaped layouts, unknown ops).
    """
    if memo is None:
        memo = {}
    if tensor in memo:
        return memo[tensor]
    memo[tensor] = frozenset()  # cycle guard; graphs are acyclic anyway
    idx = graph.producer.get(tensor)
    if idx is None:
        result = frozenset()
    else:
        node = graph.nodes[idx]
        op = node.op_type
        if op == "Mul":
            # broadcast rescale: the data operand's controller owns the axis;
            # two computed operands couple their controllers
            result = _merge_sources(graph, registry, idx, memo)
        elif op in ROOT_SET:
            if classify_node(registry, graph, idx, Role.ROOT) == NodeAttribute.PRUNED \
                    and output_channels(graph, idx) is not None:
                result = frozenset([idx])
            else:
                result = None
        elif op == "BatchNormalization":
            result = channel_sources(graph, registry, node.inputs[0], memo)
        elif op in MERGE_OPS:
            result = _merge_sources(graph, registry, idx, memo)
        elif op in _CHANNEL_PRESERVING:
            data = graph.data_inputs(idx)
            result = channel_sources(graph, registry, data[0][1], memo) if data else frozenset()
        else:
            result = None
    memo[tensor] = result
    return result


def _merge_sources(graph, registry, idx, memo):
    combined = set()
    for _slot, name in graph.data_inputs(idx):
        src = channel_sources(graph, registry, name, memo)
        if src is None:
            return None
        combined |= src
    return frozenset(combined)


def merge_groups(trees: dict, registry: AttributeRegistry | None = None) -> list:
    """Union-find closure of trees into groups sharing one mask.

    Two roots land in one group when an elementwise merge node combines
    tensors whose channel axes they control, transitively across chained
    residual blocks.  Groups whose merge partners cannot be traced to a
    prunable node are locked (pruning them would break the model).
    """
    if not trees:
        return []
    registry = registry or AttributeRegistry()
    graph = next(iter(trees.values())).graph
    uf = _UnionFind()
    for root in trees:
        uf.find(root)
    locked_roots = {}
    memo = {}

    seen_merge_nodes = set()
    for root, tree in sorted(trees.items()):
        for tn in tree.walk():
            node = graph.nodes[tn.node]
            if tn.attribute != NodeAttribute.NEXT_PROCESS or node.op_type not in MERGE_OPS:
                continue
            if tn.node in seen_merge_nodes:
                continue
            seen_merge_nodes.add(tn.node)
            data = graph.data_inputs(tn.node)
            if len(data) < 2:
                continue  # constant operand; nothing to couple
            side_sources = []
            opaque = False
            for _slot, name in data:
                src = channel_sources(graph, registry, name, memo)
                if src is None or not src:
                    opaque = True
                side_sources.append(src)
            anchors = sorted(set().union(*(s for s in side_sources if s)))
            for a in anchors[1:]:
                uf.union(anchors[0], a)
            if opaque and anchors:
                locked_roots[anchors[0]] = (
                    "merge node %s combines a tensor with no prunable controller"
                    % graph.label(tn.node)
                )

    clusters = {}
    for root in trees:
        clusters.setdefault(uf.find(root), []).append(root)

    groups = []
    for _rep, members in sorted(clusters.items()):
        members = sorted(members)
        channel_counts = {m: output_channels(graph, m) for m in members}
        distinct = set(channel_counts.values())
        if len(distinct) != 1:
            raise ChannelMismatchError(
                "coupled producers disagree on channel count: %s"
                % ", ".join("%s=%s" % (graph.label(m), channel_counts[m]) for m in members)
            )
        member_trees = [trees[m] for m in members]
        locked = [locked_roots[m] for m in members if m in locked_roots]
        groups.append(PruningGroup(
            group_id="g%04d" % members[0],
            members=members,
            trees=member_trees,
            channels=distinct.pop(),
            observable=any(t.observable for t in member_trees),
            locked=bool(locked),
            lock_reason=locked[0] if locked else "",
        ))
    return groups


def select_groups(groups, include_observable=False):
    """Groups eligible for pruning under the plan policy.

    Locked groups are always skipped; groups whose channels are visible in
    a graph output (classifier logits and friends) are skipped unless
    ``include_observable``.
    """
    selected = []
    diags = []
    for group in groups:
        if group.locked:
            diags.append(Diagnostic("warning", ",".join(group.member_names()),
                                    "group skipped: %s" % group.lock_reason))
            continue
        if group.observable and not include_observable:
            diags.append(Diagnostic("warning", ",".join(group.member_names()),
                                    "group skipped: channels are visible in a graph output"))
            continue
        selected.append(group)
    return selected, diags


# ---------------------------------------------------------------------------
# exports


def tree_to_dict(tree: AssocTree) -> dict:
    graph = tree.graph

    def convert(tn: TreeNode) -> dict:
        return {
            "node": graph.label(tn.node),
            "op_type": graph.nodes[tn.node].op_type,
            "attribute": tn.attribute.value,
            "children": [convert(c) for c in tn.children],
        }

    return convert(tree.root)


def tree_to_json(tree: AssocTree, indent=2) -> str:
    return json.dumps(tree_to_dict(tree), indent=indent)


def tree_to_graphviz(tree: AssocTree) -> str:
    graph = tree.graph
    lines = ["digraph assoc_tree {", "  node [shape=box];"]
    for tn in tree.walk():
        label = "%s\\n%s (%s)" % (graph.label(tn.node), graph.nodes[tn.node].op_type,
                                  tn.attribute.value)
        lines.append('  n%d [label="%s"];' % (tn.uid, label))
    for tn in tree.walk():
        for child in tn.children:
            lines.append("  n%d -> n%d;" % (tn.uid, child.uid))
    lines.append("}")
    return "\n".join(lines)
