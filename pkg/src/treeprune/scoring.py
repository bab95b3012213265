"""Channel importance scoring, selection, and plan assembly.

A group's channel score multiplies what the channel's producers emit
(their filter norms) by how strongly every downstream weighted consumer
reads it (the summed norms of the matching input slices):

    score(i) = sum_p ||producer_p channel i|| * sum_leaves sum_k ||leaf input slice (k, map(i))||

On plain sequential wiring this is the familiar producer-norm times
consumer-column-norm product; residual merges add up their producers,
sibling consumers add up their slice sums, and index maps translate
channel i through concat offsets and flatten blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import AxisError, EmptyReferenceError, MaskConflictError
from .graph import NodeGraph
from .model import Diagnostic, ModelArchive
from .pathwalk import GroupEffects, group_effects
from .tree import PruningGroup, output_channels, weight_slot


class NormKind(Enum):
    L1 = "l1"
    L2 = "l2"


class ScoreMode(Enum):
    SINGLE_NODE = "single"
    TREE_LEVEL = "tree"


@dataclass(frozen=True)
class Criterion:
    norm: NormKind = NormKind.L1
    mode: ScoreMode = ScoreMode.TREE_LEVEL

    @staticmethod
    def parse(norm: str, mode: str) -> "Criterion":
        return Criterion(NormKind(norm.lower()), ScoreMode(mode.lower()))


@dataclass
class ScoreVector:
    """Per-channel importance values for one group."""

    group: PruningGroup
    values: np.ndarray
    mode: ScoreMode
    diagnostics: list = field(default_factory=list)


def filter_norm(weight: np.ndarray, kind: NormKind, *selects) -> float:
    """Norm of one weight slice.

    Each select is (axis, index-or-indices); they are applied
    simultaneously (all axes refer to the original layout).  With a single
    (out_axis, i) select this is the producer filter norm; with
    (out_axis, k), (in_axis, indices) it is a consumer input-slice norm.
    """
    arr = np.asarray(weight, dtype=np.float64)
    for axis, index in sorted(selects, key=lambda s: s[0]):
        if axis >= arr.ndim or axis < 0:
            raise AxisError("axis %d out of range for shape %r" % (axis, arr.shape))
        idx = [index] if np.isscalar(index) else list(index)
        arr = np.take(arr, idx, axis=axis)
    if kind == NormKind.L1:
        return float(np.abs(arr).sum())
    return float(np.sqrt((arr * arr).sum()))


def channel_norms(weight: np.ndarray, axis: int, kind: NormKind) -> np.ndarray:
    """Norm of every slice along ``axis`` (vectorized producer norms)."""
    arr = np.asarray(weight, dtype=np.float64)
    if axis >= arr.ndim:
        raise AxisError("axis %d out of range for shape %r" % (axis, arr.shape))
    moved = np.moveaxis(arr, axis, 0).reshape(arr.shape[axis], -1)
    if kind == NormKind.L1:
        return np.abs(moved).sum(axis=1)
    return np.sqrt((moved * moved).sum(axis=1))


def slice_norm_sums(weight: np.ndarray, out_axis: int, in_axis: int,
                    index_map, kind: NormKind) -> np.ndarray:
    """For each channel i: sum over consumer channels k of ||W[k, map(i)]||."""
    arr = np.asarray(weight, dtype=np.float64)
    moved = np.moveaxis(arr, (out_axis, in_axis), (0, 1))
    flat = moved.reshape(moved.shape[0], moved.shape[1], -1)
    out = np.zeros(len(index_map), dtype=np.float64)
    if kind == NormKind.L1:
        per_in = np.abs(flat).sum(axis=(0, 2))  # additive over k and the rest
        for i, positions in enumerate(index_map):
            out[i] = per_in[list(positions)].sum() if positions else 0.0
    else:
        sq_per_k_in = (flat * flat).sum(axis=2)  # [K, IN]
        for i, positions in enumerate(index_map):
            if positions:
                out[i] = np.sqrt(sq_per_k_in[:, list(positions)].sum(axis=1)).sum()
    return out


def _producer_axis(graph: NodeGraph, idx: int) -> tuple:
    """(weight initializer, axis of its output channels) for a group member."""
    node = graph.nodes[idx]
    op = node.op_type
    if op == "Mul":
        slot, name = graph.initializer_inputs(idx)[0]
        init = graph.initializers[name]
        wide = [a for a, d in enumerate(init.dims) if d > 1]
        return init, wide[0]
    init = graph.initializers[node.inputs[weight_slot(op)]]
    if op == "Conv":
        return init, 0
    if op == "ConvTranspose":
        return init, 1
    if op == "Gemm":
        return init, 0 if node.attr("transB", 0) else 1
    if op == "MatMul":
        return init, len(init.dims) - 1
    raise AxisError("no producer axis rule for %s" % op)


def _producer_term(group: PruningGroup, kind: NormKind) -> np.ndarray:
    graph = group.trees[0].graph
    total = np.zeros(group.channels, dtype=np.float64)
    for member in group.members:
        init, axis = _producer_axis(graph, member)
        total += channel_norms(init.data, axis, kind)
    return total


def _require_effects(group: PruningGroup, shapes) -> GroupEffects:
    cached = getattr(group, "_effects", None)
    if cached is not None:
        return cached
    if shapes is None:
        raise ValueError("shapes are required to resolve the group's leaf index maps")
    effects = group_effects(group, shapes)
    group._effects = cached = effects
    return effects


def tree_score(group: PruningGroup, kind: NormKind, shapes=None) -> ScoreVector:
    """Producer norms times deduplicated leaf input-slice norm sums."""
    graph = group.trees[0].graph
    effects = _require_effects(group, shapes)
    producer = _producer_term(group, kind)
    diags = list(effects.warnings)
    if not effects.leaf_slices:
        diags.append(Diagnostic(
            "warning", ",".join(group.member_names()),
            "no weighted consumers below this group; falling back to producer norms",
        ))
        return ScoreVector(group, producer, ScoreMode.TREE_LEVEL, diags)
    consumer = np.zeros(group.channels, dtype=np.float64)
    for ls in effects.leaf_slices:
        weight = graph.initializers[ls.weight_name]
        consumer += slice_norm_sums(weight.data, ls.out_axis, ls.in_axis, ls.index_map, kind)
    return ScoreVector(group, producer * consumer, ScoreMode.TREE_LEVEL, diags)


def single_node_score(group: PruningGroup, kind: NormKind) -> ScoreVector:
    """Producer norms alone; consumers are ignored."""
    return ScoreVector(group, _producer_term(group, kind), ScoreMode.SINGLE_NODE)


def n_prune(ratio: float, channels: int) -> int:
    """round(ratio * C), half away from zero, clamped to keep >= 1 channel."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must be in [0, 1), got %r" % ratio)
    count = int(np.floor(ratio * channels + 0.5))
    return max(0, min(count, channels - 1))


def select_channels(scores, ratio: float) -> np.ndarray:
    """Keep mask pruning the lowest-scoring channels.

    Ties go to the higher channel index: with equal scores the later
    channels are pruned first, which keeps the choice deterministic.
    """
    values = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    channels = len(values)
    count = n_prune(ratio, channels)
    order = sorted(range(channels), key=lambda i: (values[i], -i))
    keep = np.ones(channels, dtype=bool)
    for i in order[:count]:
        keep[i] = False
    return keep


def overlap_index(a, b) -> float:
    """|a intersect b| / |b| for two pruned-index sets."""
    b = set(b)
    if not b:
        raise EmptyReferenceError("reference pruned-index set is empty")
    return len(set(a) & b) / len(b)


# ---------------------------------------------------------------------------
# plans


@dataclass
class PlanEntry:
    group_id: str
    members: list            # node labels
    keep: tuple              # tuple[bool] of length C
    scores: tuple            # tuple[float]
    group: PruningGroup = None
    effects: GroupEffects = None

    @property
    def pruned_indices(self):
        return tuple(i for i, k in enumerate(self.keep) if not k)


@dataclass
class PruningPlan:
    """One keep mask per group plus everything needed to apply it."""

    ratio: float
    criterion: Criterion
    entries: list = field(default_factory=list)   # list[PlanEntry]
    diagnostics: list = field(default_factory=list)

    def entry(self, group_id: str) -> PlanEntry:
        for e in self.entries:
            if e.group_id == group_id:
                return e
        raise KeyError(group_id)

    def leaf_index_map(self, group_id: str, leaf: int):
        """Pruned positions on each leaf's input axis for one group."""
        e = self.entry(group_id)
        out = {}
        for ls in e.effects.leaf_slices:
            if ls.leaf != leaf:
                continue
            positions = sorted({p for i in e.pruned_indices for p in ls.index_map[i]})
            out[(ls.slot,)] = positions
        return out

    def to_json(self, indent=2) -> str:
        payload = {
            "version": 1,
            "ratio": self.ratio,
            "criterion": {"norm": self.criterion.norm.value, "mode": self.criterion.mode.value},
            "groups": [
                {
                    "id": e.group_id,
                    "members": list(e.members),
                    "keep": [bool(k) for k in e.keep],
                    "scores": [float(s) for s in e.scores],
                }
                for e in self.entries
            ],
        }
        return json.dumps(payload, indent=indent)

    @staticmethod
    def from_json(text: str) -> "PruningPlan":
        payload = json.loads(text)
        if payload.get("version") != 1:
            raise ValueError("unsupported plan version %r" % payload.get("version"))
        crit = Criterion.parse(payload["criterion"]["norm"], payload["criterion"]["mode"])
        plan = PruningPlan(float(payload["ratio"]), crit)
        for g in payload["groups"]:
            plan.entries.append(PlanEntry(
                g["id"], list(g["members"]), tuple(bool(k) for k in g["keep"]),
                tuple(float(s) for s in g["scores"]),
            ))
        return plan


def make_plan(model: ModelArchive, graph: NodeGraph, groups, ratio: float,
              criterion: Criterion, shapes=None, threads: int = 1) -> PruningPlan:
    """Score every group and choose its keep mask.

    ``groups`` should already be filtered by the plan policy
    (tree.select_groups); every group gets exactly one entry.  Scoring is
    pure per group, so ``threads`` > 1 fans it out without changing the
    result order.
    """
    from .shapes import infer_shapes

    if shapes is None:
        shapes = infer_shapes(model, graph)

    def score(group):
        _require_effects(group, shapes)
        if criterion.mode == ScoreMode.TREE_LEVEL:
            return tree_score(group, criterion.norm, shapes)
        return single_node_score(group, criterion.norm)

    if threads > 1 and len(groups) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(score, groups))
    else:
        vectors = [score(group) for group in groups]

    plan = PruningPlan(ratio, criterion)
    for group, sv in zip(groups, vectors):
        if not np.all(np.isfinite(sv.values)) or np.any(sv.values < 0):
            raise MaskConflictError("non-finite or negative scores for group %s" % group.group_id)
        keep = select_channels(sv, ratio)
        plan.entries.append(PlanEntry(
            group.group_id, group.member_names(), tuple(bool(k) for k in keep),
            tuple(float(v) for v in sv.values), group, getattr(group, "_effects", None),
        ))
        plan.diagnostics.extend(sv.diagnostics)
    return plan
