"""Producer/consumer adjacency over a model graph, with topological order."""

from __future__ import annotations

from .errors import CycleError
from .model import ModelArchive


class NodeGraph:
    """Immutable adjacency view: who makes and who reads every tensor.

    ``producer`` maps a tensor name to the index of the node emitting it;
    graph inputs and initializers have no producer entry.  ``consumers``
    lists node indices in graph order.  ``topo_order`` is a deterministic
    topological order (ties broken by original node position).
    """

    def __init__(self, model: ModelArchive):
        graph = model.graph
        self.model = model
        self.nodes = list(graph.nodes)
        self.initializers = graph.initializer_map()
        self.graph_inputs = graph.input_names()
        self.graph_outputs = [vi.name for vi in graph.outputs]

        self.producer = {}
        self.consumers = {}
        for idx, node in enumerate(self.nodes):
            for name in node.outputs:
                if name:
                    self.producer[name] = idx
        for idx, node in enumerate(self.nodes):
            for name in node.inputs:
                if name:
                    self.consumers.setdefault(name, []).append(idx)

        self.topo_order = self._toposort()
        self._by_name = {}
        for idx, node in enumerate(self.nodes):
            if node.name:
                self._by_name[node.name] = idx

    def _toposort(self):
        n = len(self.nodes)
        indegree = [0] * n
        dependents = [[] for _ in range(n)]
        for idx, node in enumerate(self.nodes):
            for name in node.inputs:
                src = self.producer.get(name)
                if src is not None:
                    indegree[idx] += 1
                    dependents[src].append(idx)
        import heapq

        ready = [i for i in range(n) if indegree[i] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            idx = heapq.heappop(ready)
            order.append(idx)
            for dep in dependents[idx]:
                indegree[dep] -= 1
                if indegree[dep] == 0:
                    heapq.heappush(ready, dep)
        if len(order) != n:
            stuck = [self.label(i) for i in range(n) if indegree[i] > 0]
            raise CycleError("graph contains a cycle through: %s" % ", ".join(stuck))
        return order

    # -- conveniences used throughout the passes

    def label(self, idx: int) -> str:
        node = self.nodes[idx]
        return node.name or "%s#%d" % (node.op_type, idx)

    def node_index(self, name: str):
        return self._by_name.get(name)

    def is_initializer(self, tensor: str) -> bool:
        return tensor in self.initializers

    def is_graph_input(self, tensor: str) -> bool:
        return tensor in self.graph_inputs

    def data_inputs(self, idx: int):
        """(slot, tensor) pairs of non-initializer, non-empty inputs."""
        node = self.nodes[idx]
        return [
            (slot, name)
            for slot, name in enumerate(node.inputs)
            if name and name not in self.initializers
        ]

    def initializer_inputs(self, idx: int):
        node = self.nodes[idx]
        return [
            (slot, name)
            for slot, name in enumerate(node.inputs)
            if name and name in self.initializers
        ]


def build_graph(model: ModelArchive) -> NodeGraph:
    """Index the model's dataflow; raises CycleError on cyclic graphs."""
    return NodeGraph(model)
