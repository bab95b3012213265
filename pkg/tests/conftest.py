import numpy as np
import pytest

import treeprune as tp
from treeprune.tree import select_groups


@pytest.fixture(scope="session")
def registry():
    return tp.AttributeRegistry()


def _bundle(template, seed=0, **params):
    model = tp.synthesize_model(template, seed=seed, **params)
    graph = tp.build_graph(model)
    shapes = tp.infer_shapes(model, graph)
    return model, graph, shapes


@pytest.fixture(scope="session")
def fire(registry):
    return _bundle("fire_module", seed=1)


@pytest.fixture(scope="session")
def chain(registry):
    return _bundle("conv_chain", seed=7, depth=2)


@pytest.fixture(scope="session")
def residual(registry):
    return _bundle("residual_block", seed=2)


@pytest.fixture(scope="session")
def stage(registry):
    return _bundle("residual_stage", seed=2, blocks=2)


@pytest.fixture(scope="session")
def vgg(registry):
    return _bundle("vgg16_cifar", seed=0)


@pytest.fixture(scope="session")
def alexnet(registry):
    return _bundle("alexnet_cifar", seed=0)


def pipeline(model, graph, shapes, registry, ratio=0.5, norm="l1", mode="tree",
             include_classifier=False):
    """trees -> groups -> policy -> plan, as the CLI wires it."""
    trees = tp.build_all_trees(graph, registry)
    groups = tp.merge_groups(trees, registry)
    selected, diags = select_groups(groups, include_classifier)
    plan = tp.make_plan(model, graph, selected, ratio, tp.Criterion.parse(norm, mode), shapes)
    return trees, groups, selected, plan


def random_inputs(model, seed=0, batch=1):
    rng = np.random.default_rng(seed)
    out = {}
    for vi in model.graph.inputs:
        dims = [batch if isinstance(d, str) or d is None else int(d) for d in vi.dims]
        dims[0] = batch
        out[vi.name] = rng.standard_normal(dims).astype(np.float32)
    return out
