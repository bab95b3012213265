import json

import numpy as np
import pytest

import treeprune as tp
from treeprune.cli import main


@pytest.fixture
def fire_file(tmp_path):
    path = tmp_path / "fire.onnx"
    tp.save_model(tp.synthesize_model("fire_module", seed=1), path)
    return str(path)


def test_synth_writes_model(tmp_path, capsys):
    out = tmp_path / "m.onnx"
    assert main(["synth", "conv_chain", "-o", str(out), "--seed", "7", "--depth", "2"]) == 0
    model = tp.load_model(out)
    assert [n.op_type for n in model.graph.nodes] == ["Conv", "Relu", "Conv"]


def test_synth_deterministic(tmp_path):
    a = tmp_path / "a.onnx"
    b = tmp_path / "b.onnx"
    main(["synth", "vgg16_cifar", "-o", str(a), "--seed", "3"])
    main(["synth", "vgg16_cifar", "-o", str(b), "--seed", "3"])
    assert a.read_bytes() == b.read_bytes()


def test_inspect_fire(fire_file, capsys):
    assert main(["inspect", fire_file]) == 0
    out = capsys.readouterr().out
    assert out.count("Conv") == 4
    assert "prunable nodes: 3" in out


def test_inspect_json(fire_file, capsys):
    assert main(["inspect", fire_file, "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["prunable"] == 3 and payload["roots"] == 4
    assert len(payload["nodes"]) == 6


def test_inspect_malformed_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.onnx"
    bad.write_bytes(b"\x00\x01\x02junk")
    assert main(["inspect", str(bad)]) == 2


def test_inspect_unknown_op_warns(tmp_path, capsys):
    model = tp.synthesize_model("one_to_one", seed=0)
    model.graph.nodes.insert(
        1, tp.NodeDef("Mystery", "myst", ["conv_a.out"], ["myst.out"]))
    path = tmp_path / "u.onnx"
    tp.save_model(model, path)
    assert main(["inspect", str(path)]) == 0
    err = capsys.readouterr().err
    assert "Mystery" in err


def test_tree_json(fire_file, capsys):
    assert main(["tree", fire_file]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["trees"]) == 4
    assert len(payload["groups"]) == 4
    squeeze = next(t for t in payload["trees"] if t["node"] == "squeeze")
    assert squeeze["attribute"] == "pruned"


def test_tree_dot_output_file(fire_file, tmp_path, capsys):
    out = tmp_path / "trees.dot"
    assert main(["tree", fire_file, "--format", "dot", "-o", str(out)]) == 0
    text = out.read_text()
    assert text.count("digraph") == 4


def test_prune_end_to_end(fire_file, tmp_path, capsys):
    out = tmp_path / "pruned.onnx"
    plan_path = tmp_path / "plan.json"
    code = main(["prune", fire_file, "-o", str(out), "--ratio", "0.5",
                 "--criterion", "l1", "--mode", "tree", "--plan-out", str(plan_path)])
    assert code == 0
    pruned = tp.load_model(out)
    assert tp.validate_syntax(pruned) == []
    plan = tp.PruningPlan.from_json(plan_path.read_text())
    assert len(plan.entries) == 3
    stdout = capsys.readouterr().out
    assert "sparsity" in stdout


def test_prune_reruns_byte_identical(fire_file, tmp_path):
    a = tmp_path / "a.onnx"
    b = tmp_path / "b.onnx"
    main(["prune", fire_file, "-o", str(a), "--ratio", "0.5"])
    main(["prune", fire_file, "-o", str(b), "--ratio", "0.5"])
    assert a.read_bytes() == b.read_bytes()


def test_prune_does_not_mutate_input(fire_file, tmp_path):
    before = open(fire_file, "rb").read()
    main(["prune", fire_file, "-o", str(tmp_path / "x.onnx"), "--ratio", "0.7"])
    assert open(fire_file, "rb").read() == before


def test_prune_bad_ratio_exits_2(fire_file, tmp_path, capsys):
    assert main(["prune", fire_file, "-o", str(tmp_path / "x.onnx"), "--ratio", "1.0"]) == 2
    assert "ratio" in capsys.readouterr().err


def test_validate_passes(fire_file, capsys):
    assert main(["validate", fire_file, "--ratio", "0.5", "--trials", "4"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_validate_corrupted_exits_1(fire_file, tmp_path, capsys):
    out = tmp_path / "pruned.onnx"
    main(["prune", fire_file, "-o", str(out), "--ratio", "0.5"])
    model = tp.load_model(out)
    for init in model.graph.initializers:
        if init.name == "head.weight":
            init.data[0, 0] += 0.5
    tp.save_model(model, out)
    code = main(["validate", fire_file, "--ratio", "0.5", "--pruned", str(out),
                 "--trials", "4"])
    assert code == 1
    assert "FAIL" in capsys.readouterr().out


def test_report_with_reference_plan(fire_file, tmp_path, capsys):
    pruned = tmp_path / "p.onnx"
    plan_a = tmp_path / "a.json"
    plan_b = tmp_path / "b.json"
    main(["prune", fire_file, "-o", str(pruned), "--ratio", "0.5",
          "--mode", "tree", "--plan-out", str(plan_a)])
    main(["prune", fire_file, "-o", str(tmp_path / "q.onnx"), "--ratio", "0.5",
          "--mode", "single", "--plan-out", str(plan_b)])
    capsys.readouterr()
    code = main(["report", "--before", fire_file, "--after", str(pruned),
                 "--plan", str(plan_a), "--reference", str(plan_b), "--format", "json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    overlaps = [r["overlap"] for r in payload["layers"] if r["overlap"] is not None]
    assert overlaps and all(0.0 <= o <= 1.0 for o in overlaps)


def test_registry_extension_flag(tmp_path, capsys):
    model = tp.synthesize_model("one_to_one", seed=0)
    model.graph.nodes.insert(
        1, tp.NodeDef("Mish", "mish", ["conv_a.out"], ["mish.out"]))
    nodes = list(model.graph.nodes)
    nodes[2] = tp.NodeDef("Conv", "conv_b", ["mish.out", "conv_b.weight", "conv_b.bias"],
                          ["conv_b.out"], dict(nodes[2].attributes))
    model.graph.nodes[:] = nodes
    path = tmp_path / "m.onnx"
    tp.save_model(model, path)

    cfg = tmp_path / "ops.cfg"
    cfg.write_text("Mish=next-no-process\n")
    assert main(["tree", str(path), "--registry-extension", str(cfg)]) == 0
    payload = json.loads(capsys.readouterr().out)
    tree_a = next(t for t in payload["trees"] if t["node"] == "conv_a")
    assert tree_a["children"][0]["node"] == "mish"
