import json
import subprocess
import sys

import numpy as np
import pytest

from resnet_synth import experiment as ex
from resnet_synth.cli import fmt, run
from resnet_synth.core import load


@pytest.fixture
def micro_files(tmp_path):
    target = tmp_path / "t.json"
    target.write_text(json.dumps({"knots": [0, 1], "values": [1]}))
    net = tmp_path / "m.net"
    assert run(["compile", "--target", str(target), "--delta", "0.25", "--out", str(net)]) == 0
    return target, net


def _out(capsys):
    return capsys.readouterr().out.strip().splitlines()


def test_eval_golden(micro_files, capsys):
    _, net = micro_files
    capsys.readouterr()
    assert run(["eval", "--net", str(net), "--point", "0.5"]) == 0
    assert _out(capsys) == ["1.0"]


def test_verify_exact_golden(micro_files, capsys, tmp_path):
    target, net = micro_files
    capsys.readouterr()
    report = tmp_path / "r.json"
    assert run(["verify", "--net", str(net), "--target", str(target), "--exact", "--report", str(report)]) == 0
    assert _out(capsys) == ["l1=0.125 bound=1.0 PASS"]
    doc = json.loads(report.read_text())
    assert doc["passed"] and doc["l1_error"] == pytest.approx(0.125)


def test_verify_fails_with_exit_1_iff_a_check_fails(micro_files, capsys, tmp_path):
    target, net = micro_files
    report = tmp_path / "r.json"
    code = run(["verify", "--net", str(net), "--target", str(target), "--delta", "0.01",
                "--report", str(report), "--table"])
    assert code == 1
    assert _out(capsys)[-1].endswith("FAIL")
    assert not json.loads(report.read_text())["passed"]


def test_verify_mc_on_nd_target(tmp_path, capsys):
    target = tmp_path / "sq.json"
    target.write_text(json.dumps({"axis_knots": [[0, 1], [0, 1]], "cell_values": [[1]]}))
    net = tmp_path / "sq.net"
    assert run(["compile", "--target", str(target), "--delta", "0.1", "--out", str(net)]) == 0
    args = ["verify", "--net", str(net), "--target", str(target), "--mc", "20000", "--seed", "3"]
    assert run(args + ["--delta", "0.1"]) == 0
    first = _out(capsys)[-1]
    assert run(args + ["--delta", "0.1"]) == 0
    assert _out(capsys)[-1] == first and first.endswith("PASS")
    assert run(args) == 2  # nd targets need --delta


def test_compile_with_bad_delta_names_the_interval(tmp_path, capsys):
    target = tmp_path / "t.json"
    target.write_text(json.dumps({"knots": [0, 1, 1.1, 3], "values": [1, 1, 1]}))
    code = run(["compile", "--target", str(target), "--delta", "0.06", "--out", str(tmp_path / "x.net")])
    assert code == 2
    assert "interval 2" in capsys.readouterr().err


def test_compile_trace_directory(micro_files, tmp_path):
    target, _ = micro_files
    trace = tmp_path / "trace"
    assert run(["compile", "--target", str(target), "--delta", "0.25", "--out", str(tmp_path / "n.net"),
                "--trace", str(trace)]) == 0
    doc = json.loads((trace / "trace.json").read_text())
    assert doc["checkpoints"]["R*_0"] == "Rstar_0.net"
    assert len(load(trace / "Rstar_0.net").blocks) == 8


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["eval", "--net", "x.net"],
    ["compile", "--target", "t.json", "--delta", "0.1", "--out", "o", "--bogus"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert run(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, capsys):
    assert run(["eval", "--net", str(tmp_path / "none.net"), "--point", "0"]) == 2
    assert "error" in capsys.readouterr().err


def test_eval_rejects_wrong_point_dimension(micro_files, capsys):
    _, net = micro_files
    assert run(["eval", "--net", str(net), "--point", "0.5,0.5"]) == 2


def test_discretize_with_negative_box(tmp_path, capsys):
    out = tmp_path / "disk.json"
    assert run(["discretize", "--fn", "unit-ball", "--box", "-1.5..1.5,-1.5..1.5", "--res", "0.5",
                "--out", str(out)]) == 0
    assert _out(capsys) == ["cells=36 shape=6x6"]
    assert run(["discretize", "--fn", "nope", "--box", "0..1", "--res", "0.5", "--out", str(out)]) == 2


def test_train_boundary_probe_are_reproducible(tmp_path, capsys):
    outputs = []
    for rep in range(2):
        d = tmp_path / str(rep)
        d.mkdir()
        assert run(["train", "--arch", "resnet", "--depth", "2", "--epochs", "2", "--seed", "5",
                    "--out", str(d / "n.net"), "--history", str(d / "h.json")]) == 0
        assert run(["boundary", "--net", str(d / "n.net"), "--n", "200", "--radius", "5", "--seed", "1",
                    "--csv", str(d / "b.csv"), "--ppm", str(d / "b.ppm")]) == 0
        assert run(["probe", "--net", str(d / "n.net"), "--radii", "1,5", "--n", "100", "--seed", "2"]) == 0
        outputs.append([capsys.readouterr().out] +
                       [(d / f).read_bytes() for f in ("n.net", "h.json", "b.csv", "b.ppm")])
    assert outputs[0] == outputs[1]
    lines = outputs[0][0].splitlines()
    assert lines[0].startswith("epoch=0 loss=") and len([x for x in lines if x.startswith("epoch=")]) == 3
    assert lines[-1].startswith("radius=5.0 positive_fraction=")


def test_fc_network_through_the_cli(tmp_path, capsys):
    net = tmp_path / "fc.net"
    assert run(["train", "--arch", "fc", "--depth", "1", "--epochs", "0", "--out", str(net)]) == 0
    assert isinstance(ex.load_any(net), ex.FullyConnectedNet)
    assert run(["eval", "--net", str(net), "--point", "-0.5,0.25"]) == 0
    assert run(["verify", "--net", str(net), "--target", str(net)]) == 2


def test_fmt_uses_twelve_significant_digits():
    assert fmt(1) == "1.0"
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(np.float64(2.5e-20)) == "2.5e-20"


def test_module_entry_point(micro_files):
    _, net = micro_files
    proc = subprocess.run([sys.executable, "-m", "resnet_synth", "eval", "--net", str(net), "--point", "0.0625"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.strip() == "0.5"
