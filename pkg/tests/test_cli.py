import json
import re
import subprocess
import sys

import numpy as np
import pytest

from ordnet import otns
from ordnet.analysis import write_pgm
from ordnet.cli import build_parser, main

RECORD = re.compile(r"^(\S+=\S+)( \S+=\S+)*$")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def records(out):
    lines = out.strip().splitlines()
    assert lines and all(RECORD.match(l) for l in lines), out
    return [dict(kv.split("=", 1) for kv in l.split()) for l in lines]


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "train.json"
    p.write_text(json.dumps({"epochs": 1, "batch_size": 2,
                             "model": {"backbone_widths": [4, 8, 16], "cq": 4, "cv": 8}}))
    return p


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--size", "8", "--max-coords", "4")
    recs = records(out)
    assert code == 0
    rel = [float(r["max_rel_diff"]) for r in recs if "max_rel_diff" in r]
    assert rel and rel[0] < 1e-4
    assert recs[-1]["status"] == "pass"


def test_gradcheck_failing_tolerance_is_exit_1(capsys):
    code, out, _ = run(capsys, "gradcheck", "--size", "8", "--max-coords", "2", "--tol", "0")
    assert code == 1 and records(out)[-1]["status"] == "fail"


def test_train_then_eval_then_attn_map(capsys, tmp_path, config):
    ckpt = tmp_path / "ckpt"
    code, out, _ = run(capsys, "train", "--config", str(config), "--out", str(ckpt),
                       "-n", "2", "--image-size", "16", "--seed", "4")
    recs = records(out)
    assert code == 0 and recs[0]["epoch"] == "1" and recs[-1]["checkpoint"] == str(ckpt)
    assert 0 <= float(recs[0]["pix_acc"]) <= 1

    code, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "-n", "2", "--image-size", "16",
                       "--scales", "0.75", "1.0", "--flip")
    rec = records(out)[0]
    assert code == 0 and 0 <= float(rec["miou"]) <= 1 and rec["flip"] == "1"

    out_file = tmp_path / "gate.otns"
    code, out, _ = run(capsys, "analyze", "attn-map", "--checkpoint", str(ckpt), "--out", str(out_file),
                       "--image-size", "16", "--rlr-direction", "in")
    rec = records(out)[0]
    g = otns.load(out_file)
    assert code == 0 and g.shape == (2, 2) and np.all((g > 0) & (g < 1))
    assert float(rec["gate_max"]) == pytest.approx(g.max(), rel=1e-5)


def test_train_variant_flag(capsys, config):
    code, out, _ = run(capsys, "train", "--config", str(config), "-n", "2", "--image-size", "16",
                       "--variant", "fcn")
    assert code == 0 and records(out)


def test_train_missing_config_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "missing.json"))
    assert code == 3 and "error" in err


def test_train_bad_field_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"learning_rate": 1}))
    assert run(capsys, "train", "--config", str(p))[0] == 2


def test_corr_four_patch_fixture_is_identity(capsys, tmp_path):
    m = np.zeros((8, 8), dtype=np.int64)
    m[:4, 4:], m[4:, :4], m[4:, 4:] = 1, 2, 3
    write_pgm(tmp_path / "m.pgm", m)
    code, out, _ = run(capsys, "analyze", "corr", "--patches", "2", str(tmp_path),
                       "--otns", str(tmp_path / "c.otns"))
    assert code == 0
    parsed = np.array([[float(v) for v in line.split(",")] for line in out.strip().splitlines()])
    np.testing.assert_array_equal(parsed, np.eye(4))
    np.testing.assert_array_equal(otns.load(tmp_path / "c.otns"), np.eye(4))


def test_corr_empty_dir_exit_3(capsys, tmp_path):
    assert run(capsys, "analyze", "corr", str(tmp_path))[0] == 3
    assert run(capsys, "analyze", "corr", str(tmp_path / "absent"))[0] == 3


def test_flops_records(capsys):
    code, out, _ = run(capsys, "analyze", "flops")
    recs = records(out)
    assert code == 0 and [r["patches"] for r in recs] == ["1", "2", "4"]
    totals = [int(r["total"]) for r in recs]
    assert totals[0] > totals[1] > totals[2]
    assert int(recs[0]["attention_map"]) == 4 * int(recs[1]["attention_map"])


def test_bench(capsys):
    code, out, _ = run(capsys, "bench", "--repeats", "1", "--image-size", "16")
    recs = records(out)
    assert code == 0 and {r["variant"] for r in recs} == {"fcn", "basic_sa", "sa_mr", "sa_rlr", "ordnet"}


def test_unknown_flag_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "flops", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["gradcheck"], ["train"], ["eval"], ["analyze", "corr"], ["analyze", "flops"],
                                  ["analyze", "attn-map"], ["bench"]])
def test_help_on_every_subcommand(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv + ["--help"])
    assert exc.value.code == 0 and "usage" in capsys.readouterr().out


def test_seed_accepted_everywhere():
    parser = build_parser()
    for argv in (["gradcheck"], ["bench"], ["analyze", "flops"], ["train", "--config", "x"]):
        assert parser.parse_args(argv + ["--seed", "9"]).seed == 9


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ordnet", "analyze", "flops", "--patches", "2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("patches=2 ")
