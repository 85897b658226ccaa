import json
import subprocess
import sys

import pytest

from echobeam import cli, fileio


@pytest.fixture
def cell_json(tiny_cell, tmp_path):
    cell = tiny_cell(stage1_iterations=6, stage2_iterations=4, validation_interval=3)
    path = tmp_path / "cell.json"
    path.write_text(json.dumps(cell.to_dict()))
    return path


def test_simulate_single_phantom(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"preset": "small", "name": "p", "phantom": {"kind": "cardiac"}}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--seed", "3"]) == 0
    data = fileio.read_dataset(tmp_path / "o" / "p.usiq")
    assert data.i.shape[0] == 28
    assert (tmp_path / "o" / "p_sla.pgm").exists()
    assert "scatterers" in capsys.readouterr().out


def test_simulate_dataset(cell_json, tmp_path):
    assert cli.main(["simulate", "--config", str(cell_json), "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o" / "dataset").glob("*.usiq"))) == 9


def test_train_stages_then_evaluate_and_report(cell_json, tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(cell_json), "--stage", "1", "--out", str(out)]) == 0
    ck = out / "10-MLA" / "checkpoints"
    assert (ck / "stage1_pre.ckpt").exists() and (ck / "stage1_final.ckpt").exists()
    assert cli.main(["train", "--config", str(cell_json), "--stage", "2", "--out", str(out)]) == 0
    assert (ck / "joint_final.ckpt").exists() and (ck / "control_final.ckpt").exists()
    assert cli.main(["evaluate", "--checkpoint", str(ck / "joint_final.ckpt"), "--split", "cyst",
                     "--out", str(out)]) == 0
    doc = json.loads((out / "eval_joint_final_cyst.json").read_text())
    # pre-convergence at round(0.4 * 6) = 2, plus 4 joint iterations
    assert doc["iteration"] == 6
    assert [r["setting"] for r in doc["reports"]] == ["DAS", "Network"]
    capsys.readouterr()


def test_train_full_cell_and_report(cell_json, tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(cell_json), "--out", str(out)]) == 0
    assert (out / "10-MLA" / "metrics.json").exists()
    code = cli.main(["report", "--run-dir", str(out / "10-MLA"), "--out", str(tmp_path / "rep")])
    text = capsys.readouterr().out
    assert "== metrics_cardiac ==" in text
    assert code == (1 if "VIOLATIONS" in text else 0)


def test_resume_refuses_other_config(cell_json, tmp_path, tiny_cell, capsys):
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(cell_json), "--stage", "1", "--out", str(out)]) == 0
    ckpt = out / "10-MLA" / "checkpoints" / "stage1_final.ckpt"
    other = tmp_path / "other.json"
    other.write_text(json.dumps(tiny_cell(stage1_iterations=9, seed=4).to_dict()))
    assert cli.main(["train", "--config", str(other), "--stage", "1", "--resume", str(ckpt),
                     "--out", str(out)]) == 2
    assert "refusing to resume" in capsys.readouterr().err


def test_errors_exit_2(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "none.json")]) == 2
    assert "echobeam: error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"net_lr": -1}}))
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["train"])


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "echobeam.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for cmd in ("simulate", "train", "evaluate", "matrix", "report"):
        assert cmd in r.stdout
