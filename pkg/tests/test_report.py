import json

import pytest

from echobeam import report, training as tr


@pytest.fixture(scope="module")
def cell_dir(tiny_cell, tiny_split, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    tr.run_cell(tiny_cell(), tiny_split, root / "10-MLA")
    return root


def test_empty_run_dir_header_only(tmp_path):
    rep = report.render_report([tmp_path / "runs"], tmp_path / "rep")
    assert rep.tables == {"metrics_cardiac": [["setting"]]}
    assert (tmp_path / "rep" / "metrics_cardiac.csv").read_text().strip() == "setting"
    assert not rep.violations and not rep.missing


def test_zero_iteration_matrix_has_only_das(tiny_cell, tiny_split, tmp_path):
    base = tiny_cell(stage1_iterations=0, stage2_iterations=0)
    tr.run_experiment_matrix(base, tmp_path, cells=(("MLA", 10),), split=tiny_split)
    rep = report.render_report([tmp_path], tmp_path / "rep")
    rows = rep.tables["metrics_cardiac"]
    assert [r[0] for r in rows[1:]] == [tr.FIXED_DAS]
    assert rows[0] == ["setting", "10-MLA PSNR", "10-MLA SSIM", "10-MLA L1"]


def test_complete_cell_four_rows_three_columns(cell_dir, tmp_path):
    rep = report.render_report([cell_dir], tmp_path / "rep")
    rows = rep.tables["metrics_cardiac"]
    assert [r[0] for r in rows[1:]] == list(tr.SETTINGS)
    assert all(len(r) == 4 for r in rows)
    assert len(rep.tables["contrast_cyst"][0]) == 3
    txt = (tmp_path / "rep" / "metrics_cardiac.txt").read_text().splitlines()
    assert len(txt) == 2 + 4 and set(txt[1]) <= {"-", " "}
    for name in ("curves_10-MLA.csv", "beam_profiles_10-MLA.csv", "report.json"):
        assert (tmp_path / "rep" / name).exists()
    assert (tmp_path / "rep" / "images" / "10-MLA" / "cardiac" / "reference.pgm").exists()


def test_report_is_deterministic(cell_dir, tmp_path):
    report.render_report([cell_dir], tmp_path / "a")
    report.render_report([cell_dir], tmp_path / "b")
    for name in ("report.txt", "metrics_cardiac.csv", "metrics_cyst.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_violation_flagged_and_missing_cells(cell_dir, tmp_path):
    doc = json.loads((cell_dir / "10-MLA" / "metrics.json").read_text())
    for r in doc["reports"]:
        if r["setting"] == tr.LEARNED_RX:
            r["mean"]["psnr"] = -1.0
    bad = tmp_path / "runs" / "bad"
    bad.mkdir(parents=True)
    (bad / "metrics.json").write_text(json.dumps(doc))
    broken = tmp_path / "runs" / "broken"
    broken.mkdir()
    (broken / "error.txt").write_text("boom\n")
    junk = tmp_path / "runs" / "junk"
    junk.mkdir()
    (junk / "metrics.json").write_text("{not json")
    rep = report.render_report([tmp_path / "runs"], tmp_path / "rep")
    assert len(rep.violations) == 2 and all("bad" in v for v in rep.violations)
    assert rep.missing["broken"] == "failed: boom"
    assert "unreadable" in rep.missing["junk"]
    text = (tmp_path / "rep" / "report.txt").read_text()
    assert "ORDERING VIOLATIONS" in text and "missing cells" in text


def test_aligned_table():
    out = report.aligned([["setting", "PSNR"], ["Fixed Tx DAS", "24.1"]])
    assert out.splitlines() == ["setting       PSNR", "------------  ----",
                                "Fixed Tx DAS  24.1"]
