import pytest

from mhdfem.cli import main
from mhdfem.experiments import CSV_COLUMNS, read_csv


def _cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = "[mesh]\ndivisions = {div}\n[time]\nk = 0.04\nT = 0.08\n"


def test_run_ok_and_csv(tmp_path, capsys):
    out = tmp_path / "single.csv"
    assert main(["run", _cfg(tmp_path, SMALL.format(div=2)), "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# generated ")
    assert lines[1].split(",") == list(CSV_COLUMNS)
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0]["k"] == pytest.approx(0.04)
    assert rows[0]["solve_residual_max"] <= 1e-10
    assert out.with_suffix(".json").exists()
    assert "wrote" in capsys.readouterr().out


def test_csv_deterministic_apart_from_timestamp(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = _cfg(tmp_path, SMALL.format(div=2))
    assert main(["run", cfg, "-o", str(a)]) == 0
    assert main(["run", cfg, "-o", str(b)]) == 0
    assert a.read_text().splitlines()[1:] == b.read_text().splitlines()[1:]


def test_config_error_exit_2(tmp_path, capsys):
    assert main(["run", _cfg(tmp_path, "[mesh]\nbogus = 1\n")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["gauss", str(tmp_path / "missing.cfg")]) == 2


def test_assertion_failure_exit_1(tmp_path, capsys):
    text = "[experiment]\nmin_rate = 5\n[mesh]\ndivisions = 1, 2\n[time]\nk = 0.04\nT = 0.04\n"
    out = tmp_path / "h.csv"
    assert main(["sweep-h", _cfg(tmp_path, text), "-o", str(out)]) == 1
    assert "FAIL" in capsys.readouterr().err
    assert out.exists()  # results are written before the verdict


def test_solver_failure_exit_3(tmp_path, capsys):
    text = SMALL.format(div=2) + "[scheme]\npicard_tol = 1e-15\npicard_max_iter = 1\n"
    assert main(["run", _cfg(tmp_path, text)]) == 3
    assert "solver failure" in capsys.readouterr().err


def test_per_scheme_files(tmp_path):
    text = "[mesh]\ndivisions = 2\n[time]\nk = 0.05\nsteps = 2\n"
    out = tmp_path / "g.csv"
    assert main(["gauss", _cfg(tmp_path, text), "-o", str(out)]) == 0
    for scheme in ("linearized", "picard"):
        rows = read_csv(tmp_path / f"g_{scheme}.csv")
        assert len(rows) == 3 and max(r["divB_max"] for r in rows) <= 1e-11


def test_usage_errors():
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["dance"])
