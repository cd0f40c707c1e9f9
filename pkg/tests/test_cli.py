from __future__ import annotations

import csv
import json

import pytest

from fddea.cli import (
    ConfigError, build_parser, main, parse_config, read_config_file, significance_mark,
)

TINY = """\
# tiny but complete protocol run
problem = dtlz2
objectives = 3
dims = 6
clients = 3
tm = 2
mu = 2
budget = 4
g0 = 12
population = 10
epochs = 2
group = test-64bit
"""


def _write(tmp_path, text=TINY, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _parse(argv):
    return parse_config(build_parser().parse_args(argv))


def test_flags_fill_defaults_and_population():
    m = _parse(["run", "--problem", "dtlz2", "--objectives", "3"])
    cfg = m.cells[0]
    assert (cfg.K, cfg.D, cfg.mu, cfg.epochs, cfg.learning_rate, cfg.N_p, cfg.g0,
            cfg.budget) == (4, 20, 5, 20, 0.06, 105, 219, 120)


def test_big_noise_without_normalization_mode():
    cfg = _parse(["run", "--problem", "dtlz2", "--objectives", "3",
                  "--mode", "dh-big-wo"]).cells[0]
    assert not cfg.normalize and cfg.noise_factor == 100.0


def test_flags_override_file(tmp_path):
    path = _write(tmp_path)
    m = _parse(["matrix", "--config", str(path), "--mu", "1", "--mode", "dh,plaintext"])
    assert [c.mu for c in m.cells] == [1, 1]
    assert [c.mode for c in m.cells] == ["dh", "plaintext"]
    assert m.cells[0].K == 3


def test_empty_config_lists_required_keys(tmp_path):
    path = _write(tmp_path, "")
    with pytest.raises(ConfigError, match="problem, objectives"):
        _parse(["run", "--config", str(path)])


def test_unknown_key_and_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        read_config_file(_write(tmp_path, "problems = dtlz2\n"))
    with pytest.raises(ConfigError, match="mu"):
        _parse(["run", "--problem", "dtlz2", "--objectives", "3", "--mu", "x"])
    with pytest.raises(ConfigError, match="budget"):
        _parse(["run", "--problem", "dtlz2", "--objectives", "3", "--budget", "7"])


def test_exit_codes_for_config_errors(tmp_path, capsys):
    assert main(["run", "--problem", "dtlz2"]) == 2
    assert main(["run", "--problem", "dtlz2", "--objectives", "3", "--mode", "he"]) == 2
    assert main(["run", "--problem", "dtlz2,dtlz5", "--objectives", "3"]) == 2
    assert main(["nonsense"]) == 2
    assert main(["report", "--out", str(tmp_path / "missing")]) == 2
    err = capsys.readouterr().err
    assert "missing required keys" in err


def test_run_writes_outputs_and_resumes(tmp_path, capsys):
    cfg = _write(tmp_path)
    out = tmp_path / "res"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    run_dir = out / "DTLZ2_M3_dh" / "seed0"
    for name in ("config.txt", "rounds.csv", "trace.csv", "done.json"):
        assert (run_dir / name).exists()
    frozen = (run_dir / "config.txt").read_text()
    assert "config_hash" in frozen and "fddea" in frozen
    with open(run_dir / "rounds.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["round"] for r in rows] == ["-1", "0", "1"]
    info = json.loads((run_dir / "done.json").read_text())
    assert info["comm"].startswith("exact match")
    assert info["evaluations"] == 3 * 12 + 4

    stamp = (run_dir / "trace.csv").stat().st_mtime_ns
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (run_dir / "trace.csv").stat().st_mtime_ns == stamp


def test_matrix_cells_are_isolated(tmp_path, capsys):
    cfg = _write(tmp_path)
    both, one = tmp_path / "both", tmp_path / "one"
    assert main(["matrix", "--config", str(cfg), "--mode", "dh,dh-big",
                 "--runs", "2", "--out", str(both)]) == 0
    assert main(["matrix", "--config", str(cfg), "--mode", "dh-big",
                 "--runs", "2", "--out", str(one)]) == 0
    for seed in ("seed0", "seed1"):
        for name in ("rounds.csv", "trace.csv", "done.json"):
            a = (both / "DTLZ2_M3_dh-big" / seed / name).read_bytes()
            b = (one / "DTLZ2_M3_dh-big" / seed / name).read_bytes()
            assert a == b
    summary = (both / "summary.csv").read_text()
    assert "DTLZ2_M3_dh-big" in summary and "DTLZ2_M3_dh," in summary


def test_zero_noise_matrix_marks_equal(tmp_path, capsys):
    cfg = _write(tmp_path, TINY + "noise_factor = 0\n")
    out = tmp_path / "res"
    assert main(["matrix", "--config", str(cfg), "--mode", "plaintext,dh",
                 "--runs", "3", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    rows = {r["cell"]: r for r in csv.DictReader(open(out / "summary.csv"))}
    assert rows["DTLZ2_M3_dh"]["median"] == rows["DTLZ2_M3_plaintext"]["median"]
    assert rows["DTLZ2_M3_dh"]["mark"] == "="
    assert "DTLZ2_M3_plaintext" in text


def test_failed_cell_gives_exit_one(tmp_path, capsys, monkeypatch):
    import fddea.cli as cli

    def boom(*a, **k):
        raise RuntimeError("cell exploded")

    monkeypatch.setattr(cli, "run_experiment", boom)
    out = tmp_path / "res"
    assert main(["run", "--config", str(_write(tmp_path)), "--out", str(out)]) == 1
    assert "cell exploded" in (out / "DTLZ2_M3_dh" / "seed0" / "error.txt").read_text()


def test_significance_marks():
    lo = [0.1, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17]
    hi = [0.5, 0.51, 0.52, 0.53, 0.54, 0.55, 0.56, 0.57]
    assert significance_mark(lo, hi) == "+"
    assert significance_mark(hi, lo) == "-"
    assert significance_mark(lo, lo) == "="
    assert significance_mark([0.1], hi) == "="


def test_secagg_selftest_and_vectors(tmp_path, capsys):
    vec = tmp_path / "vectors.txt"
    assert main(["secagg-selftest", "--trials", "10", "--vectors", str(vec)]) == 0
    assert vec.exists()
    assert main(["secagg-selftest", "--trials", "10", "--vectors", str(vec)]) == 0
    text = vec.read_text().splitlines()
    idx = next(i for i, line in enumerate(text) if line.startswith("shared = "))
    text[idx] = "shared = 3"
    vec.write_text("\n".join(text))
    assert main(["secagg-selftest", "--trials", "10", "--vectors", str(vec)]) == 1
    assert main(["secagg-selftest", "--group", "nope"]) == 2
    assert "FAIL test vectors" in capsys.readouterr().out
