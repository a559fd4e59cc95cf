import csv
import io

import pytest
from hypothesis import given, strategies as st

from neumann_green import cli
from neumann_green.errors import ConfigError

SMALL = """\
[experiment]
name = small
description = tiny conservation and symmetry run
seed = 7
workers = 2
save_tables = true

[domain]
shape = interval

[field]
family = checkerboard
low = 0.5
high = 2.0
cells_per_side = 2

[discretization]
cells = 32
eps = 1/8
tau = 1/256
horizon = 0.05

[poles]
points = 0.5; 0.3

[verify]
checks = conservation, symmetry

[symmetry]
pairs = 3
max_steps = 5
"""


def _cfg(text, tmp_path, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _line_of(text, needle):
    return next(i for i, l in enumerate(text.splitlines(), 1) if l.startswith(needle))


@pytest.mark.parametrize("old,new,needle", [
    ("eps = 1/8", "eps = 1/64", "eps"),                 # eps below 2h
    ("tau = 1/256", "tau = 1/10", "tau"),              # tau above eps^2
    ("horizon = 0.05", "horizon = 0.05\ncolour = red", "colour"),
    ("[poles]", "[poles]\npoints = 0.1\n", "points = 0.5"),    # duplicate key
    ("points = 0.5; 0.3", "points = 0.5 0.5", "points"),        # wrong dimension
])
def test_config_errors_carry_line_numbers(old, new, needle):
    text = SMALL.replace(old, new, 1)
    with pytest.raises(ConfigError) as info:
        cli.parse_config(text)
    assert info.value.line == _line_of(text, needle)


def test_config_requires_seed():
    with pytest.raises(ConfigError, match="seed"):
        cli.parse_config(SMALL.replace("seed = 7\n", ""))


def test_config_rejects_unknown_check_and_stray_params():
    with pytest.raises(ConfigError):
        cli.parse_config(SMALL.replace("conservation, symmetry", "conservation, magic"))
    with pytest.raises(ConfigError):
        cli.parse_config(SMALL.replace("conservation, symmetry", "conservation"))


def test_config_values_are_parsed():
    cfg = cli.parse_config(SMALL)
    assert cfg.seed == 7
    assert cfg.eps == pytest.approx(0.125)
    assert cfg.poles == [(0.5,), (0.3,)]
    assert [name for name, _ in cfg.checks] == ["conservation", "symmetry"]


def test_parser_comments_and_duplicates():
    raw = cli.parse_config_text("[a]\n# note\nx = 1  # trailing\n")
    assert raw["a"]["x"][0] == "1"
    with pytest.raises(ConfigError) as info:
        cli.parse_config_text("[a]\nx = 1\nx = 2\n")
    assert info.value.line == 3


@given(st.fractions(min_value=-100, max_value=100, max_denominator=1000))
def test_number_parser_accepts_fractions(q):
    assert cli._number(f"{q.numerator}/{q.denominator}") == pytest.approx(float(q))


def test_run_writes_report_and_tables(tmp_path):
    out = tmp_path / "out"
    res = cli.run_experiment(_cfg(SMALL, tmp_path), out)
    assert res.status == 0
    files = sorted(p.name for p in res.run_dir.iterdir())
    assert files == ["config.cfg", "report.csv", "summary.txt", "tables"]
    rows = list(csv.DictReader(io.StringIO((res.run_dir / "report.csv").read_text())))
    assert rows and all(r["verdict"] == "pass" for r in rows)
    assert {r["quantity"].split(".")[0] for r in rows} == {"conservation", "symmetry"}
    tables = sorted((res.run_dir / "tables").iterdir())
    assert tables
    target = tmp_path / "t.csv"
    assert cli.main(["export", str(tables[0]), str(target)]) == 0
    assert target.read_text().splitlines()[0] == "t,node_index,x,component,column,value"


def test_runs_are_deterministic_and_do_not_overwrite(tmp_path):
    path = _cfg(SMALL, tmp_path)
    a = cli.run_experiment(path, tmp_path / "o")
    b = cli.run_experiment(path, tmp_path / "o")
    assert a.run_dir != b.run_dir
    assert (a.run_dir / "report.csv").read_bytes() == (b.run_dir / "report.csv").read_bytes()


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.run(_cfg(SMALL, tmp_path)) == 0
    assert len(list((tmp_path / "env").iterdir())) == 1


def test_exit_codes(tmp_path, capsys):
    bad = _cfg(SMALL.replace("eps = 1/8", "eps = 1/64"), tmp_path, "bad.cfg")
    assert cli.main(["run", str(bad), "--output", str(tmp_path)]) == 2
    assert "config error: line" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2
    away = _cfg(SMALL.replace("points = 0.5; 0.3", "points = 0.5; 3.0"), tmp_path, "away.cfg")
    assert cli.main(["run", str(away), "--output", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "aborted while testing" in err


def test_failing_verdict_exits_one(tmp_path, capsys):
    text = SMALL + "\n[conservation]\ntol = 1e-30\n"
    assert cli.main(["run", str(_cfg(text, tmp_path)), "--output", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("FAIL conservation.")


def test_list_filters(capsys):
    assert cli.main(["list"]) == 0
    full = capsys.readouterr().out.splitlines()
    assert len(full) == len(cli.bundled_configs()) >= 10
    assert "interval_identity" in "\n".join(full)
    cli.main(["list", "gaussian"])
    names = [l.split()[0] for l in capsys.readouterr().out.splitlines()]
    assert names and all("gaussian" in n for n in names)
    assert cli.main(["list", "no-such-thing"]) == 0
    assert capsys.readouterr().out == ""


def test_every_bundled_config_parses_and_has_a_description():
    for name, desc in cli.bundled_configs():
        cfg = cli.load_config(name)
        assert cfg.name == name
        assert len(desc.split()) >= 5


def test_single_verifier_report_on_checkerboard():
    res = cli.run_experiment("gaussian_checkerboard_interval", write=False)
    prefixes = {r.quantity.split(".")[0] for r in res.report.rows}
    assert prefixes == {"gaussian"}
    assert res.status == 0
