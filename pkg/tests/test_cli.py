import csv
import math
import subprocess
import sys

import pytest

from asianpde import cli
from asianpde.bounds import BoundReport
from asianpde.config import ConfigError, load_market, read_config
from asianpde.pde import MaximumPrincipleError

REFERENCE = "[market]\nrate = 0.0\nmaturity = 1.0\nweighting_density = (0, 1.0)\n"


@pytest.fixture
def market_file(tmp_path):
    p = tmp_path / "market.ini"
    p.write_text(REFERENCE)
    return p


def read_table(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_config_grammar(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(
        "[market]\nrate = 0.02\nmaturity = 2\nweighting_density = (0, 1.0), (1.0, 2.5)  # two pieces\n"
        "[frame]\nr_list = 0.1, 0.2\nLambda = 2.0\nlambda = 0.5\n"
        "[monte_carlo]\nseed = 0x10\nscheme = euler-x\n"
    )
    cfg = read_config(p)
    assert cfg["market"]["weighting_density"] == [(0.0, 1.0), (1.0, 2.5)]
    assert cfg["frame"] == {"r_list": (0.1, 0.2), "Lambda": 2.0, "lambda": 0.5}
    assert cfg["monte_carlo"]["seed"] == 16
    m = load_market(p)
    assert m.maturity == 2.0 and m.weighting_density(1.5) == 2.5


@pytest.mark.parametrize("text", [
    "[market]\nrate = 0\nmaturity = 1\ncolour = blue\n",
    "[markets]\nrate = 0\n",
    "[market]\nrate = zero\nmaturity = 1\n",
    "[market]\nrate = 0\nmaturity = 1\nweighting_density = (0, 1.0), 3\n",
    "[market]\nrate = 0\nmaturity = 1\nstrike = 0.5\n",
    "[market]\nrate = 0\nmaturity = 1\nweighting_density = (0, -1.0)\n",
    "[market]\nmaturity = 1\n",
    "[grid]\nNX = 5\n",
])
def test_bad_configs_rejected(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_market(p)


def test_malformed_market_leaves_no_output(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[market]\nrate = 0\nmaturity = -1\n")
    out = tmp_path / "out"
    assert cli.main(["price", "--config", str(p), "--out", str(out), "--seed", "1"]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_range_checks_before_work(tmp_path, market_file):
    out = tmp_path / "out"
    for flags in (["--grid-nx", "2"], ["--r-list", "0.1,1.5"], ["--seed", "-3"], ["--levels", "17,33"],
                  ["--mu", "0.9"], ["--paths", "0"]):
        assert cli.main(["price", "--config", str(market_file), "--out", str(out)] + flags) == cli.EXIT_CONFIG
    assert cli.main(["price", "--out", str(out), "--seed", "1"]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_price_runs_and_is_idempotent(tmp_path, market_file, capsys):
    args = ["price", "--config", str(market_file), "--seed", "5", "--paths", "4000", "--steps", "100",
            "--grid-nx", "257", "--grid-nt", "257", "--t", "0", "--x", "1"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == cli.EXIT_OK
    a, b = (tmp_path / "a" / "price.csv").read_bytes(), (tmp_path / "b" / "price.csv").read_bytes()
    assert a == b
    header = a.decode().splitlines()[:2]
    assert "config_hash=" in header[0] and "seed=5" in header[1] and "grid=257x257" in header[1]
    row = read_table(tmp_path / "a" / "price.csv")[0]
    assert abs(float(row["u2_pde"]) - float(row["u2_mc"])) <= 3 * float(row["stderr"]) + 5e-3
    assert "PDE" in capsys.readouterr().out


def test_missing_seed_is_announced(tmp_path, market_file, capsys):
    args = ["price", "--config", str(market_file), "--paths", "100", "--steps", "10",
            "--grid-nx", "65", "--grid-nt", "65", "--out", str(tmp_path / "o")]
    assert cli.main(args) == cli.EXIT_OK
    assert str(cli.DEFAULT_SEED) in capsys.readouterr().err
    assert f"seed={cli.DEFAULT_SEED}" in (tmp_path / "o" / "price.csv").read_text()


def test_verify_key_lemma(tmp_path, market_file):
    out = tmp_path / "kl"
    code = cli.main(["verify-key-lemma", "--config", str(market_file), "--grid-nx", "257", "--grid-nt", "257",
                     "--r-list", "0.25,0.3,0.4", "--out", str(out)])
    assert code == cli.EXIT_OK
    rows = read_table(out / "key_lemma.csv")
    assert [float(r["r"]) for r in rows] == [0.25, 0.3, 0.4]
    for r in rows:
        assert float(r["ratio"]) <= 1 + max(0.05, float(r["noise_floor"]) / float(r["rhs"]))
    assert len(read_table(out / "derivative_decay.csv")) == 3


def test_verify_key_lemma_needs_unit_volatility(tmp_path):
    p = tmp_path / "m.ini"
    p.write_text(REFERENCE + "volatility = 0.5\n")
    assert cli.main(["verify-key-lemma", "--config", str(p), "--grid-nx", "257", "--grid-nt", "257",
                     "--r-list", "0.3", "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_verify_general_and_sweep(tmp_path):
    base = ["--grid-nx", "257", "--grid-nt", "257", "--r-list", "0.2,0.3,0.4"]
    assert cli.main(["verify-general", "--mu", "2"] + base + ["--out", str(tmp_path / "g")]) == cli.EXIT_OK
    assert len(read_table(tmp_path / "g" / "general_bound.csv")) == 3
    sweep = ["sweep", "--mu-list", "1.5,3"] + base
    assert cli.main(sweep + ["--out", str(tmp_path / "s1")]) == cli.EXIT_OK
    assert cli.main(sweep + ["--workers", "2", "--out", str(tmp_path / "s2")]) == cli.EXIT_OK
    assert (tmp_path / "s1" / "sweep.csv").read_bytes() == (tmp_path / "s2" / "sweep.csv").read_bytes()


def test_barrier_table(tmp_path):
    assert cli.main(["barrier-table", "--R", "4", "--out", str(tmp_path)]) == cli.EXIT_OK
    rows = read_table(tmp_path / "barrier_table.csv")
    assert len(rows) == 3 * 101
    assert all(0.0 <= float(r["v"]) <= 1.0 for r in rows)


def test_convergence_command(tmp_path):
    assert cli.main(["convergence", "--levels", "17,33,65", "--out", str(tmp_path)]) == cli.EXIT_OK
    rows = read_table(tmp_path / "convergence.csv")
    errs = [float(r["error"]) for r in rows]
    assert len(errs) == 3 and errs[0] > errs[1] > errs[2]
    assert cli.main(["convergence", "--levels", "17,30,65", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path, market_file, monkeypatch):
    def boom(*a, **k):
        raise MaximumPrincipleError("forced")

    monkeypatch.setattr(cli, "solve_u2", boom)
    out = tmp_path / "o"
    assert cli.main(["price", "--config", str(market_file), "--seed", "1", "--out", str(out)]) == cli.EXIT_NUMERIC
    assert not out.exists()


def test_bound_violation_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "general_reports",
                        lambda *a: ([BoundReport(0.2, 2.0, 1.0, 2.0, 0.0)], math.nan))
    out = tmp_path / "o"
    assert cli.main(["verify-general", "--out", str(out)]) == cli.EXIT_VIOLATION
    # The violating report is still written for inspection.
    assert float(read_table(out / "general_bound.csv")[0]["ratio"]) == 2.0


def test_config_hash_tracks_inputs():
    a = cli.RunConfig("barrier-table", R=4.0)
    b = cli.RunConfig("barrier-table", R=4.0, out="elsewhere", workers=3)
    c = cli.RunConfig("barrier-table", R=5.0)
    assert a.digest() == b.digest() != c.digest()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "asianpde", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
