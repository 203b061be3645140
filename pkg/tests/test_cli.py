import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from livsic_xray import cli


def write_cfg(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


def run(tmp_path, *args):
    return cli.main(["run", *args])


# --- config parsing -----------------------------------------------------------------


def test_parse_config_comments_and_spaces():
    raw = cli.parse_config("# a comment\nexperiment = resolvent  # trailing\n\n n_signals=3\n")
    assert raw == {"experiment": "resolvent", "n_signals": "3"}


@pytest.mark.parametrize(
    "text, key",
    [
        ("experiment = bogus\n", "experiment"),
        ("n_signals = 3\n", "experiment"),
        ("experiment = resolvent\nn_signal = 3\n", "n_signal"),
        ("experiment = resolvent\nn_signals = three\n", "n_signals"),
        ("experiment = resolvent\ntol_direct = -1\n", "tol_direct"),
        ("experiment = resolvent\nseed = -4\n", "seed"),
        ("experiment = resolvent\nn_signals = 2\nn_signals = 3\n", "n_signals"),
    ],
)
def test_config_errors_name_key(text, key):
    with pytest.raises(cli.ConfigError) as err:
        cli.resolve_config(cli.parse_config(text))
    assert err.value.key == key


def test_config_line_without_equals():
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config("experiment resolvent\n")
    assert "line 1" in str(err.value)


def test_defaults_and_types():
    cfg = cli.resolve_config({"experiment": "livsic-sweep", "deltas": "0.1, 0.01"})
    assert cfg["seed"] == cli.DEFAULT_SEED
    assert cfg["params"]["deltas"] == [0.1, 0.01]
    assert cfg["params"]["n_check"] == 4000


def test_seed_streams_independent_and_stable():
    a = cli.rng_for(7, 0).random(4)
    assert (a == cli.rng_for(7, 0).random(4)).all()
    assert not (a == cli.rng_for(7, 1).random(4)).any()
    assert not (a == cli.rng_for(8, 0).random(4)).any()


# --- running ------------------------------------------------------------------------


def test_list(capsys):
    assert cli.main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert names == list(cli.EXPERIMENTS)
    assert len(names) == 8


def test_bogus_experiment_exit(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.cfg", experiment="bogus")
    assert run(tmp_path, "--config", str(cfg), "--out", str(tmp_path)) != 0
    assert "experiment" in capsys.readouterr().err


def test_missing_out_dir(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", experiment="resolvent", n_signals=1)
    assert run(tmp_path, "--config", str(cfg), "--out", str(tmp_path / "nope")) != 0


def test_resolvent_report(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", experiment="resolvent", n_signals=2)
    assert run(tmp_path, "--config", str(cfg), "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "resolvent.json").read_text())
    jsonschema.validate(report, cli.load_schema())
    assert report["status"] == "pass"
    rows = list(csv.reader(open(tmp_path / "resolvent.csv")))
    assert rows[0] == report["csv_columns"]
    assert len(rows) == 1 + 2 * 4


def test_failed_assertion_exits_nonzero(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", experiment="resolvent", n_signals=1, tol_direct=1e-300)
    assert run(tmp_path, "--config", str(cfg), "--out", str(tmp_path)) == 1
    report = json.loads((tmp_path / "resolvent.json").read_text())
    assert report["status"] == "fail"
    assert any(a["status"] == "fail" for a in report["assertions"])


def test_byte_identical_reruns(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", experiment="xray-kernel", word_cutoff=3, n_fields=2)
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        d.mkdir()
        assert run(tmp_path, "--config", str(cfg), "--out", str(d), "--seed", "99") == 0
        outs.append(((d / "xray-kernel.json").read_bytes(), (d / "xray-kernel.csv").read_bytes()))
    assert outs[0] == outs[1]
    d = tmp_path / "other"
    d.mkdir()
    run(tmp_path, "--config", str(cfg), "--out", str(d), "--seed", "100")
    assert (d / "xray-kernel.json").read_bytes() != outs[0][0]


def test_livsic_sweep_csv_schema(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", experiment="livsic-sweep", deltas="0.1, 0.01", n_check=100, n_residual=50)
    run(tmp_path, "--config", str(cfg), "--out", str(tmp_path))
    rows = list(csv.DictReader(open(tmp_path / "livsic-sweep.csv")))
    assert list(rows[0]) == ["epsilon", "period", "h_sup", "tau_fit"]
    assert [float(r["epsilon"]) for r in rows] == [0.1, 0.01]
    for r in rows:
        assert float(r["period"]) <= float(r["epsilon"]) ** -0.5
        assert float(r["h_sup"]) > 0
    assert len({r["tau_fit"] for r in rows}) == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "livsic_xray", "list"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "parry" in out.stdout.split()
