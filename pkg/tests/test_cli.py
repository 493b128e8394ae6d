import argparse
import json
import subprocess
import sys

import numpy as np
import pytest

from photosynapse.cli import build_parser, main
from photosynapse.corpus import corpus_dir

UNIT_TAGS = ("[s]", "[W]", "[V]", "[A]", "[count]", "[nm]", "[path]", "[-]", "[unit of the parameter]")


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path), *argv])


def subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def test_every_option_has_a_unit_tag():
    parser = build_parser()
    for name, sub in [("", parser), *subparsers(parser).items()]:
        for action in sub._actions:
            if isinstance(action, (argparse._HelpAction, argparse._VersionAction, argparse._SubParsersAction)):
                continue
            assert action.help and action.help.startswith(UNIT_TAGS), (name, action.dest, action.help)


def test_simulate_fig2b_two_ipsc_peaks(tmp_path, capsys):
    assert run(tmp_path, "simulate", str(corpus_dir() / "fig2b.json")) == 0
    data = np.loadtxt(tmp_path / "fig2b.trace.csv", delimiter=",", skiprows=1)
    t, i = data[:, 0], data[:, 1]
    d = i - i[0]
    first = d[(t >= 0.01) & (t < 0.065)].min()
    second = d[(t >= 0.065) & (t < 0.2)].min()
    assert first < 0 and second < first
    metrics = json.loads((tmp_path / "fig2b.metrics.json").read_text())
    assert metrics["classification"] == "Inhibitory"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["fig2b"]["file"] == "fig2b.trace.csv"
    assert (tmp_path / "fig2b.events.csv").read_text().startswith("t_s,label\n")


def test_simulate_set_placeholder(tmp_path):
    args = ["simulate", str(corpus_dir() / "fig4b.json"), "--set", "p1_w=2e-5", "--set", "p2_w=2e-5",
            "--format", "json"]
    assert run(tmp_path, *args) == 0
    doc = json.loads((tmp_path / "fig4b.trace.json").read_text())
    assert max(doc["power_405_w"]) == 2e-5


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(out, "ppf", "--intervals", "0.006,0.055") == 0
        assert run(out, "simulate", str(corpus_dir() / "fig1b.json"), "--set", "v_g=-20") == 0
    for name in ("fig2c.csv", "fig1b.trace.csv", "fig1b.metrics.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_logic_and(tmp_path, capsys):
    assert run(tmp_path, "logic", "--mode", "and") == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[1] == "a b delta_psc_a bit"
    assert [line.split()[-1] for line in out[2:6]] == ["0", "0", "0", "1"]
    assert (tmp_path / "fig4c.csv").exists()


def test_missing_protocol_names_path(tmp_path, capsys):
    assert run(tmp_path, "simulate", str(tmp_path / "nope.json")) == 1
    assert "nope.json" in capsys.readouterr().err


def test_missing_placeholder_is_usage_error(tmp_path, capsys):
    assert run(tmp_path, "simulate", str(corpus_dir() / "fig4b.json")) == 1
    assert "p1_w" in capsys.readouterr().err


def test_bad_dt_exit_1(tmp_path, capsys):
    assert run(tmp_path, "--dt", "1e-3", "simulate", str(corpus_dir() / "fig2b.json")) == 1
    assert "--dt" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--dt", "-1", "ppf"],
    ["--seed", "-1", "ppf"],
    ["--seed", str(2 ** 64), "ppf"],
    ["logic"],
    ["bogus"],
    ["ppf", "--intervals", "a,b"],
])
def test_argument_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_missing_params_file(tmp_path, capsys):
    assert run(tmp_path, "--params", str(tmp_path / "p.json"), "logic", "--mode", "or") == 1
    assert "p.json" in capsys.readouterr().err


def test_numerical_failure_exit_2(tmp_path, capsys):
    # a constant trace cannot be fitted; the fit diverges
    trace = tmp_path / "flat.csv"
    trace.write_text("t_s,i_a\n" + "".join(f"{k * 1e-4!r},{float(np.sin(k))!r}\n" for k in range(200)))
    assert run(tmp_path, "fit-decay", str(trace), "--t-start-s", "0") == 2
    assert "numerical failure" in capsys.readouterr().err


def test_global_flags_after_subcommand(tmp_path):
    assert main(["ppf", "--intervals", "0.055", "--out", str(tmp_path), "--format", "json"]) == 0
    assert json.loads((tmp_path / "fig2c.json").read_text())["figure_id"] == "fig2c"


def test_retina_from_manifest(tmp_path):
    doc = {"v_g": -20.0, "frames": [{"duration": 0.02, "power": {"405": [[0.0, 5e-5], [1e-5, 0.0]]}}]}
    (tmp_path / "in.json").write_text(json.dumps(doc))
    assert run(tmp_path, "retina", str(tmp_path / "in.json"), "--pgm") == 0
    manifest = json.loads((tmp_path / "retina" / "manifest.json").read_text())
    assert manifest["frames"][0]["pgm"] == "frame_0000.pgm"
    assert manifest["input"]["v_g"] == -20.0


def test_fit_decay_round_trip(tmp_path):
    t = np.arange(2000) * 1e-4
    i = 1e-3 + 2e-6 * np.exp(-t / 0.004) + 1e-6 * np.exp(-t / 0.05)
    trace = tmp_path / "x.csv"
    trace.write_text("t_s,i_a\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(t, i)))
    assert run(tmp_path, "fit-decay", str(trace), "--t-start-s", "0", "--format", "json") == 0
    doc = json.loads((tmp_path / "x.decay.json").read_text())
    assert doc["tau1_s"] == pytest.approx(0.004, rel=1e-4)
    assert doc["tau2_s"] == pytest.approx(0.05, rel=1e-4)


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "photosynapse.cli", "--help"],
                         capture_output=True, text=True, check=True)
    assert "simulate" in out.stdout and "retina" in out.stdout
