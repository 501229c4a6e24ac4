import json
import subprocess
import sys

import pytest

from wkg.cli import load_config, main, run_id, verify_manifest
from wkg.errors import ConfigError


def _cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


ZERO_FORWARD = """
[grid]
r_max = 40.0
n_r = 400
t_end = 30.0

[data]
epsilon = 0.0
"""


def _run_dir(root):
    dirs = [d for d in root.iterdir() if d.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


# ---------------------------------------------------------------- configuration

def test_unknown_key_is_usage_error(tmp_path, capsys):
    p = _cfg(tmp_path, "[grid]\nr_max = 40.0\nbogus = 1\n")
    assert main(["forward", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_unknown_section_rejected(tmp_path):
    p = _cfg(tmp_path, "[solver]\norder = 4\n")
    with pytest.raises(ConfigError):
        load_config(p, "forward")


def test_wrong_type_rejected(tmp_path):
    p = _cfg(tmp_path, '[grid]\nn_r = "many"\n')
    with pytest.raises(ConfigError):
        load_config(p, "forward")


def test_missing_config_is_usage_error(tmp_path):
    assert main(["forward", "--config", str(tmp_path / "nope.toml")]) == 2


def test_bad_command_is_usage_error(tmp_path):
    assert main(["sideways", "--config", "x.toml"]) == 2
    assert main(["forward"]) == 2


def test_bad_jobs_is_usage_error(tmp_path):
    p = _cfg(tmp_path, ZERO_FORWARD)
    assert main(["forward", "--config", str(p), "--jobs", "0"]) == 2


def test_run_id_stable_and_sensitive(tmp_path):
    a = load_config(_cfg(tmp_path, ZERO_FORWARD), "forward")
    b = load_config(_cfg(tmp_path, ZERO_FORWARD, "other.toml"), "forward")
    assert run_id("forward", a) == run_id("forward", b)
    b["data"]["epsilon"] = 0.01
    assert run_id("forward", a) != run_id("forward", b)
    assert run_id("forward", a) != run_id("construct", a)


# ---------------------------------------------------------------- runs

@pytest.fixture(scope="module")
def zero_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    p = _cfg(root, ZERO_FORWARD)
    code = main(["forward", "--config", str(p), "--out", str(root / "out")])
    return code, _run_dir(root / "out")


def test_zero_forward_passes(zero_run):
    code, d = zero_run
    assert code == 0
    man = json.loads((d / "manifest.json").read_text())
    assert man["passed"] and man["command"] == "forward"
    assert all(v["passed"] for v in man["verdicts"].values())


def test_manifest_checksums(zero_run):
    _, d = zero_run
    assert verify_manifest(d)
    man = json.loads((d / "manifest.json").read_text())
    names = {a["path"] for a in man["artifacts"]}
    assert {"u.csv", "phi.csv"} <= names
    victim = d / "u.csv"
    original = victim.read_bytes()
    victim.write_bytes(original + b"\n")
    try:
        assert not verify_manifest(d)
    finally:
        victim.write_bytes(original)


def test_report_deterministic(zero_run):
    _, d = zero_run
    assert main(["report", "--config", str(d)]) == 0
    first = {p.name: p.read_bytes() for p in (d / "report").iterdir()}
    assert "verdicts.csv" in first and any(n.endswith(".svg") for n in first)
    assert main(["report", "--config", str(d)]) == 0
    second = {p.name: p.read_bytes() for p in (d / "report").iterdir()}
    assert first == second


def test_report_of_missing_run(tmp_path):
    assert main(["report", "--config", str(tmp_path / "absent")]) == 2


def test_output_root_from_environment(tmp_path, monkeypatch):
    p = _cfg(tmp_path, '[verify]\nsuite = "mms"\nmms_n = [50, 100, 200]\n')
    monkeypatch.setenv("WKG_OUT", str(tmp_path / "env"))
    assert main(["verify", "--config", str(p)]) == 0
    d = _run_dir(tmp_path / "env")
    assert d.name.startswith("verify-") and (d / "mms.csv").exists()


def test_divergence_exit_code(tmp_path):
    p = _cfg(tmp_path, "[grid]\nr_max = 12.0\nn_r = 240\nt_end = 12.0\n\n[data]\nepsilon = 60.0\n")
    assert main(["forward", "--config", str(p), "--out", str(tmp_path)]) == 3


def test_failing_verdict_exit_code(tmp_path):
    # far from r/t = 1 the fitted slope is not the asymptotic exponent
    p = _cfg(tmp_path, '[verify]\nsuite = "kernel-lemma"\nn_params = 3\nratios = [0.3, 0.4, 0.5]\n')
    assert main(["verify", "--config", str(p), "--out", str(tmp_path)]) == 1
    man = json.loads((_run_dir(tmp_path) / "manifest.json").read_text())
    assert not man["passed"] and not man["verdicts"]["kernel_lemma"]["passed"]


def test_grid_too_small_is_usage_error(tmp_path):
    p = _cfg(tmp_path, '[verify]\nsuite = "mms"\nmms_n = [4, 8]\n')
    assert main(["verify", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-c", "from wkg.cli import main; raise SystemExit(main())",
                          "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "forward" in out.stdout
