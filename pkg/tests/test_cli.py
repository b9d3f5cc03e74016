import json

import pytest

from castlekit import __version__
from castlekit.cli import main

Z1 = {"kind": "zd", "d": 1}


def run(tmp_path, command, cfg, *extra):
    path = tmp_path / "cfg.json"
    path.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    out = tmp_path / "report.json"
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_boundary_interval(tmp_path):
    cfg = {"group": Z1, "K": [[-1], [0], [1]], "F_box": {"lo": [0], "hi": [9]}, "delta": "2/5"}
    code, rep = run(tmp_path, "boundary", cfg)
    assert code == 0
    assert rep["result"]["boundary_size"] == 4
    assert rep["result"]["invariant"] is True
    assert rep["version"] == __version__ and len(rep["config_hash"]) == 64


def test_bad_json_is_input_error(tmp_path, capsys):
    code, rep = run(tmp_path, "boundary", "{not json")
    assert code == 2 and rep is None
    assert "bad-input" in capsys.readouterr().err


def test_missing_field_is_input_error(tmp_path):
    code, rep = run(tmp_path, "boundary", {"group": Z1})
    assert code == 2 and rep["status"] == "bad-input"


def test_quasitile_with_oracle(tmp_path):
    cfg = {"group": Z1, "epsilon": "1/4", "E_box": {"lo": [0], "hi": [9999]}, "nontrivial": 2}
    code, rep = run(tmp_path, "quasitile", cfg, "--oracle")
    assert code == 0
    assert rep["result"]["covered_fraction"] == "1"
    assert all(rep["result"]["oracle"].values())


def test_quasitile_precondition_is_contract_failure(tmp_path):
    cfg = {"group": Z1, "epsilon": "1/4", "E_box": {"lo": [0], "hi": [2999]}, "nontrivial": 2}
    code, rep = run(tmp_path, "quasitile", cfg)
    assert code == 1 and rep["error"]["type"] == "PreconditionError"


def test_disjointify_with_oracle(tmp_path):
    cfg = {"random": {"n": 1, "delta": "9/10", "seed": 4}}
    code, rep = run(tmp_path, "disjointify", cfg, "--oracle")
    assert code == 0
    assert rep["result"]["hypotheses"] == "ok" and rep["result"]["bound"]["holds"]
    assert rep["result"]["oracle"] == {"pieces_equal": True, "flags_equal": True}


def test_density_report(tmp_path):
    cfg = {"space": {"group": {"kind": "semidirect", "alpha": [[1]]}, "p": 2, "q": 2},
           "set": {"depth": [1, 1], "keys": [0, 1, 2]}}
    code, rep = run(tmp_path, "density", cfg)
    assert code == 0
    assert rep["result"]["shift_invariant"]


def test_unknown_flag_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "boundary", {"group": Z1}, "--oracle")
    assert code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        raise SystemExit(main(["--version"]))
    assert __version__ in capsys.readouterr().out
