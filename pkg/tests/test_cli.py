import json
from pathlib import Path

import pytest

from opticsense.cli import build_run, main
from opticsense.errors import ConfigError
from opticsense.report import Report, csv_text, read_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(*argv):
    return main([str(a) for a in argv])


def payload(path):
    return Report.from_json(Path(path).read_text()).payload_json()


def test_simulate_full_core(tmp_path, capsys):
    assert run("simulate", "--config", CONFIGS / "ideal.yaml", "--out", tmp_path) == 0
    rep = Report.from_json((tmp_path / "report.json").read_text())
    assert rep.payload["schedule"]["utilization"] == 1.0
    for name in ("summary.txt", "schedule.json", "breakdown.csv", "breakdown.png",
                 "occupancy.png"):
        assert (tmp_path / name).is_file()
    assert "utilization 1.0000" in capsys.readouterr().out


def test_report_round_trip(tmp_path):
    run("simulate", "--config", CONFIGS / "ideal.yaml", "--out", tmp_path)
    text = (tmp_path / "report.json").read_text()
    assert Report.from_json(text).to_json() == text


def test_missing_model_exit_3(tmp_path, capsys):
    code = run("simulate", "--config", CONFIGS / "mnist.yaml", "--set", "run.model=missing_dir")
    assert code == 3
    assert "missing_dir" in capsys.readouterr().err


@pytest.mark.parametrize("setting", ["awc.bit_width=9", "awc.frobnicate=1", "run.mode=fast",
                                     "num_banks=81"])
def test_bad_config_exit_2(setting):
    assert run("simulate", "--config", CONFIGS / "ideal.yaml", "--set", setting) == 2


def test_missing_config_file_exit_2(tmp_path):
    assert run("simulate", "--config", tmp_path / "nope.yaml") == 2


def test_simulate_deterministic_across_threads(tmp_path):
    args = ["simulate", "--config", CONFIGS / "noisy.yaml", "--set", "run.samples=150"]
    assert run(*args, "--out", tmp_path / "a", "--threads", 1) == 0
    assert run(*args, "--out", tmp_path / "b", "--threads", 3) == 0
    assert payload(tmp_path / "a" / "report.json") == payload(tmp_path / "b" / "report.json")


def test_sweep_kernel_sizes(tmp_path):
    assert run("sweep", "--config", CONFIGS / "sweep_kernel.yaml", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert [int(r["macs_per_cycle"]) for r in rows] == [3600, 2000, 3920]
    assert (tmp_path / "sweep.png").is_file()
    assert len(list((tmp_path / "points").iterdir())) == 3


def test_sweep_axis_from_command_line(tmp_path):
    code = run("sweep", "--config", CONFIGS / "mnist.yaml", "--set", "run.samples=50",
               "--axis", "awc.bit_width=2,4", "--out", tmp_path, "--threads", 2)
    assert code == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert [r["bit_width"] for r in rows] == ["2", "4"]
    assert all(0.0 <= float(r["accuracy"]) <= 1.0 for r in rows)
    for col in ("noise", "power", "efficiency"):
        assert col in rows[0]


def test_sweep_without_axes_exit_2(tmp_path):
    assert run("sweep", "--config", CONFIGS / "ideal.yaml", "--out", tmp_path) == 2
    assert run("sweep", "--config", CONFIGS / "ideal.yaml", "--axis", "awc.bit_width=") == 2


def test_sweep_partial_grid_flagged(tmp_path):
    code = run("sweep", "--config", CONFIGS / "ideal.yaml", "--axis", "awc.bit_width=2,7",
               "--out", tmp_path)
    assert code == 2
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert doc["payload"]["partial"] is True
    assert [r["status"] for r in doc["payload"]["rows"]][0] == "ok"


def test_inspect_full_core_schedule(tmp_path, capsys):
    run("simulate", "--config", CONFIGS / "ideal.yaml", "--out", tmp_path)
    capsys.readouterr()
    assert run("inspect", tmp_path / "schedule.json") == 0
    assert "arms in use 400/400" in capsys.readouterr().out


def test_inspect_five_by_five(capsys):
    code = run("inspect", CONFIGS / "sweep_kernel.yaml", "--set", "layer.kernel_size=5")
    assert code == 0
    out = capsys.readouterr().out
    assert "3/5" in out and "vom depth   3" in out


def test_inspect_fixture_and_corruption(tmp_path, capsys):
    from opticsense.fixtures import MANIFEST, save_fixture
    import numpy as np
    fx = save_fixture(tmp_path / "fx", "model", {"w": np.arange(4)})
    assert run("inspect", fx) == 0
    assert "checksums ok" in capsys.readouterr().out
    m = json.loads((fx / MANIFEST).read_text())
    m["tensors"]["w"]["sha256"] = "f" * 64
    (fx / MANIFEST).write_text(json.dumps(m))
    assert run("inspect", fx) == 3
    assert "checksum mismatch" in capsys.readouterr().err


def test_inspect_garbage_exit_3(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert run("inspect", p) == 3
    assert run("inspect", tmp_path / "absent.json") == 3


def test_overrides_layer_on_yaml():
    rc = build_run({"layer": {"kind": "conv", "in_height": 5, "in_width": 5, "kernel_size": 3}},
                   {"constants.e_vcsel": 1e-15, "run.seed": 4})
    assert rc.core.constants.e_vcsel == 1e-15 and rc.seed == 4
    with pytest.raises(ConfigError):
        build_run({"bogus": {}})
    with pytest.raises(ConfigError):
        build_run({"run": {"mode": "ideal"}})


def test_csv_text_quotes_lists():
    assert csv_text([{"a": 1.5, "b": [1, 2]}]) == 'a,b\n1.5,"[1, 2]"\n'
