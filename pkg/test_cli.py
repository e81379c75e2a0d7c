import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest

from qbesim import cli
from qbesim.cli import RunManifest, build_parser, exit_code_for, main, run
from qbesim.errors import DegeneracyError, OutputExistsError, ProtocolError, ValidationError
from qbesim.model import ProductState, build_model, serialize_model

CONFIG_DIR = Path(__file__).parent / "configs"


@pytest.fixture(autouse=True)
def restore_root_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def read_items(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_analyze_writes_eight_records(config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", "--model", str(config_file()), "--out", str(out)]) == 0
    assert len((out / "records.csv").read_text().splitlines()) == 9
    items = read_items(out / "summary.txt")
    assert items["records"] == "8"
    assert items["tie"] == "true"


def test_malformed_config_exits_with_validation_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dims": [2, 2, 2],,}')
    assert main(["analyze", "--model", str(bad), "--out", str(tmp_path / "out")]) == 2
    assert "line 1, column" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_decoupled_model_reports_infinite_tau(config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", "--model", str(config_file()), "--out", str(out), "--override", "h_qb.c=0"]) == 0
    items = read_items(out / "summary.txt")
    assert items["tau"] == "inf"
    assert items["tau_infinite"] == "true"


def test_existing_outputs_need_force(config_file, tmp_path, capsys):
    args = ["analyze", "--model", str(config_file()), "--out", str(tmp_path / "out")]
    assert main(args) == 0
    assert main(args) == 2
    assert "already exists" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_protocol_outputs_are_deterministic(config_file, tmp_path):
    model = str(config_file())
    for name in ("a", "b"):
        assert main(["protocol", "--model", model, "--out", str(tmp_path / name), "--pdf"]) == 0
    for name in ("records.csv", "selection.csv", "trace.csv", "distances.csv", "cycles.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "report.pdf").read_bytes().startswith(b"%PDF")
    assert not (tmp_path / "a" / "scaling.csv").exists()
    assert read_items(tmp_path / "a" / "summary.txt")["plateau_ok"] == "true"


def test_evolve_outputs(config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["evolve", "--model", str(config_file()), "--out", str(out), "--seed", "7"]) == 0
    assert {p.name for p in out.iterdir()} == {"trace.csv", "distances.csv", "summary.txt", "coherence.svg",
                                                "fidelity.svg"}
    assert len((out / "trace.csv").read_text().splitlines()) == 22
    assert read_items(out / "summary.txt")["seed"] == "7"


def test_sweep_outputs(config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["sweep", "--model", str(config_file()), "--out", str(out)]) == 0
    items = read_items(out / "summary.txt")
    assert 0.85 <= float(items["slope"]) <= 1.15
    assert items["k_stable"] == "true"
    assert len((out / "scaling.csv").read_text().splitlines()) == 6


def test_short_ladder_is_a_validation_failure(canonical_config_text, config_file, tmp_path):
    document = json.loads(canonical_config_text)
    document["protocol"]["ratio_ladder"] = [0.1, 0.05]
    path = config_file(json.dumps(document))
    assert main(["sweep", "--model", str(path), "--out", str(tmp_path / "out")]) == 2


def test_baseline_matches_closed_form(tmp_path):
    out = tmp_path / "out"
    assert main(["baseline", "--model", str(CONFIG_DIR / "baseline.json"), "--out", str(out)]) == 0
    assert float(read_items(out / "summary.txt")["max_deviation"]) < 1e-9
    rows = (out / "baseline_0_1.csv").read_text().splitlines()
    assert len(rows) == 65
    first = rows[1].split(",")
    assert float(first[3]) == pytest.approx(1.0)


def test_baseline_mismatch_is_a_numeric_failure(tmp_path, monkeypatch, capsys):
    exact = cli.baseline_z_simulated
    monkeypatch.setattr(cli, "baseline_z_simulated", lambda *args, **kwargs: exact(*args, **kwargs) + 1e-6)
    out = tmp_path / "out"
    assert main(["baseline", "--model", str(CONFIG_DIR / "baseline.json"), "--out", str(out)]) == 3
    assert "deviates from the closed form" in capsys.readouterr().err
    assert not (out / "summary.txt").exists()


def test_baseline_tolerance_comes_from_environment(tmp_path, monkeypatch):
    exact = cli.baseline_z_simulated
    monkeypatch.setattr(cli, "baseline_z_simulated", lambda *args, **kwargs: exact(*args, **kwargs) + 1e-6)
    monkeypatch.setenv("QBESIM_BASELINE_TOL", "1e-5")
    out = tmp_path / "out"
    assert main(["baseline", "--model", str(CONFIG_DIR / "baseline.json"), "--out", str(out)]) == 0
    assert float(read_items(out / "summary.txt")["max_deviation"]) == pytest.approx(1e-6, rel=1e-3)


def test_single_level_system_tracks_no_pairs(tmp_path):
    model = build_model((1, 2, 2), 0.01, [[1.0, -1.0]], math.pi / 4, 1.0, [[1.0, 0.0], [0.0, -1.0]])
    plus = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    state = ProductState(q_amps=np.array([1.0 + 0j]), b_amps=np.array([1.0, 0.0], dtype=complex), e_amps=plus)
    extras = {"protocol": {"include_sweep": False, "grid": {"t_end_tau": 1.0, "n_points": 21}}}
    path = tmp_path / "single.json"
    path.write_text(serialize_model(model, state, extras))
    out = tmp_path / "out"
    assert main(["evolve", "--model", str(path), "--out", str(out)]) == 0
    rows = (out / "trace.csv").read_text().splitlines()
    assert rows[0] == "time,qb_fidelity"
    assert len(rows) == 22


def test_shipped_configs_load(tmp_path):
    for name in ("canonical.json", "dephasing.json", "decoupled.json"):
        out = tmp_path / name
        assert main(["analyze", "--model", str(CONFIG_DIR / name), "--out", str(out)]) == 0


def test_run_accepts_manifest(config_file, tmp_path):
    manifest = RunManifest(command="analyze", model_path=config_file(), output_dir=tmp_path / "out",
                           overrides=("h_be.C=2.0",))
    assert run(manifest) == 0
    assert read_items(tmp_path / "out" / "summary.txt")["overrides"] == "h_be.C=2.0"


def test_exit_codes():
    assert exit_code_for(ValidationError("x")) == 2
    assert exit_code_for(OutputExistsError("x")) == 2
    assert exit_code_for(DegeneracyError("x")) == 3
    wrapped = ProtocolError("spectral", "x")
    wrapped.__cause__ = ValidationError("x")
    assert exit_code_for(wrapped) == 2
    numeric = ProtocolError("evolution", "x")
    numeric.__cause__ = DegeneracyError("x")
    assert exit_code_for(numeric) == 3


def test_pdf_flag_only_on_protocol():
    parser = build_parser()
    assert parser.parse_args(["protocol", "--model", "m", "--out", "o", "--pdf"]).pdf
    with pytest.raises(SystemExit):
        parser.parse_args(["analyze", "--model", "m", "--out", "o", "--pdf"])


def test_log_file_option(config_file, tmp_path):
    log_file = tmp_path / "run.log"
    assert main(["analyze", "--model", str(config_file()), "--out", str(tmp_path / "out"),
                 "--log-file", str(log_file)]) == 0
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "qbesim.cli - INFO" in log_file.read_text()
