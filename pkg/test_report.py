import math

import pytest

from qbesim.errors import OutputExistsError
from qbesim.model import canonical_model
from qbesim.protocol import GridSpec, ProtocolConfig, run_protocol
from qbesim.report import (RECORD_COLUMNS, SCALING_COLUMNS, csv_text, cycles_csv, distances_csv, fmt,
                           key_value_text, line_plot_svg, protocol_items, protocol_pdf, records_csv, scaling_csv,
                           scaling_plot, selection_csv, trace_csv, trace_plots, write_output, write_outputs)


@pytest.fixture(scope="module")
def protocol_run():
    model = canonical_model()
    config = ProtocolConfig(grid=GridSpec(t_end_tau=1.0, n_points=11), repeat_count=2)
    return model, run_protocol(model, config)


def header(text):
    return text.splitlines()[0].split(",")


@pytest.mark.parametrize("value,expected", [
    (True, "true"),
    (False, "false"),
    (3, "3"),
    (math.inf, "inf"),
    (-math.inf, "-inf"),
    (0.1, "0.10000000000000001"),
    ("x", "x"),
])
def test_fmt(value, expected):
    assert fmt(value) == expected


def test_csv_text_and_key_values():
    assert csv_text(["a", "b"], [(1, 0.5), (2, math.inf)]) == "a,b\n1,0.5\n2,inf\n"
    assert key_value_text({"tau": math.inf, "ok": True}) == "tau=inf\nok=true\n"


def test_records_csv(protocol_run):
    _, report = protocol_run
    text = records_csv(report.records)
    assert header(text) == RECORD_COLUMNS
    assert len(text.splitlines()) == 1 + len(report.records)


def test_trace_and_distance_tables(protocol_run):
    _, report = protocol_run
    assert header(trace_csv(report.trace)) == ["time", "z_abs_0_1", "re_rho_0_1", "im_rho_0_1", "qb_fidelity"]
    assert header(distances_csv(report.trace)) == ["time", "qb_state_distance", "leading_order_distance"]
    assert len(trace_csv(report.trace).splitlines()) == 12


def test_selection_and_cycles(protocol_run):
    _, report = protocol_run
    rows = selection_csv(report.selection).splitlines()
    assert rows[0] == "i,diagonal_figure,lambda_max,chosen"
    assert rows[1].endswith("true") and rows[2].endswith("false")
    assert cycles_csv(report).splitlines()[1:] == [f"{c.index},{fmt(c.min_fidelity)},true" for c in report.cycles]


def test_scaling_outputs(protocol_run):
    _, report = protocol_run
    assert header(scaling_csv(report.sweep)) == SCALING_COLUMNS
    svg = scaling_plot(report.sweep)
    assert 'id="series_0"' in svg and 'id="series_1"' in svg
    assert "eps_max vs c/C" in svg


def test_protocol_items(protocol_run):
    model, report = protocol_run
    items = protocol_items(report, model)
    assert items["plateau_ok"] is True
    assert items["repeat_count"] == 2
    assert items["plateau_criterion"] == "configured"
    assert "sweep_slope" in items


def test_line_plot_svg_structure():
    svg = line_plot_svg([("a", [0, 1, 2], [1, 0.5, 0.25]), ("b<c", [0, 1], [0, 1])], "T & t", "x", "y")
    assert "<svg" in svg
    assert 'id="series_0"' in svg and 'id="series_1"' in svg
    assert "b&lt;c" in svg and "T &amp; t" in svg


def test_log_plot_with_non_positive_points_renders():
    series = [("a", [0.0, 0.1, 1.0], [1.0, 0.1, 0.01])]
    svg = line_plot_svg(series, "t", "x", "y", log_x=True, log_y=True)
    assert 'id="series_0"' in svg
    assert line_plot_svg(series, "t", "x", "y", log_x=True, log_y=True) == svg


def test_trace_plots(protocol_run):
    _, report = protocol_run
    plots = trace_plots(report.trace)
    assert set(plots) == {"coherence.svg", "fidelity.svg"}


def test_write_output_refuses_overwrite(tmp_path):
    target = tmp_path / "a.txt"
    write_output(target, "one")
    with pytest.raises(OutputExistsError):
        write_output(target, "two")
    write_output(target, "two", force=True)
    assert target.read_text() == "two"


def test_write_outputs_checks_before_writing(tmp_path):
    (tmp_path / "b.txt").write_text("keep")
    with pytest.raises(OutputExistsError):
        write_outputs(tmp_path, {"a.txt": "new", "b.txt": "new"})
    assert not (tmp_path / "a.txt").exists()
    assert (tmp_path / "b.txt").read_text() == "keep"


def test_protocol_pdf(protocol_run):
    model, report = protocol_run
    data = protocol_pdf(report, model)
    assert data.startswith(b"%PDF")
    assert len(data) > 1000
