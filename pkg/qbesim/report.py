"""
Rendering of analysis results: CSV tables, key-value summaries, SVG line
plots and a PDF protocol summary.

Floats are written with 17 significant digits; infinities as "inf".
"""

import io
import csv
import math
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from fpdf import FPDF

from .dynamics import DecoherenceTrace
from .errors import OutputExistsError
from .model import TripartiteModel
from .protocol import ProtocolReport, RobustSelection, SweepResult
from .spectral import PerturbationRecord, PerturbationSummary

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["p", "i", "j", "e0", "e_exact", "lambda", "epsilon", "overlap", "residual_vector_norm",
                  "flagged", "candidates"]
SCALING_COLUMNS = ["ratio", "c", "C", "i0", "eps_max", "lambda_max", "tau", "n2", "k_factor"]

FIGSIZE = (8, 6)
plt.rcParams["svg.hashsalt"] = "qbesim"
plt.rcParams["svg.fonttype"] = "none"


def fmt(value: Any) -> str:
    """Locale-independent rendering of one cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buffer.getvalue()


def key_value_text(items: Dict[str, Any]) -> str:
    return "".join(f"{key}={fmt(value)}\n" for key, value in items.items())


def write_output(path: Path, content, force: bool = False) -> Path:
    """
    Write text or bytes, refusing to replace an existing file unless forced.

    Raises:
        OutputExistsError: If the file exists and force is False
    """
    path = Path(path)
    if path.exists() and not force:
        raise OutputExistsError(f"{path} already exists (use --force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(content, bytes):
        path.write_bytes(content)
    else:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(content)
    logger.info(f"wrote {path}")
    return path


def write_outputs(out_dir: Path, files: Dict[str, Any], force: bool = False) -> List[Path]:
    """Write several files into out_dir after checking none of them would be overwritten."""
    out_dir = Path(out_dir)
    if not force:
        existing = sorted(name for name in files if (out_dir / name).exists())
        if existing:
            raise OutputExistsError(f"{out_dir / existing[0]} already exists (use --force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)
    return [write_output(out_dir / name, content, force=True) for name, content in files.items()]


# ---------------------------------------------------------------- tables

def records_csv(records: Sequence[PerturbationRecord]) -> str:
    rows = [(r.p, r.i, r.j, r.e0, r.e_exact, r.lam, r.epsilon, r.overlap, r.residual_vector_norm, r.flagged,
             ";".join("-".join(str(k) for k in t) for t in r.candidates)) for r in records]
    return csv_text(RECORD_COLUMNS, rows)


def summary_items(summary: PerturbationSummary) -> Dict[str, Any]:
    return {
        "eps_max": summary.eps_max,
        "eps_max_slice": summary.eps_max_slice,
        "lambda_max": summary.lambda_max,
        "tau": summary.tau,
        "tau_infinite": summary.tau_infinite,
        "n1": summary.n1,
        "n2": summary.n2,
        "ratio": summary.ratio,
        "i0": summary.i0,
        "hbar": summary.hbar,
    }


def trace_csv(trace: DecoherenceTrace) -> str:
    header = ["time"]
    for p, pp in trace.pairs:
        header += [f"z_abs_{p}_{pp}", f"re_rho_{p}_{pp}", f"im_rho_{p}_{pp}"]
    header.append("qb_fidelity")
    rows = []
    for k, t in enumerate(trace.times):
        row: List[Any] = [float(t)]
        for pair in trace.pairs:
            rho = trace.rho_q_offdiag[pair][k]
            row += [float(trace.z_abs[pair][k]), float(rho.real), float(rho.imag)]
        row.append(float(trace.qb_fidelity[k]))
        rows.append(row)
    return csv_text(header, rows)


def distances_csv(trace: DecoherenceTrace) -> str:
    rows = [(float(t), float(a), float(b)) for t, a, b in
            zip(trace.times, trace.qb_state_distance, trace.leading_order_distance)]
    return csv_text(["time", "qb_state_distance", "leading_order_distance"], rows)


def selection_csv(selection: RobustSelection) -> str:
    return csv_text(["i", "diagonal_figure", "lambda_max", "chosen"],
                    [(row.i, row.diagonal_figure, row.lambda_max, row.i == selection.i0) for row in selection.table])


def scaling_csv(sweep: SweepResult) -> str:
    rows = [(r.ratio, r.c, r.C, r.i0, r.eps_max, r.lambda_max, r.tau, r.n2, r.k_factor) for r in sweep.rungs]
    return csv_text(SCALING_COLUMNS, rows)


def sweep_items(sweep: SweepResult) -> Dict[str, Any]:
    k_min, k_max = sweep.k_range
    return {
        "slope": sweep.fit.slope,
        "intercept": sweep.fit.intercept,
        "r2": sweep.fit.r2,
        "rungs": len(sweep.rungs),
        "k_min": k_min,
        "k_max": k_max,
        "k_stable": sweep.k_stable,
    }


def baseline_csv(times: np.ndarray, closed: np.ndarray, simulated: np.ndarray) -> str:
    rows = [(float(t), float(a.real), float(a.imag), float(abs(a)), float(b.real), float(b.imag), float(abs(b)))
            for t, a, b in zip(times, closed, simulated)]
    return csv_text(["time", "re_z_closed", "im_z_closed", "abs_z_closed",
                     "re_z_simulated", "im_z_simulated", "abs_z_simulated"], rows)


def cycles_csv(report: ProtocolReport) -> str:
    return csv_text(["cycle", "min_fidelity", "plateau_ok"],
                    [(c.index, c.min_fidelity, c.plateau_ok) for c in report.cycles])


def protocol_items(report: ProtocolReport, model: TripartiteModel) -> Dict[str, Any]:
    items: Dict[str, Any] = {
        "chosen_i0": report.chosen_i0,
        "tie": report.selection.tie,
        "plateau_ok": report.plateau_ok,
        "plateau_time": report.plateau_time,
        "plateau_min_fidelity": report.plateau_min_fidelity,
        "fidelity_threshold": report.fidelity_threshold,
        "plateau_criterion": "configured",
        "error_probability_bound": report.error_probability_bound,
        "weak_coupling_breach": report.weak_coupling_breach,
        "exact_limit": report.exact_limit,
        "c": model.c,
        "C": model.C,
        "repeat_count": len(report.cycles),
    }
    if report.residual_z_deviation is not None:
        items["residual_z_deviation"] = report.residual_z_deviation
        items["residual_z_ok"] = report.residual_z_ok
    items.update(summary_items(report.summary))
    if report.sweep is not None:
        items.update({f"sweep_{k}": v for k, v in sweep_items(report.sweep).items()})
    return items


# ---------------------------------------------------------------- SVG

def line_plot_svg(series: Sequence[Tuple[str, Sequence[float], Sequence[float]]], title: str,
                  x_label: str, y_label: str, log_x: bool = False, log_y: bool = False,
                  markers: bool = False) -> str:
    """
    Static line plot rendered to SVG text.

    Args:
        series: (label, xs, ys) triples; each line carries the SVG id series_<k>
        title: Plot title
        x_label, y_label: Axis labels
        log_x, log_y: Logarithmic axes (non-positive points are dropped)
        markers: Draw a marker at every point
    """
    fig, ax = plt.subplots(1, 1, figsize=FIGSIZE)
    for k, (label, xs, ys) in enumerate(series):
        x, y = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if log_x:
            keep &= x > 0
        if log_y:
            keep &= y > 0
        ax.plot(x[keep], y[keep], marker="o" if markers else None, markersize=4, linewidth=1.5,
                label=label, gid=f"series_{k}")
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.set_title(title)
    if series:
        ax.legend(fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()

    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()


def trace_plots(trace: DecoherenceTrace) -> Dict[str, str]:
    """|z| vs t and fidelity vs t."""
    coherence = [(f"|z_{p}{pp}|", trace.times, trace.z_abs[(p, pp)]) for p, pp in trace.pairs]
    return {
        "coherence.svg": line_plot_svg(coherence, "Correlation amplitude", "t", "|z|"),
        "fidelity.svg": line_plot_svg([("F_QB", trace.times, trace.qb_fidelity)], "Q+B fidelity", "t", "F"),
    }


def scaling_plot(sweep: SweepResult) -> str:
    ratios = [r.ratio for r in sweep.rungs]
    fitted = [math.exp(sweep.fit.intercept) * r ** sweep.fit.slope for r in ratios]
    return line_plot_svg([("eps_max", ratios, [r.eps_max for r in sweep.rungs]),
                          (f"fit slope {sweep.fit.slope:.3f}", ratios, fitted)],
                         "eps_max vs c/C", "c/C", "eps_max", log_x=True, log_y=True, markers=True)


# ---------------------------------------------------------------- PDF

def _latin1(text: str) -> str:
    return text.encode("latin-1", "replace").decode("latin-1")


class PDF(FPDF):
    """Custom PDF class with header and footer"""
    def header(self):
        self.set_font('Arial', 'B', 12)
        self.cell(0, 10, 'QBESIM PROTOCOL REPORT ' + datetime.now().strftime('%B %d, %Y').upper(), 0, 1, 'C')
        self.ln(5)

    def footer(self):
        self.set_y(-15)
        self.set_font('Arial', 'I', 8)
        self.cell(0, 10, f'Page {self.page_no()}/{{nb}}', 0, 0, 'C')


def generate_pdf_content(pdf: FPDF, report: ProtocolReport, model: TripartiteModel):
    """Lay out the protocol verdict, the spectral summary and the records table."""
    verdict = "HOLDS" if report.plateau_ok else "FAILS"
    pdf.set_font('Arial', 'B', 16)
    pdf.cell(0, 10, f"Fidelity plateau {verdict}", 0, 1, 'C')
    pdf.set_font('Arial', '', 10)
    pdf.multi_cell(0, 5, _latin1(
        f"Model dims {model.dims}, c = {model.c:g}, C = {model.C:g} (c/C = {model.ratio:g}). "
        f"Bath prepared in pointer state i0 = {report.chosen_i0}"
        + (" (all candidates tie)." if report.selection.tie else ".")))
    pdf.ln(2)
    if report.weak_coupling_breach:
        pdf.set_font('Arial', 'I', 9)
        pdf.multi_cell(0, 5, "Warning: c/C is above the weak-coupling limit; the perturbative plateau "
                             "estimate is not reliable for this run.")
        pdf.ln(2)

    pdf.set_font('Arial', 'B', 12)
    pdf.cell(0, 10, 'Summary', 1, 1, 'C', fill=False)
    pdf.set_font('Arial', '', 10)
    for key, value in protocol_items(report, model).items():
        pdf.cell(80, 7, key, 1, 0)
        pdf.cell(0, 7, fmt(value), 1, 1, 'R')
    pdf.ln(5)

    pdf.set_font('Arial', 'I', 8)
    pdf.multi_cell(0, 4, "The plateau criterion (minimum fidelity over plateau_fraction * tau against "
                         "fidelity_threshold) is a configured run setting.")
    pdf.ln(3)

    pdf.set_font('Arial', 'B', 12)
    pdf.cell(0, 10, 'Perturbation records', 0, 1)
    pdf.set_font('Arial', 'B', 8)
    widths = (12, 12, 12, 36, 36, 36, 36)
    for width, title in zip(widths, ("p", "i", "j", "E0", "E exact", "lambda", "epsilon")):
        pdf.cell(width, 6, title, 1, 0, 'C')
    pdf.ln()
    pdf.set_font('Arial', '', 8)
    for r in report.records:
        cells = (str(r.p), str(r.i), str(r.j), f"{r.e0:.6g}", f"{r.e_exact:.10g}", f"{r.lam:.6e}",
                 f"{r.epsilon:.6e}")
        for width, text in zip(widths, cells):
            pdf.cell(width, 6, text, 1, 0, 'R')
        pdf.ln()


def protocol_pdf(report: ProtocolReport, model: TripartiteModel) -> bytes:
    pdf = PDF('P', 'mm', 'A4')
    pdf.set_auto_page_break(auto=True, margin=15)
    pdf.add_page()
    generate_pdf_content(pdf, report, model)
    return bytes(pdf.output())
