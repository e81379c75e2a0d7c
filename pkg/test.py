"""
Smoke workflow for qbesim.

Runs the canonical model through analysis, exact evolution and the full
protocol, and checks the headline numbers. Not a pytest module; run with
`python test.py`. Output is logged to qbesim_smoke.log.
"""

import sys
import math
import logging

from qbesim import canonical_model, perturbation_records, run_protocol, summarize, ProtocolConfig
from qbesim.dynamics import TimeGrid, decoherence_trace
from qbesim.model import canonical_state, with_robust_bath
from qbesim.protocol import select_robust_bath_state

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout),
        logging.FileHandler('qbesim_smoke.log')
    ]
)
logger = logging.getLogger("qbesim_smoke")


def check(label: str, condition: bool, detail: str = "") -> bool:
    logger.info(f"{'PASS' if condition else 'FAIL'} {label} {detail}")
    return condition


def main() -> int:
    model = canonical_model(c=0.01, C=1.0)
    records = perturbation_records(model)
    selection = select_robust_bath_state(model, records=records)
    summary = summarize(records, model, selection.i0)

    results = [
        check("record count", len(records) == 8, f"({len(records)})"),
        check("eps_max ~ c/C", abs(summary.eps_max - math.sin(0.5 * math.atan(0.02))) < 1e-8,
              f"({summary.eps_max:.6e})"),
        check("tau finite", not summary.tau_infinite, f"({summary.tau:.6e})"),
        check("norm split", abs(summary.n1 + summary.n2 - 1.0) < 1e-9),
    ]

    state = with_robust_bath(canonical_state(), model, selection.i0)
    trace = decoherence_trace(model, state, TimeGrid(0.0, 0.1 * summary.tau, 21), records=records)
    results.append(check("plateau", trace.min_fidelity() >= 0.99, f"(min F {trace.min_fidelity():.8f})"))

    report = run_protocol(model, ProtocolConfig(include_sweep=True))
    results.append(check("protocol plateau", report.plateau_ok))
    if report.scaling_fit is not None:
        results.append(check("scaling slope", 0.85 <= report.scaling_fit.slope <= 1.15,
                             f"({report.scaling_fit.slope:.4f}, r2 {report.scaling_fit.r2:.6f})"))

    passed = sum(results)
    logger.info(f"{passed}/{len(results)} checks passed")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
