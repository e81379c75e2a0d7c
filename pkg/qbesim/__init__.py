"""
qbesim: qubit–bath–environment decoherence-suppression simulator.

Exact diagonalization of H_QB + H_BE, perturbation records against the
unperturbed product basis, exact decoherence traces and the suppression
protocol built on them.
"""

from .errors import QbesimError
from .model import (TripartiteModel, ProductState, build_model, canonical_model, canonical_state, load_model,
                    load_model_file, serialize_model)
from .spectral import perturbation_records, summarize
from .dynamics import TimeGrid, decoherence_trace
from .protocol import ProtocolConfig, run_protocol, sweep_ratio

__version__ = "0.1.0"

__all__ = [
    "QbesimError",
    "TripartiteModel",
    "ProductState",
    "build_model",
    "canonical_model",
    "canonical_state",
    "load_model",
    "load_model_file",
    "serialize_model",
    "perturbation_records",
    "summarize",
    "TimeGrid",
    "decoherence_trace",
    "ProtocolConfig",
    "run_protocol",
    "sweep_ratio",
]
