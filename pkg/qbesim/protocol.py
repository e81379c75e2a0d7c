"""
Decoherence-suppression protocol driver and coupling-ratio sweeps.

A protocol run picks the robust bath state, prepares the product state with
the bath in that pointer state, predicts the plateau duration τ from the
perturbation records, evolves exactly and checks the Q+B fidelity over the
first plateau_fraction·τ.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .base_stage import BaseStage, StageOrchestrator
from .dynamics import (DecoherenceTrace, TimeGrid, decoherence_trace, default_pairs, evolve,
                       residual_z_closed_form)
from .errors import InsufficientSweepError, NumericError, ProtocolError, ValidationError
from .model import (ProductState, TripartiteModel, embedded_h_qb, full_hamiltonian, pointer_amplitudes,
                    product_state_vector, with_couplings, with_robust_bath)
from .operators import hermitian_eig
from .settings import Settings, get_settings
from .spectral import PerturbationRecord, PerturbationSummary, perturbation_records, summarize, uniform_robust_state

logger = logging.getLogger(__name__)

DEFAULT_LADDER = (0.1, 0.05, 0.02, 0.01, 0.005)
TIE_TOL = 1e-12
MAX_SWEEP_RATIO = 0.1
# grid horizon in units of ħ/C when τ is infinite
EXACT_LIMIT_HORIZON = 100.0


@dataclass(frozen=True)
class GridSpec:
    """Evolution grid, either absolute (t_end) or in units of τ (t_end_tau)."""
    t_start: float = 0.0
    t_end: Optional[float] = None
    t_end_tau: float = 5.0
    n_points: int = 201

    def resolve(self, reference_time: float) -> TimeGrid:
        t_end = self.t_end if self.t_end is not None else self.t_end_tau * reference_time
        return TimeGrid(self.t_start, t_end, self.n_points)


@dataclass(frozen=True)
class ProtocolConfig:
    """
    Knobs of a protocol run.

    Attributes:
        ratio_ladder: c/C values for sweeps, strictly positive and descending
        fidelity_threshold: Plateau passes when F ≥ threshold
        plateau_fraction: Plateau check runs up to plateau_fraction·τ
        plateau_points: Grid points of the plateau check
        grid: Output evolution grid
        tracked_pairs: Q pointer pairs whose coherence is traced (None tracks (0, 1) when d_Q ≥ 2)
        repeat_count: Protocol cycles, each restarting from the evolved E state
        weak_coupling_limit: c/C above which the strong B–E regime is flagged as breached
        include_sweep: Run a ratio sweep inside the protocol
        workers: Threads used for sweep rungs
    """
    ratio_ladder: Tuple[float, ...] = DEFAULT_LADDER
    fidelity_threshold: float = 0.99
    plateau_fraction: float = 0.1
    plateau_points: int = 21
    grid: GridSpec = field(default_factory=GridSpec)
    tracked_pairs: Optional[Tuple[Tuple[int, int], ...]] = None
    repeat_count: int = 1
    weak_coupling_limit: float = 0.1
    include_sweep: bool = True
    workers: int = 1

    def __post_init__(self):
        ladder = self.ratio_ladder
        if not ladder or any(not (r > 0 and math.isfinite(r)) for r in ladder):
            raise ValidationError("protocol.ratio_ladder: values must be strictly positive")
        if any(a <= b for a, b in zip(ladder, ladder[1:])):
            raise ValidationError("protocol.ratio_ladder: values must be sorted strictly descending")
        if not 0.0 < self.fidelity_threshold < 1.0:
            raise ValidationError("protocol.fidelity_threshold: must lie in (0, 1)")
        if not self.plateau_fraction > 0:
            raise ValidationError("protocol.plateau_fraction: must be positive")
        if self.plateau_points < 2:
            raise ValidationError("protocol.plateau_points: need at least 2 points")
        if self.repeat_count < 1:
            raise ValidationError("protocol.repeat_count: must be at least 1")
        if self.workers < 1:
            raise ValidationError("protocol.workers: must be at least 1")

    def pairs_for(self, d_q: int) -> Tuple[Tuple[int, int], ...]:
        return default_pairs(d_q) if self.tracked_pairs is None else self.tracked_pairs

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]] = None) -> "ProtocolConfig":
        """Build from the `protocol` section of a model config."""
        data = dict(data or {})
        kwargs: Dict[str, Any] = {}
        try:
            if "ratio_ladder" in data:
                kwargs["ratio_ladder"] = tuple(float(r) for r in data["ratio_ladder"])
            for key in ("fidelity_threshold", "plateau_fraction", "weak_coupling_limit"):
                if key in data:
                    kwargs[key] = float(data[key])
            for key in ("plateau_points", "repeat_count", "workers"):
                if key in data:
                    kwargs[key] = int(data[key])
            if "include_sweep" in data:
                kwargs["include_sweep"] = bool(data["include_sweep"])
            if "tracked_pairs" in data:
                kwargs["tracked_pairs"] = tuple((int(p), int(q)) for p, q in data["tracked_pairs"])
            if "grid" in data:
                grid = data["grid"]
                kwargs["grid"] = GridSpec(
                    t_start=float(grid.get("t_start", 0.0)),
                    t_end=float(grid["t_end"]) if grid.get("t_end") is not None else None,
                    t_end_tau=float(grid.get("t_end_tau", GridSpec.t_end_tau)),
                    n_points=int(grid.get("n_points", GridSpec.n_points)),
                )
        except (TypeError, ValueError) as e:
            raise ValidationError(f"protocol: {e}")
        return cls(**kwargs)


@dataclass(frozen=True)
class CandidateRow:
    """Per-bath-index figures of the robust-state search."""
    i: int
    diagonal_figure: float
    lambda_max: float


@dataclass(frozen=True)
class RobustSelection:
    i0: int
    table: Tuple[CandidateRow, ...]
    tie: bool


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float


@dataclass(frozen=True)
class SweepRung:
    ratio: float
    c: float
    C: float
    i0: int
    eps_max: float
    lambda_max: float
    tau: float
    n2: float

    @property
    def k_factor(self) -> float:
        """n₂ / (c/C)²."""
        return self.n2 / self.ratio ** 2


@dataclass(frozen=True)
class SweepResult:
    rungs: Tuple[SweepRung, ...]
    fit: ScalingFit

    @property
    def k_range(self) -> Tuple[float, float]:
        ks = [r.k_factor for r in self.rungs]
        return min(ks), max(ks)

    @property
    def k_stable(self) -> bool:
        """n₂ ≤ K (c/C)² with K varying by at most a factor 2 across rungs."""
        k_min, k_max = self.k_range
        return k_max <= 2.0 * k_min


@dataclass(frozen=True)
class CycleResult:
    index: int
    min_fidelity: float
    plateau_ok: bool
    e_amps: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class ProtocolReport:
    """
    Outcome of a protocol run.

    error_probability_bound is n₂ of the norm split, the (c/C)²-order
    probability of leaving the error-free part of the evolution.
    residual_z_deviation is the largest gap between the exact |z| and the
    closed-form residual dephasing on the output grid; it stays None when a
    projector family is not rank-1.
    """
    chosen_i0: int
    selection: RobustSelection
    summary: PerturbationSummary
    records: Tuple[PerturbationRecord, ...]
    plateau_ok: bool
    plateau_time: float
    plateau_min_fidelity: float
    fidelity_threshold: float
    error_probability_bound: float
    weak_coupling_breach: bool
    exact_limit: bool
    trace: DecoherenceTrace
    cycles: Tuple[CycleResult, ...]
    scaling_fit: Optional[ScalingFit] = None
    sweep: Optional[SweepResult] = None
    residual_z_deviation: Optional[float] = None
    residual_z_ok: Optional[bool] = None
    workflow_steps: Tuple[Dict[str, Any], ...] = ()


def fit_loglog(x: Sequence[float], y: Sequence[float]) -> ScalingFit:
    """
    Least-squares line through (log x, log y).

    Raises:
        ValidationError: If fewer than 2 points or a non-positive value is given
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValidationError("log-log fit needs at least 2 paired points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError("log-log fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(residual ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(slope=float(slope), intercept=float(intercept), r2=r2)


def select_robust_bath_state(model: TripartiteModel, settings: Optional[Settings] = None,
                             records: Optional[Sequence[PerturbationRecord]] = None) -> RobustSelection:
    """
    Choose the P_Bi eigenstate i0 minimizing the exact λ_max of its row.

    Args:
        model: TripartiteModel
        settings: Optional settings
        records: Perturbation records (computed when omitted)

    Returns:
        RobustSelection with the per-candidate table; ties go to the lowest
        index, and an all-equal table sets the tie flag with i0 = 0
    """
    records = records if records is not None else perturbation_records(model, settings)
    h_qb = embedded_h_qb(model)
    table = []
    for i in model.h_be.left_family.labels:
        row = [r for r in records if r.i == i]
        diagonal = max(abs(np.vdot(r.reference, h_qb @ r.reference)) for r in row)
        table.append(CandidateRow(i=int(i), diagonal_figure=float(diagonal),
                                  lambda_max=max(abs(r.lam) for r in row)))

    values = [row.lambda_max for row in table]
    tol = TIE_TOL * max(1.0, max(values))
    best = min(values)
    i0 = next(row.i for row in table if row.lambda_max <= best + tol)
    tie = len(table) > 1 and max(values) - best <= tol
    if tie:
        logger.warning(f"all {len(table)} bath rows have equal λ_max ({best:.6e}); using index {i0}")
    logger.info(f"robust bath state i0={i0} with λ_max={best:.6e}")
    return RobustSelection(i0=i0, table=tuple(table), tie=tie)


def _sweep_rung(model: TripartiteModel, ratio: float, settings: Settings) -> SweepRung:
    rung_model = with_couplings(model, c=ratio * model.C)
    records = perturbation_records(rung_model, settings)
    selection = select_robust_bath_state(rung_model, settings, records)
    summary = summarize(records, rung_model, selection.i0)
    if not summary.tau_infinite and abs(summary.tau * summary.lambda_max - rung_model.hbar) > 1e-12 * rung_model.hbar:
        raise NumericError(f"τ·λ_max differs from ħ at c/C = {ratio}")
    logger.info(f"rung c/C={ratio:g}: eps_max={summary.eps_max:.6e} tau={summary.tau:.6e} n2={summary.n2:.6e}")
    return SweepRung(ratio=ratio, c=rung_model.c, C=rung_model.C, i0=selection.i0, eps_max=summary.eps_max,
                     lambda_max=summary.lambda_max, tau=summary.tau, n2=summary.n2)


def sweep_ratio(model: TripartiteModel, config: Optional[ProtocolConfig] = None,
                settings: Optional[Settings] = None) -> SweepResult:
    """
    Rebuild the model at each c/C of the ladder (C fixed) and fit log ε_max vs log c/C.

    Args:
        model: Template model (geometry and C are kept)
        config: ProtocolConfig providing ratio_ladder and workers
        settings: Optional settings

    Returns:
        SweepResult with rungs in ladder order

    Raises:
        InsufficientSweepError: If fewer than 4 ratios in (0, 0.1] remain or
            they span less than a decade
    """
    config = config or ProtocolConfig()
    settings = settings or get_settings()
    ladder = [r for r in config.ratio_ladder if 0.0 < r <= MAX_SWEEP_RATIO]
    if len(ladder) < 4:
        raise InsufficientSweepError(f"ratio sweep needs at least 4 ratios in (0, {MAX_SWEEP_RATIO}], "
                                     f"got {len(ladder)}")
    if max(ladder) / min(ladder) < 10.0 - 1e-9:
        raise InsufficientSweepError("ratio sweep must span at least one decade")

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            rungs = list(executor.map(lambda r: _sweep_rung(model, r, settings), ladder))
    else:
        rungs = [_sweep_rung(model, r, settings) for r in ladder]

    fit = fit_loglog([r.ratio for r in rungs], [r.eps_max for r in rungs])
    logger.info(f"sweep slope={fit.slope:.4f} r2={fit.r2:.6f}")
    return SweepResult(rungs=tuple(rungs), fit=fit)


def environment_after(state_t: np.ndarray, prepared: ProductState, dims: Sequence[int]) -> Optional[np.ndarray]:
    """⟨Ψ_Q ⊗ 0_B|Ψ(t)⟩ renormalized, or None when that projection vanishes."""
    d_q, d_b, d_e = dims
    qb = np.kron(np.asarray(prepared.q_amps, dtype=complex), np.asarray(prepared.b_amps, dtype=complex))
    chi = qb.conj() @ np.asarray(state_t, dtype=complex).reshape(d_q * d_b, d_e)
    norm = float(np.linalg.norm(chi))
    return chi / norm if norm > 1e-12 else None


def residual_z_deviation(model: TripartiteModel, trace: DecoherenceTrace, records: Sequence[PerturbationRecord],
                         i0: int, state: ProductState) -> Optional[float]:
    """Max over tracked pairs and grid of | |z_exact| − |z_residual| |, None without rank-1 families."""
    families = (model.h_qb.left_family, model.h_be.left_family, model.h_be.right_family)
    if not all(family.is_rank_one() for family in families):
        return None
    _, _, beta = pointer_amplitudes(model, state)
    deviation = 0.0
    for p, pp in trace.pairs:
        predicted = residual_z_closed_form(records, i0, p, pp, beta, trace.times, model.hbar)
        deviation = max(deviation, float(np.max(np.abs(trace.z_abs[(p, pp)] - np.abs(predicted)))))
    return deviation


class RobustStateStage(BaseStage):
    def __init__(self, settings: Settings):
        super().__init__("Robust State Stage")
        self.settings = settings

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        model = input_data['model']
        eig = hermitian_eig(full_hamiltonian(model), self.settings)
        records = perturbation_records(model, self.settings, eig)
        selection = select_robust_bath_state(model, self.settings, records)
        self.log_activity(f"{len(records)} records, chose bath index {selection.i0}"
                          + (" (tie)" if selection.tie else ""))
        return {**input_data, 'eig': eig, 'records': records, 'selection': selection}


class PreparationStage(BaseStage):
    def __init__(self):
        super().__init__("Preparation Stage")

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        model = input_data['model']
        config: ProtocolConfig = input_data['config']
        i0 = input_data['selection'].i0
        state = input_data.get('state')
        prepared = uniform_robust_state(model, i0) if state is None else with_robust_bath(state, model, i0)
        breach = model.ratio > config.weak_coupling_limit
        if breach:
            self.log_activity(f"c/C = {model.ratio:g} exceeds the weak-coupling limit "
                              f"{config.weak_coupling_limit:g}; strong B–E regime not satisfied", logging.WARNING)
        return {**input_data, 'prepared_state': prepared, 'weak_coupling_breach': breach}


class SpectralStage(BaseStage):
    def __init__(self):
        super().__init__("Spectral Stage")

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        model = input_data['model']
        psi0 = product_state_vector(input_data['prepared_state'], model.dims)
        summary = summarize(input_data['records'], model, input_data['selection'].i0, psi0)
        self.log_activity(f"eps_max={summary.eps_max:.6e} lambda_max={summary.lambda_max:.6e} "
                          f"tau={summary.tau:.6e} n2={summary.n2:.6e}")
        return {**input_data, 'summary': summary}


class EvolutionStage(BaseStage):
    def __init__(self, settings: Settings):
        super().__init__("Evolution Stage")
        self.settings = settings

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        model = input_data['model']
        config: ProtocolConfig = input_data['config']
        summary: PerturbationSummary = input_data['summary']
        eig, records = input_data['eig'], input_data['records']

        reference_time = EXACT_LIMIT_HORIZON * model.hbar / model.C if summary.tau_infinite else summary.tau
        grid = config.grid.resolve(reference_time)
        plateau_time = grid.t_end if summary.tau_infinite else config.plateau_fraction * summary.tau
        plateau_grid = TimeGrid(0.0, plateau_time, config.plateau_points)

        state = input_data['prepared_state']
        pairs = config.pairs_for(model.dims[0])
        trace = decoherence_trace(model, state, grid, pairs, self.settings, records, eig)
        deviation = residual_z_deviation(model, trace, records, input_data['selection'].i0, state)
        if deviation is not None:
            level = logging.INFO if deviation <= self.settings.residual_z_tol else logging.WARNING
            self.log_activity(f"residual dephasing law off by {deviation:.3e} "
                              f"(tolerance {self.settings.residual_z_tol:g})", level)
        cycles = []
        for index in range(config.repeat_count):
            plateau = decoherence_trace(model, state, plateau_grid, pairs, self.settings, records, eig)
            min_fidelity = plateau.min_fidelity()
            ok = summary.tau_infinite or min_fidelity >= config.fidelity_threshold
            cycles.append(CycleResult(index=index, min_fidelity=min_fidelity, plateau_ok=ok,
                                      e_amps=np.asarray(state.e_amps)))
            self.log_activity(f"cycle {index}: min F on [0, {plateau_time:.6g}] = {min_fidelity:.10f}")
            final = evolve(model, product_state_vector(state, model.dims), [plateau_time], self.settings, eig)[0]
            chi = environment_after(final, state, model.dims)
            if chi is None:
                self.log_activity("environment projection vanished; keeping the previous E state", logging.WARNING)
            else:
                state = ProductState(q_amps=state.q_amps, b_amps=state.b_amps, e_amps=chi)

        return {**input_data, 'trace': trace, 'cycles': cycles, 'plateau_time': plateau_time,
                'residual_z_deviation': deviation}


class VerdictStage(BaseStage):
    def __init__(self, settings: Settings):
        super().__init__("Verdict Stage")
        self.settings = settings

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        model = input_data['model']
        config: ProtocolConfig = input_data['config']
        summary: PerturbationSummary = input_data['summary']
        cycles: List[CycleResult] = input_data['cycles']
        deviation = input_data.get('residual_z_deviation')

        sweep = None
        if config.include_sweep:
            try:
                sweep = sweep_ratio(model, config, self.settings)
            except InsufficientSweepError as e:
                self.log_activity(f"sweep skipped: {e}", logging.WARNING)

        plateau_ok = all(cycle.plateau_ok for cycle in cycles)
        if summary.tau_infinite:
            self.log_activity("λ_max vanishes: exact limit, plateau holds for all times")
        self.log_activity(f"plateau {'holds' if plateau_ok else 'FAILS'} at threshold {config.fidelity_threshold}")
        report = ProtocolReport(
            chosen_i0=input_data['selection'].i0,
            selection=input_data['selection'],
            summary=summary,
            records=tuple(input_data['records']),
            plateau_ok=plateau_ok,
            plateau_time=input_data['plateau_time'],
            plateau_min_fidelity=min(cycle.min_fidelity for cycle in cycles),
            fidelity_threshold=config.fidelity_threshold,
            error_probability_bound=summary.n2,
            weak_coupling_breach=input_data['weak_coupling_breach'],
            exact_limit=summary.tau_infinite,
            trace=input_data['trace'],
            cycles=tuple(cycles),
            scaling_fit=sweep.fit if sweep else None,
            sweep=sweep,
            residual_z_deviation=deviation,
            residual_z_ok=None if deviation is None else deviation <= self.settings.residual_z_tol,
        )
        return {**input_data, 'report': report}


PROTOCOL_WORKFLOW = (
    {'stage_id': 'robust_state'},
    {'stage_id': 'preparation'},
    {'stage_id': 'spectral'},
    {'stage_id': 'evolution'},
    {'stage_id': 'verdict'},
)


def protocol_orchestrator(settings: Settings) -> StageOrchestrator:
    orchestrator = StageOrchestrator()
    orchestrator.register_stage('robust_state', RobustStateStage(settings))
    orchestrator.register_stage('preparation', PreparationStage())
    orchestrator.register_stage('spectral', SpectralStage())
    orchestrator.register_stage('evolution', EvolutionStage(settings))
    orchestrator.register_stage('verdict', VerdictStage(settings))
    return orchestrator


def run_protocol(model: TripartiteModel, config: Optional[ProtocolConfig] = None,
                 state: Optional[ProductState] = None, settings: Optional[Settings] = None) -> ProtocolReport:
    """
    Run the suppression protocol end to end.

    Args:
        model: TripartiteModel
        config: ProtocolConfig (defaults when omitted)
        state: Initial product state; its bath amplitudes are replaced by the
            robust pointer state. Uniform Q and E amplitudes when omitted.
        settings: Optional settings

    Returns:
        ProtocolReport

    Raises:
        ProtocolError: Naming the failed stage, chained to the original error
    """
    config = config or ProtocolConfig()
    settings = settings or get_settings()
    orchestrator = protocol_orchestrator(settings)
    results = orchestrator.execute_workflow(list(PROTOCOL_WORKFLOW),
                                            {'model': model, 'config': config, 'state': state})
    if results['status'] != 'complete':
        raise ProtocolError(results['failed_stage'], results['error']) from results.get('exception')
    report: ProtocolReport = results['final_result']['report']
    steps = tuple(dict(step) for step in results["workflow_steps"])
    return replace(report, workflow_steps=steps)
