"""
Exact time evolution and the decoherence observables built on it.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NumericError, ShapeError, UndefinedAmplitudeError, ValidationError
from .model import (ProductState, ProjectorFamily, SeparableInteraction, TripartiteModel, assemble,
                    full_hamiltonian, pointer_amplitudes, product_state_vector, standard_family)
from .operators import (EigenDecomposition, hermitian_eig, normalized, partial_trace, propagator, reduced_density,
                        tensor_product)
from .settings import Settings, get_settings
from .spectral import PerturbationRecord, perturbation_records, unperturbed_spectrum

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]

AMPLITUDE_FLOOR = 1e-12
NORM_CHECK_TOL = 1e-10
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of n_points times from t_start to t_end inclusive."""
    t_start: float
    t_end: float
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ValidationError("time grid bounds must be finite")
        if self.t_start < 0 or not self.t_end > self.t_start:
            raise ValidationError(f"time grid needs t_end > t_start >= 0, got [{self.t_start}, {self.t_end}]")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValidationError(f"time grid needs at least 2 points, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.t_end - self.t_start) / (self.n_points - 1)

    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, int(self.n_points))


Times = Union[TimeGrid, Sequence[float], np.ndarray]


def _times(grid: Times) -> np.ndarray:
    return grid.times() if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)


@dataclass(frozen=True)
class DecoherenceTrace:
    """
    Observables of one evolution run, one entry per grid time.

    Attributes:
        times: Grid times
        z_abs: |z_pp'(t)| per tracked pair
        rho_q_offdiag: ρ_Qpp'(t) in the Q pointer basis per tracked pair
        qb_fidelity: ⟨Ψ₀|ρ_QB(t)|Ψ₀⟩
        qb_state_distance: ‖Ψ(t) − product form with C κ_ij phases only‖
        leading_order_distance: ‖Ψ(t) − Σ ⟨pij|Ψ₀⟩ e^{−iE_pij t/ħ}|pij⟩‖
        z: Complex z_pp'(t) per tracked pair
    """
    times: np.ndarray
    z_abs: Dict[Pair, np.ndarray]
    rho_q_offdiag: Dict[Pair, np.ndarray]
    qb_fidelity: np.ndarray
    qb_state_distance: np.ndarray
    leading_order_distance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: Dict[Pair, np.ndarray] = field(default_factory=dict)

    @property
    def pairs(self) -> Tuple[Pair, ...]:
        return tuple(self.z_abs)

    def min_fidelity(self, t_max: Optional[float] = None) -> float:
        mask = np.ones(len(self.times), dtype=bool) if t_max is None else self.times <= t_max + 1e-12
        return float(np.min(self.qb_fidelity[mask]))


@dataclass(frozen=True)
class TwoBodyBaseline:
    """
    Q+B model without the environment: z_pp' = Σ_q p_q exp(−ict(γ_pq − γ_p'q)/ħ).

    Attributes:
        gamma: γ_pq, shape (d_Q, d_B)
        c: Coupling constant
        bath_weights: Mixture weights p_q over the Π_Bq eigenstates
        hbar: ħ
    """
    gamma: np.ndarray
    c: float
    bath_weights: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        weights = np.asarray(self.bath_weights, dtype=float)
        if gamma.ndim != 2 or gamma.shape[1] != weights.size:
            raise ValidationError(f"baseline: gamma shape {gamma.shape} does not match {weights.size} bath weights")
        if np.any(weights < 0):
            raise ValidationError("baseline: bath weights p_q must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValidationError(f"baseline: bath weights must sum to 1, got {weights.sum()!r}")
        if not self.hbar > 0:
            raise ValidationError("baseline: hbar must be positive")

    @classmethod
    def from_model(cls, model: TripartiteModel, weights: Optional[Sequence[float]] = None) -> "TwoBodyBaseline":
        d_b = model.dims[1]
        weights = np.full(d_b, 1.0 / d_b) if weights is None else np.asarray(weights, dtype=float)
        return cls(gamma=model.gamma, c=model.c, bath_weights=weights, hbar=model.hbar)


def evolve(model: TripartiteModel, state0: np.ndarray, grid: Times, settings: Optional[Settings] = None,
           eig: Optional[EigenDecomposition] = None) -> np.ndarray:
    """
    Exact evolution from one eigendecomposition reused across the grid.

    Args:
        model: TripartiteModel
        state0: Initial state vector on Q⊗B⊗E
        grid: TimeGrid or explicit times
        settings: Optional settings
        eig: Optional eigendecomposition of the full Hamiltonian

    Returns:
        Array of evolved states, one row per time

    Raises:
        ShapeError: If state0 does not match the model dimension
        NumericError: If a state loses its norm
    """
    psi = np.asarray(state0, dtype=complex)
    if psi.ndim != 1 or psi.size != model.dim:
        raise ShapeError(f"initial state of size {psi.size} does not match model dimension {model.dim}")
    eig = eig or hermitian_eig(full_hamiltonian(model), settings or get_settings())
    states = eig.evolve(psi, _times(grid), model.hbar)
    norms = np.linalg.norm(states, axis=1)
    drift = np.max(np.abs(norms - np.linalg.norm(psi))) if norms.size else 0.0
    if drift > NORM_CHECK_TOL:
        raise NumericError(f"evolution lost normalization (max drift {drift:.3e})")
    return states


def reduced_q(state: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return reduced_density(state, ("Q",), dims)


def reduced_qb(state: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return reduced_density(state, ("Q", "B"), dims)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def correlation_amplitude(rho_q_offdiag: Dict[Pair, np.ndarray], p: int, pp: int,
                          c_amps: Sequence[complex]) -> np.ndarray:
    """
    z_pp'(t) = ρ_Qpp'(t) / (C_p C*_p').

    Raises:
        UndefinedAmplitudeError: If |C_p| or |C_p'| is below 1e-12
    """
    c_p, c_pp = complex(c_amps[p]), complex(c_amps[pp])
    if abs(c_p) <= AMPLITUDE_FLOOR or abs(c_pp) <= AMPLITUDE_FLOOR:
        raise UndefinedAmplitudeError(f"z_{p}{pp} is undefined: C_{p} C*_{pp} vanishes")
    return np.asarray(rho_q_offdiag[(p, pp)], dtype=complex) / (c_p * np.conj(c_pp))


def baseline_z_closed_form(baseline: TwoBodyBaseline, p: int, pp: int, grid: Times) -> np.ndarray:
    """Σ_q p_q exp(−ict(γ_pq − γ_p'q)/ħ) on the grid."""
    t = _times(grid)
    gamma = np.asarray(baseline.gamma, dtype=float)
    diff = gamma[p] - gamma[pp]
    phases = np.exp(-1j * baseline.c * np.outer(t, diff) / baseline.hbar)
    return phases @ np.asarray(baseline.bath_weights, dtype=float)


def baseline_z_simulated(baseline: TwoBodyBaseline, p: int, pp: int, grid: Times,
                         bath_family: Optional[ProjectorFamily] = None,
                         settings: Optional[Settings] = None) -> np.ndarray:
    """
    z_pp'(t) from simulating Q+B under the assembled two-body Hamiltonian.

    The initial state is |Ψ⟩⟨Ψ|_Q ⊗ Σ_q p_q Π_Bq with Q in the uniform
    superposition; it is propagated as a density operator and B is traced out.

    Args:
        baseline: TwoBodyBaseline
        p, pp: Q pointer labels
        grid: TimeGrid or explicit times
        bath_family: Rank-1 Π_Bq family (standard basis by default)
        settings: Optional settings
    """
    settings = settings or get_settings()
    gamma = np.asarray(baseline.gamma, dtype=float)
    d_q, d_b = gamma.shape
    bath_family = bath_family or standard_family(d_b)
    if not bath_family.is_rank_one():
        raise ValidationError("baseline simulation needs a rank-1 bath projector family")
    hamiltonian = assemble(SeparableInteraction(float(baseline.c), gamma, standard_family(d_q), bath_family))
    eig = hermitian_eig(hamiltonian, settings)

    q_amps = np.full(d_q, 1.0 / math.sqrt(d_q), dtype=complex)
    bath_mixture = sum(weight * projector for projector, weight in zip(bath_family.projectors, baseline.bath_weights))
    rho0 = tensor_product(np.outer(q_amps, q_amps.conj()), bath_mixture)

    t = _times(grid)
    rho = np.empty(len(t), dtype=complex)
    for k, time in enumerate(t):
        u = propagator(hamiltonian, float(time), baseline.hbar, eig=eig)
        rho[k] = partial_trace(u @ rho0 @ u.conj().T, ("Q",), (d_q, d_b))[p, pp]
    return rho / (q_amps[p] * np.conj(q_amps[pp]))


def residual_z_closed_form(records: Iterable[PerturbationRecord], i0: int, p: int, pp: int,
                           beta: Sequence[complex], grid: Times, hbar: float = 1.0) -> np.ndarray:
    """
    Σ_j |β_j|² exp(−it(λ_{p i0 j} − λ_{p' i0 j})/ħ): post-τ dephasing of Q by E.

    Args:
        records: Perturbation records covering the i = i0 row
        i0: Robust bath index
        p, pp: Q pointer labels
        beta: Environment amplitudes β_j
        grid: TimeGrid or explicit times
        hbar: ħ
    """
    lam = {(r.p, r.j): r.lam for r in records if r.i == i0}
    weights = np.abs(np.asarray(beta, dtype=complex)) ** 2
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValidationError(f"environment weights must sum to 1, got {weights.sum()!r}")
    try:
        diff = np.array([lam[(p, j)] - lam[(pp, j)] for j in range(len(weights))])
    except KeyError as e:
        raise ValidationError(f"no record for (p, j) = {e.args[0]} in bath row {i0}")
    t = _times(grid)
    return np.exp(-1j * np.outer(t, diff) / hbar) @ weights


def qb_fidelity(state_t: np.ndarray, initial_qb: np.ndarray, dims: Sequence[int]) -> float:
    """
    ⟨Ψ₀|ρ_QB(t)|Ψ₀⟩ for a pure Q+B reference.

    Args:
        state_t: State on Q⊗B⊗E
        initial_qb: Q⊗B reference as a state vector or a pure density operator
        dims: (d_Q, d_B, d_E)
    """
    rho = reduced_qb(state_t, dims)
    reference = np.asarray(initial_qb, dtype=complex)
    if reference.ndim == 1:
        return float(np.real(np.vdot(reference, rho @ reference)))
    if abs(purity(reference) - 1.0) > 1e-9:
        raise ValidationError("qb_fidelity needs a pure reference state")
    return float(np.real(np.trace(reference @ rho)))


def robustness_residual(h_int: np.ndarray, x_state, y_state) -> float:
    """
    ‖(I − |x⟩⟨x| ⊗ I) H (|x⟩ ⊗ |y⟩)‖ / max(‖H (|x⟩ ⊗ |y⟩)‖, 1e-15).

    Zero exactly when |x⟩ is left unchanged by the interaction.
    """
    x = normalized(x_state, "x_state")
    y = normalized(y_state, "y_state")
    h = np.asarray(h_int, dtype=complex)
    if h.shape != (x.size * y.size, x.size * y.size):
        raise ShapeError(f"interaction of shape {h.shape} does not act on {x.size}x{y.size}")
    image = (h @ np.kron(x, y)).reshape(x.size, y.size)
    kept = np.outer(x, x.conj() @ image)
    return float(np.linalg.norm(image - kept) / max(np.linalg.norm(image), 1e-15))


def default_pairs(d_q: int) -> Tuple[Pair, ...]:
    """(0, 1) when Q has two pointer states, nothing to track for a one-level Q."""
    return ((0, 1),) if d_q >= 2 else ()


def decoherence_trace(model: TripartiteModel, state: ProductState, grid: Times,
                      tracked_pairs: Optional[Sequence[Pair]] = None, settings: Optional[Settings] = None,
                      records: Optional[Sequence[PerturbationRecord]] = None,
                      eig: Optional[EigenDecomposition] = None) -> DecoherenceTrace:
    """
    Evolve a product state and collect every decoherence observable.

    Args:
        model: TripartiteModel
        state: Initial product state
        grid: TimeGrid or explicit times
        tracked_pairs: Q pointer pairs (p, p') whose coherence is recorded (default_pairs when omitted)
        settings: Optional settings
        records: Perturbation records (computed when omitted)
        eig: Eigendecomposition of the full Hamiltonian (computed when omitted)

    Returns:
        DecoherenceTrace

    Raises:
        UndefinedAmplitudeError: If a tracked pair has vanishing C_p C*_p'
        NumericError: If |z| or the fidelity leaves its allowed range
    """
    settings = settings or get_settings()
    d_q, d_b, d_e = model.dims
    psi0 = product_state_vector(state, model.dims)
    eig = eig or hermitian_eig(full_hamiltonian(model), settings)
    records = records if records is not None else perturbation_records(model, settings, eig)
    t = _times(grid)
    states = evolve(model, psi0, t, settings, eig)
    c_amps, _, _ = pointer_amplitudes(model, state)
    tracked_pairs = default_pairs(d_q) if tracked_pairs is None else tuple(tracked_pairs)

    blocks = states.reshape(len(t), d_q, d_b * d_e)
    rho_q = np.einsum("tab,tcb->tac", blocks, blocks.conj())
    q_basis = np.column_stack([ket for _, ket in model.h_qb.left_family.kets()])
    rho_pointer = np.einsum("ap,tab,bq->tpq", q_basis.conj(), rho_q, q_basis)

    rho_offdiag: Dict[Pair, np.ndarray] = {}
    z: Dict[Pair, np.ndarray] = {}
    z_abs: Dict[Pair, np.ndarray] = {}
    for p, pp in tracked_pairs:
        if not (0 <= p < d_q and 0 <= pp < d_q) or p == pp:
            raise ValidationError(f"tracked pair ({p}, {pp}) must name two distinct Q pointer labels")
        rho_offdiag[(p, pp)] = rho_pointer[:, p, pp]
        z[(p, pp)] = correlation_amplitude(rho_offdiag, p, pp, c_amps)
        z_abs[(p, pp)] = np.abs(z[(p, pp)])
        if np.max(z_abs[(p, pp)]) > 1.0 + BOUND_SLACK:
            raise NumericError(f"|z_{p}{pp}| exceeds 1 ({np.max(z_abs[(p, pp)])!r})")

    qb_reference = np.kron(np.asarray(state.q_amps, dtype=complex), np.asarray(state.b_amps, dtype=complex))
    qb_blocks = states.reshape(len(t), d_q * d_b, d_e)
    fidelity = np.sum(np.abs(np.einsum("a,tae->te", qb_reference.conj(), qb_blocks)) ** 2, axis=1)
    if np.max(fidelity) > 1.0 + BOUND_SLACK or np.min(fidelity) < -BOUND_SLACK:
        raise NumericError("Q+B fidelity left [0, 1]")
    if len(t) and t[0] == 0.0 and abs(fidelity[0] - 1.0) > 1e-10:
        raise NumericError(f"Q+B fidelity at t=0 is {fidelity[0]!r}")

    levels = unperturbed_spectrum(model)
    kets = np.column_stack([level.ket for level in levels])
    energies = np.array([level.e0 for level in levels])
    product_form = _spectral_evolution(kets, energies, psi0, t, model.hbar)

    refs = np.column_stack([r.reference for r in records])
    exact_energies = np.array([r.e_exact for r in records])
    leading_form = _spectral_evolution(refs, exact_energies, psi0, t, model.hbar)

    return DecoherenceTrace(
        times=t,
        z_abs=z_abs,
        rho_q_offdiag=rho_offdiag,
        qb_fidelity=fidelity,
        qb_state_distance=np.linalg.norm(states - product_form, axis=1),
        leading_order_distance=np.linalg.norm(states - leading_form, axis=1),
        z=z,
    )


def _spectral_evolution(kets: np.ndarray, energies: np.ndarray, psi0: np.ndarray, t: np.ndarray,
                        hbar: float) -> np.ndarray:
    coefficients = kets.conj().T @ psi0
    phases = np.exp(-1j * np.outer(t, energies) / hbar)
    return (phases * coefficients) @ kets.T


def mean_infidelity(trace: DecoherenceTrace, t_max: Optional[float] = None) -> float:
    """Time-averaged 1 − F over the grid (optionally up to t_max)."""
    mask = np.ones(len(trace.times), dtype=bool) if t_max is None else trace.times <= t_max + 1e-12
    return float(np.mean(1.0 - trace.qb_fidelity[mask]))
