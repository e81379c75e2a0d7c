"""
Stationary-perturbation analysis of H_BE + H_QB, done exactly.

Every exact eigenvector is written as sqrt(1-ε²)|pij⟩ + ε|χ_pij⟩ with
⟨pij|χ_pij⟩ = 0, and every exact energy as C κ_ij + λ_pij. The unperturbed
spectrum C κ_ij never depends on p, so degenerate clusters are the rule; the
degenerate path matches against the basis that diagonalizes H_QB inside each
cluster.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegeneracyError, NumericError, SingularBoundError, ValidationError
from .model import (ProductState, TripartiteModel, embedded_h_qb, full_hamiltonian, product_state_vector,
                    with_robust_bath)
from .operators import EigenDecomposition, hermitian_eig
from .settings import Settings, get_settings

logger = logging.getLogger(__name__)

# exact eigenvalues closer than this (relative) share a gauge-free eigenspace
EXACT_DEGENERACY_TOL = 1e-11
INFINITE_TAU_LAMBDA = 1e-15
BOUND_SLACK = 1e-9

Triple = Tuple[int, int, int]


@dataclass(frozen=True)
class UnperturbedLevel:
    """Product ket |p⟩_Q ⊗ |i⟩_B ⊗ |j⟩_E with H_BE eigenvalue e0 = C κ_ij."""
    p: int
    i: int
    j: int
    e0: float
    ket: np.ndarray = field(repr=False, compare=False)

    @property
    def triple(self) -> Triple:
        return (self.p, self.i, self.j)


@dataclass(frozen=True)
class PerturbationRecord:
    """
    Exact eigenpair written against its unperturbed ket.

    Attributes:
        p, i, j: Labels in the Q, B and E pointer families
        e0: Unperturbed energy C κ_ij
        e_exact: Exact energy E_pij
        lam: λ_pij = E_pij - e0
        epsilon: ε_pij, weight of the correction component
        overlap: |⟨pij|Ψ_pij⟩| = sqrt(1 - ε²)
        residual_vector_norm: Norm of ε|χ_pij⟩
        flagged: True when the assignment was ambiguous
        candidates: Competing triples of a flagged assignment
        reference: The unperturbed (or cluster-adapted) ket
        correction: |χ_pij⟩ (zero vector when ε = 0)
    """
    p: int
    i: int
    j: int
    e0: float
    e_exact: float
    lam: float
    epsilon: float
    overlap: float
    residual_vector_norm: float
    flagged: bool = False
    candidates: Tuple[Triple, ...] = ()
    reference: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    correction: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def triple(self) -> Triple:
        return (self.p, self.i, self.j)

    def eigenvector(self) -> np.ndarray:
        """sqrt(1-ε²)|pij⟩ + ε|χ_pij⟩."""
        if self.reference is None or self.correction is None:
            raise ValidationError(f"record {self.triple} carries no stored vectors")
        return self.overlap * self.reference + self.epsilon * self.correction


@dataclass(frozen=True)
class PerturbationSummary:
    """
    Aggregates over all records.

    Attributes:
        eps_max: max ε over all records
        eps_max_slice: max ε over the i = i0 records
        lambda_max: max |λ_{p i0 j}|
        tau: ħ / lambda_max (math.inf when lambda_max vanishes)
        tau_infinite: True when lambda_max ≤ 1e-15
        n1, n2: Norm split of the initial state
        ratio: c / C
        i0: Robust bath index
        hbar: ħ
    """
    eps_max: float
    eps_max_slice: float
    lambda_max: float
    tau: float
    tau_infinite: bool
    n1: float
    n2: float
    ratio: float
    i0: int
    hbar: float


def unperturbed_spectrum(model: TripartiteModel) -> List[UnperturbedLevel]:
    """
    Eigenkets |pij⟩ of H_BE and their energies C κ_ij, in (p, i, j) order.

    Q kets come from the P_Qp family, B kets from P_Bi and E kets from Π_Ej;
    subspace projectors are expanded into an orthonormal basis per subspace.
    """
    q_kets = model.h_qb.left_family.kets()
    b_kets = model.h_be.left_family.kets()
    e_kets = model.h_be.right_family.kets()
    kappa = model.kappa
    levels = []
    for p, q_ket in q_kets:
        for i, b_ket in b_kets:
            for j, e_ket in e_kets:
                levels.append(UnperturbedLevel(p=p, i=i, j=j, e0=model.C * float(kappa[i, j]),
                                               ket=np.kron(np.kron(q_ket, b_ket), e_ket)))
    return levels


def energy_clusters(levels: Sequence[UnperturbedLevel], tol: float = 1e-9) -> List[List[int]]:
    """Indices of levels grouped by equal unperturbed energy (ascending)."""
    energies = np.array([level.e0 for level in levels])
    scaled = tol * max(1.0, float(np.max(np.abs(energies)))) if energies.size else tol
    order = np.argsort(energies, kind="stable")
    clusters: List[List[int]] = []
    for k in order:
        if clusters and abs(energies[k] - energies[clusters[-1][-1]]) <= scaled:
            clusters[-1].append(int(k))
        else:
            clusters.append([int(k)])
    return [sorted(cluster) for cluster in clusters]


def align_degenerate_eigenvectors(values: np.ndarray, vectors: np.ndarray, reference: np.ndarray,
                                  tol: float) -> np.ndarray:
    """
    Fix the unitary gauge inside exactly degenerate eigenspaces.

    For each run of eigenvalues within `tol`, the eigenvectors are rotated by
    the unitary that best aligns them with the reference kets they overlap
    most (orthogonal Procrustes), so the result does not depend on how the
    eigensolver happened to mix them.

    Args:
        values: Ascending eigenvalues
        vectors: Eigenvectors as columns
        reference: Orthonormal reference kets as columns
        tol: Degeneracy tolerance (absolute)

    Returns:
        New array of eigenvectors
    """
    aligned = np.array(vectors, dtype=complex)
    n = len(values)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and values[stop] - values[stop - 1] <= tol:
            stop += 1
        if stop - start > 1:
            cols = list(range(start, stop))
            block = aligned[:, cols]
            amps = reference.conj().T @ block
            weights = np.sum(np.abs(amps) ** 2, axis=1)
            rows = np.sort(np.argsort(-weights, kind="stable")[:len(cols)])
            u, _, yh = np.linalg.svd(amps[rows])
            aligned[:, cols] = block @ (yh.conj().T @ u.conj().T)
        start = stop
    return aligned


def _make_record(triple: Triple, e0: float, reference: np.ndarray, vector: np.ndarray, hamiltonian: np.ndarray,
                 flagged: bool = False, candidates: Tuple[Triple, ...] = ()) -> PerturbationRecord:
    amplitude = np.vdot(reference, vector)
    if abs(amplitude) > 0.0:
        vector = vector * (np.conj(amplitude) / abs(amplitude))
    overlap = min(abs(amplitude), 1.0)
    residual = vector - overlap * reference
    epsilon = min(float(np.linalg.norm(residual)), 1.0)
    correction = residual / epsilon if epsilon > 1e-15 else np.zeros_like(reference)
    e_exact = float(np.vdot(vector, hamiltonian @ vector).real)
    return PerturbationRecord(
        p=triple[0], i=triple[1], j=triple[2], e0=e0, e_exact=e_exact, lam=e_exact - e0,
        epsilon=epsilon, overlap=overlap, residual_vector_norm=epsilon,
        flagged=flagged, candidates=candidates, reference=reference, correction=correction,
    )


def _sort(records: List[PerturbationRecord]) -> List[PerturbationRecord]:
    return sorted(records, key=lambda r: (r.p, r.i, r.j, r.e0))


def match_spectrum(model: TripartiteModel, settings: Optional[Settings] = None,
                   eig: Optional[EigenDecomposition] = None) -> List[PerturbationRecord]:
    """
    Assign every exact eigenpair to an unperturbed ket by maximum overlap.

    Args:
        model: TripartiteModel
        settings: Optional settings (overlap gap, solver)
        eig: Optional precomputed eigendecomposition of the full Hamiltonian

    Returns:
        One record per exact eigenvector, sorted by (p, i, j)

    Raises:
        DegeneracyError: If an eigenvector's best and runner-up overlaps are
            closer than the overlap gap, or two eigenvectors claim one ket
    """
    settings = settings or get_settings()
    hamiltonian = full_hamiltonian(model)
    eig = eig or hermitian_eig(hamiltonian, settings)
    levels = unperturbed_spectrum(model)
    basis = np.column_stack([level.ket for level in levels])
    scale = max(1.0, float(np.max(np.abs(eig.eigenvalues))))
    vectors = align_degenerate_eigenvectors(eig.eigenvalues, eig.eigenvectors, basis, EXACT_DEGENERACY_TOL * scale)

    amps = np.abs(basis.conj().T @ vectors)
    n = len(levels)
    assigned = []
    for col in range(n):
        order = np.argsort(-amps[:, col], kind="stable")
        best = amps[order[0], col]
        runner_up = amps[order[1], col] if n > 1 else 0.0
        if best - runner_up < settings.overlap_gap:
            raise DegeneracyError(
                f"exact eigenvector {col} (E={eig.eigenvalues[col]:.12g}) overlaps {levels[order[0]].triple} and "
                f"{levels[order[1]].triple} within {settings.overlap_gap:g}; use degenerate_match")
        assigned.append(int(order[0]))
    if len(set(assigned)) != n:
        raise DegeneracyError("two exact eigenvectors claim the same unperturbed ket; use degenerate_match")

    records = [_make_record(levels[row].triple, levels[row].e0, basis[:, row], vectors[:, col], hamiltonian)
               for col, row in enumerate(assigned)]
    return _sort(records)


@dataclass(frozen=True)
class _SpectralContext:
    levels: List[UnperturbedLevel]
    clusters: List[List[int]]
    hamiltonian: np.ndarray
    h_qb: np.ndarray
    eig: EigenDecomposition
    adapted: np.ndarray
    label_candidates: List[Tuple[Triple, ...]]
    vectors: np.ndarray
    assignment: np.ndarray
    needs_adapted: bool


def _spectral_context(model: TripartiteModel, settings: Settings,
                      eig: Optional[EigenDecomposition] = None) -> _SpectralContext:
    levels = unperturbed_spectrum(model)
    clusters = energy_clusters(levels, settings.degeneracy_tol)
    h_qb = embedded_h_qb(model)
    hamiltonian = full_hamiltonian(model)
    eig = eig or hermitian_eig(hamiltonian, settings)
    basis = np.column_stack([level.ket for level in levels])
    n = len(levels)

    adapted = np.zeros_like(basis)
    label_candidates: List[Tuple[Triple, ...]] = [()] * n
    offdiag_tol = 1e-12 * max(1.0, float(np.max(np.abs(h_qb))))
    needs_adapted = False
    for cluster in clusters:
        block = basis[:, cluster]
        restricted = block.conj().T @ h_qb @ block
        restricted = 0.5 * (restricted + restricted.conj().T)
        m = len(cluster)
        if m > 1 and np.max(np.abs(restricted - np.diag(np.diag(restricted)))) > offdiag_tol:
            needs_adapted = True
        sub = hermitian_eig(restricted, settings)
        sub_scale = max(1.0, float(np.max(np.abs(sub.eigenvalues))))
        mixing = align_degenerate_eigenvectors(sub.eigenvalues, sub.eigenvectors, np.eye(m),
                                               EXACT_DEGENERACY_TOL * sub_scale)
        weights = np.abs(mixing)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        for r, col in zip(rows, cols):
            adapted[:, cluster[r]] = block @ mixing[:, col]
            rivals = [levels[cluster[k]].triple for k in range(m)
                      if k != r and weights[k, col] >= weights[r, col] - settings.overlap_gap]
            label_candidates[cluster[r]] = tuple(rivals)

    scale = max(1.0, float(np.max(np.abs(eig.eigenvalues))))
    vectors = align_degenerate_eigenvectors(eig.eigenvalues, eig.eigenvectors, adapted, EXACT_DEGENERACY_TOL * scale)
    rows, cols = linear_sum_assignment(np.abs(adapted.conj().T @ vectors) ** 2, maximize=True)
    assignment = np.empty(n, dtype=int)
    assignment[rows] = cols
    return _SpectralContext(levels=levels, clusters=clusters, hamiltonian=hamiltonian, h_qb=h_qb, eig=eig,
                            adapted=adapted, label_candidates=label_candidates, vectors=vectors,
                            assignment=assignment, needs_adapted=needs_adapted)


def degenerate_match(model: TripartiteModel, energy_cluster: Sequence[int], settings: Optional[Settings] = None,
                     eig: Optional[EigenDecomposition] = None,
                     context: Optional[_SpectralContext] = None) -> List[PerturbationRecord]:
    """
    Records for one cluster of degenerate unperturbed levels.

    Inside the cluster H_QB is diagonalized (zeroth-order adapted basis) and
    exact eigenvectors are matched to the adapted kets. Ambiguous matches are
    flagged with their competing triples instead of being resolved silently.

    Args:
        model: TripartiteModel
        energy_cluster: Indices into unperturbed_spectrum(model) with equal e0
        settings: Optional settings
        eig: Optional precomputed eigendecomposition
        context: Internal reuse of a computed context

    Returns:
        Records for the cluster, sorted by (p, i, j)
    """
    settings = settings or get_settings()
    ctx = context or _spectral_context(model, settings, eig)
    cluster = sorted(int(k) for k in energy_cluster)
    if not cluster:
        raise ValidationError("energy cluster is empty")
    energies = [ctx.levels[k].e0 for k in cluster]
    if max(energies) - min(energies) > settings.degeneracy_tol * max(1.0, max(abs(e) for e in energies)):
        raise ValidationError(f"levels {cluster} do not share one unperturbed energy")

    block = ctx.adapted[:, cluster]
    records = []
    for r, k in enumerate(cluster):
        col = ctx.assignment[k]
        vector = ctx.vectors[:, col]
        amps = np.abs(block.conj().T @ vector)
        rivals = [ctx.levels[cluster[s]].triple for s in range(len(cluster))
                  if s != r and amps[s] >= amps[r] - settings.overlap_gap]
        candidates = tuple(dict.fromkeys(list(ctx.label_candidates[k]) + rivals))
        level = ctx.levels[k]
        if candidates:
            logger.warning(f"ambiguous assignment for {level.triple} (E0={level.e0:.6g}); "
                           f"competing triples {list(candidates)}")
        records.append(_make_record(level.triple, level.e0, ctx.adapted[:, k], vector, ctx.hamiltonian,
                                    flagged=bool(candidates), candidates=candidates))
    return _sort(records)


def perturbation_records(model: TripartiteModel, settings: Optional[Settings] = None,
                         eig: Optional[EigenDecomposition] = None) -> List[PerturbationRecord]:
    """
    Full record set for a model.

    Uses plain overlap matching when H_QB is already diagonal inside every
    degenerate cluster, and the adapted-basis path otherwise (or when plain
    matching reports a degeneracy).
    """
    settings = settings or get_settings()
    ctx = _spectral_context(model, settings, eig)
    if not ctx.needs_adapted:
        try:
            return match_spectrum(model, settings, ctx.eig)
        except DegeneracyError as e:
            logger.warning(f"plain matching failed ({e}); switching to the degenerate-subspace path")
    records = []
    for cluster in ctx.clusters:
        records.extend(degenerate_match(model, cluster, settings, context=ctx))
    return _sort(records)


def lambda_bound(record: PerturbationRecord, model: TripartiteModel, h_qb: Optional[np.ndarray] = None) -> float:
    """
    (1-ε²)^(-1/2) |⟨pij|H_QB|pij⟩| + ε (1-ε²)^(-1) |⟨pij|H_QB|χ_pij⟩|.

    Raises:
        SingularBoundError: If ε ≥ 1 - 1e-12
    """
    if record.reference is None or record.correction is None:
        raise ValidationError(f"record {record.triple} carries no stored correction vector")
    eps = record.epsilon
    if eps >= 1.0 - 1e-12:
        raise SingularBoundError(f"λ bound diverges for record {record.triple} (ε = {eps!r})")
    h_qb = embedded_h_qb(model) if h_qb is None else h_qb
    diagonal = abs(np.vdot(record.reference, h_qb @ record.reference))
    off_diagonal = abs(np.vdot(record.reference, h_qb @ record.correction))
    weight = 1.0 - eps * eps
    return diagonal / math.sqrt(weight) + eps * off_diagonal / weight


def norm_split(model: TripartiteModel, initial: np.ndarray,
               records: Optional[Sequence[PerturbationRecord]] = None,
               settings: Optional[Settings] = None) -> Tuple[float, float]:
    """
    n1 = Σ (1-ε²)² |⟨pij|Ψ⟩|² and n2 = 1 - n1 for an initial state vector.

    Returns:
        (n1, n2)
    """
    records = records if records is not None else perturbation_records(model, settings)
    psi = np.asarray(initial, dtype=complex)
    n1 = 0.0
    for record in records:
        weight = abs(np.vdot(record.reference, psi)) ** 2
        n1 += (1.0 - record.epsilon ** 2) ** 2 * weight
    return n1, 1.0 - n1


def uniform_robust_state(model: TripartiteModel, i0: int) -> ProductState:
    d_q, d_b, d_e = model.dims
    q = np.ones(d_q, dtype=complex) / math.sqrt(d_q)
    e = np.ones(d_e, dtype=complex) / math.sqrt(d_e)
    placeholder = ProductState(q_amps=q, b_amps=np.eye(d_b, dtype=complex)[0], e_amps=e)
    return with_robust_bath(placeholder, model, i0)


def check_bounds(records: Sequence[PerturbationRecord], model: TripartiteModel, i0: int) -> None:
    """Assert |λ| ≤ bound + 1e-9 on the i = i0 records."""
    h_qb = embedded_h_qb(model)
    for record in records:
        if record.i != i0:
            continue
        bound = lambda_bound(record, model, h_qb)
        if abs(record.lam) > bound + BOUND_SLACK:
            raise NumericError(f"λ bound violated for {record.triple}: |λ| = {abs(record.lam):.6e} > {bound:.6e}")


def summarize(records: Sequence[PerturbationRecord], model: TripartiteModel, i0: int,
              initial: Optional[np.ndarray] = None) -> PerturbationSummary:
    """
    Aggregate records into ε_max, λ_max, τ and the norm split.

    Args:
        records: Records covering all triples
        model: TripartiteModel
        i0: Robust bath index (λ_max is taken over the i = i0 records)
        initial: Initial state vector for the norm split; defaults to uniform
            Q and E amplitudes with the bath in its i0 pointer state

    Returns:
        PerturbationSummary

    Raises:
        NumericError: If the norm-split identities or the λ bound fail
    """
    if not records:
        raise ValidationError("no records to summarize")
    row = [r for r in records if r.i == i0]
    if not row:
        raise ValidationError(f"no records with bath index {i0}")
    eps_max = max(r.epsilon for r in records)
    eps_max_slice = max(r.epsilon for r in row)
    lambda_max = max(abs(r.lam) for r in row)
    tau_infinite = lambda_max <= INFINITE_TAU_LAMBDA
    tau = math.inf if tau_infinite else model.hbar / lambda_max

    if initial is None:
        initial = product_state_vector(uniform_robust_state(model, i0), model.dims)
    n1, n2 = norm_split(model, initial, records)
    if abs(n1 + n2 - 1.0) > 1e-9:
        raise NumericError(f"norm split does not add up: n1 + n2 = {n1 + n2!r}")
    if n1 < (1.0 - eps_max ** 2) ** 2 - 1e-9:
        raise NumericError(f"n1 = {n1!r} below (1 - eps_max²)² = {(1.0 - eps_max ** 2) ** 2!r}")
    check_bounds(records, model, i0)

    return PerturbationSummary(eps_max=eps_max, eps_max_slice=eps_max_slice, lambda_max=lambda_max, tau=tau,
                               tau_infinite=tau_infinite, n1=n1, n2=n2, ratio=model.ratio, i0=i0,
                               hbar=model.hbar)
