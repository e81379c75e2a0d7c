"""
Dense complex linear algebra for small Hilbert spaces.

Operators are 2-D complex numpy arrays and state vectors 1-D complex numpy
arrays. Factor order of the composite space is always Q, B, E, and a product
index is row-major: index = (q * d_B + b) * d_E + e.
"""

import math
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import CapacityError, ContractError, NumericError, ShapeError
from .settings import Settings, get_settings

logger = logging.getLogger(__name__)

FACTORS = ("Q", "B", "E")
HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-12

Slot = Union[str, int]


def as_operator(a, name: str = "operator") -> np.ndarray:
    """Return `a` as a square complex matrix, raising ShapeError otherwise."""
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise ShapeError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    return arr


def check_dim(dim: int, max_dim: Optional[int] = None) -> None:
    """Fail fast when a space dimension exceeds the configured cap."""
    cap = get_settings().max_dim if max_dim is None else max_dim
    if dim > cap:
        raise CapacityError(f"dimension {dim} exceeds the configured maximum {cap} (QBESIM_MAX_DIM)")


def hermiticity_error(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return hermiticity_error(a) <= tol * scale


def normalized(amplitudes, name: str = "state", tol: float = NORM_TOL) -> np.ndarray:
    """
    Validate a state vector.

    Args:
        amplitudes: Complex amplitudes
        name: Label used in error messages
        tol: Allowed deviation of the 2-norm from 1

    Returns:
        The amplitudes as a complex 1-D array
    """
    vec = np.asarray(amplitudes, dtype=complex)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeError(f"{name} must be a non-empty vector, got shape {vec.shape}")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise ContractError(f"{name} is not normalized: norm {norm!r}")
    return vec


def tensor_product(a, b, max_dim: Optional[int] = None) -> np.ndarray:
    """Kronecker product a ⊗ b with entry [(i1*db+i2),(j1*db+j2)] = a[i1,j1]*b[i2,j2]."""
    a = as_operator(a, "left factor")
    b = as_operator(b, "right factor")
    check_dim(a.shape[0] * b.shape[0], max_dim)
    return np.kron(a, b)


def _slot_indices(slots: Sequence[Slot], n_factors: int) -> list:
    indices = []
    for slot in slots:
        if isinstance(slot, str):
            if slot not in FACTORS[:n_factors]:
                raise ShapeError(f"unknown factor {slot!r}; expected one of {FACTORS[:n_factors]}")
            indices.append(FACTORS.index(slot))
        else:
            if not 0 <= int(slot) < n_factors:
                raise ShapeError(f"factor index {slot} out of range for {n_factors} factors")
            indices.append(int(slot))
    if not indices or len(set(indices)) != len(indices):
        raise ShapeError(f"factor mask must be non-empty and without repeats, got {list(slots)}")
    return sorted(indices)


def embed(op, slots: Sequence[Slot], dims: Sequence[int], max_dim: Optional[int] = None) -> np.ndarray:
    """
    Lift an operator on some factors to the full product space.

    Args:
        op: Operator acting on the masked factors, in fixed factor order
        slots: Factor names ("Q", "B", "E") or indices the operator acts on
        dims: Dimensions of all factors
        max_dim: Optional dimension cap override

    Returns:
        op on the masked factors, identity on the others
    """
    op = as_operator(op)
    dims = [int(d) for d in dims]
    masked = _slot_indices(slots, len(dims))
    rest = [k for k in range(len(dims)) if k not in masked]
    d_masked = int(np.prod([dims[k] for k in masked]))
    if op.shape[0] != d_masked:
        raise ShapeError(f"operator dimension {op.shape[0]} does not match masked factors of size {d_masked}")
    total = int(np.prod(dims))
    check_dim(total, max_dim)
    if not rest:
        return op.copy()

    d_rest = total // d_masked
    full = np.kron(op, np.eye(d_rest, dtype=complex))
    # axes currently ordered as masked + rest; permute back to Q, B, E order
    order = masked + rest
    shape = [dims[k] for k in order]
    tensor = full.reshape(shape + shape)
    perm = [order.index(k) for k in range(len(dims))]
    n = len(dims)
    tensor = tensor.transpose(perm + [n + k for k in perm])
    return tensor.reshape(total, total)


def partial_trace(rho, keep: Sequence[Slot], dims: Sequence[int]) -> np.ndarray:
    """
    Reduced density operator on the kept factors.

    Args:
        rho: Density operator on the full space
        keep: Factors to keep
        dims: Dimensions of all factors

    Returns:
        Reduced density operator, factors in fixed order
    """
    rho = as_operator(rho, "density operator")
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    if rho.shape[0] != total:
        raise ShapeError(f"density operator of dimension {rho.shape[0]} does not match dims {dims}")
    kept = _slot_indices(keep, len(dims))
    trace = complex(np.trace(rho))
    if abs(trace - 1.0) > 1e-10 or not is_hermitian(rho, 1e-10):
        raise ContractError(f"partial_trace needs a Hermitian unit-trace operator (trace {trace})")

    n = len(dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    for k in range(n):
        if k not in kept:
            cols[k] = rows[k]
    out = "".join(rows[k] for k in kept) + "".join(cols[k] for k in kept)
    reduced = np.einsum("".join(rows) + "".join(cols) + "->" + out, rho.reshape(dims + dims))
    d_keep = int(np.prod([dims[k] for k in kept]))
    return reduced.reshape(d_keep, d_keep)


def reduced_density(state, keep: Sequence[Slot], dims: Sequence[int]) -> np.ndarray:
    """Reduced density operator of a pure state without forming |ψ⟩⟨ψ|."""
    psi = np.asarray(state, dtype=complex)
    dims = [int(d) for d in dims]
    if psi.ndim != 1 or psi.size != int(np.prod(dims)):
        raise ShapeError(f"state of size {psi.size} does not match dims {dims}")
    kept = _slot_indices(keep, len(dims))
    rest = [k for k in range(len(dims)) if k not in kept]
    d_keep = int(np.prod([dims[k] for k in kept]))
    matrix = psi.reshape(dims).transpose(kept + rest).reshape(d_keep, -1)
    return matrix @ matrix.conj().T


@dataclass(frozen=True)
class EigenDecomposition:
    """
    Spectral decomposition H = V diag(E) V†.

    Attributes:
        eigenvalues: Ascending real eigenvalues
        eigenvectors: Orthonormal columns aligned with eigenvalues
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def propagator(self, t: float, hbar: float = 1.0) -> np.ndarray:
        v = self.eigenvectors
        phases = np.exp(-1j * self.eigenvalues * t / hbar)
        return (v * phases) @ v.conj().T

    def evolve(self, state: np.ndarray, times: np.ndarray, hbar: float = 1.0) -> np.ndarray:
        """States U(t_k)|ψ⟩ as rows, from this single decomposition."""
        v = self.eigenvectors
        coefficients = v.conj().T @ np.asarray(state, dtype=complex)
        phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), self.eigenvalues) / hbar)
        return (phases * coefficients) @ v.T


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(h: np.ndarray, max_sweeps: int = 64):
    """
    Cyclic Jacobi eigensolver for complex Hermitian matrices.

    Each (p, q) rotation is the phase rotation diag(1, e^{-iφ}) that makes the
    pivot real, followed by the real Jacobi rotation that annihilates it.
    Sweep order is fixed, so results are reproducible run to run.

    Args:
        h: Hermitian matrix
        max_sweeps: Sweep cap

    Returns:
        (eigenvalues, eigenvectors) unsorted
    """
    a = np.array(h, dtype=complex)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = float(np.linalg.norm(a))
    if n == 1 or scale == 0.0:
        return a.diagonal().real.copy(), v

    eps = np.finfo(float).eps
    target = 4.0 * eps * n * scale
    skip = 1e-2 * eps * scale

    for sweep in range(max_sweeps):
        if _off_norm(a) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= skip:
                    continue
                phase = np.conj(apq / mag)
                angle = 0.5 * math.atan2(2.0 * mag, a[q, q].real - a[p, p].real)
                c, s = math.cos(angle), math.sin(angle)
                rot = np.array([[c, s], [-s * phase, c * phase]], dtype=complex)
                idx = [p, q]
                a[:, idx] = a[:, idx] @ rot
                a[idx, :] = rot.conj().T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                v[:, idx] = v[:, idx] @ rot
    else:
        if _off_norm(a) > target:
            raise NumericError(f"Jacobi eigensolver did not converge within {max_sweeps} sweeps "
                               f"(QBESIM_JACOBI_MAX_SWEEPS)")
    logger.debug(f"Jacobi converged on dimension {n} after {sweep + 1} sweeps")
    return a.diagonal().real.copy(), v


def hermitian_eig(h, settings: Optional[Settings] = None) -> EigenDecomposition:
    """
    Eigendecomposition of a Hermitian operator.

    Eigenvalues come back ascending; each eigenvector's largest-magnitude
    component is made real and positive.

    Args:
        h: Hermitian operator
        settings: Optional settings (solver choice, sweep cap, Jacobi size limit)

    Returns:
        EigenDecomposition

    Raises:
        ContractError: If h is not Hermitian within 1e-12
        NumericError: If the solver does not converge or fails reconstruction
    """
    settings = settings or get_settings()
    h = as_operator(h, "Hamiltonian")
    if not is_hermitian(h):
        raise ContractError(f"operator is not Hermitian (max |A - A†| = {hermiticity_error(h):.3e})")

    solver = settings.eigensolver
    if solver == "jacobi" and h.shape[0] > settings.jacobi_max_dim:
        logger.info(f"dimension {h.shape[0]} is above QBESIM_JACOBI_MAX_DIM={settings.jacobi_max_dim}; using LAPACK")
        solver = "lapack"
    if solver == "lapack":
        values, vectors = np.linalg.eigh(h)
    else:
        values, vectors = jacobi_eigh(h, settings.jacobi_max_sweeps)

    order = np.argsort(values, kind="stable")
    values = np.asarray(values, dtype=float)[order]
    vectors = np.asarray(vectors, dtype=complex)[:, order]
    for col in range(vectors.shape[1]):
        k = int(np.argmax(np.abs(vectors[:, col])))
        pivot = vectors[k, col]
        vectors[:, col] *= np.conj(pivot) / abs(pivot)

    scale = max(float(np.max(np.abs(h))), np.finfo(float).tiny)
    residual = float(np.max(np.abs((vectors * values) @ vectors.conj().T - h)))
    if residual > 1e-10 * scale:
        raise NumericError(f"eigendecomposition reconstruction residual {residual:.3e} exceeds tolerance")

    values.setflags(write=False)
    vectors.setflags(write=False)
    return EigenDecomposition(eigenvalues=values, eigenvectors=vectors)


def propagator(h, t: float, hbar: float = 1.0, eig: Optional[EigenDecomposition] = None,
               settings: Optional[Settings] = None) -> np.ndarray:
    """U(t) = exp(-i t H / ħ) = V diag(exp(-i E_k t / ħ)) V†."""
    if hbar <= 0:
        raise ContractError(f"hbar must be positive, got {hbar}")
    eig = eig or hermitian_eig(h, settings)
    return eig.propagator(t, hbar)
