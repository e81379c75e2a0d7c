"""
Declarative construction and validation of the tripartite Q+B+E model.

H_QB = c Σ γ_pq P_Qp ⊗ Π_Bq acts on Q⊗B and H_BE = C Σ κ_ij P_Bi ⊗ Π_Ej on
B⊗E. The Q pointer family P_Qp and the E family Π_Ej are the standard bases;
the bath carries two families, P_Bi (standard, used by H_BE) and Π_Bq (the
standard basis rotated by Givens angles, used by H_QB).
"""

import json
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError, ShapeError, ValidationError
from .operators import (HERMITIAN_TOL, NORM_TOL, check_dim, embed, hermitian_eig, is_hermitian,
                        tensor_product)

logger = logging.getLogger(__name__)

TOP_KEYS = {"dims", "hbar", "h_qb", "h_be", "initial", "protocol", "baseline"}
REQUIRED_TOP_KEYS = ("dims", "h_qb", "h_be", "initial")
H_QB_KEYS = {"c", "gamma", "bath_family", "theta"}
H_BE_KEYS = {"C", "kappa"}
INITIAL_KEYS = {"q_amps", "b_amps", "e_amps"}
PROTOCOL_KEYS = {"ratio_ladder", "fidelity_threshold", "plateau_fraction", "plateau_points",
                 "tracked_pairs", "repeat_count", "weak_coupling_limit", "include_sweep", "workers", "grid"}
GRID_KEYS = {"t_start", "t_end", "t_end_tau", "n_points"}
BASELINE_KEYS = {"weights"}
BATH_FAMILIES = ("rotated",)

CANONICAL_GAMMA = ((1.0, -1.0), (-1.0, 1.0))
CANONICAL_KAPPA = ((1.0, 0.0), (0.0, -1.0))


@dataclass(frozen=True)
class ProjectorFamily:
    """
    Complete family of mutually orthogonal projectors on one factor.

    Attributes:
        space_dim: Dimension of the factor
        projectors: Projector matrices
        labels: Index label of each projector
    """
    space_dim: int
    projectors: Tuple[np.ndarray, ...]
    labels: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.projectors)

    @classmethod
    def from_basis(cls, basis: np.ndarray) -> "ProjectorFamily":
        """Rank-1 projectors onto the columns of an orthonormal basis matrix."""
        basis = np.asarray(basis, dtype=complex)
        projectors = tuple(np.outer(basis[:, k], basis[:, k].conj()) for k in range(basis.shape[1]))
        return cls(space_dim=basis.shape[0], projectors=projectors, labels=tuple(range(basis.shape[1])))

    def validate(self, name: str = "projector family") -> None:
        """
        Check idempotence, Hermiticity, mutual orthogonality and completeness.

        Raises:
            ValidationError: naming the violated invariant
        """
        if not self.projectors:
            raise ValidationError(f"{name}: family is empty")
        if len(self.labels) != len(self.projectors):
            raise ValidationError(f"{name}: labels and projectors differ in length")
        eye = np.eye(self.space_dim)
        total = np.zeros((self.space_dim, self.space_dim), dtype=complex)
        for a, proj in enumerate(self.projectors):
            if proj.shape != (self.space_dim, self.space_dim):
                raise ValidationError(f"{name}: projector {a} has shape {proj.shape}, expected "
                                      f"{(self.space_dim, self.space_dim)}")
            if not is_hermitian(proj, HERMITIAN_TOL):
                raise ValidationError(f"{name}: projector {a} is not Hermitian")
            if np.max(np.abs(proj @ proj - proj)) > HERMITIAN_TOL:
                raise ValidationError(f"{name}: projector {a} is not idempotent")
            for b in range(a):
                if np.max(np.abs(proj @ self.projectors[b])) > HERMITIAN_TOL:
                    raise ValidationError(f"{name}: projectors {b} and {a} are not orthogonal")
            total += proj
        if np.max(np.abs(total - eye)) > HERMITIAN_TOL:
            raise ValidationError(f"{name}: projectors are not complete (sum differs from identity)")

    def kets(self) -> List[Tuple[int, np.ndarray]]:
        """
        Orthonormal kets spanning each projector's range.

        Rank-1 projectors give one ket per label; subspace projectors give one
        ket per basis vector of the subspace, all carrying the same label.
        """
        kets = []
        for label, proj in zip(self.labels, self.projectors):
            eig = hermitian_eig(proj)
            for k in np.flatnonzero(eig.eigenvalues > 0.5):
                kets.append((label, np.array(eig.eigenvectors[:, k])))
        return kets

    def is_rank_one(self) -> bool:
        return all(abs(np.trace(p).real - 1.0) < 1e-9 for p in self.projectors)


@dataclass(frozen=True)
class SeparableInteraction:
    """
    coupling · Σ coeffs[a, b] · P_a ⊗ Π_b.

    Attributes:
        coupling: Coupling constant (c for H_QB, C for H_BE)
        coeffs: Real coefficient matrix (γ or κ)
        left_family: Projectors P_a on the left factor
        right_family: Projectors Π_b on the right factor
    """
    coupling: float
    coeffs: np.ndarray
    left_family: ProjectorFamily
    right_family: ProjectorFamily

    @property
    def dim(self) -> int:
        return self.left_family.space_dim * self.right_family.space_dim

    def validate(self, name: str = "interaction") -> None:
        if not math.isfinite(self.coupling):
            raise ValidationError(f"{name}: coupling must be finite")
        coeffs = np.asarray(self.coeffs)
        expected = (len(self.left_family), len(self.right_family))
        if coeffs.shape != expected:
            raise ValidationError(f"{name}: coeffs shape {coeffs.shape} does not match projector families {expected}")
        if np.iscomplexobj(coeffs) or not np.all(np.isfinite(coeffs)):
            raise ValidationError(f"{name}: coeffs must be finite real numbers")
        self.left_family.validate(f"{name} left family")
        self.right_family.validate(f"{name} right family")


def assemble(interaction: SeparableInteraction) -> np.ndarray:
    """
    Assemble the separable operator on left ⊗ right.

    Args:
        interaction: SeparableInteraction

    Returns:
        Hermitian operator of dimension dim(left)·dim(right)

    Raises:
        ValidationError: If a family or the coefficient shape is invalid
    """
    interaction.validate()
    dim = interaction.dim
    check_dim(dim)
    op = np.zeros((dim, dim), dtype=complex)
    coeffs = np.asarray(interaction.coeffs, dtype=float)
    for a, left in enumerate(interaction.left_family.projectors):
        for b, right in enumerate(interaction.right_family.projectors):
            if coeffs[a, b] != 0.0:
                op += coeffs[a, b] * tensor_product(left, right)
    op *= interaction.coupling
    if not is_hermitian(op):
        raise ValidationError("assembled interaction is not Hermitian")
    return op


def standard_family(dim: int) -> ProjectorFamily:
    return ProjectorFamily.from_basis(np.eye(dim))


def _angles(d_b: int, theta) -> Tuple[float, ...]:
    n = max(d_b - 1, 0)
    if np.isscalar(theta):
        angles = (float(theta),) * n
    else:
        angles = tuple(float(t) for t in theta)
        if len(angles) != n:
            raise ValidationError(f"theta: expected {n} Givens angles for d_B={d_b}, got {len(angles)}")
    if not all(math.isfinite(a) for a in angles):
        raise ValidationError("theta: rotation angles must be finite")
    return angles


def rotation_matrix(d_b: int, theta) -> np.ndarray:
    """Product of adjacent Givens rotations G(0,1,θ0)·G(1,2,θ1)···; columns form the rotated basis."""
    rotation = np.eye(d_b)
    for k, angle in enumerate(_angles(d_b, theta)):
        givens = np.eye(d_b)
        givens[k, k] = givens[k + 1, k + 1] = math.cos(angle)
        givens[k + 1, k] = math.sin(angle)
        givens[k, k + 1] = -math.sin(angle)
        rotation = rotation @ givens
    return rotation


def rotated_bath_families(d_b: int, theta) -> Tuple[ProjectorFamily, ProjectorFamily]:
    """
    The two bath families.

    Args:
        d_b: Bath dimension
        theta: Angle (d_B = 2) or Givens angles (broadcast when scalar)

    Returns:
        (Π_Bq family for H_QB onto the rotated basis, P_Bi family for H_BE onto the standard basis)
    """
    if d_b < 1:
        raise ValidationError(f"bath dimension must be positive, got {d_b}")
    return ProjectorFamily.from_basis(rotation_matrix(d_b, theta)), standard_family(d_b)


@dataclass(frozen=True)
class TripartiteModel:
    """
    Q+B+E with the two separable interactions.

    Attributes:
        dims: (d_Q, d_B, d_E)
        h_qb: Interaction on Q⊗B (coupling c, coeffs γ)
        h_be: Interaction on B⊗E (coupling C, coeffs κ)
        hbar: Reduced Planck constant in model units
        bath_angles: Givens angles relating Π_Bq to P_Bi
    """
    dims: Tuple[int, int, int]
    h_qb: SeparableInteraction
    h_be: SeparableInteraction
    hbar: float = 1.0
    bath_angles: Tuple[float, ...] = ()

    @property
    def c(self) -> float:
        return self.h_qb.coupling

    @property
    def C(self) -> float:
        return self.h_be.coupling

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def ratio(self) -> float:
        return self.c / self.C

    @property
    def gamma(self) -> np.ndarray:
        return np.asarray(self.h_qb.coeffs, dtype=float)

    @property
    def kappa(self) -> np.ndarray:
        return np.asarray(self.h_be.coeffs, dtype=float)


def validate_model(model: TripartiteModel) -> TripartiteModel:
    """Eagerly check every model invariant; returns the model for chaining."""
    d_q, d_b, d_e = model.dims
    if min(model.dims) < 1:
        raise ValidationError(f"dims must be positive integers, got {model.dims}")
    check_dim(model.dim)
    model.h_qb.validate("h_qb")
    model.h_be.validate("h_be")
    if (model.h_qb.left_family.space_dim, model.h_qb.right_family.space_dim) != (d_q, d_b):
        raise ValidationError(f"h_qb must act on d_Q·d_B = {d_q}·{d_b}")
    if (model.h_be.left_family.space_dim, model.h_be.right_family.space_dim) != (d_b, d_e):
        raise ValidationError(f"h_be must act on d_B·d_E = {d_b}·{d_e}")
    if not model.C > 0:
        raise ValidationError(f"h_be coupling C must be positive, got {model.C}")
    if not math.isfinite(model.ratio):
        raise ValidationError("ratio c/C must be finite")
    if not (math.isfinite(model.hbar) and model.hbar > 0):
        raise ValidationError(f"hbar must be a positive real, got {model.hbar}")
    return model


def build_model(dims: Sequence[int], c: float, gamma, theta, C: float, kappa,
                hbar: float = 1.0, validate: bool = True) -> TripartiteModel:
    """
    Build a model with standard Q/E families and rotated bath families.

    Args:
        dims: (d_Q, d_B, d_E)
        c: Q–B coupling constant
        gamma: γ_pq, shape (d_Q, d_B)
        theta: Bath rotation angle(s)
        C: B–E coupling constant
        kappa: κ_ij, shape (d_B, d_E)
        hbar: ħ in model units
        validate: Run validate_model (disable only for degenerate limits such as C = 0)

    Returns:
        TripartiteModel
    """
    d_q, d_b, d_e = (int(d) for d in dims)
    pi_bath, p_bath = rotated_bath_families(d_b, theta)
    model = TripartiteModel(
        dims=(d_q, d_b, d_e),
        h_qb=SeparableInteraction(float(c), np.array(gamma, dtype=float), standard_family(d_q), pi_bath),
        h_be=SeparableInteraction(float(C), np.array(kappa, dtype=float), p_bath, standard_family(d_e)),
        hbar=float(hbar),
        bath_angles=_angles(d_b, theta),
    )
    return validate_model(model) if validate else model


def with_couplings(model: TripartiteModel, c: Optional[float] = None, C: Optional[float] = None) -> TripartiteModel:
    """Same geometry, new coupling constants."""
    return build_model(model.dims, model.c if c is None else c, model.gamma, model.bath_angles,
                       model.C if C is None else C, model.kappa, model.hbar)


def canonical_model(c: float = 0.01, C: float = 1.0, theta: float = math.pi / 4, hbar: float = 1.0,
                    gamma=CANONICAL_GAMMA) -> TripartiteModel:
    """Smallest model exhibiting all phenomena: dims (2,2,2), γ=[[1,-1],[-1,1]], κ=[[1,0],[0,-1]]."""
    return build_model((2, 2, 2), c, gamma, theta, C, CANONICAL_KAPPA, hbar)


def embedded_h_qb(model: TripartiteModel) -> np.ndarray:
    return embed(assemble(model.h_qb), ("Q", "B"), model.dims)


def embedded_h_be(model: TripartiteModel) -> np.ndarray:
    return embed(assemble(model.h_be), ("B", "E"), model.dims)


def full_hamiltonian(model: TripartiteModel) -> np.ndarray:
    """H_QB ⊗ I_E + I_Q ⊗ H_BE on Q⊗B⊗E."""
    return embedded_h_qb(model) + embedded_h_be(model)


@dataclass(frozen=True)
class ProductState:
    """
    Amplitudes of |Ψ⟩_Q ⊗ |0⟩_B ⊗ |χ⟩_E in the computational bases.

    Attributes:
        q_amps: Qubit amplitudes
        b_amps: Bath amplitudes
        e_amps: Environment amplitudes
    """
    q_amps: np.ndarray
    b_amps: np.ndarray
    e_amps: np.ndarray

    def validate(self) -> "ProductState":
        for name in ("q_amps", "b_amps", "e_amps"):
            amps = np.asarray(getattr(self, name), dtype=complex)
            if amps.ndim != 1 or amps.size == 0:
                raise ValidationError(f"initial.{name}: expected a non-empty amplitude list")
            norm = float(np.linalg.norm(amps))
            if abs(norm - 1.0) > NORM_TOL:
                raise ValidationError(f"initial.{name} normalized: norm is {norm!r}")
        return self

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (len(self.q_amps), len(self.b_amps), len(self.e_amps))


def product_state_vector(state: ProductState, dims: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Kronecker product q ⊗ b ⊗ e.

    Raises:
        ShapeError: If the amplitude lengths do not match dims
    """
    if dims is not None and tuple(int(d) for d in dims) != state.dims:
        raise ShapeError(f"amplitude lengths {state.dims} do not match model dims {tuple(dims)}")
    state.validate()
    vec = np.kron(np.kron(np.asarray(state.q_amps, dtype=complex), np.asarray(state.b_amps, dtype=complex)),
                  np.asarray(state.e_amps, dtype=complex))
    return vec / np.linalg.norm(vec)


def canonical_state() -> ProductState:
    """(|0⟩+|1⟩)/√2 ⊗ |0⟩ ⊗ (|0⟩+|1⟩)/√2."""
    plus = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    return ProductState(q_amps=plus, b_amps=np.array([1.0, 0.0], dtype=complex), e_amps=plus.copy())


def bath_pointer_kets(model: TripartiteModel) -> List[Tuple[int, np.ndarray]]:
    """Eigenkets of the P_Bi family (the robust-state candidates)."""
    return model.h_be.left_family.kets()


def with_robust_bath(state: ProductState, model: TripartiteModel, i0: int) -> ProductState:
    """Replace the bath amplitudes with the P_Bi eigenket of label i0 (α_i = δ_{i i0})."""
    for label, ket in bath_pointer_kets(model):
        if label == i0:
            return ProductState(q_amps=state.q_amps, b_amps=ket, e_amps=state.e_amps)
    raise ValidationError(f"bath index {i0} is not a label of the P_Bi family")


def pointer_amplitudes(model: TripartiteModel, state: ProductState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C_p = ⟨p|Ψ⟩, α_i = ⟨i|0⟩, β_j = ⟨j|χ⟩ in the pointer bases (rank-1 families)."""
    families = (model.h_qb.left_family, model.h_be.left_family, model.h_be.right_family)
    amps = (state.q_amps, state.b_amps, state.e_amps)
    out = []
    for family, vec in zip(families, amps):
        kets = family.kets()
        if len(kets) != len(family):
            raise ValidationError("pointer amplitudes need rank-1 projector families")
        out.append(np.array([np.vdot(ket, vec) for _, ket in kets]))
    return out[0], out[1], out[2]


# ---------------------------------------------------------------- config I/O

@dataclass(frozen=True)
class LoadedConfig:
    """Everything a config document yields."""
    model: TripartiteModel
    state: ProductState
    protocol: Dict[str, Any] = field(default_factory=dict)
    baseline: Dict[str, Any] = field(default_factory=dict)


def _check_keys(section: Any, allowed: set, path: str, required: Sequence[str] = ()) -> Dict[str, Any]:
    if not isinstance(section, dict):
        raise ValidationError(f"{path or 'document'}: expected an object")
    prefix = f"{path}." if path else ""
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValidationError(f"unknown key {prefix}{unknown[0]}")
    for key in required:
        if key not in section:
            raise ValidationError(f"missing key {prefix}{key}")
    return section


def _real(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(f"{path}: expected a finite real number, got {value!r}")
    return float(value)


def _matrix(value: Any, path: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        raise ValidationError(f"{path}: expected a 2-D real array")
    width = len(value[0])
    if width == 0 or any(len(row) != width for row in value):
        raise ValidationError(f"{path}: rows must be non-empty and of equal length")
    return np.array([[_real(x, f"{path}[{r}][{k}]") for k, x in enumerate(row)] for r, row in enumerate(value)])


def _amplitudes(value: Any, path: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ValidationError(f"{path}: expected a list of [re, im] pairs")
    amps = []
    for k, pair in enumerate(value):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ValidationError(f"{path}[{k}]: expected an [re, im] pair")
        amps.append(complex(_real(pair[0], f"{path}[{k}][0]"), _real(pair[1], f"{path}[{k}][1]")))
    return np.array(amps, dtype=complex)


def parse_document(config_text: str) -> Dict[str, Any]:
    try:
        document = json.loads(config_text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(document, dict):
        raise ParseError("line 1, column 1: config must be a JSON object")
    return document


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply `key.path=value` overrides; values are JSON literals, otherwise strings.

    Args:
        document: Parsed config (modified in place)
        overrides: Override strings

    Returns:
        The document
    """
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must have the form key.path=value")
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ValidationError(f"override {item!r} has an empty key path")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = document
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ValidationError(f"override {item!r}: {key} is not an object")
            node = child
        node[keys[-1]] = value
        logger.debug(f"override {path} = {value!r}")
    return document


def model_from_document(document: Dict[str, Any]) -> LoadedConfig:
    """Validate a parsed document and build model + initial state."""
    _check_keys(document, TOP_KEYS, "", REQUIRED_TOP_KEYS)

    dims = document["dims"]
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in dims)):
        raise ValidationError(f"dims: expected 3 positive integers, got {dims!r}")
    hbar = _real(document.get("hbar", 1.0), "hbar")

    h_qb = _check_keys(document["h_qb"], H_QB_KEYS, "h_qb", ("c", "gamma"))
    bath_family = h_qb.get("bath_family", "rotated")
    if bath_family not in BATH_FAMILIES:
        raise ValidationError(f"h_qb.bath_family: unsupported value {bath_family!r}")
    theta = h_qb.get("theta", 0.0)
    if isinstance(theta, list):
        theta = [_real(t, f"h_qb.theta[{k}]") for k, t in enumerate(theta)]
    else:
        theta = _real(theta, "h_qb.theta")
    h_be = _check_keys(document["h_be"], H_BE_KEYS, "h_be", ("C", "kappa"))
    initial = _check_keys(document["initial"], INITIAL_KEYS, "initial", tuple(sorted(INITIAL_KEYS)))

    protocol = _check_keys(document.get("protocol", {}), PROTOCOL_KEYS, "protocol")
    if "grid" in protocol:
        _check_keys(protocol["grid"], GRID_KEYS, "protocol.grid")
    baseline = _check_keys(document.get("baseline", {}), BASELINE_KEYS, "baseline")

    model = build_model(
        dims,
        _real(h_qb["c"], "h_qb.c"),
        _matrix(h_qb["gamma"], "h_qb.gamma"),
        theta,
        _real(h_be["C"], "h_be.C"),
        _matrix(h_be["kappa"], "h_be.kappa"),
        hbar,
    )
    state = ProductState(
        q_amps=_amplitudes(initial["q_amps"], "initial.q_amps"),
        b_amps=_amplitudes(initial["b_amps"], "initial.b_amps"),
        e_amps=_amplitudes(initial["e_amps"], "initial.e_amps"),
    ).validate()
    if state.dims != model.dims:
        raise ShapeError(f"initial amplitude lengths {state.dims} do not match dims {model.dims}")
    return LoadedConfig(model=model, state=state, protocol=dict(protocol), baseline=dict(baseline))


def load_config(config_text: str, overrides: Sequence[str] = ()) -> LoadedConfig:
    document = apply_overrides(parse_document(config_text), overrides)
    loaded = model_from_document(document)
    logger.info(f"Loaded model dims={loaded.model.dims} c={loaded.model.c} C={loaded.model.C} "
                f"theta={list(loaded.model.bath_angles)}")
    return loaded


def load_model(config_text: str, overrides: Sequence[str] = ()) -> Tuple[TripartiteModel, ProductState]:
    """
    Parse and validate a model config.

    Args:
        config_text: JSON config text
        overrides: Optional `key.path=value` overrides applied before validation

    Returns:
        (TripartiteModel, ProductState)

    Raises:
        ParseError: With line/column of the syntax error
        ValidationError: Naming the violated invariant or the offending field path
    """
    loaded = load_config(config_text, overrides)
    return loaded.model, loaded.state


def load_model_file(path, overrides: Sequence[str] = ()) -> LoadedConfig:
    with open(path, "r", encoding="utf-8") as f:
        return load_config(f.read(), overrides)


def _pairs(amps: np.ndarray) -> List[List[float]]:
    return [[float(a.real), float(a.imag)] for a in np.asarray(amps, dtype=complex)]


def serialize_model(model: TripartiteModel, state: ProductState,
                    extras: Optional[Dict[str, Any]] = None) -> str:
    """JSON text that load_model turns back into the same model and state."""
    angles = list(model.bath_angles)
    document: Dict[str, Any] = {
        "dims": list(model.dims),
        "hbar": model.hbar,
        "h_qb": {
            "c": model.c,
            "gamma": model.gamma.tolist(),
            "bath_family": "rotated",
            "theta": angles[0] if len(angles) == 1 else angles,
        },
        "h_be": {"C": model.C, "kappa": model.kappa.tolist()},
        "initial": {
            "q_amps": _pairs(state.q_amps),
            "b_amps": _pairs(state.b_amps),
            "e_amps": _pairs(state.e_amps),
        },
    }
    for key, value in (extras or {}).items():
        if value:
            document[key] = value
    return json.dumps(document, indent=2)
