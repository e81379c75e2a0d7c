# Runtime settings read from the environment (.env supported)

import os
import logging
from dataclasses import dataclass
from dotenv import load_dotenv

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()

EIGENSOLVERS = ("jacobi", "lapack")


@dataclass(frozen=True)
class Settings:
    """
    Numerical and runtime knobs shared by every module.

    Attributes:
        max_dim: Largest allowed dimension of the full Q⊗B⊗E space
        eigensolver: "jacobi" (in-repo cyclic Jacobi) or "lapack" (numpy.linalg.eigh)
        jacobi_max_sweeps: Sweep cap of the Jacobi solver
        overlap_gap: Minimum gap between best and runner-up overlaps for a match
        degeneracy_tol: Relative tolerance for grouping unperturbed energies
        residual_z_tol: Absolute tolerance when comparing residual z against simulation
        baseline_tol: Largest allowed gap between the two-body closed form and its simulation
        jacobi_max_dim: Largest dimension handed to the Jacobi solver; bigger operators use LAPACK
        log_level: Logging level name
    """
    max_dim: int = 4096
    eigensolver: str = "jacobi"
    jacobi_max_sweeps: int = 64
    overlap_gap: float = 1e-6
    degeneracy_tol: float = 1e-9
    residual_z_tol: float = 0.05
    baseline_tol: float = 1e-10
    jacobi_max_dim: int = 256
    log_level: str = "INFO"


def _read(name: str, default, cast):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw.strip())
    except ValueError:
        raise ConfigurationError(f"environment variable {name}={raw!r} is not a valid {cast.__name__}")


def get_settings() -> Settings:
    """
    Build Settings from the current environment.

    Returns:
        Settings instance
    """
    settings = Settings(
        max_dim=_read("QBESIM_MAX_DIM", Settings.max_dim, int),
        eigensolver=_read("QBESIM_EIGENSOLVER", Settings.eigensolver, str).lower(),
        jacobi_max_sweeps=_read("QBESIM_JACOBI_MAX_SWEEPS", Settings.jacobi_max_sweeps, int),
        overlap_gap=_read("QBESIM_OVERLAP_GAP", Settings.overlap_gap, float),
        degeneracy_tol=_read("QBESIM_DEGENERACY_TOL", Settings.degeneracy_tol, float),
        residual_z_tol=_read("QBESIM_RESIDUAL_Z_TOL", Settings.residual_z_tol, float),
        baseline_tol=_read("QBESIM_BASELINE_TOL", Settings.baseline_tol, float),
        jacobi_max_dim=_read("QBESIM_JACOBI_MAX_DIM", Settings.jacobi_max_dim, int),
        log_level=_read("QBESIM_LOG_LEVEL", Settings.log_level, str).upper(),
    )
    if settings.max_dim < 1:
        raise ConfigurationError(f"QBESIM_MAX_DIM must be positive, got {settings.max_dim}")
    if settings.eigensolver not in EIGENSOLVERS:
        raise ConfigurationError(
            f"QBESIM_EIGENSOLVER must be one of {', '.join(EIGENSOLVERS)}, got {settings.eigensolver!r}")
    if settings.jacobi_max_sweeps < 1:
        raise ConfigurationError("QBESIM_JACOBI_MAX_SWEEPS must be at least 1")
    if settings.jacobi_max_dim < 1:
        raise ConfigurationError("QBESIM_JACOBI_MAX_DIM must be at least 1")
    if not settings.baseline_tol > 0:
        raise ConfigurationError(f"QBESIM_BASELINE_TOL must be positive, got {settings.baseline_tol}")
    return settings
