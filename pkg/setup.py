#!/usr/bin/env python3
"""
qbesim - Setup Script
=====================

Run without arguments to check the interpreter, install what requirements.txt
lists and write a .env holding the qbesim settings. With setuptools commands
(as used by `pip install .`) it acts as the package build script.
"""

import os
import sys
import subprocess
import importlib
from pathlib import Path

ROOT = Path(__file__).resolve().parent

# distribution name -> import name, where they differ
IMPORT_NAMES = {"python-dotenv": "dotenv", "fpdf2": "fpdf"}
TEST_PACKAGES = {"pytest", "hypothesis"}

ENV_TEMPLATE = """# qbesim settings (all optional)
# Largest allowed dimension d_Q*d_B*d_E
QBESIM_MAX_DIM={max_dim}

# Eigensolver: jacobi (in-repo cyclic Jacobi) or lapack (numpy.linalg.eigh)
QBESIM_EIGENSOLVER={eigensolver}
QBESIM_JACOBI_MAX_SWEEPS={jacobi_max_sweeps}
# Larger operators are diagonalized with LAPACK
QBESIM_JACOBI_MAX_DIM={jacobi_max_dim}

# Matching and comparison tolerances
QBESIM_OVERLAP_GAP={overlap_gap}
QBESIM_DEGENERACY_TOL={degeneracy_tol}
QBESIM_RESIDUAL_Z_TOL={residual_z_tol}
QBESIM_BASELINE_TOL={baseline_tol}

QBESIM_LOG_LEVEL={log_level}
"""

REQUIRED_FILES = ("run.py", "test.py", "qbesim/__init__.py", "configs/canonical.json")


def requirements():
    """Pinned requirement lines from requirements.txt"""
    lines = (ROOT / "requirements.txt").read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


def distribution_name(requirement):
    for marker in ("<", ">", "=", "~", "!"):
        requirement = requirement.split(marker)[0]
    return requirement.strip()


def check_python_version():
    version = ".".join(str(v) for v in sys.version_info[:3])
    if sys.version_info < (3, 8):
        print(f"❌ qbesim needs Python 3.8 or newer (found {version})")
        return False
    print(f"✅ Python {version}")
    return True


def ensure_dependencies():
    """Install every requirement whose module cannot be imported"""
    missing = []
    for requirement in requirements():
        name = distribution_name(requirement)
        try:
            importlib.import_module(IMPORT_NAMES.get(name, name))
            print(f"✅ {name}")
        except ImportError:
            print(f"❌ {name} not importable")
            missing.append(requirement)
    if not missing:
        return True

    print(f"\n🔧 pip install {' '.join(missing)}")
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", *missing])
    except subprocess.CalledProcessError as e:
        print(f"❌ pip exited with status {e.returncode}")
        return False
    return True


def write_env_file():
    """Write .env from the current setting defaults unless one exists"""
    env_path = ROOT / ".env"
    if env_path.exists():
        print("✅ keeping existing .env")
        return True
    from dataclasses import asdict
    from qbesim.settings import Settings

    try:
        env_path.write_text(ENV_TEMPLATE.format(**asdict(Settings())), encoding="utf-8")
    except OSError as e:
        print(f"❌ could not write .env: {e}")
        return False
    print("✅ wrote .env")
    return True


def check_required_files():
    missing = [name for name in REQUIRED_FILES if not (ROOT / name).exists()]
    for name in REQUIRED_FILES:
        print(f"{'❌' if name in missing else '✅'} {name}")
    return not missing


STEPS = (
    ("🐍 Python version", check_python_version),
    ("📦 Dependencies", ensure_dependencies),
    ("⚙️ Environment file", write_env_file),
    ("📁 Project files", check_required_files),
)


def print_instructions():
    print("\n" + "=" * 60)
    print("🎉 qbesim is ready")
    print("=" * 60)
    print("📋 Try:")
    print("   python run.py analyze --model configs/canonical.json --out out/analyze")
    print("   python run.py protocol --model configs/canonical.json --out out/protocol --pdf")
    print("   python test.py && python -m pytest")


def main():
    print("⚛️ qbesim - Setup Script")
    print("=" * 50)
    os.chdir(ROOT)
    for title, step in STEPS:
        print(f"\n{title}")
        if not step():
            print(f"❌ setup stopped at: {title}")
            sys.exit(1)
    print_instructions()


def build():
    from setuptools import setup

    runtime = [r for r in requirements() if distribution_name(r) not in TEST_PACKAGES]
    tests = [r for r in requirements() if distribution_name(r) in TEST_PACKAGES]
    setup(
        name="qbesim",
        version="0.1.0",
        description="Qubit-bath-environment decoherence-suppression simulator",
        packages=["qbesim"],
        python_requires=">=3.8",
        install_requires=runtime,
        extras_require={"test": tests},
        entry_points={"console_scripts": ["qbesim=qbesim.cli:main"]},
    )


if __name__ == '__main__':
    if len(sys.argv) > 1:
        build()
    else:
        main()
