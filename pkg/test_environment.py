#!/usr/bin/env python3
"""
Environment Test Script
Check that all packages qbesim needs are importable. Also collected by pytest.
"""

import os
import sys

import pytest

PACKAGES = [
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("python-dotenv", "dotenv"),
    ("fpdf2", "fpdf"),
    ("matplotlib", "matplotlib"),
    ("hypothesis", "hypothesis"),
    ("qbesim", "qbesim"),
]


def package_importable(package_name, import_name=None):
    """Test if a package can be imported"""
    if import_name is None:
        import_name = package_name
    try:
        __import__(import_name)
        print(f"✅ {package_name} - OK")
        return True
    except ImportError as e:
        print(f"❌ {package_name} - FAILED: {e}")
        return False


def settings_resolve():
    """Check that the QBESIM_* variables (and .env) give valid settings"""
    from qbesim.errors import ConfigurationError
    from qbesim.settings import get_settings
    try:
        settings = get_settings()
    except ConfigurationError as e:
        print(f"❌ settings - {e}")
        return False
    print(f"✅ settings - eigensolver={settings.eigensolver}, max_dim={settings.max_dim}")
    return True


@pytest.mark.parametrize("package_name,import_name", PACKAGES)
def test_package_import(package_name, import_name):
    assert package_importable(package_name, import_name)


def test_settings_resolve(monkeypatch):
    for name in [n for n in os.environ if n.startswith("QBESIM_")]:
        monkeypatch.delenv(name)
    assert settings_resolve()


def main():
    print("🧪 Environment Test Script")
    print("=" * 40)
    print(f"🐍 Python version: {sys.version}")
    print(f"📍 Python location: {sys.executable}")
    print(f"📁 Current directory: {os.getcwd()}")
    print()
    print("📦 Testing package imports:")
    print("-" * 30)

    failed_packages = [name for name, module in PACKAGES if not package_importable(name, module)]
    print()
    if not failed_packages and not settings_resolve():
        print("🔧 Fix the QBESIM_* values in .env (see user_guide.md)")
        return 1
    if not failed_packages:
        print("🎉 All packages are installed correctly!")
        return 0
    print("❌ Some packages are missing or not installed correctly")
    print()
    print("🔧 To fix missing packages, run:")
    print(f"   {sys.executable} -m pip install {' '.join(n for n in failed_packages if n != 'qbesim')}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
