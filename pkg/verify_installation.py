#!/usr/bin/env python3
"""
Installation verification script for the RMA toolkit
Run this script to verify that all dependencies are installed correctly.
"""

import sys
import importlib
from pathlib import Path

REQUIRED_DEPENDENCIES = ['numpy', 'scipy', 'pandas', 'psutil']

REQUIRED_MODULES = [
    'rma_qos_model.py',
    'rma_andor_analyzer.py',
    'rma_sic_simulator.py',
    'rma_probe_designer.py',
    'rma_frame_dynamics.py',
    'rma_cli.py',
]

REQUIRED_DOCS = [
    'README.md',
    'DESIGN.md',
    'CONFIG_FORMAT_GUIDE.md',
]


def check_python_version():
    """Check if Python version is 3.9 or higher"""
    version = sys.version_info
    if version.major == 3 and version.minor >= 9:
        print(f"✅ Python {version.major}.{version.minor}.{version.micro} - OK")
        return True
    else:
        print(f"❌ Python {version.major}.{version.minor}.{version.micro} - Requires Python 3.9+")
        return False


def check_dependencies(dependencies=None):
    """Check if all required dependencies are installed"""
    all_good = True

    for dep in dependencies or REQUIRED_DEPENDENCIES:
        try:
            module = importlib.import_module(dep)
            version = getattr(module, '__version__', 'unknown')
            print(f"✅ {dep} {version} - OK")
        except ImportError:
            print(f"❌ {dep} - NOT INSTALLED")
            all_good = False

    return all_good


def check_optional_pytest():
    """Check if pytest is available (needed only for the test suite)"""
    try:
        module = importlib.import_module('pytest')
        print(f"✅ pytest {getattr(module, '__version__', 'unknown')} - OK")
        return True
    except ImportError:
        print("⚠️  pytest - NOT INSTALLED (optional, needed to run tests)")
        return False


def _check_files(names, base):
    all_present = True
    for name in names:
        if (base / name).exists():
            print(f"✅ {name} - Present")
        else:
            print(f"❌ {name} - MISSING")
            all_present = False
    return all_present


def check_modules(base=None):
    """Check if all toolkit modules are present"""
    return _check_files(REQUIRED_MODULES, Path(base or '.'))


def check_documentation(base=None):
    """Check if key documentation files are present"""
    return _check_files(REQUIRED_DOCS, Path(base or '.'))


def main(base=None):
    """Main verification function"""
    print("RMA Toolkit - Installation Verification")
    print("=" * 60)

    print("\n🐍 Checking Python Version:")
    python_ok = check_python_version()

    print("\n📦 Checking Dependencies:")
    deps_ok = check_dependencies()

    print("\n🧪 Checking Test Tooling:")
    pytest_ok = check_optional_pytest()

    print("\n📜 Checking Toolkit Modules:")
    modules_ok = check_modules(base)

    print("\n📚 Checking Documentation:")
    docs_ok = check_documentation(base)

    print("\n" + "=" * 60)

    if python_ok and deps_ok and modules_ok and docs_ok:
        print("🎉 Installation verification PASSED!")
        print("✅ All required components are present and working.")
        print("\n📋 Next Steps:")
        print("1. Review README.md for usage instructions")
        print("2. Try: python rma_cli.py oracle --config configs/oracle_k2_n2.json")
        print("3. Run the tests: pytest")
        return True
    else:
        print("❌ Installation verification FAILED!")
        print("\n🔧 To fix issues:")
        if not python_ok:
            print("- Install Python 3.9 or higher")
        if not deps_ok:
            print("- Run: pip install -r requirements.txt")
        if not modules_ok:
            print("- Ensure all rma_*.py modules are present")
        if not docs_ok:
            print("- Ensure all documentation files are present")
        if not pytest_ok:
            print("- Install pytest: pip install pytest (optional)")
        return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
