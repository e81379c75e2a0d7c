#!/usr/bin/env python3
"""
qbesim - Run Script

    python run.py <command> --model <path> --out <dir> [--override k=v]... [--force]
"""

import sys


def main():
    try:
        from qbesim.cli import main as cli_main
    except ImportError as e:
        print(f"❌ Error importing qbesim: {e}")
        print("Please make sure all dependencies are installed (python setup.py)")
        sys.exit(1)
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == '__main__':
    main()
