"""Run the xattn command line without installing the package."""

import sys

from xattn.cli import main

if __name__ == "__main__":
    sys.exit(main())
