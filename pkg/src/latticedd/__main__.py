"""Entry point for ``python -m latticedd``."""

import sys

from .cli import main

sys.exit(main())
