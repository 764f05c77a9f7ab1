"""Run ``python -m metapat``."""
import sys

from .cli import main

sys.exit(main())
