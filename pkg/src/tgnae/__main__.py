"""``python -m tgnae``."""

from .cli import main

main()
