"""Allow ``python -m pehop``."""

import sys

from .cli import main

sys.exit(main())
