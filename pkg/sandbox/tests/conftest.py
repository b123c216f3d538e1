from __future__ import annotations

import sys
from pathlib import Path

SANDBOX_SRC = Path(__file__).parent.parent / "src"
if str(SANDBOX_SRC) not in sys.path:
    sys.path.insert(0, str(SANDBOX_SRC))
