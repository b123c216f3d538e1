from __future__ import annotations

from pathlib import Path

import pytest


@pytest.fixture
def tiny_csv(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.csv"
    path.write_text("x,y\n1,2\n3,4\n", encoding="utf-8")
    return path
