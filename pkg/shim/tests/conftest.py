"""Fixtures for the shim tests: disposable copies of the pytest-style
fixture project with the shim dropped in."""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

SHIM_DIR = Path(__file__).parent.parent
FIXTURES = Path(__file__).parent / "fixtures"
SHIM_SOURCE = SHIM_DIR / "rtc_shim.py"

if str(SHIM_DIR) not in sys.path:
    sys.path.insert(0, str(SHIM_DIR))


@pytest.fixture
def shimproj(tmp_path) -> Path:
    dest = tmp_path / "shimproj"
    shutil.copytree(FIXTURES / "shimproj", dest)
    shutil.copy2(SHIM_SOURCE, dest / "rtc_shim.py")
    return dest
