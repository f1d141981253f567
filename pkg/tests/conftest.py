from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def shipped_scenario_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios"
