from pathlib import Path

import pytest
from hypothesis import settings

from cfigadgets.frontend import load_program

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def arm_program():
    return load_program(FIXTURES / "arm_dispatch.gcfg")


@pytest.fixture(scope="session")
def categories_program():
    return load_program(FIXTURES / "categories.gcfg")


@pytest.fixture(scope="session")
def null_guard_program():
    return load_program(FIXTURES / "null_guard.gcfg")
