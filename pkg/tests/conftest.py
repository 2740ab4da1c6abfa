import pytest

from revcsp import bundled_program
from revcsp.calculus import parse_program


@pytest.fixture
def retry():
    return parse_program(bundled_program("retry"))


@pytest.fixture
def retry_forward():
    return parse_program(bundled_program("retry_forward"))


@pytest.fixture
def chain3():
    return parse_program(bundled_program("chain3"))
