import pytest

from ens2 import demo
from ens2.tabular import parse_csv


@pytest.fixture(scope="session")
def linsep():
    return parse_csv(demo.demo_path("linsep").read_bytes(), "label")


@pytest.fixture(scope="session")
def xor_ds():
    return parse_csv(demo.demo_path("xor").read_bytes(), "label")


@pytest.fixture(scope="session")
def catmix():
    return parse_csv(demo.demo_path("catmix").read_bytes(), "label")
