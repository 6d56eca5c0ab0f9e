import pytest

from randswitch.scenario import load_scenario


@pytest.fixture(scope="session")
def semi():
    return load_scenario("example1_semimarkov")


@pytest.fixture(scope="session")
def markov():
    return load_scenario("example1_markov")


@pytest.fixture(scope="session")
def literal():
    return load_scenario("example1_literal")
