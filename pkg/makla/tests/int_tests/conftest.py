import logging

import pytest


@pytest.fixture(autouse=True)
def configure_test(pytestconfig):
    logging.getLogger('makla').setLevel(logging.INFO)
