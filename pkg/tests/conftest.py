import pytest

from regbench.linop import build_integration_operator, compute_svd


@pytest.fixture(scope="session")
def op50():
    op = build_integration_operator(50)
    compute_svd(op)
    return op
