import pytest

from cavitylink import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Compile (numba) or no-op (numpy) once, so timed tests never pay for it.
    _kernels.warmup()
