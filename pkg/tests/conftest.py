import pytest

from egalitarian.argon2m import MemParams, fill_memory
from egalitarian.merkle import build_tree
from egalitarian.mhe import MheParams, init_header
from egalitarian.mtp import PowParams

CHALLENGE = bytes.fromhex("deadbeef")


@pytest.fixture(scope="session")
def pow_params():
    return PowParams(MemParams(T=256, p=1), L=8, d=0)


@pytest.fixture(scope="session")
def lane_params():
    return PowParams(MemParams(T=256, p=4), L=8, d=0)


@pytest.fixture(scope="session")
def committed(pow_params):
    """(memory, h0, tree) for CHALLENGE under pow_params."""
    memory, h0 = fill_memory(CHALLENGE, pow_params.mem)
    return memory, h0, build_tree(memory)


@pytest.fixture(scope="session")
def committed_lanes(lane_params):
    memory, h0 = fill_memory(CHALLENGE, lane_params.mem, workers=2)
    return memory, h0, build_tree(memory)


@pytest.fixture
def mhe_params():
    return MheParams(M=40, q=8)


@pytest.fixture
def mhe_header(mhe_params):
    return init_header(b"correct horse", b"\x01" * 16, mhe_params)
