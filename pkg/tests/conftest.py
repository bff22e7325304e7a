import pytest

from untangled.field import SpatialDomain, TimeGrid, make_field
from untangled.filippov import EnvelopeParams
from untangled.funnel import FunnelParams


@pytest.fixture
def interval():
    return SpatialDomain([-1.0], [1.0])


@pytest.fixture
def half_line():
    # sqrt-field scenarios live on [0, 4]
    return SpatialDomain([0.0], [4.0])


@pytest.fixture
def box2d():
    return SpatialDomain([-1.0, -1.0], [1.0, 1.0])


@pytest.fixture
def grid100():
    return TimeGrid(0.0, 1.0, 100)


@pytest.fixture
def sign_field():
    return make_field("sign1d")


@pytest.fixture
def compressive():
    return make_field("compressive-sign")


@pytest.fixture
def sqrt_field():
    return make_field("sqrt")


@pytest.fixture
def env256():
    # the acceptance-grade sampling schedule: 256 samples, final radius 0.025
    return EnvelopeParams((0.2, 0.1, 0.05, 0.025), 256, seed=7)


@pytest.fixture
def env64():
    return EnvelopeParams((0.1, 0.05), 64, seed=7)


@pytest.fixture
def funnel_params(env64):
    return FunnelParams(env64, branch_factor=2, beam_width=16)
