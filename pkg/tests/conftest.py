from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from srogers.qs_core import PlaceSet

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def real():
    return PlaceSet(())


@pytest.fixture
def s3():
    return PlaceSet((3,))


def F(x) -> Fraction:
    return Fraction(x)
