from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hdp_transport.transport import BoundedDomain, DiscreteMeasure

settings.register_profile("pkg", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


def random_measure(rng: np.random.Generator, k: int, d: int = 1, domain: BoundedDomain | None = None) -> DiscreteMeasure:
    domain = domain or BoundedDomain.unit(d)
    locs = domain.lo + (domain.hi - domain.lo) * rng.random((k, d))
    return DiscreteMeasure(domain, locs, rng.dirichlet(np.ones(k)))


@pytest.fixture
def unit1():
    return BoundedDomain.unit(1)


@pytest.fixture
def unit2():
    return BoundedDomain.unit(2)
