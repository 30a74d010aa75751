"""Shared fixtures and the cross-test report registry.

The registry collects every OmegaLimitReport produced anywhere in the
session so the final negative checks (no limit based at an orbit unstable
from below, none inside a continuum) can sweep the whole battery.
"""

import pytest

from perilab import (bistable_spec, combustion_spec, find_periodic_orbits,
                     logistic_spec)

REPORT_REGISTRY = []


def register_report(report):
    REPORT_REGISTRY.append(report)
    return report


@pytest.fixture(scope="session")
def bistable_free():
    return bistable_spec(theta=0.3, beta=0.0, T=1.0)


@pytest.fixture(scope="session")
def bistable_forced():
    return bistable_spec(theta=0.3, beta=0.5, T=1.0)


@pytest.fixture(scope="session")
def combustion_forced():
    return combustion_spec(q1=0.3, beta=0.5, T=1.0)


@pytest.fixture(scope="session")
def logistic_free():
    return logistic_spec(beta=0.0, T=1.0)


@pytest.fixture(scope="session")
def bistable_free_scan(bistable_free):
    return find_periodic_orbits(bistable_free, (0.0, 1.5), 121)


@pytest.fixture(scope="session")
def bistable_forced_scan(bistable_forced):
    return find_periodic_orbits(bistable_forced, (0.0, 1.5), 121)


@pytest.fixture(scope="session")
def combustion_forced_scan(combustion_forced):
    return find_periodic_orbits(combustion_forced, (0.0, 1.5), 121)


def orbit_at(scan, level, tol=5e-2):
    orbit, dist = scan.nearest_orbit(level)
    assert orbit is not None and dist < tol, f"no orbit near {level}"
    return orbit
