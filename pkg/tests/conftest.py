"""Shared fixtures: two reference parameter sets and their embeddings."""
from __future__ import annotations

import pytest

from nnetctrl.model import CostSpec, LimitParams, instantiate


@pytest.fixture(scope="session")
def ref1() -> LimitParams:
    """Symmetric-rate network: all service rates 1, equal pools."""
    return LimitParams(
        lam=(1.3, 0.7),
        mu=((1.0, 1.0), (0.0, 1.0)),
        gamma=(0.5, 0.5),
        nu=(1.0, 1.0),
    )


@pytest.fixture(scope="session")
def ref2() -> LimitParams:
    """Asymmetric-rate network: fast dedicated pool, unequal pool sizes."""
    return LimitParams(
        lam=(3.0, 1.0),
        mu=((2.0, 1.0), (0.0, 1.0)),
        gamma=(1.0, 1.0),
        nu=(1.0, 2.0),
    )


@pytest.fixture(scope="session")
def ref1_n100(ref1):
    return instantiate(ref1, 100)


@pytest.fixture(scope="session")
def ref2_n100(ref2):
    return instantiate(ref2, 100)


@pytest.fixture(scope="session")
def linear_cost() -> CostSpec:
    return CostSpec(xi=(1.0, 1.0), zeta=(0.0, 0.0), m=1.0, m_tilde=1.0)


@pytest.fixture(scope="session")
def quadratic_cost() -> CostSpec:
    return CostSpec(xi=(1.0, 1.0), zeta=(0.0, 0.0), m=2.0, m_tilde=1.0)
