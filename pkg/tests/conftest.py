"""Shared fixtures: reference parameter sets and session-scoped solves."""
from __future__ import annotations

from dataclasses import replace

import pytest

import vaoi

# Reference configuration for the K=3 ring (policy-structure experiments).
REFERENCE = vaoi.SystemParams(
    K=3, B=5, delta_max=9, beta=0.2, p_t=0.5, q=(0.1, 0.2, 0.3), lam=(0.2, 0.2, 0.2)
)

# Tiny instance small enough for exhaustive policy enumeration: 18 states.
TINY = vaoi.SystemParams(K=1, B=1, delta_max=2, beta=0.5, p_t=0.5, q=(0.5,), lam=(0.0,))

# Same but B=2: 27 states, 2^18 deterministic policies.
TINY_B2 = replace(TINY, B=2)


@pytest.fixture(scope="session")
def reference_kernel():
    return vaoi.build_kernel(REFERENCE)


@pytest.fixture(scope="session")
def reference_solved(reference_kernel):
    vf, report = vaoi.relative_value_iteration(reference_kernel, epsilon=1e-8)
    policy = vaoi.extract_policy(vf, reference_kernel)
    return reference_kernel, vf, report, policy


@pytest.fixture(scope="session")
def reference_lowbeta_solved():
    params = replace(REFERENCE, beta=0.1)
    kernel = vaoi.build_kernel(params)
    vf, report = vaoi.relative_value_iteration(kernel, epsilon=1e-8)
    policy = vaoi.extract_policy(vf, kernel)
    return kernel, vf, report, policy


@pytest.fixture(scope="session")
def tiny_solved():
    kernel = vaoi.build_kernel(TINY)
    vf, report = vaoi.relative_value_iteration(kernel, epsilon=1e-10, max_iter=100_000)
    policy = vaoi.extract_policy(vf, kernel)
    return kernel, vf, report, policy
