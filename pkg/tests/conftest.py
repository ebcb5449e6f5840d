from __future__ import annotations

import numpy as np
import pytest

from steinnet import Cluster, NetworkSpec

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cluster_spec() -> NetworkSpec:
    """k=2 with one cluster; Psi = [[1.5, 0.5], [0.5, 2.5]], Gamma = (1.5, 1.5)."""
    return NetworkSpec(k=2, theta=1.0, mu=[0.5, 0.5], sigma2=[1.0, 2.0], boundary=[2.0, 2.0],
                       reset=[0.0, 0.0], clusters=[Cluster({1, 2}, mu=1.0, sigma2=0.5)])


@pytest.fixture
def firing_spec() -> NetworkSpec:
    """Two drift-driven components that cross within a couple of time units."""
    return NetworkSpec(k=2, theta=1.0, mu=[1.5, 1.3], sigma2=[0.05, 0.05], boundary=[2.0, 2.0],
                       reset=[0.0, 0.0], clusters=[Cluster({1, 2}, mu=1.0, sigma2=0.05)])


@pytest.fixture
def single_spec() -> NetworkSpec:
    return NetworkSpec(k=1, theta=1.0, mu=[2.5], sigma2=[0.2], boundary=[2.0], reset=[0.0])


def random_spec(rng: np.random.Generator, k: int | None = None, positive_mu: bool = True) -> NetworkSpec:
    k = int(rng.integers(1, 5)) if k is None else k
    clusters = []
    seen = set()
    for _ in range(int(rng.integers(0, 4))):
        if k < 2:
            break
        size = int(rng.integers(2, k + 1))
        members = frozenset(int(m) for m in rng.choice(np.arange(1, k + 1), size=size, replace=False))
        if members in seen:
            continue
        seen.add(members)
        mu = rng.uniform(0, 2) if positive_mu else rng.uniform(-1, 2)
        clusters.append(Cluster(members, mu=mu, sigma2=rng.uniform(0, 1)))
    mu = rng.uniform(0, 2, k) if positive_mu else rng.uniform(-1, 2, k)
    boundary = rng.uniform(0.5, 3, k)
    return NetworkSpec(k=k, theta=rng.uniform(0.2, 3), mu=mu, sigma2=rng.uniform(0, 1, k),
                       boundary=boundary, reset=boundary - rng.uniform(0.1, 2, k),
                       clusters=tuple(clusters))
