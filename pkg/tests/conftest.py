import numpy as np
import pytest

from relayalloc.model import ProblemInstance
from relayalloc.scenario import FactoryLayout, generate_scenario


def make_instance(K=2, N=1, M=2, seed=0, theta=0.5, payload=1000.0, eps=1e-5, radius=300.0):
    layout = FactoryLayout(radius_m=radius, num_robots=K, num_relays=N, num_rbs=M,
                           distance_factor=theta, seed=seed)
    return ProblemInstance.from_scenario(generate_scenario(layout), payload_bits=payload,
                                         eps_max=eps)


def raw_instance(gd, g1=None, g2=None, payload=1000.0, eps=1e-5):
    """Instance from explicit gains (K x M, K x N x M, N x M)."""
    gd = np.asarray(gd, float)
    K, M = gd.shape
    if g1 is None:
        g1, g2 = np.zeros((K, 0, M)), np.zeros((0, M))
    return ProblemInstance(payload_bits=payload, eps_max=eps, tau1_s=0.5e-3, tau2_s=0.5e-3,
                           bandwidth_hz=360e3, gains_direct=gd, gains_hop1=g1, gains_hop2=g2)


def tiny_instances(count=100, base_seed=1000):
    """Seeded instances with K <= 3, M <= 4, N <= 2 and M >= K."""
    rng = np.random.default_rng(base_seed)
    out = []
    for i in range(count):
        K = int(rng.integers(1, 4))
        M = int(rng.integers(K, 5))
        N = int(rng.integers(0, 3))
        theta = float(rng.choice([0.3, 0.5, 0.7]))
        out.append(make_instance(K, N, M, seed=base_seed + i, theta=theta))
    return out


@pytest.fixture(scope="session")
def tiny():
    return tiny_instances()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
