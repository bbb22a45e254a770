import numpy as np
import pytest


def random_spd(rng, n, spread=3.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    vals = np.exp(rng.uniform(-spread / 2, spread / 2, size=n))
    return (Q * vals) @ Q.T


def random_covariance(rng, n, m=None):
    """Sample covariance of centered Gaussian data with a decaying spectrum."""
    m = m or 3 * n
    scales = np.sort(rng.uniform(0.5, 4.0, size=n))[::-1]
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    Y = Q @ (scales[:, None] * rng.normal(size=(n, m)))
    Y -= Y.mean(axis=1, keepdims=True)
    return Y @ Y.T / m


def centered_with_covariance(c, m, seed=0):
    """Rows with zero mean and ``Y Y^T / m = diag(c)`` exactly."""
    c = np.asarray(c, dtype=float)
    n = c.size
    rng = np.random.default_rng(seed)
    basis = np.column_stack([np.ones(m), rng.normal(size=(m, n))])
    Q, _ = np.linalg.qr(basis)
    return np.sqrt(c * m)[:, None] * Q[:, 1:n + 1].T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def diag5():
    # hand fixture used throughout: C = diag(5, 3, 2, 1, 1), Z = e1
    return np.diag([5.0, 3.0, 2.0, 1.0, 1.0])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
