import sys
import numpy as np
import pytest

from poperm.ordering import OrderingCostParams


def comparator_params(scale: float = 1.0) -> OrderingCostParams:
    """Scalar comparator with f(xi, xj) = xi for non-negative inputs."""
    return OrderingCostParams(
        W1=np.array([[1.0, 0.0], [-1.0, 0.0]]) * scale,
        b1=np.zeros(2),
        W2=np.array([[1.0, -1.0]]),
        b2=np.zeros(1),
    )


def random_params(rng, featdim: int, hidden: int, channels: int = 1) -> OrderingCostParams:
    return OrderingCostParams(
        rng.normal(size=(hidden, 2 * featdim)),
        rng.normal(size=hidden),
        rng.normal(size=(channels, hidden)),
        rng.normal(size=channels),
    )


def central_diff(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar ``fn`` at ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = fn()
        x[idx] = orig - step
        down = fn()
        x[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-8)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def grads_close(analytic, numeric, rtol: float = 1e-5, atol: float = 1e-8) -> bool:
    """Tensor-scale relative check with an absolute floor for exact zeros."""
    a, f = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(f), initial=0.0))
    return bool(np.max(np.abs(a - f), initial=0.0) <= rtol * scale + atol)


def doubly_stochastic(rng, n: int, iters: int = 30) -> np.ndarray:
    from poperm.linalg import sinkhorn

    P, _ = sinkhorn(rng.normal(scale=2.0, size=(n, n)), iters)
    return P


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
