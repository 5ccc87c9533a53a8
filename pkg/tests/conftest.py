import numpy as np
import pytest

from regimecl.nn import Batch, NetworkSpec, init_network


@pytest.fixture
def small_net():
    # widths 6 -> 6 exercises the residual path, 6 -> 4 the plain one
    return init_network(NetworkSpec(5, (6, 6, 4), 3, 2), seed=11)


def random_batch(rng, net, n=7, task_id=1):
    spec = net.spec
    return Batch(rng.normal(size=(n, spec.input_dim)), rng.integers(0, spec.classes_per_task, n), task_id)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


# filled by test_acceptance.report(); echoed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
